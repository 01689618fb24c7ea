"""Run configuration: ``key = value`` files with ``#`` comments, overridable by flags."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from kgloop.embedding import TrainConfig
from kgloop.errors import DataError, ParseError
from kgloop.learner import LearnerConfig


@dataclass
class RunConfig:
    # datasets
    train: str | None = None
    valid: str | None = None
    test: str | None = None
    concepts: str | None = None
    # stage inputs
    rules: str | None = None
    paths: str | None = None
    embeddings: str | None = None
    out: str = "out"
    # graph and paths
    augment_inverses: bool = True
    min_reliability: float = 0.01
    max_paths_per_pair: int = 200
    # embeddings
    dim: int = 100
    batch_size: int = 1024
    negatives: int = 10
    epochs: int = 1000
    learning_rate: float = 0.01
    margin_triple: float = 1.0
    margin_path: float = 1.0
    margin_relation: float = 1.0
    alpha_path: float = 1.0
    alpha_relation: float = 1.0
    norm_order: int = 1
    # rules
    beta: float = 1.0
    score_threshold: float = 1.0
    min_sc: float = 0.7
    min_hc: float = 0.1
    min_support: int = 2
    mine_seeds: bool = True
    seed_rule_fraction: float = 1.0
    learn: bool = True
    # loop
    max_iterations: int = 10
    warm_start: bool = False
    valid_subsample: int = 2000
    record_timings: bool = True
    # evaluation
    on_demand_paths: bool = False
    on_demand_top_k: int = 50
    explain: str | None = None
    # runtime
    seed: int = 0
    threads: int = 1

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            dim=self.dim, batch_size=self.batch_size, negatives=self.negatives, epochs=self.epochs,
            learning_rate=self.learning_rate, margin_triple=self.margin_triple,
            margin_path=self.margin_path, margin_relation=self.margin_relation,
            alpha_path=self.alpha_path, alpha_relation=self.alpha_relation,
            norm_order=self.norm_order, seed=self.seed,
        )

    def learner_config(self) -> LearnerConfig:
        return LearnerConfig(
            beta=self.beta, score_threshold=self.score_threshold, min_sc=self.min_sc,
            min_hc=self.min_hc, min_support=self.min_support, norm_order=self.norm_order,
        )

    def validate(self, require=()) -> "RunConfig":
        """Check numeric ranges and that referenced files exist."""
        try:
            self.train_config().validate()
            self.learner_config().validate()
        except ValueError as exc:
            raise DataError(f"invalid configuration: {exc}") from None
        if not 0 < self.seed_rule_fraction <= 1:
            raise DataError("seed_rule_fraction must lie in (0, 1]")
        if not 0 < self.min_reliability <= 1:
            raise DataError("min_reliability must lie in (0, 1]")
        for name in ("max_paths_per_pair", "max_iterations", "threads", "on_demand_top_k"):
            if getattr(self, name) < 1:
                raise DataError(f"{name} must be >= 1")
        if self.valid_subsample < 0:
            raise DataError("valid_subsample must be >= 0")
        for name in ("train", "valid", "test", "concepts", "rules", "paths", "embeddings"):
            value = getattr(self, name)
            if value is not None and not Path(value).is_file():
                raise DataError(f"{name}: file not found: {value}")
        for name in require:
            if getattr(self, name) is None:
                raise DataError(f"{name} is required")
        return self

    def dump(self) -> str:
        lines = []
        for f in fields(self):
            value = getattr(self, f.name)
            if value is None:
                lines.append(f"# {f.name} =")
            else:
                lines.append(f"{f.name} = {_format(value)}")
        return "\n".join(lines) + "\n"


FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    return str(value)


def convert(name: str, text: str):
    kind = FIELD_TYPES[name]
    text = text.strip()
    if kind == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name}: expected a boolean, got {text!r}")
    if kind == "int":
        return int(text)
    if kind == "float":
        return float(text)
    return text or None


def read_config_file(path) -> dict:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read config {path}: {exc}") from exc
    values = {}
    for lineno, raw in enumerate(lines, start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ParseError("expected 'key = value'", path, lineno)
        key, value = (x.strip() for x in line.split("=", 1))
        key = key.replace("-", "_")
        if key not in FIELD_TYPES:
            raise ParseError(f"unknown key {key!r}", path, lineno)
        try:
            values[key] = convert(key, value)
        except ValueError as exc:
            raise ParseError(str(exc), path, lineno) from None
    return values


def load_config(path=None, **overrides) -> RunConfig:
    values = read_config_file(path) if path else {}
    given = {k: v for k, v in overrides.items() if v is not None}
    values.update(given)
    base = Path(path).parent if path else None
    if base is not None:
        for key in ("train", "valid", "test", "concepts", "rules", "paths", "embeddings"):
            # config-relative dataset paths, unless overridden on the command line
            if key in values and key not in given and not Path(values[key]).is_absolute():
                candidate = base / values[key]
                if candidate.exists():
                    values[key] = str(candidate)
    return dataclasses.replace(RunConfig(), **values)
