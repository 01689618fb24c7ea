"""The closed loop: load rules, train embeddings, learn rules, merge, until no new rules appear."""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from kgloop.config import RunConfig
from kgloop.embedding import EmbeddingStore, rng_stream, train
from kgloop.errors import KGLoopError
from kgloop.evaluation import Evaluator, Metrics
from kgloop.graph import KnowledgeGraph, build_graph, load_concepts, load_triples
from kgloop.learner import CandidateRule, ConceptSignature, build_concept_signatures, learn_rules
from kgloop.paths import PathIndex, enumerate_paths, load_path_index
from kgloop.rules import RuleSet, merge, mine_seed_rules, read_rules

logger = logging.getLogger(__name__)


class PhaseError(KGLoopError):
    def __init__(self, phase: str, iteration: int, cause: Exception):
        self.phase = phase
        self.iteration = iteration
        self.cause = cause
        super().__init__(f"{phase} phase failed at iteration {iteration}: {cause}")


@dataclass
class IterationSnapshot:
    iteration: int
    rules_total: int
    rules_new: int
    metrics: dict[str, float] | None = None
    train_seconds: float = 0.0
    learn_seconds: float = 0.0

    def row(self, record_timings: bool = True) -> str:
        m = self.metrics or {}
        vals = [m.get(k, math.nan) for k in ("MRR", "Hits@1", "Hits@3", "Hits@10", "MR")]
        times = (self.train_seconds, self.learn_seconds) if record_timings else (0.0, 0.0)
        cells = [str(self.iteration), str(self.rules_total), str(self.rules_new)]
        cells += [f"{v:.6f}" for v in vals]
        cells += [f"{s:.3f}" for s in times]
        return "\t".join(cells)


def write_snapshots(snapshots: list[IterationSnapshot], path, record_timings: bool = True) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for snap in snapshots:
            fh.write(snap.row(record_timings) + "\n")


@dataclass
class Dataset:
    kg: KnowledgeGraph
    valid: np.ndarray
    test: np.ndarray

    def known(self) -> set[tuple[int, int, int]]:
        known = set(map(tuple, self.kg.base_triples.tolist()))
        for part in (self.valid, self.test):
            known.update(map(tuple, part.tolist()))
        return known


def load_dataset(config: RunConfig) -> Dataset:
    if config.train is None:
        raise KGLoopError("a training file is required")
    concepts = load_concepts(config.concepts) if config.concepts else None
    kg = build_graph(load_triples(config.train), concepts, augment_inverses=config.augment_inverses)
    empty = np.zeros((0, 3), dtype=np.int64)
    valid = kg.encode(load_triples(config.valid), "valid") if config.valid else empty
    test = kg.encode(load_triples(config.test), "test") if config.test else empty
    return Dataset(kg, valid, test)


def build_path_index(kg: KnowledgeGraph, config: RunConfig) -> PathIndex:
    if config.paths:
        return load_path_index(kg, config.paths)
    return enumerate_paths(kg, 2, config.min_reliability, config.max_paths_per_pair)


def initial_rules(kg: KnowledgeGraph, config: RunConfig) -> RuleSet:
    """Seed rules from a file when given, else mined; optionally subsampled."""
    if config.rules:
        seeds = read_rules(kg, config.rules)
    elif config.mine_seeds:
        seeds = mine_seed_rules(kg, config.min_sc, config.min_hc, config.min_support)
    else:
        seeds = RuleSet()
    if config.seed_rule_fraction < 1.0 and len(seeds):
        ordered = seeds.sorted()
        keep = int(round(config.seed_rule_fraction * len(ordered)))
        pick = rng_stream(config.seed, "seed_rules").choice(len(ordered), size=keep, replace=False)
        seeds = RuleSet(ordered[i] for i in sorted(pick.tolist()))
    return seeds


def validation_triples(data: Dataset, config: RunConfig) -> np.ndarray:
    valid = data.valid
    if config.valid_subsample and len(valid) > config.valid_subsample:
        pick = rng_stream(config.seed, "valid_subsample").choice(len(valid), config.valid_subsample, replace=False)
        valid = valid[np.sort(pick)]
    return valid


def make_evaluator(data: Dataset, emb, rules, path_index, config: RunConfig) -> Evaluator:
    return Evaluator(
        data.kg, emb, rules, path_index,
        alpha_path=config.alpha_path, norm_order=config.norm_order, known=data.known(),
        on_demand_top_k=config.on_demand_top_k if config.on_demand_paths else 0,
        min_reliability=config.min_reliability, max_paths_per_pair=config.max_paths_per_pair,
    )


@dataclass
class LoopResult:
    embeddings: EmbeddingStore
    rules: RuleSet
    snapshots: list[IterationSnapshot]
    path_index: PathIndex
    data: Dataset
    loss_traces: list[list[float]] = field(default_factory=list)
    candidates: list[list[CandidateRule]] = field(default_factory=list)
    signatures: ConceptSignature | None = None


def _phase(name: str, iteration: int, fn, *args, **kwargs):
    try:
        return fn(*args, **kwargs)
    except PhaseError:
        raise
    except Exception as exc:
        raise PhaseError(name, iteration, exc) from exc


def run(
    config: RunConfig,
    data: Dataset | None = None,
    seeds: RuleSet | None = None,
    path_index: PathIndex | None = None,
    on_iteration: Callable[[IterationSnapshot], None] | None = None,
) -> LoopResult:
    """Iterate train -> learn -> merge until a fixpoint or ``max_iterations``."""
    if data is None:
        data = _phase("intake", 0, load_dataset, config)
    kg = data.kg
    if path_index is None:
        path_index = _phase("intake", 0, build_path_index, kg, config)
    t0 = time.perf_counter()
    rules = seeds if seeds is not None else _phase("intake", 0, initial_rules, kg, config)
    seed_seconds = time.perf_counter() - t0
    signatures = build_concept_signatures(kg)
    train_cfg = config.train_config()
    learn_cfg = config.learner_config()
    valid = validation_triples(data, config)

    snapshots = [IterationSnapshot(0, len(rules), len(rules), None, 0.0, seed_seconds)]
    if on_iteration:
        on_iteration(snapshots[0])
    traces: list[list[float]] = []
    all_candidates: list[list[CandidateRule]] = []
    emb = None
    for it in range(1, config.max_iterations + 1):
        t0 = time.perf_counter()
        init = emb if (config.warm_start and emb is not None) else None
        result = _phase("train", it, train, kg, path_index, rules, train_cfg, init=init, stream_tag=it)
        emb = result.embeddings
        traces.append(result.loss_trace)
        train_s = time.perf_counter() - t0

        metrics = None
        if len(valid):
            ev = make_evaluator(data, emb, rules, path_index, config)
            metrics = _phase("validate", it, ev.evaluate, valid, config.threads).filtered

        t0 = time.perf_counter()
        if config.learn:
            learned = _phase("learn", it, learn_rules, kg, path_index, emb, signatures, rules, learn_cfg)
            new, cands = learned.rules, learned.candidates
        else:
            new, cands = RuleSet(), []
        all_candidates.append(cands)
        rules = merge(rules, new)
        learn_s = time.perf_counter() - t0

        snap = IterationSnapshot(it, len(rules), len(new), metrics, train_s, learn_s)
        snapshots.append(snap)
        logger.info("iteration %d: %d rules (+%d)", it, len(rules), len(new))
        if on_iteration:
            on_iteration(snap)
        if not new:
            break
    return LoopResult(emb, rules, snapshots, path_index, data, traces, all_candidates, signatures)
