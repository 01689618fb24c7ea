"""Command-line entry point.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

from kgloop import __version__
from kgloop.config import FIELD_TYPES, RunConfig, load_config
from kgloop.embedding import load_embeddings, save_embeddings, train
from kgloop.errors import DataError, KGLoopError, NumericError
from kgloop.evaluation import Evaluator
from kgloop.learner import build_concept_signatures, learn_rules, write_diagnostics
from kgloop.loop import (
    PhaseError,
    build_path_index,
    initial_rules,
    load_dataset,
    make_evaluator,
    run,
    write_snapshots,
)
from kgloop.paths import enumerate_paths, save_path_index
from kgloop.rules import RuleSet, merge, mine_seed_rules, read_rules, write_rules

logger = logging.getLogger("kgloop")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

ALIASES = {
    "alpha_path": ["--alpha1"],
    "alpha_relation": ["--alpha2"],
}


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("-v", "--verbose", action="count", default=0)
    group = p.add_argument_group("configuration (every key of the config file)")
    for f in fields(RunConfig):
        flags = ["--" + f.name.replace("_", "-"), *ALIASES.get(f.name, [])]
        kind = FIELD_TYPES[f.name]
        if kind == "bool":
            group.add_argument(*flags, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        else:
            conv = {"int": int, "float": float}.get(kind, str)
            group.add_argument(*flags, dest=f.name, type=conv, default=None, metavar=f.name.upper())


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="kgloop", description="Closed-loop rule learning and rule-enhanced KG embeddings.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "extract-paths": "enumerate length<=2 paths with PCRA reliabilities",
        "mine-seed-rules": "exhaustively mine seed CP rules",
        "train": "train rule-enhanced embeddings",
        "learn-rules": "learn new rules from trained embeddings",
        "evaluate": "rank test triples and report metrics",
        "run": "run the full closed loop",
    }
    for name, text in helps.items():
        _add_config_flags(sub.add_parser(name, help=text, description=text))
    return parser


def _config_from_args(args) -> RunConfig:
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig)}
    return load_config(args.config, **overrides)


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.effective.txt").write_text(cfg.dump(), encoding="utf-8")
    return out


def _rules_or_empty(kg, cfg: RunConfig) -> RuleSet:
    return read_rules(kg, cfg.rules) if cfg.rules else RuleSet()


def cmd_extract_paths(cfg: RunConfig) -> int:
    cfg.validate(require=("train",))
    data = load_dataset(cfg)
    out = _out_dir(cfg)
    index = enumerate_paths(data.kg, 2, cfg.min_reliability, cfg.max_paths_per_pair)
    save_path_index(index, data.kg, out / "paths.tsv")
    print(f"{len(index)} pairs, {index.n_paths()} paths -> {out / 'paths.tsv'}")
    return EXIT_OK


def cmd_mine_seed_rules(cfg: RunConfig) -> int:
    cfg.validate(require=("train",))
    data = load_dataset(cfg)
    out = _out_dir(cfg)
    rules = mine_seed_rules(data.kg, cfg.min_sc, cfg.min_hc, cfg.min_support)
    write_rules(rules, data.kg, out / "seed_rules.tsv")
    print(f"{len(rules)} rules -> {out / 'seed_rules.tsv'}")
    return EXIT_OK


def cmd_train(cfg: RunConfig) -> int:
    cfg.validate(require=("train",))
    data = load_dataset(cfg)
    out = _out_dir(cfg)
    index = build_path_index(data.kg, cfg) if cfg.alpha_path > 0 else None
    rules = _rules_or_empty(data.kg, cfg)
    result = train(data.kg, index, rules, cfg.train_config())
    save_embeddings(result.embeddings, data.kg, out / "embeddings.txt")
    with open(out / "loss.tsv", "w", encoding="utf-8") as fh:
        for epoch, loss in enumerate(result.loss_trace, start=1):
            fh.write(f"{epoch}\t{loss!r}\n")
    last = result.loss_trace[-1] if result.loss_trace else float("nan")
    print(f"trained {cfg.epochs} epochs with {len(rules)} rules, final mean loss {last:.6f}")
    return EXIT_OK


def cmd_learn_rules(cfg: RunConfig) -> int:
    if cfg.embeddings is None:
        raise UsageError("learn-rules requires --embeddings")
    cfg.validate(require=("train",))
    data = load_dataset(cfg)
    out = _out_dir(cfg)
    emb = load_embeddings(data.kg, cfg.embeddings)
    index = build_path_index(data.kg, cfg)
    existing = _rules_or_empty(data.kg, cfg)
    result = learn_rules(data.kg, index, emb, build_concept_signatures(data.kg), existing, cfg.learner_config())
    write_rules(result.rules, data.kg, out / "learned_rules.tsv")
    write_rules(merge(existing, result.rules), data.kg, out / "rules.tsv")
    write_diagnostics(result.candidates, data.kg, out / "rule_diagnostics.tsv")
    print(f"{len(result.rules)} new rules -> {out / 'learned_rules.tsv'}")
    return EXIT_OK


def _parse_queries(text: str, kg):
    queries = []
    for chunk in text.split(";"):
        parts = chunk.split()
        if not parts:
            continue
        if len(parts) != 3:
            raise UsageError(f"--explain expects 'head relation tail' per query, got {chunk!r}")
        h, r, t = parts
        if h == "?" and t == "?":
            raise UsageError("--explain: at most one side may be '?'")
        side = "head" if h == "?" else "tail"
        hi = 0 if h == "?" else kg.entity_id(h)
        ti = 0 if t == "?" else kg.entity_id(t)
        ri = kg.relation_id(r)
        if ri >= kg.n_base_relations:
            raise DataError("--explain: queries must use base relations")
        known = {"head": h != "?", "tail": t != "?"}[side]
        queries.append(((hi, ri, ti), side, known))
    return queries


def _explain_all(ev: Evaluator, kg, text: str) -> str:
    blocks = []
    for (h, r, t), side, given in _parse_queries(text, kg):
        if given:
            predicted = t if side == "tail" else h
        else:
            predicted = ev.predict((h, r, t), side)
        blocks.append(ev.explain((h, r, t), predicted, side).format(kg))
    return "\n".join(blocks)


def cmd_evaluate(cfg: RunConfig) -> int:
    if cfg.embeddings is None:
        raise UsageError("evaluate requires --embeddings")
    cfg.validate(require=("train",))
    data = load_dataset(cfg)
    out = _out_dir(cfg)
    emb = load_embeddings(data.kg, cfg.embeddings)
    rules = _rules_or_empty(data.kg, cfg)
    index = build_path_index(data.kg, cfg) if cfg.alpha_path > 0 else None
    ev = make_evaluator(data, emb, rules, index, cfg)
    triples = data.test if len(data.test) else data.valid
    if len(triples):
        report = ev.evaluate(triples, cfg.threads).report()
        (out / "metrics.txt").write_text(report, encoding="utf-8")
        print(report, end="")
    elif not cfg.explain:
        raise UsageError("evaluate needs --test or --valid triples")
    if cfg.explain:
        text = _explain_all(ev, data.kg, cfg.explain)
        (out / "explanations.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    return EXIT_OK


def cmd_run(cfg: RunConfig) -> int:
    cfg.validate(require=("train",))
    out = _out_dir(cfg)
    snapshots = []

    def record(snap):
        snapshots.append(snap)
        write_snapshots(snapshots, out / "snapshots.tsv", cfg.record_timings)

    result = run(cfg, on_iteration=record)
    kg = result.data.kg
    save_embeddings(result.embeddings, kg, out / "embeddings.txt")
    write_rules(result.rules, kg, out / "rules.tsv")
    with open(out / "loss.tsv", "w", encoding="utf-8") as fh:
        for it, trace in enumerate(result.loss_traces, start=1):
            for epoch, loss in enumerate(trace, start=1):
                fh.write(f"{it}\t{epoch}\t{loss!r}\n")
    for it, cands in enumerate(result.candidates, start=1):
        write_diagnostics(cands, kg, out / f"rule_diagnostics.iter{it}.tsv")
    triples = result.data.test if len(result.data.test) else result.data.valid
    ev = make_evaluator(result.data, result.embeddings, result.rules, result.path_index, cfg)
    if len(triples):
        report = ev.evaluate(triples, cfg.threads).report()
        (out / "metrics.txt").write_text(report, encoding="utf-8")
        print(report, end="")
    if cfg.explain:
        text = _explain_all(ev, kg, cfg.explain)
        (out / "explanations.txt").write_text(text, encoding="utf-8")
        print(text, end="")
    print(f"{len(result.snapshots) - 1} iterations, {len(result.rules)} rules -> {out}")
    return EXIT_OK


COMMANDS = {
    "extract-paths": cmd_extract_paths,
    "mine-seed-rules": cmd_mine_seed_rules,
    "train": cmd_train,
    "learn-rules": cmd_learn_rules,
    "evaluate": cmd_evaluate,
    "run": cmd_run,
}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, PhaseError):
        return _exit_code(exc.cause)
    if isinstance(exc, NumericError):
        return EXIT_NUMERIC
    if isinstance(exc, UsageError):
        return EXIT_USAGE
    return EXIT_DATA


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        cfg = _config_from_args(args)
        return COMMANDS[args.command](cfg)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"kgloop {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (KGLoopError, ValueError, OSError) as exc:
        code = _exit_code(exc)
        if code == EXIT_USAGE:
            parser.print_usage(sys.stderr)
        print(f"kgloop {args.command}: error: {exc}", file=sys.stderr)
        return code


if __name__ == "__main__":
    sys.exit(main())
