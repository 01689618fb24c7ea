"""Closed-path rules: grounding, SC/HC scoring, exhaustive seed mining and persistence."""

from __future__ import annotations

import logging
import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Iterator

from kgloop.errors import DataError, ParseError, UndefinedScoreError
from kgloop.graph import KnowledgeGraph

logger = logging.getLogger(__name__)

RuleKey = tuple[int, tuple[int, ...]]

DEFAULT_MIN_SC = 0.7
DEFAULT_MIN_HC = 0.1
DEFAULT_MIN_SUPPORT = 2


@dataclass(frozen=True)
class CPRule:
    """``head_rel(x, y) <= body[0](x, z) & body[1](z, y)``."""

    head_rel: int
    body: tuple[int, ...]
    sc: float
    hc: float
    support: int

    def __post_init__(self):
        object.__setattr__(self, "body", tuple(self.body))
        if not 1 <= len(self.body) <= 2:
            raise ValueError(f"rule body must have 1 or 2 atoms, got {len(self.body)}")
        if self.body == (self.head_rel,):
            raise ValueError("a length-1 rule cannot have its head as body")
        if not (0.0 <= self.sc <= 1.0 and 0.0 <= self.hc <= 1.0):
            raise ValueError(f"sc/hc out of [0, 1]: {self.sc}, {self.hc}")
        if self.support < 0:
            raise ValueError("negative support")

    @property
    def key(self) -> RuleKey:
        return (self.head_rel, self.body)

    def format(self, kg: KnowledgeGraph) -> str:
        body = " & ".join(kg.relation_token(r) for r in self.body)
        return f"{kg.relation_token(self.head_rel)} <= {body}"


class RuleSet:
    """Rules keyed by (head, body); merging keeps the higher-SC entry."""

    def __init__(self, rules: Iterable[CPRule] = ()):
        self._rules: dict[RuleKey, CPRule] = {}
        self._by_body: dict[tuple[int, ...], list[CPRule]] = defaultdict(list)
        for rule in rules:
            self.add(rule)

    def add(self, rule: CPRule) -> None:
        old = self._rules.get(rule.key)
        if old is not None:
            if old.sc >= rule.sc:
                return
            self._by_body[old.body].remove(old)
        self._rules[rule.key] = rule
        self._by_body[rule.body].append(rule)

    def get(self, key: RuleKey) -> CPRule | None:
        return self._rules.get(key)

    def __contains__(self, key) -> bool:
        if isinstance(key, CPRule):
            key = key.key
        return key in self._rules

    def __len__(self) -> int:
        return len(self._rules)

    def __iter__(self) -> Iterator[CPRule]:
        return iter(self.sorted())

    def keys(self) -> set[RuleKey]:
        return set(self._rules)

    def sorted(self) -> list[CPRule]:
        return [self._rules[k] for k in sorted(self._rules)]

    def with_body(self, body: tuple[int, ...]) -> list[CPRule]:
        return list(self._by_body.get(tuple(body), ()))

    def length1(self) -> list[CPRule]:
        return [r for r in self.sorted() if len(r.body) == 1]

    def for_head(self, head_rel: int) -> list[CPRule]:
        return [r for r in self.sorted() if r.head_rel == head_rel]

    def __eq__(self, other) -> bool:
        if not isinstance(other, RuleSet):
            return NotImplemented
        return self._rules == other._rules

    def __repr__(self) -> str:
        return f"RuleSet({len(self)} rules)"


def merge(base: RuleSet, new: RuleSet) -> RuleSet:
    out = RuleSet(base.sorted())
    for rule in new.sorted():
        out.add(rule)
    return out


def body_pairs(kg: KnowledgeGraph, body: tuple[int, ...]) -> set[tuple[int, int]]:
    """Distinct (x, y) with at least one grounding of the body chain."""
    first = kg.pairs(body[0])
    if len(body) == 1:
        return set(first)
    r2 = body[1]
    if r2 < kg.n_base_relations or kg.augmented:
        succ = kg.successors
    else:
        base2 = kg.base_of(r2)
        def succ(z, _r):
            return kg.index_tr.get((z, base2), ())
    out = set()
    for x, z in first:
        for y in succ(z, r2):
            out.add((x, y))
    return out


def ground_and_score(key: RuleKey, kg: KnowledgeGraph) -> tuple[int, float, float]:
    """Return (support, standard confidence, head coverage) of ``head <= body``."""
    head_rel, body = key
    bp = body_pairs(kg, tuple(body))
    hp = kg.pairs(head_rel)
    if not bp or not hp:
        raise UndefinedScoreError(f"rule {key} has {len(bp)} body pairs and {len(hp)} head pairs")
    support = len(bp & hp) if len(bp) < len(hp) else len(hp & bp)
    return support, support / len(bp), support / len(hp)


def _candidate_bodies(kg: KnowledgeGraph, head_rel: int) -> Counter:
    """Count, per body, the head pairs it connects (which equals its support)."""
    counts: Counter = Counter()
    for x, y in kg.pairs(head_rel):
        seen = set()
        for r in kg.relations_between(x, y):
            if r != head_rel:
                seen.add((r,))
        for r1, z in kg.out_edges.get(x, ()):
            for r2 in kg.relations_between(z, y):
                seen.add((r1, r2))
        counts.update(seen)
    return counts


def mine_seed_rules(
    kg: KnowledgeGraph,
    min_sc: float = DEFAULT_MIN_SC,
    min_hc: float = DEFAULT_MIN_HC,
    min_support: int = DEFAULT_MIN_SUPPORT,
    max_body_len: int = 2,
) -> RuleSet:
    """Exhaustively mine length-1 and length-2 CP rules above the thresholds."""
    for name, value in (("min_sc", min_sc), ("min_hc", min_hc)):
        if not 0.0 <= value <= 1.0:
            raise ValueError(f"{name} must lie in [0, 1], got {value}")
    rules = RuleSet()
    for head_rel in range(kg.n_base_relations):
        for body, count in sorted(_candidate_bodies(kg, head_rel).items()):
            if count < min_support or len(body) > max_body_len:
                continue
            support, sc, hc = ground_and_score((head_rel, body), kg)
            if sc >= min_sc and hc >= min_hc and support >= min_support:
                rules.add(CPRule(head_rel, body, sc, hc, support))
    logger.info("seed mining: %d rules", len(rules))
    return rules


def write_rules(rules: RuleSet, kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rule in rules.sorted():
            fh.write(f"{rule.format(kg)}\t{rule.sc!r}\t{rule.hc!r}\t{rule.support}\n")


def parse_rule_line(line: str, kg: KnowledgeGraph, path=None, lineno=None) -> CPRule:
    fields = line.split("\t")
    if len(fields) != 4:
        raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", path, lineno)
    text, sc_txt, hc_txt, sup_txt = fields
    if " <= " not in text:
        raise ParseError("missing ' <= ' between head and body", path, lineno)
    head_txt, body_txt = text.split(" <= ", 1)
    atoms = [a.strip() for a in body_txt.split(" & ")]
    if not 1 <= len(atoms) <= 2 or not all(atoms) or not head_txt.strip():
        raise ParseError(f"malformed rule {text!r}", path, lineno)
    try:
        head = kg.relation_id(head_txt.strip())
        body = tuple(kg.relation_id(a) for a in atoms)
    except DataError as exc:
        raise DataError(f"{path}:{lineno}: {exc}") from None
    if head >= kg.n_base_relations:
        raise ParseError("rule head must be a base relation", path, lineno)
    try:
        sc, hc, support = float(sc_txt), float(hc_txt), int(sup_txt)
    except ValueError:
        raise ParseError("sc/hc must be reals and support an integer", path, lineno) from None
    if not (math.isfinite(sc) and math.isfinite(hc) and 0 <= sc <= 1 and 0 <= hc <= 1):
        raise ParseError(f"sc/hc out of range [0, 1]: {sc_txt}, {hc_txt}", path, lineno)
    if support < 0:
        raise ParseError("negative support", path, lineno)
    if body == (head,):
        raise ParseError("a length-1 rule cannot have its head as body", path, lineno)
    return CPRule(head, body, sc, hc, support)


def read_rules(kg: KnowledgeGraph, path) -> RuleSet:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    rules = RuleSet()
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        rules.add(parse_rule_line(line, kg, path, lineno))
    return rules
