"""Embedding-guided rule learning with coarse-to-fine pruning.

Candidate rules come from indexed paths. A cheap score (embedding relevance plus
concept co-occurrence) discards implausible candidates before the survivors are
grounded and checked against the SC/HC thresholds.
"""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from dataclasses import dataclass

import numpy as np

from kgloop.embedding import EmbeddingStore, path_vector
from kgloop.errors import UndefinedScoreError
from kgloop.graph import KnowledgeGraph
from kgloop.paths import PathIndex
from kgloop.rules import (
    DEFAULT_MIN_HC,
    DEFAULT_MIN_SC,
    DEFAULT_MIN_SUPPORT,
    CPRule,
    RuleSet,
    ground_and_score,
)

logger = logging.getLogger(__name__)

BETA_GRID = (0.5, 1.0, 5.0)
SCORE_THRESHOLD_GRID = (1.0, 5.0, 10.0)

SparseVec = dict[int, float]


@dataclass
class LearnerConfig:
    beta: float = 1.0
    score_threshold: float = 1.0
    min_sc: float = DEFAULT_MIN_SC
    min_hc: float = DEFAULT_MIN_HC
    min_support: int = DEFAULT_MIN_SUPPORT
    norm_order: int = 1

    def validate(self) -> "LearnerConfig":
        if self.score_threshold < 0 or self.beta < 0:
            raise ValueError("beta and score_threshold must be non-negative")
        if not (0 <= self.min_sc <= 1 and 0 <= self.min_hc <= 1):
            raise ValueError("min_sc and min_hc must lie in [0, 1]")
        if self.norm_order not in (1, 2):
            raise ValueError("norm_order must be 1 or 2")
        return self


@dataclass
class ConceptSignature:
    """Per base relation, averaged one-hot concept vectors of its head and tail arguments."""

    head: dict[int, SparseVec]
    tail: dict[int, SparseVec]
    n_base: int

    def is_empty(self) -> bool:
        return not self.head and not self.tail

    def argument(self, r: int, side: str) -> SparseVec:
        """Signature of the ``side`` argument of relation id ``r``; inverses swap sides."""
        if r >= self.n_base:
            r -= self.n_base
            side = "tail" if side == "head" else "head"
        table = self.head if side == "head" else self.tail
        return table.get(r, {})


def _average_one_hot(concepts: set[int]) -> SparseVec:
    if not concepts:
        return {}
    w = 1.0 / len(concepts)
    return {c: w for c in sorted(concepts)}


def build_concept_signatures(kg: KnowledgeGraph) -> ConceptSignature:
    heads: dict[int, set[int]] = defaultdict(set)
    tails: dict[int, set[int]] = defaultdict(set)
    if kg.concepts:
        for h, r, t in kg.base_triples.tolist():
            heads[r] |= kg.concepts.get(h, frozenset())
            tails[r] |= kg.concepts.get(t, frozenset())
    head = {r: _average_one_hot(cs) for r, cs in heads.items() if cs}
    tail = {r: _average_one_hot(cs) for r, cs in tails.items() if cs}
    return ConceptSignature(head, tail, kg.n_base_relations)


def sim(p: SparseVec, q: SparseVec) -> float:
    if len(p) > len(q):
        p, q = q, p
    return sum(v * q.get(c, 0.0) for c, v in p.items())


def score_semantic_relevance(head_rel: int, body, emb: EmbeddingStore, norm_order: int = 1) -> float:
    diff = emb.relation_vector(head_rel) - path_vector(body, emb)
    dist = float(np.abs(diff).sum()) if norm_order == 1 else float(np.linalg.norm(diff))
    return math.exp(-dist)


def score_cooccurrence(head_rel: int, body, signatures: ConceptSignature) -> float:
    body = tuple(body)
    score = sim(signatures.argument(head_rel, "head"), signatures.argument(body[0], "head"))
    score += sim(signatures.argument(head_rel, "tail"), signatures.argument(body[-1], "tail"))
    for a, b in zip(body, body[1:]):
        score += sim(signatures.argument(a, "tail"), signatures.argument(b, "head"))
    return score


def coarse_score(head_rel: int, body, emb: EmbeddingStore, signatures: ConceptSignature, beta: float,
                 norm_order: int = 1) -> float:
    e_sr = score_semantic_relevance(head_rel, body, emb, norm_order)
    if beta == 0:
        return e_sr
    return e_sr + beta * score_cooccurrence(head_rel, body, signatures)


@dataclass
class CandidateRule:
    head_rel: int
    body: tuple[int, ...]
    witness_pairs: int
    e_sr: float = 0.0
    e_co: float = 0.0
    coarse_score: float = 0.0
    sc: float | None = None
    hc: float | None = None
    support: int | None = None
    accepted: bool = False


def generate_candidates(kg: KnowledgeGraph, path_index: PathIndex, exclude=frozenset()) -> list[CandidateRule]:
    """Every (head, body) where some indexed pair carries both the path and the head relation."""
    witnesses: dict[tuple[int, tuple[int, ...]], int] = defaultdict(int)
    n_base = kg.n_base_relations
    for (h, t), plist in path_index.items():
        heads = [r for r in kg.relations_between(h, t) if r < n_base]
        for r in heads:
            for body, _ in plist:
                if body == (r,) or (r, body) in exclude:
                    continue
                witnesses[(r, body)] += 1
    return [CandidateRule(r, body, n) for (r, body), n in sorted(witnesses.items())]


@dataclass
class LearnResult:
    rules: RuleSet
    candidates: list[CandidateRule]


def learn_rules(
    kg: KnowledgeGraph,
    path_index: PathIndex,
    emb: EmbeddingStore,
    signatures: ConceptSignature,
    existing: RuleSet,
    config: LearnerConfig,
) -> LearnResult:
    """Return rules not already in ``existing`` that pass both pruning stages."""
    config.validate()
    candidates = generate_candidates(kg, path_index, existing.keys())
    new = RuleSet()
    for cand in candidates:
        cand.e_sr = score_semantic_relevance(cand.head_rel, cand.body, emb, config.norm_order)
        cand.e_co = score_cooccurrence(cand.head_rel, cand.body, signatures) if config.beta else 0.0
        cand.coarse_score = cand.e_sr + config.beta * cand.e_co
        if cand.coarse_score < config.score_threshold:
            continue
        try:
            cand.support, cand.sc, cand.hc = ground_and_score((cand.head_rel, cand.body), kg)
        except UndefinedScoreError:
            continue
        if cand.sc >= config.min_sc and cand.hc >= config.min_hc and cand.support >= config.min_support:
            cand.accepted = True
            new.add(CPRule(cand.head_rel, cand.body, cand.sc, cand.hc, cand.support))
    logger.info(
        "rule learning: %d candidates, %d passed coarse filter, %d accepted",
        len(candidates), sum(c.sc is not None for c in candidates), len(new),
    )
    return LearnResult(new, candidates)


def write_diagnostics(candidates: list[CandidateRule], kg: KnowledgeGraph, path) -> None:
    def fmt(x):
        return "-" if x is None else repr(x)

    with open(path, "w", encoding="utf-8") as fh:
        for c in candidates:
            body = " & ".join(kg.relation_token(r) for r in c.body)
            fh.write(
                f"{kg.relation_token(c.head_rel)}\t{body}\t{c.e_sr!r}\t{c.e_co!r}\t{c.coarse_score!r}"
                f"\t{fmt(c.sc)}\t{fmt(c.hc)}\t{int(c.accepted)}\n"
            )
