"""Link-prediction ranking with triple and path energies, metrics and explanations."""

from __future__ import annotations

import logging
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from kgloop.embedding import EmbeddingStore, _norm, compose_path, path_embedding
from kgloop.graph import KnowledgeGraph, relation_category
from kgloop.paths import DEFAULT_MAX_PATHS_PER_PAIR, DEFAULT_MIN_RELIABILITY, PathIndex, head_flows, paths_between
from kgloop.rules import CPRule, RuleSet

logger = logging.getLogger(__name__)

HITS_AT = (1, 3, 10)
CATEGORIES = ("1-1", "1-N", "N-1", "N-N")


def rank_of(scores: np.ndarray, true_index: int, known: np.ndarray | None = None) -> tuple[int, int]:
    """Raw and filtered rank of ``true_index`` when lower scores are better.

    A tied group places the true entity at its mean position, rounded up.
    ``known`` flags candidates that form other known triples; they are removed
    for the filtered rank.
    """
    s = scores[true_index]
    less = scores < s
    equal = scores == s
    raw = int(less.sum()) + (int(equal.sum()) + 2) // 2
    if known is None:
        return raw, raw
    keep = ~known
    keep[true_index] = True
    filtered = int((less & keep).sum()) + (int((equal & keep).sum()) + 2) // 2
    return raw, filtered


@dataclass
class Metrics:
    raw: dict[str, float]
    filtered: dict[str, float]
    categories: dict[tuple[str, str], float | None] = field(default_factory=dict)
    n_queries: int = 0

    @staticmethod
    def from_ranks(raw_ranks, filt_ranks) -> tuple[dict[str, float], dict[str, float]]:
        def summarise(ranks):
            ranks = np.asarray(ranks, dtype=float)
            if len(ranks) == 0:
                return {k: float("nan") for k in ("MR", "MRR", *(f"Hits@{n}" for n in HITS_AT))}
            out = {"MR": float(ranks.mean()), "MRR": float((1.0 / ranks).mean())}
            for n in HITS_AT:
                out[f"Hits@{n}"] = float((ranks <= n).mean())
            return out

        return summarise(raw_ranks), summarise(filt_ranks)

    def report(self) -> str:
        lines = [f"queries: {self.n_queries}"]
        for setting, values in (("raw", self.raw), ("filtered", self.filtered)):
            for key, value in values.items():
                lines.append(f"{setting}.{key}: {value!r}")
        lines.append("")
        lines.append("# filtered Hits@10 by relation category")
        lines.append("category\thead\ttail")
        for cat in CATEGORIES:
            cells = []
            for side in ("head", "tail"):
                v = self.categories.get((cat, side))
                cells.append("-" if v is None else repr(v))
            lines.append(f"{cat}\t{cells[0]}\t{cells[1]}")
        return "\n".join(lines) + "\n"


@dataclass
class PathStep:
    path: tuple[int, ...]
    reliability: float
    rule: CPRule | None


@dataclass
class Explanation:
    query: tuple[int, int, int]
    side: str
    predicted: int
    score: float | None
    paths: list[PathStep]
    path_term_used: bool

    def format(self, kg: KnowledgeGraph) -> str:
        h, r, t = self.query
        ent = kg.entities.token
        if self.side == "tail":
            pair = (h, self.predicted)
        else:
            pair = (self.predicted, t)
        slots = [ent(h), kg.relation_token(r), ent(t)]
        slots[0 if self.side == "head" else 2] = "?"
        lines = [f"query: ({', '.join(slots)})"]
        lines.append(f"candidate: {kg.format_triple(pair[0], r, pair[1])}")
        if self.score is not None:
            lines.append(f"score: {self.score!r}")
        if not self.path_term_used:
            lines.append("path term unused (path weight is 0); score is triple energy only")
        if not self.paths:
            lines.append("paths: none between the pair; score is triple energy only")
        for step in self.paths:
            rels = " -> ".join(kg.relation_token(x) for x in step.path)
            lines.append(f"path: {ent(pair[0])} -[{rels}]-> {ent(pair[1])}  reliability={step.reliability:.6g}")
            if step.rule is not None:
                lines.append(f"  rule: {step.rule.format(kg)}  sc={step.rule.sc:.4g}")
        return "\n".join(lines) + "\n"


class Evaluator:
    """Scores every entity as the missing slot of a query with the combined energy.

    Pairs absent from the path index contribute no path term unless
    ``on_demand_top_k`` is set, in which case the best ``k`` candidates by
    triple energy get their paths computed from ``kg`` and are re-ranked by
    the combined energy ahead of all other candidates.
    """

    def __init__(
        self,
        kg: KnowledgeGraph,
        emb: EmbeddingStore,
        rules: RuleSet,
        path_index: PathIndex | None,
        alpha_path: float = 1.0,
        norm_order: int = 1,
        known: set[tuple[int, int, int]] | None = None,
        on_demand_top_k: int = 0,
        min_reliability: float = DEFAULT_MIN_RELIABILITY,
        max_paths_per_pair: int = DEFAULT_MAX_PATHS_PER_PAIR,
    ):
        self.kg = kg
        self.emb = emb
        self.rules = rules
        self.path_index = path_index if path_index is not None else PathIndex()
        self.alpha_path = alpha_path
        self.norm_order = norm_order
        self.on_demand_top_k = on_demand_top_k
        self.min_reliability = min_reliability
        self.max_paths_per_pair = max_paths_per_pair
        self._terms: dict[tuple[int, int], list[tuple[tuple[int, ...], float, float]]] = {}
        self._flows: dict[int, dict] = {}
        self._tails_of = defaultdict(list)
        self._heads_of = defaultdict(list)
        for h, t in self.path_index.pairs():
            self._tails_of[h].append(t)
            self._heads_of[t].append(h)
        if known is None:
            known = set(map(tuple, kg.base_triples.tolist()))
        self._known_tails: dict[tuple[int, int], list[int]] = defaultdict(list)
        self._known_heads: dict[tuple[int, int], list[int]] = defaultdict(list)
        for h, r, t in known:
            self._known_tails[(h, r)].append(t)
            self._known_heads[(t, r)].append(h)

    # -- path energies -------------------------------------------------------

    def lookup(self, e: int, t: int) -> list[tuple[tuple[int, ...], float]]:
        plist = self.path_index.get(e, t)
        if plist or not self.on_demand_top_k:
            return plist
        flows = self._flows.get(e)
        if flows is None:
            flows = self._flows[e] = head_flows(self.kg, e)
        return paths_between(self.kg, e, t, self.min_reliability, self.max_paths_per_pair, flows)

    def _path_terms(self, e: int, t: int):
        terms = self._terms.get((e, t))
        if terms is None:
            he, ht = self.emb.entity[e], self.emb.entity[t]
            terms = []
            for p, rel in self.lookup(e, t):
                energy = float(_norm(he + path_embedding(p, self.emb, self.rules) - ht, self.norm_order))
                terms.append((p, rel, energy))
            self._terms[(e, t)] = terms
        return terms

    def path_energy(self, e: int, t: int, r: int | None = None) -> float | None:
        """Weighted path energy of the pair, ignoring the direct edge of ``r`` itself."""
        terms = [x for x in self._path_terms(e, t) if r is None or x[0] != (r,)]
        if not terms:
            return None
        total = sum(rel for _, rel, _ in terms)
        return sum(rel / total * energy for _, rel, energy in terms)

    def score_candidate(self, e: int, r: int, t: int) -> float:
        """Triple energy plus weighted path energy; lower is better."""
        emb = self.emb
        score = float(_norm(emb.entity[e] + emb.relation_vector(r) - emb.entity[t], self.norm_order))
        if self.alpha_path:
            ep = self.path_energy(e, t, r)
            if ep is not None:
                score += self.alpha_path * ep
        return score

    # -- ranking -------------------------------------------------------------

    def scores(self, anchor: int, r: int, side: str) -> np.ndarray:
        """Scores of every entity filling ``side`` ('head' or 'tail') of the query."""
        ent = self.emb.entity
        rv = self.emb.relation_vector(r)
        if side == "tail":
            scores = _norm(ent[anchor] + rv - ent, self.norm_order)
            with_paths = self._tails_of.get(anchor, [])
        else:
            scores = _norm(ent + rv - ent[anchor], self.norm_order)
            with_paths = self._heads_of.get(anchor, [])
        if not self.alpha_path:
            return scores
        cands = set(with_paths)
        top = None
        if self.on_demand_top_k:
            top = np.argsort(scores, kind="stable")[: self.on_demand_top_k]
            cands.update(top.tolist())
        for c in sorted(cands):
            pair = (anchor, c) if side == "tail" else (c, anchor)
            ep = self.path_energy(*pair, r)
            if ep is not None:
                scores[c] += self.alpha_path * ep
        if top is not None and len(top) < len(scores):
            # the shortlist is re-ranked by the combined energy and stays ahead of the rest,
            # which would otherwise win just by having no path term
            rest = np.ones(len(scores), dtype=bool)
            rest[top] = False
            gap = scores[top].max() - scores[rest].min()
            if gap >= 0:
                scores[rest] += gap + 1e-9 * max(1.0, abs(scores[top].max()))
        return scores

    def known_mask(self, anchor: int, r: int, side: str) -> np.ndarray:
        mask = np.zeros(self.kg.n_entities, dtype=bool)
        others = self._known_tails.get((anchor, r)) if side == "tail" else self._known_heads.get((anchor, r))
        if others:
            mask[others] = True
        return mask

    def rank(self, triple, side: str) -> tuple[int, int]:
        h, r, t = (int(x) for x in triple)
        if side == "tail":
            scores, true_idx, mask = self.scores(h, r, "tail"), t, self.known_mask(h, r, "tail")
        else:
            scores, true_idx, mask = self.scores(t, r, "head"), h, self.known_mask(t, r, "head")
        return rank_of(scores, true_idx, mask)

    def evaluate(self, triples: np.ndarray, threads: int = 1) -> Metrics:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        if threads > 1:
            # cache fills are idempotent, so concurrent writers are harmless
            with ThreadPoolExecutor(threads) as pool:
                results = list(pool.map(self._rank_both, triples.tolist()))
        else:
            results = [self._rank_both(x) for x in triples.tolist()]
        raw, filt = [], []
        per_cat: dict[tuple[str, str], list[int]] = defaultdict(list)
        cat_cache: dict[int, str] = {}
        for (h, r, t), ((rh, fh), (rt, ft)) in zip(triples.tolist(), results):
            raw += [rh, rt]
            filt += [fh, ft]
            cat = cat_cache.get(r)
            if cat is None:
                cat = cat_cache[r] = relation_category(self.kg, r)
            per_cat[(cat, "head")].append(fh)
            per_cat[(cat, "tail")].append(ft)
        raw_m, filt_m = Metrics.from_ranks(raw, filt)
        categories: dict[tuple[str, str], float | None] = {}
        for cat in CATEGORIES:
            for side in ("head", "tail"):
                ranks = per_cat.get((cat, side))
                categories[(cat, side)] = float(np.mean(np.asarray(ranks) <= 10)) if ranks else None
        return Metrics(raw_m, filt_m, categories, n_queries=len(raw))

    def _rank_both(self, triple):
        return self.rank(triple, "head"), self.rank(triple, "tail")

    # -- explanations --------------------------------------------------------

    def predict(self, triple, side: str = "tail") -> int:
        """Best filtered candidate for the query."""
        h, r, t = (int(x) for x in triple)
        anchor = h if side == "tail" else t
        scores = self.scores(anchor, r, side)
        mask = self.known_mask(anchor, r, side)
        scores = np.where(mask, np.inf, scores)
        return int(np.argmin(scores))

    def explain(self, triple, predicted: int, side: str = "tail") -> Explanation:
        h, r, t = (int(x) for x in triple)
        pair = (h, predicted) if side == "tail" else (predicted, t)
        return explain(
            (h, r, t), predicted, self.rules, self.lookup, side=side,
            alpha_path=self.alpha_path, score=self.score_candidate(pair[0], r, pair[1]),
        )


def explain(query, predicted: int, rules: RuleSet, path_lookup, side: str = "tail",
            alpha_path: float = 1.0, score: float | None = None) -> Explanation:
    """Paths linking the predicted pair, with the rule that condensed each one, if any."""
    h, r, t = query
    pair = (h, predicted) if side == "tail" else (predicted, t)
    lookup = path_lookup.get if isinstance(path_lookup, PathIndex) else path_lookup
    steps = []
    for p, rel in lookup(*pair):
        if p == (r,):
            continue
        composed = compose_path(p, rules)
        rule = None
        if composed != tuple(p):
            rule = rules.get((composed[0], tuple(p)))
        steps.append(PathStep(tuple(p), rel, rule))
    return Explanation((h, r, t), side, predicted, score, steps, bool(alpha_path))
