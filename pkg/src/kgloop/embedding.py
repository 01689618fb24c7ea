"""Rule-enhanced translational embeddings trained with path and relation-association losses.

The trainer minimises, per positive triple, a margin loss on the triple itself,
a margin loss on the reliability-weighted set of (rule-composed) paths linking
its endpoints, and a margin loss pulling relations tied by length-1 rules
together. Inverse relations reuse the negated base vector.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from kgloop.errors import DataError, NumericError, ParseError
from kgloop.graph import KnowledgeGraph
from kgloop.paths import PathIndex
from kgloop.rules import RuleSet

logger = logging.getLogger(__name__)

LEARNING_RATE_GRID = (0.001, 0.005, 0.01, 0.02, 0.05)
MARGIN_GRID = (1.0, 1.5, 3.0, 5.0)
WEIGHT_GRID = (0.5, 1.0, 5.0)


@dataclass
class TrainConfig:
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
    seed: int = 0

    def validate(self) -> "TrainConfig":
        for name in ("dim", "batch_size", "negatives", "epochs"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        for name in ("margin_triple", "margin_path", "margin_relation", "alpha_path", "alpha_relation"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.norm_order not in (1, 2):
            raise ValueError("norm_order must be 1 or 2")
        return self


@dataclass
class EmbeddingStore:
    entity: np.ndarray  # (n_entities, d)
    relation: np.ndarray  # (n_base_relations, d)

    @property
    def dim(self) -> int:
        return self.entity.shape[1]

    @property
    def n_base_relations(self) -> int:
        return self.relation.shape[0]

    def relation_vector(self, r: int) -> np.ndarray:
        n = self.n_base_relations
        return -self.relation[r - n] if r >= n else self.relation[r]

    def copy(self) -> "EmbeddingStore":
        return EmbeddingStore(self.entity.copy(), self.relation.copy())


# ---------------------------------------------------------------------------
# energies


def _norm(v: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return np.abs(v).sum(axis=-1)
    return np.sqrt((v * v).sum(axis=-1))


def _norm_grad(v: np.ndarray, order: int) -> np.ndarray:
    if order == 1:
        return np.sign(v)
    n = np.sqrt((v * v).sum(axis=-1, keepdims=True))
    return np.divide(v, n, out=np.zeros_like(v), where=n > 0)


def energy_triple(h, r, t, norm_order: int = 1) -> float:
    return float(_norm(np.asarray(h) + np.asarray(r) - np.asarray(t), norm_order))


def energy_relpair(r1, r2, norm_order: int = 1) -> float:
    return float(_norm(np.asarray(r1) - np.asarray(r2), norm_order))


def compose_path(path: Sequence[int], rules: RuleSet) -> tuple[int, ...]:
    """Replace a two-hop path by the head of the best matching rule, if any."""
    path = tuple(path)
    if len(path) != 2:
        return path
    matches = rules.with_body(path)
    if not matches:
        return path
    best = min(matches, key=lambda rule: (-rule.sc, rule.head_rel))
    return (best.head_rel,)


def path_vector(path: Sequence[int], emb: EmbeddingStore) -> np.ndarray:
    """Sum of relation vectors along the path; no composition."""
    if not path:
        raise ValueError("empty path")
    return np.sum([emb.relation_vector(r) for r in path], axis=0)


def path_embedding(path: Sequence[int], emb: EmbeddingStore, rules: RuleSet) -> np.ndarray:
    return path_vector(compose_path(path, rules), emb)


def energy_pathset(h, t, paths, emb: EmbeddingStore, rules: RuleSet, norm_order: int = 1) -> float:
    """Reliability-weighted mean of ``||h + p_i - t||`` over a non-empty path set."""
    if not paths:
        raise ValueError("energy_pathset needs at least one path")
    total = sum(rel for _, rel in paths)
    if total <= 0:
        raise ValueError("path reliabilities must be positive")
    h, t = np.asarray(h), np.asarray(t)
    energy = 0.0
    for p, rel in paths:
        energy += rel / total * float(_norm(h + path_embedding(p, emb, rules) - t, norm_order))
    return energy


# ---------------------------------------------------------------------------
# sampling


class NegativeSampler:
    """Uniform head-or-tail corruption filtered against the training graph."""

    max_rounds = 1000

    def __init__(self, kg: KnowledgeGraph):
        self.n_entities = kg.n_entities
        self._nr = max(kg.n_relations, 1)
        self._known = np.unique(self._keys(kg.triples))

    def _keys(self, triples: np.ndarray) -> np.ndarray:
        t = np.asarray(triples, dtype=np.int64)
        return (t[..., 0] * self._nr + t[..., 1]) * self.n_entities + t[..., 2]

    def _is_known(self, triples: np.ndarray) -> np.ndarray:
        keys = self._keys(triples)
        pos = np.searchsorted(self._known, keys)
        pos = np.minimum(pos, len(self._known) - 1)
        return self._known[pos] == keys if len(self._known) else np.zeros(keys.shape, bool)

    def corrupt(self, triples: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
        triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
        out = np.repeat(triples[:, None, :], k, axis=1)
        todo = np.ones(out.shape[:2], dtype=bool)
        for _ in range(self.max_rounds):
            n = int(todo.sum())
            if n == 0:
                break
            src = out[todo]
            src[:] = np.repeat(triples[:, None, :], k, axis=1)[todo]
            head_side = rng.random(n) < 0.5
            ents = rng.integers(0, self.n_entities, n)
            src[head_side, 0] = ents[head_side]
            src[~head_side, 2] = ents[~head_side]
            out[todo] = src
            todo[todo] = self._is_known(src)
        else:
            if todo.any():
                logger.warning("%d negatives could not avoid known triples", int(todo.sum()))
        return out


def sample_negatives(triple, kg: KnowledgeGraph, k: int, rng: np.random.Generator) -> list[tuple[int, int, int]]:
    if k < 1:
        raise ValueError("k must be >= 1")
    neg = NegativeSampler(kg).corrupt(np.asarray([triple]), k, rng)[0]
    return [tuple(int(x) for x in row) for row in neg]


# ---------------------------------------------------------------------------
# relation association from length-1 rules


@dataclass
class RelationAssociation:
    positives: dict[int, tuple[int, ...]]  # base relation -> associated relation ids (signed)
    negatives: dict[int, np.ndarray]  # base relation -> base relation ids

    @classmethod
    def from_rules(cls, rules: RuleSet, n_base: int) -> "RelationAssociation":
        n_all = 2 * n_base
        pos: dict[int, set[int]] = {r: set() for r in range(n_base)}
        for rule in rules.length1():
            head, b = rule.head_rel, rule.body[0]
            base_b = b % n_base
            if base_b == head:
                continue
            pos[head].add(b)
            # head(x,y) <= b(x,y) also ties b to head, flipping direction if b is inverse
            pos[base_b].add(head if b < n_base else (head + n_base) % n_all)
        positives = {r: tuple(sorted(s)) for r, s in pos.items() if s}
        negatives = {}
        for r, s in positives.items():
            bases = {x % n_base for x in s} | {r}
            negatives[r] = np.array([x for x in range(n_base) if x not in bases], dtype=np.int64)
        return cls(positives, negatives)


# ---------------------------------------------------------------------------
# batched loss


@dataclass
class Batch:
    pos: np.ndarray  # (B, 3)
    neg: np.ndarray  # (B, k, 3)
    path_owner: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))  # (P,)
    path_weight: np.ndarray = field(default_factory=lambda: np.zeros(0))  # (P,)
    path_rels: np.ndarray = field(default_factory=lambda: np.zeros((0, 2), np.int64))  # (P, 2), -1 pads
    rel_query: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))  # (Q,)
    rel_pos: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    rel_neg: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))


@dataclass
class LossParts:
    triple: float
    path: float
    relation: float

    @property
    def total(self) -> float:
        return self.triple + self.path + self.relation


def _signed(rel: np.ndarray, ids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    n = rel.shape[0]
    sign = np.where(ids >= n, -1.0, 1.0)
    return sign, rel[ids % n] * sign[..., None]


def loss_and_grad(ent: np.ndarray, rel: np.ndarray, batch: Batch, cfg: TrainConfig):
    """Summed joint loss over the batch and its subgradients w.r.t. both tables.

    Returns ``(parts, grad_entity, grad_relation)``; path and association parts
    are already multiplied by their weights.
    """
    order = cfg.norm_order
    n_base = rel.shape[0]
    g_ent = np.zeros_like(ent)
    g_rel = np.zeros_like(rel)
    pos, neg = batch.pos, batch.neg
    B, k = neg.shape[:2]
    h, r, t = pos[:, 0], pos[:, 1], pos[:, 2]
    nh, nt = neg[..., 0], neg[..., 2]
    r_sign, r_vec = _signed(rel, r)

    # triple margin
    v_pos = ent[h] + r_vec - ent[t]
    v_neg = ent[nh] + r_vec[:, None, :] - ent[nt]
    e_pos = _norm(v_pos, order)
    e_neg = _norm(v_neg, order)
    m = cfg.margin_triple + e_pos[:, None] - e_neg
    act = m > 0
    loss_t = float(m[act].sum())
    if act.any():
        cnt = act.sum(axis=1).astype(float)
        g_pos = _norm_grad(v_pos, order) * cnt[:, None]
        g_neg = _norm_grad(v_neg, order) * act[..., None]
        np.add.at(g_ent, h, g_pos)
        np.add.at(g_ent, t, -g_pos)
        np.add.at(g_ent, nh, -g_neg)
        np.add.at(g_ent, nt, g_neg)
        g_r = g_pos - g_neg.sum(axis=1)
        np.add.at(g_rel, r % n_base, g_r * r_sign[:, None])

    # path margin: corrupted endpoints reuse the positive pair's paths
    loss_p = 0.0
    if len(batch.path_owner) and cfg.alpha_path > 0:
        own, w, prels = batch.path_owner, batch.path_weight, batch.path_rels
        valid = prels >= 0
        ids = np.where(valid, prels, 0)
        sign, vecs = _signed(rel, ids)
        vecs = vecs * valid[..., None]
        p_vec = vecs.sum(axis=1)  # (P, d)
        vp = ent[h[own]] + p_vec - ent[t[own]]
        ep = np.bincount(own, weights=w * _norm(vp, order), minlength=B)
        vn = ent[nh[own]] + p_vec[:, None, :] - ent[nt[own]]  # (P, k, d)
        en_terms = w[:, None] * _norm(vn, order)
        en = np.zeros((B, k))
        np.add.at(en, own, en_terms)
        has = np.zeros(B, dtype=bool)
        has[own] = True
        m2 = cfg.margin_path + ep[:, None] - en
        act2 = (m2 > 0) & has[:, None]
        loss_p = cfg.alpha_path * float(m2[act2].sum())
        if act2.any():
            a = cfg.alpha_path
            cnt2 = act2.sum(axis=1).astype(float)
            c_pos = (a * w * cnt2[own])[:, None] * _norm_grad(vp, order)  # (P, d)
            c_neg = (a * w[:, None] * act2[own])[..., None] * _norm_grad(vn, order)  # (P, k, d)
            np.add.at(g_ent, h[own], c_pos)
            np.add.at(g_ent, t[own], -c_pos)
            np.add.at(g_ent, nh[own], -c_neg)
            np.add.at(g_ent, nt[own], c_neg)
            atom = c_pos - c_neg.sum(axis=1)
            for slot in range(prels.shape[1]):
                sel = valid[:, slot]
                if sel.any():
                    np.add.at(g_rel, ids[sel, slot] % n_base, atom[sel] * sign[sel, slot][:, None])

    # relation association margin
    loss_r = 0.0
    if len(batch.rel_query) and cfg.alpha_relation > 0:
        a = cfg.alpha_relation
        q = rel[batch.rel_query]
        ps, pv = _signed(rel, batch.rel_pos)
        nv = rel[batch.rel_neg]
        dp, dn = q - pv, q - nv
        m3 = cfg.margin_relation + _norm(dp, order) - _norm(dn, order)
        act3 = m3 > 0
        loss_r = a * float(m3[act3].sum())
        if act3.any():
            gp = a * _norm_grad(dp[act3], order)
            gn = a * _norm_grad(dn[act3], order)
            np.add.at(g_rel, batch.rel_query[act3], gp - gn)
            np.add.at(g_rel, batch.rel_pos[act3] % n_base, -gp * ps[act3][:, None])
            np.add.at(g_rel, batch.rel_neg[act3], gn)

    return LossParts(loss_t, loss_p, loss_r), g_ent, g_rel


# ---------------------------------------------------------------------------
# training


class TrainingPaths:
    """Composed, weight-normalised path sets for each base training triple, in CSR layout."""

    def __init__(self, triples: np.ndarray, path_index: PathIndex | None, rules: RuleSet):
        offsets = [0]
        rels: list[tuple[int, int]] = []
        weights: list[float] = []
        for h, r, t in np.asarray(triples).tolist():
            plist = [(p, w) for p, w in (path_index.get(h, t) if path_index is not None else ()) if p != (r,)]
            total = sum(w for _, w in plist)
            for p, w in plist:
                c = compose_path(p, rules)
                rels.append((c[0], c[1] if len(c) > 1 else -1))
                weights.append(w / total)
            offsets.append(len(rels))
        self.offsets = np.asarray(offsets, dtype=np.int64)
        self.rels = np.asarray(rels, dtype=np.int64).reshape(-1, 2)
        self.weights = np.asarray(weights, dtype=float)

    def gather(self, idx: np.ndarray):
        starts = self.offsets[idx]
        counts = self.offsets[idx + 1] - starts
        total = int(counts.sum())
        owner = np.repeat(np.arange(len(idx)), counts)
        if total == 0:
            return owner, np.zeros(0), np.zeros((0, 2), np.int64)
        within = np.arange(total) - np.repeat(np.cumsum(counts) - counts, counts)
        entry = starts[owner] + within
        return owner, self.weights[entry], self.rels[entry]


def _association_terms(rels: np.ndarray, assoc: RelationAssociation, k: int, rng: np.random.Generator):
    qs, ps, ns = [], [], []
    for r in np.unique(rels).tolist():
        positives = assoc.positives.get(r)
        pool = assoc.negatives.get(r)
        if not positives or pool is None or len(pool) == 0:
            continue
        count = int((rels == r).sum())
        m = min(k, len(pool))
        n = count * len(positives) * m
        qs.append(np.full(n, r, dtype=np.int64))
        ps.append(np.tile(np.repeat(np.asarray(positives, dtype=np.int64), m), count))
        ns.append(pool[rng.integers(0, len(pool), n)])
    if not qs:
        empty = np.zeros(0, np.int64)
        return empty, empty, empty
    return np.concatenate(qs), np.concatenate(ps), np.concatenate(ns)


def _normalize_rows(a: np.ndarray, rows=None) -> None:
    if rows is None:
        rows = slice(None)
    sub = a[rows]
    n = np.linalg.norm(sub, axis=1, keepdims=True)
    a[rows] = np.divide(sub, n, out=sub.copy(), where=n > 0)


def init_embeddings(n_entities: int, n_base: int, dim: int, rng: np.random.Generator) -> EmbeddingStore:
    bound = 6.0 / math.sqrt(dim)
    ent = rng.uniform(-bound, bound, (n_entities, dim))
    rel = rng.uniform(-bound, bound, (n_base, dim))
    _normalize_rows(ent)
    _normalize_rows(rel)
    return EmbeddingStore(ent, rel)


def rng_stream(seed: int, name: str, *extra: int) -> np.random.Generator:
    """Independent named sub-stream of one master seed."""
    import zlib

    return np.random.default_rng([seed, zlib.crc32(name.encode()), *extra])


@dataclass
class TrainResult:
    embeddings: EmbeddingStore
    loss_trace: list[float]


def train(
    kg: KnowledgeGraph,
    path_index: PathIndex | None,
    rules: RuleSet,
    config: TrainConfig,
    init: EmbeddingStore | None = None,
    on_epoch: Callable[[int, float], None] | None = None,
    stream_tag: int = 0,
) -> TrainResult:
    """Mini-batch subgradient descent on the joint margin loss.

    Entity rows touched by a batch are projected back onto the unit sphere after
    every update; relation rows are normalised once at initialisation.
    """
    config.validate()
    n_base = kg.n_base_relations
    triples = kg.base_triples
    if init is None:
        emb = init_embeddings(kg.n_entities, n_base, config.dim, rng_stream(config.seed, "init", stream_tag))
    else:
        if init.dim != config.dim:
            raise ValueError("initial embeddings have the wrong dimension")
        emb = init.copy()
    ent, rel = emb.entity, emb.relation
    if len(triples) == 0:
        return TrainResult(emb, [])

    shuffle_rng = rng_stream(config.seed, "shuffle", stream_tag)
    sample_rng = rng_stream(config.seed, "sampling", stream_tag)
    sampler = NegativeSampler(kg)
    tpaths = TrainingPaths(triples, path_index if config.alpha_path > 0 else None, rules)
    assoc = RelationAssociation.from_rules(rules, n_base)
    use_assoc = config.alpha_relation > 0 and bool(assoc.positives)

    trace = []
    n = len(triples)
    for epoch in range(1, config.epochs + 1):
        perm = shuffle_rng.permutation(n)
        batch_losses = []
        for start in range(0, n, config.batch_size):
            idx = perm[start:start + config.batch_size]
            pos = triples[idx]
            neg = sampler.corrupt(pos, config.negatives, sample_rng)
            owner, weight, prels = tpaths.gather(idx)
            batch = Batch(pos, neg, owner, weight, prels)
            if use_assoc:
                batch.rel_query, batch.rel_pos, batch.rel_neg = _association_terms(
                    pos[:, 1], assoc, config.negatives, sample_rng
                )
            parts, g_ent, g_rel = loss_and_grad(ent, rel, batch, config)
            loss = parts.total
            if not math.isfinite(loss):
                raise NumericError(
                    f"non-finite loss at epoch {epoch}, batch starting {start}: "
                    f"triple={parts.triple} path={parts.path} relation={parts.relation}"
                )
            if loss > 0:
                ent -= config.learning_rate * g_ent
                rel -= config.learning_rate * g_rel
                touched = np.unique(np.concatenate([pos[:, 0], pos[:, 2], neg[..., 0].ravel(), neg[..., 2].ravel()]))
                _normalize_rows(ent, touched)
            batch_losses.append(loss / len(idx))
        mean_loss = float(np.mean(batch_losses))
        trace.append(mean_loss)
        if on_epoch is not None:
            on_epoch(epoch, mean_loss)
        if epoch == 1 or epoch % 100 == 0 or epoch == config.epochs:
            logger.debug("epoch %d mean loss %.6f", epoch, mean_loss)
    return TrainResult(emb, trace)


# ---------------------------------------------------------------------------
# persistence


def save_embeddings(emb: EmbeddingStore, kg: KnowledgeGraph, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{emb.entity.shape[0]} {emb.relation.shape[0]} {emb.dim}\n")
        for i, row in enumerate(emb.entity.tolist()):
            fh.write(kg.entities.token(i) + " " + " ".join(map(repr, row)) + "\n")
        for i, row in enumerate(emb.relation.tolist()):
            fh.write(kg.relations.token(i) + " " + " ".join(map(repr, row)) + "\n")


def load_embeddings(kg: KnowledgeGraph, path) -> EmbeddingStore:
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    if not lines:
        raise ParseError("empty embedding file", path)
    try:
        n_ent, n_rel, dim = (int(x) for x in lines[0].split())
    except ValueError:
        raise ParseError("header must be 'n_entities n_relations d'", path, 1) from None
    if n_ent != kg.n_entities or n_rel != kg.n_base_relations:
        raise DataError(
            f"{path}: embeddings cover {n_ent} entities / {n_rel} relations, "
            f"graph has {kg.n_entities} / {kg.n_base_relations}"
        )
    if len(lines) - 1 != n_ent + n_rel:
        raise ParseError(f"expected {n_ent + n_rel} rows, found {len(lines) - 1}", path)
    ent = np.zeros((n_ent, dim))
    rel = np.zeros((n_rel, dim))
    for lineno, line in enumerate(lines[1:], start=2):
        fields = line.split(" ")
        if len(fields) != dim + 1:
            raise ParseError(f"expected {dim} values, found {len(fields) - 1}", path, lineno)
        try:
            values = [float(x) for x in fields[1:]]
        except ValueError:
            raise ParseError("non-numeric value", path, lineno) from None
        if lineno - 2 < n_ent:
            eid = kg.entities.get(fields[0])
            if eid is None:
                raise ParseError(f"unknown entity {fields[0]!r}", path, lineno)
            ent[eid] = values
        else:
            rid = kg.relations.get(fields[0])
            if rid is None or rid >= n_rel:
                raise ParseError(f"unknown base relation {fields[0]!r}", path, lineno)
            rel[rid] = values
    return EmbeddingStore(ent, rel)
