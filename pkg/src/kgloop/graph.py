"""Indexed triple store with vocabularies and an entity->concept map.

Relation ids are laid out so that base relations occupy ``[0, R)`` and their
inverses occupy ``[R, 2R)``; ``inverse(r) == (r + R) % 2R``.
"""

from __future__ import annotations

import logging
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from kgloop.errors import DataError, ParseError

logger = logging.getLogger(__name__)

INVERSE_PREFIX = "INV::"

TokenTriple = tuple[str, str, str]


class Vocab:
    """Token <-> dense id bijection."""

    def __init__(self, tokens: Iterable[str] = ()):
        self._tokens: list[str] = []
        self._ids: dict[str, int] = {}
        for tok in tokens:
            self.add(tok)

    def add(self, token: str) -> int:
        idx = self._ids.get(token)
        if idx is None:
            idx = len(self._tokens)
            self._ids[token] = idx
            self._tokens.append(token)
        return idx

    def id(self, token: str) -> int:
        try:
            return self._ids[token]
        except KeyError:
            raise KeyError(token) from None

    def get(self, token: str, default=None):
        return self._ids.get(token, default)

    def token(self, idx: int) -> str:
        if idx < 0:
            raise IndexError(idx)
        return self._tokens[idx]

    @property
    def tokens(self) -> list[str]:
        return list(self._tokens)

    def __contains__(self, token: str) -> bool:
        return token in self._ids

    def __len__(self) -> int:
        return len(self._tokens)

    def __iter__(self):
        return iter(self._tokens)


def _read_lines(path):
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip() or line.startswith("#"):
            continue
        yield lineno, line


def load_triples(path) -> list[TokenTriple]:
    """Parse a ``head<TAB>relation<TAB>tail`` file, keeping file order and duplicates."""
    triples = []
    for lineno, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 3 or not all(fields):
            raise ParseError(f"expected 3 tab-separated fields, got {len(fields)}", path, lineno)
        triples.append((fields[0], fields[1], fields[2]))
    return triples


def load_concepts(path) -> list[tuple[str, str]]:
    pairs = []
    for lineno, line in _read_lines(path):
        fields = line.split("\t")
        if len(fields) != 2 or not all(fields):
            raise ParseError(f"expected 2 tab-separated fields, got {len(fields)}", path, lineno)
        pairs.append((fields[0], fields[1]))
    return pairs


@dataclass(frozen=True)
class Triple:
    head: int
    relation: int
    tail: int


@dataclass(eq=False)
class KnowledgeGraph:
    """Read-only after construction; build instances with :func:`build_graph`."""

    entities: Vocab
    relations: Vocab
    concept_vocab: Vocab
    n_base_relations: int
    triples: np.ndarray  # stored triples (base plus inverse copies), shape (n, 3)
    concepts: dict[int, frozenset[int]] = field(default_factory=dict)
    augmented: bool = True

    def __post_init__(self):
        self.triples = np.asarray(self.triples, dtype=np.int64).reshape(-1, 3)
        self.triples.setflags(write=False)
        hr = defaultdict(list)
        tr = defaultdict(list)
        ht = defaultdict(list)
        by_r = defaultdict(list)
        out = defaultdict(list)
        for h, r, t in self.triples.tolist():
            hr[(h, r)].append(t)
            tr[(t, r)].append(h)
            ht[(h, t)].append(r)
            by_r[r].append((h, r, t))
            out[h].append((r, t))
        self.index_hr = {k: tuple(sorted(v)) for k, v in hr.items()}
        self.index_tr = {k: tuple(sorted(v)) for k, v in tr.items()}
        self.index_ht = {k: tuple(sorted(v)) for k, v in ht.items()}
        self.index_r = {k: tuple(v) for k, v in by_r.items()}
        self.out_edges = {k: tuple(sorted(v)) for k, v in out.items()}
        self._triple_set = frozenset(map(tuple, self.triples.tolist()))
        base = self.triples[self.triples[:, 1] < self.n_base_relations]
        self.base_triples = base
        self._base_pairs: dict[int, frozenset] = {}

    @property
    def n_entities(self) -> int:
        return len(self.entities)

    @property
    def n_relations(self) -> int:
        """Total relation ids including inverses."""
        return 2 * self.n_base_relations

    def inverse(self, r: int) -> int:
        return (r + self.n_base_relations) % (2 * self.n_base_relations)

    def is_inverse(self, r: int) -> bool:
        return r >= self.n_base_relations

    def base_of(self, r: int) -> int:
        return r % self.n_base_relations

    def contains(self, h: int, r: int, t: int) -> bool:
        return (h, r, t) in self._triple_set

    def __contains__(self, triple) -> bool:
        return tuple(triple) in self._triple_set

    def successors(self, e: int, r: int) -> tuple[int, ...]:
        return self.index_hr.get((e, r), ())

    def relations_between(self, h: int, t: int) -> tuple[int, ...]:
        return self.index_ht.get((h, t), ())

    def pairs(self, r: int) -> frozenset[tuple[int, int]]:
        """Distinct (head, tail) pairs connected by relation ``r`` (inverse ids allowed)."""
        cached = self._base_pairs.get(r)
        if cached is None:
            if r < self.n_base_relations or self.augmented:
                cached = frozenset((h, t) for h, _, t in self.index_r.get(r, ()))
            else:
                cached = frozenset((t, h) for h, _, t in self.index_r.get(self.base_of(r), ()))
            self._base_pairs[r] = cached
        return cached

    def relation_token(self, r: int) -> str:
        return self.relations.token(r)

    def relation_id(self, token: str) -> int:
        idx = self.relations.get(token)
        if idx is None:
            raise DataError(f"unknown relation {token!r}")
        return idx

    def entity_id(self, token: str) -> int:
        idx = self.entities.get(token)
        if idx is None:
            raise DataError(f"unknown entity {token!r}")
        return idx

    def encode(self, token_triples: Sequence[TokenTriple], what: str = "triples") -> np.ndarray:
        """Map token triples to ids; entities or relations unseen in training are rejected."""
        out = np.empty((len(token_triples), 3), dtype=np.int64)
        for i, (h, r, t) in enumerate(token_triples):
            hi, ti = self.entities.get(h), self.entities.get(t)
            ri = self.relations.get(r)
            if hi is None or ti is None:
                missing = h if hi is None else t
                raise DataError(f"{what}: entity {missing!r} does not occur in the training graph")
            if ri is None or ri >= self.n_base_relations:
                raise DataError(f"{what}: relation {r!r} does not occur in the training graph")
            out[i] = (hi, ri, ti)
        return out

    def format_triple(self, h: int, r: int, t: int) -> str:
        return f"({self.entities.token(h)}, {self.relations.token(r)}, {self.entities.token(t)})"


def build_graph(
    train: Sequence[TokenTriple],
    concept_pairs: Sequence[tuple[str, str]] | None = None,
    augment_inverses: bool = True,
) -> KnowledgeGraph:
    # Sorted vocabularies make ids independent of file order.
    ent_tokens = sorted({h for h, _, _ in train} | {t for _, _, t in train})
    rel_tokens = sorted({r for _, r, _ in train})
    for tok in rel_tokens:
        if tok.startswith(INVERSE_PREFIX):
            raise DataError(f"relation token {tok!r} uses the reserved prefix {INVERSE_PREFIX!r}")
    entities = Vocab(ent_tokens)
    relations = Vocab(rel_tokens)
    n_base = len(rel_tokens)
    for tok in rel_tokens:
        relations.add(INVERSE_PREFIX + tok)

    base = {(entities.id(h), relations.id(r), entities.id(t)) for h, r, t in train}
    stored = set(base)
    if augment_inverses:
        stored.update((t, r + n_base, h) for h, r, t in base)
    triples = np.array(sorted(stored), dtype=np.int64).reshape(-1, 3)

    concept_vocab = Vocab()
    concepts: dict[int, set[int]] = defaultdict(set)
    if concept_pairs:
        for c in sorted({c for _, c in concept_pairs}):
            concept_vocab.add(c)
        for ent, c in concept_pairs:
            eid = entities.get(ent)
            if eid is not None:
                concepts[eid].add(concept_vocab.id(c))
    kg = KnowledgeGraph(
        entities=entities,
        relations=relations,
        concept_vocab=concept_vocab,
        n_base_relations=n_base,
        triples=triples,
        concepts={e: frozenset(cs) for e, cs in concepts.items()},
        augmented=augment_inverses,
    )
    logger.info(
        "graph: %d entities, %d base relations, %d base triples, %d concepts",
        kg.n_entities, n_base, len(base), len(concept_vocab),
    )
    return kg


def relation_category(kg: KnowledgeGraph, relation: int, threshold: float = 1.5) -> str:
    """Classify a base relation as 1-1, 1-N, N-1 or N-N.

    Tails-per-head decides the tail side, heads-per-tail the head side.
    """
    if relation >= kg.n_base_relations:
        raise ValueError("relation_category expects a base relation")
    rows = kg.index_r.get(relation, ())
    if not rows:
        raise DataError(f"relation {kg.relation_token(relation)!r} has no triples")
    heads = {h for h, _, _ in rows}
    tails = {t for _, _, t in rows}
    tph = len(rows) / len(heads)
    hpt = len(rows) / len(tails)
    head_side = "N" if hpt > threshold else "1"
    tail_side = "N" if tph > threshold else "1"
    return f"{head_side}-{tail_side}"
