"""Relation paths between entity pairs, weighted by PCRA resource flow."""

from __future__ import annotations

import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Iterator, Sequence

from kgloop.errors import DataError, ParseError
from kgloop.graph import KnowledgeGraph

logger = logging.getLogger(__name__)

RelationPath = tuple[int, ...]
PathList = list[tuple[RelationPath, float]]

DEFAULT_MIN_RELIABILITY = 0.01
DEFAULT_MAX_PATHS_PER_PAIR = 200


def pcra_flow(kg: KnowledgeGraph, head: int, path: Sequence[int]) -> dict[int, float]:
    """Push a unit of resource from ``head`` along ``path``.

    Every frontier entity splits its resource evenly among its successors under
    the next relation; entities without such successors drop their share.
    The returned map holds R(path | head, tail) for every reachable tail.
    """
    frontier = {head: 1.0}
    for r in path:
        nxt: dict[int, float] = defaultdict(float)
        for e, rho in frontier.items():
            succ = kg.successors(e, r)
            if not succ:
                continue
            share = rho / len(succ)
            for s in succ:
                nxt[s] += share
        frontier = nxt
        if not frontier:
            break
    return dict(frontier)


def _out_relations(kg: KnowledgeGraph, e: int) -> list[int]:
    return sorted({r for r, _ in kg.out_edges.get(e, ())})


def head_flows(kg: KnowledgeGraph, head: int, max_len: int = 2) -> dict[RelationPath, dict[int, float]]:
    """PCRA flow for every relation path of length <= ``max_len`` starting at ``head``."""
    if max_len not in (1, 2):
        raise ValueError("only paths of length 1 and 2 are supported")
    flows: dict[RelationPath, dict[int, float]] = {}
    for r1 in _out_relations(kg, head):
        succ = kg.successors(head, r1)
        share = 1.0 / len(succ)
        flows[(r1,)] = {s: share for s in succ}
        if max_len < 2:
            continue
        second: dict[int, dict[int, float]] = defaultdict(lambda: defaultdict(float))
        for mid in succ:
            for r2 in _out_relations(kg, mid):
                succ2 = kg.successors(mid, r2)
                part = share / len(succ2)
                acc = second[r2]
                for t in succ2:
                    acc[t] += part
        for r2, acc in second.items():
            flows[(r1, r2)] = dict(acc)
    return flows


def _rank_paths(paths: PathList, max_paths: int) -> PathList:
    paths.sort(key=lambda item: (-item[1], item[0]))
    return paths[:max_paths]


def paths_between(
    kg: KnowledgeGraph,
    head: int,
    tail: int,
    min_reliability: float = DEFAULT_MIN_RELIABILITY,
    max_paths_per_pair: int = DEFAULT_MAX_PATHS_PER_PAIR,
    flows: dict[RelationPath, dict[int, float]] | None = None,
) -> PathList:
    if flows is None:
        flows = head_flows(kg, head)
    found = [(p, tails[tail]) for p, tails in flows.items() if tail in tails and tails[tail] >= min_reliability]
    return _rank_paths(found, max_paths_per_pair)


class PathIndex:
    """(head, tail) -> paths sorted by descending reliability, ties by relation ids."""

    def __init__(self, entries: dict[tuple[int, int], PathList] | None = None):
        self._entries: dict[tuple[int, int], PathList] = dict(entries or {})

    def get(self, head: int, tail: int) -> PathList:
        return self._entries.get((head, tail), [])

    def __getitem__(self, pair) -> PathList:
        return self._entries[pair]

    def __contains__(self, pair) -> bool:
        return pair in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[int, int]]:
        return iter(self._entries)

    def items(self):
        return self._entries.items()

    def pairs(self):
        return self._entries.keys()

    def n_paths(self) -> int:
        return sum(len(v) for v in self._entries.values())

    def __eq__(self, other) -> bool:
        if not isinstance(other, PathIndex):
            return NotImplemented
        return self._entries == other._entries

    def __repr__(self) -> str:
        return f"PathIndex({len(self)} pairs, {self.n_paths()} paths)"


def enumerate_paths(
    kg: KnowledgeGraph,
    max_len: int = 2,
    min_reliability: float = DEFAULT_MIN_RELIABILITY,
    max_paths_per_pair: int = DEFAULT_MAX_PATHS_PER_PAIR,
) -> PathIndex:
    """Index paths for every ordered pair linked by a base-relation training triple."""
    if max_len != 2:
        raise ValueError("path enumeration is fixed to length <= 2")
    targets: dict[int, set[int]] = defaultdict(set)
    for h, _, t in kg.base_triples.tolist():
        targets[h].add(t)

    entries: dict[tuple[int, int], PathList] = {}
    for h in sorted(targets):
        wanted = targets[h]
        found: dict[int, PathList] = defaultdict(list)
        for path, tails in head_flows(kg, h, max_len).items():
            for t, rel in tails.items():
                if t in wanted and rel >= min_reliability:
                    found[t].append((path, rel))
        for t in sorted(found):
            entries[(h, t)] = _rank_paths(found[t], max_paths_per_pair)
    index = PathIndex(entries)
    logger.info("path index: %d pairs, %d paths", len(index), index.n_paths())
    return index


def save_path_index(index: PathIndex, kg: KnowledgeGraph, path) -> None:
    ent, rel = kg.entities, kg.relations
    with open(path, "w", encoding="utf-8") as fh:
        for (h, t), plist in index.items():
            for p, r in plist:
                rels = " ".join(rel.token(x) for x in p)
                fh.write(f"{ent.token(h)}\t{ent.token(t)}\t{rels}\t{r!r}\n")


def load_path_index(kg: KnowledgeGraph, path) -> PathIndex:
    entries: dict[tuple[int, int], PathList] = {}
    try:
        lines = Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    for lineno, line in enumerate(lines, start=1):
        if not line.strip() or line.startswith("#"):
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise ParseError(f"expected 4 tab-separated fields, got {len(fields)}", path, lineno)
        h_tok, t_tok, rels, rel_txt = fields
        try:
            h, t = kg.entity_id(h_tok), kg.entity_id(t_tok)
            p = tuple(kg.relation_id(x) for x in rels.split(" "))
        except DataError as exc:
            raise ParseError(str(exc), path, lineno) from None
        if not 1 <= len(p) <= 2:
            raise ParseError(f"path length {len(p)} outside 1..2", path, lineno)
        try:
            reliability = float(rel_txt)
        except ValueError:
            raise ParseError(f"bad reliability {rel_txt!r}", path, lineno) from None
        if not (math.isfinite(reliability) and 0.0 < reliability <= 1.0):
            raise ParseError(f"reliability {rel_txt} outside (0, 1]", path, lineno)
        entries.setdefault((h, t), []).append((p, reliability))
    return PathIndex(entries)
