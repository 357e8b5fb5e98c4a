"""Multi-hop query-path enumeration under the unique-path and shared-relation filters."""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Iterator, NamedTuple

from .errors import AnchorIneligible
from .graph import KnowledgeGraph
from .utils import make_rng

HOP_CHOICES = (1, 2)


class Hop(NamedTuple):
    relation: str
    entity: str


class SharedRelation(NamedTuple):
    relation: str
    anchor_object: str
    terminal_object: str


@dataclass(frozen=True)
class QueryPath:
    """Anchor, ``n`` forward hops, and a relation shared by anchor and terminal.

    ``ground_truth`` is the terminal's object under ``shared_relation``;
    ``misleading`` is the anchor's object under the same relation.
    """

    anchor: str
    hops: tuple[Hop, ...]
    shared_relation: str
    ground_truth: str
    misleading: str

    @property
    def terminal(self) -> str:
        return self.hops[-1].entity

    @property
    def n(self) -> int:
        return len(self.hops)

    @property
    def hop_count(self) -> int:
        return len(self.hops) + 1

    @property
    def relations(self) -> tuple[str, ...]:
        """Relation chain in traversal order, ending with the shared relation."""
        return tuple(h.relation for h in self.hops) + (self.shared_relation,)

    @property
    def entities(self) -> tuple[str, ...]:
        return (self.anchor,) + tuple(h.entity for h in self.hops)

    def to_dict(self) -> dict:
        return {
            "anchor": self.anchor,
            "hops": [{"relation": h.relation, "entity": h.entity} for h in self.hops],
            "shared_relation": self.shared_relation,
            "ground_truth": self.ground_truth,
            "misleading": self.misleading,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QueryPath":
        return cls(
            anchor=d["anchor"],
            hops=tuple(Hop(h["relation"], h["entity"]) for h in d["hops"]),
            shared_relation=d["shared_relation"],
            ground_truth=d["ground_truth"],
            misleading=d["misleading"],
        )


def find_shared_relations(graph: KnowledgeGraph, anchor: str, terminal: str) -> list[SharedRelation]:
    """Relations held single-valued by both endpoints and pointing to different objects."""
    out = []
    common = graph.relations_of(anchor) & graph.relations_of(terminal)
    for r in sorted(common):
        a_obj = graph.unique_object(anchor, r)
        t_obj = graph.unique_object(terminal, r)
        if a_obj is not None and t_obj is not None and a_obj != t_obj:
            out.append(SharedRelation(r, a_obj, t_obj))
    return out


def iter_simple_paths(graph: KnowledgeGraph, anchor: str, n: int) -> Iterator[tuple[Hop, ...]]:
    """All directed paths of exactly ``n`` edges from ``anchor`` with no repeated entity."""
    if n not in HOP_CHOICES:
        raise ValueError(f"n must be one of {HOP_CHOICES}, got {n}")
    for r1, e1 in graph.out_edges(anchor):
        if e1 == anchor:
            continue
        if n == 1:
            yield (Hop(r1, e1),)
            continue
        for r2, e2 in graph.out_edges(e1):
            if e2 == anchor or e2 == e1:
                continue
            yield (Hop(r1, e1), Hop(r2, e2))


def count_paths(graph: KnowledgeGraph, anchor: str, terminal: str, n: int) -> int:
    if n not in HOP_CHOICES:
        raise ValueError(f"n must be one of {HOP_CHOICES}, got {n}")
    if anchor == terminal:
        return 0
    if n == 1:
        return sum(1 for r in graph.relations_of(anchor) if terminal in graph.sorted_objects(anchor, r))
    total = 0
    for _, mid in graph.out_edges(anchor):
        if mid == anchor or mid == terminal:
            continue
        for r2 in graph.relations_of(mid):
            if terminal in graph.sorted_objects(mid, r2):
                total += 1
    return total


def check_path_uniqueness(graph: KnowledgeGraph, anchor: str, terminal: str, n: int) -> bool:
    """True iff exactly one simple directed path of length ``n`` joins anchor to terminal."""
    return count_paths(graph, anchor, terminal, n) == 1


def check_anchor(graph: KnowledgeGraph, anchor: str) -> None:
    if not graph.type_label(anchor):
        raise AnchorIneligible(anchor, "no type label")
    if not graph.image_refs(anchor):
        raise AnchorIneligible(anchor, "no image refs")


def enumerate_query_paths(graph: KnowledgeGraph, anchor: str, n: int) -> list[QueryPath]:
    """Every valid QueryPath of ``n`` hops from ``anchor``, in canonical order."""
    paths = list(iter_simple_paths(graph, anchor, n))
    per_terminal = Counter(p[-1].entity for p in paths)
    out = []
    shared_cache: dict[str, list[SharedRelation]] = {}
    for hops in paths:
        terminal = hops[-1].entity
        if per_terminal[terminal] != 1:
            continue
        shared = shared_cache.get(terminal)
        if shared is None:
            shared = shared_cache[terminal] = find_shared_relations(graph, anchor, terminal)
        for s in shared:
            out.append(QueryPath(anchor, hops, s.relation, s.terminal_object, s.anchor_object))
    return out


def sample_query_paths(
    graph: KnowledgeGraph,
    anchor: str,
    n: int,
    rng_seed: int,
    max_count: int | None = None,
) -> list[QueryPath]:
    """Sample up to ``max_count`` valid paths uniformly without replacement.

    ``max_count=None`` returns the full valid set in canonical order.
    """
    check_anchor(graph, anchor)
    if max_count is not None and max_count < 1:
        raise ValueError("max_count must be >= 1")
    valid = enumerate_query_paths(graph, anchor, n)
    if max_count is None or max_count >= len(valid):
        return valid
    rng = make_rng(rng_seed, "paths", anchor, n)
    return rng.sample(valid, max_count)
