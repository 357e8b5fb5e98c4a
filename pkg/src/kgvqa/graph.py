"""Knowledge-graph store: loading, forward adjacency index, entity metadata."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from functools import cached_property
from types import MappingProxyType
from typing import Iterable, Iterator, Mapping, NamedTuple

from .errors import DuplicateMeta, MalformedLine, UnlabeledId
from .utils import Source, iter_lines, source_name

logger = logging.getLogger(__name__)


class Triple(NamedTuple):
    head: str
    relation: str
    tail: str


@dataclass(frozen=True)
class EntityMeta:
    entity: str
    type_label: str = ""
    image_refs: tuple[str, ...] = ()


_EMPTY: tuple[str, ...] = ()


def _valid_id(token: str) -> bool:
    return bool(token) and not any(ch.isspace() for ch in token)


class KnowledgeGraph:
    """Immutable labeled multi-digraph with a forward ``(head, relation) -> tails`` index.

    Only outgoing edges are indexed. Object sets are stored as sorted tuples so
    that iteration order is canonical; :meth:`objects_of` returns a frozenset.
    """

    def __init__(
        self,
        out: dict[str, dict[str, tuple[str, ...]]],
        labels: Mapping[str, str],
        meta: Mapping[str, EntityMeta],
        instance_of_relation: str | None = None,
    ):
        self._out = out
        self._labels = MappingProxyType(dict(labels))
        self._meta = MappingProxyType(dict(meta))
        self._n_triples = sum(len(objs) for rels in out.values() for objs in rels.values())
        self.instance_of_relation = instance_of_relation

    # -- construction ------------------------------------------------------

    @classmethod
    def from_triples(
        cls,
        triples: Iterable[tuple[str, str, str]],
        labels: Mapping[str, str],
        meta: Iterable[EntityMeta] | Mapping[str, EntityMeta] = (),
        instance_of_relation: str | None = None,
    ) -> "KnowledgeGraph":
        """Build a graph from in-memory data, applying the same checks as :func:`load_graph`."""
        build: dict[str, dict[str, set[str]]] = {}
        for h, r, t in triples:
            for id_ in (h, r, t):
                if id_ not in labels:
                    raise UnlabeledId(id_)
            build.setdefault(h, {}).setdefault(r, set()).add(t)
        if isinstance(meta, Mapping):
            meta_map = dict(meta)
        else:
            meta_map = {}
            for m in meta:
                if m.entity in meta_map:
                    raise DuplicateMeta(m.entity)
                meta_map[m.entity] = m
        return cls(_freeze(build), labels, meta_map, instance_of_relation)

    # -- basic accessors ---------------------------------------------------

    @property
    def labels(self) -> Mapping[str, str]:
        return self._labels

    @property
    def meta(self) -> Mapping[str, EntityMeta]:
        return self._meta

    @property
    def n_triples(self) -> int:
        return self._n_triples

    @cached_property
    def entities(self) -> tuple[str, ...]:
        """Sorted ids of every entity occurring in a triple."""
        ents: set[str] = set()
        for h, rels in self._out.items():
            ents.add(h)
            for objs in rels.values():
                ents.update(objs)
        return tuple(sorted(ents))

    @cached_property
    def relations(self) -> tuple[str, ...]:
        rels: set[str] = set()
        for by_rel in self._out.values():
            rels.update(by_rel)
        return tuple(sorted(rels))

    @cached_property
    def triples(self) -> frozenset[Triple]:
        return frozenset(self.iter_triples())

    def iter_triples(self) -> Iterator[Triple]:
        """Triples in canonical (sorted) order."""
        for h in sorted(self._out):
            rels = self._out[h]
            for r in sorted(rels):
                for t in rels[r]:
                    yield Triple(h, r, t)

    def counts(self) -> dict[str, int]:
        return {
            "entities": len(self.entities),
            "relations": len(self.relations),
            "triples": self._n_triples,
        }

    def label(self, id_: str) -> str:
        return self._labels[id_]

    def __contains__(self, triple: object) -> bool:
        try:
            h, r, t = triple  # type: ignore[misc]
        except (TypeError, ValueError):
            return False
        return t in self._out.get(h, {}).get(r, _EMPTY)

    def __repr__(self) -> str:
        c = self.counts()
        return f"KnowledgeGraph(entities={c['entities']}, relations={c['relations']}, triples={c['triples']})"

    # -- adjacency ---------------------------------------------------------

    def objects_of(self, entity: str, relation: str) -> frozenset[str]:
        return frozenset(self._out.get(entity, {}).get(relation, _EMPTY))

    def sorted_objects(self, entity: str, relation: str) -> tuple[str, ...]:
        return self._out.get(entity, {}).get(relation, _EMPTY)

    def relations_of(self, entity: str) -> frozenset[str]:
        return frozenset(self._out.get(entity, {}))

    def sorted_relations(self, entity: str) -> tuple[str, ...]:
        return tuple(sorted(self._out.get(entity, {})))

    def out_edges(self, entity: str) -> Iterator[tuple[str, str]]:
        """``(relation, tail)`` pairs leaving ``entity`` in canonical order."""
        rels = self._out.get(entity)
        if not rels:
            return
        for r in sorted(rels):
            for t in rels[r]:
                yield r, t

    def unique_object(self, entity: str, relation: str) -> str | None:
        objs = self.sorted_objects(entity, relation)
        return objs[0] if len(objs) == 1 else None

    # -- metadata ----------------------------------------------------------

    def type_label(self, entity: str) -> str | None:
        """Anchor type label from meta, else via the configured instance-of relation."""
        m = self._meta.get(entity)
        if m is not None and m.type_label:
            return m.type_label
        if self.instance_of_relation:
            obj = self.unique_object(entity, self.instance_of_relation)
            if obj is not None:
                return self._labels.get(obj) or None
        return None

    def image_refs(self, entity: str) -> tuple[str, ...]:
        m = self._meta.get(entity)
        return m.image_refs if m is not None else ()

    @cached_property
    def image_index(self) -> Mapping[str, tuple[str, ...]]:
        """``image_ref -> sorted entity ids`` depicted by that image."""
        index: dict[str, set[str]] = {}
        for ent, m in self._meta.items():
            for ref in m.image_refs:
                index.setdefault(ref, set()).add(ent)
        return MappingProxyType({k: tuple(sorted(v)) for k, v in index.items()})

    @cached_property
    def label_index(self) -> Mapping[str, tuple[str, ...]]:
        """Case-folded label -> sorted ids carrying that label."""
        index: dict[str, list[str]] = {}
        for id_ in sorted(self._labels):
            index.setdefault(self._labels[id_].casefold(), []).append(id_)
        return MappingProxyType({k: tuple(v) for k, v in index.items()})

    def anchor_candidates(self) -> list[str]:
        """Sorted entities with a type label and at least one image."""
        return [
            e for e in sorted(self._meta)
            if self._meta[e].image_refs and self.type_label(e)
        ]


def _freeze(build: dict[str, dict[str, set[str]]]) -> dict[str, dict[str, tuple[str, ...]]]:
    return {
        h: {r: tuple(sorted(objs)) for r, objs in rels.items()}
        for h, rels in build.items()
    }


def read_labels(source: Source) -> dict[str, str]:
    """Parse ``id<TAB>label`` lines.

    Text after the first tab is the label; when further tabs follow (alias lists
    in Wikidata5M dumps) the first alias is used. The first entry for an id wins.
    """
    labels: dict[str, str] = {}
    name = source_name(source)
    for line_no, line in enumerate(iter_lines(source), 1):
        if not line.strip():
            continue
        id_, sep, rest = line.partition("\t")
        label = rest.split("\t", 1)[0].strip()
        if not sep or not _valid_id(id_) or not label:
            raise MalformedLine(line_no, name, "expected id<TAB>label")
        labels.setdefault(id_, label)
    return labels


def read_meta(source: Source | None) -> dict[str, EntityMeta]:
    meta: dict[str, EntityMeta] = {}
    if source is None:
        return meta
    name = source_name(source)
    for line_no, line in enumerate(iter_lines(source), 1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise MalformedLine(line_no, name, str(exc)) from None
        if not isinstance(obj, dict) or not isinstance(obj.get("entity"), str) or not obj["entity"]:
            raise MalformedLine(line_no, name, "meta record needs an 'entity' string")
        refs = obj.get("image_refs", [])
        type_label = obj.get("type_label") or ""
        if not isinstance(refs, list) or not all(isinstance(r, str) for r in refs):
            raise MalformedLine(line_no, name, "'image_refs' must be a list of strings")
        if not isinstance(type_label, str):
            raise MalformedLine(line_no, name, "'type_label' must be a string")
        ent = obj["entity"]
        if ent in meta:
            raise DuplicateMeta(ent)
        meta[ent] = EntityMeta(ent, type_label.strip(), tuple(refs))
    return meta


def load_graph(
    triples_source: Source,
    labels_source: Source,
    meta_source: Source | None = None,
    *,
    instance_of_relation: str | None = None,
) -> KnowledgeGraph:
    """Load a graph from tab-separated triples, a labels file and a JSONL meta file.

    Duplicate triples collapse (set semantics). Raises :class:`MalformedLine`,
    :class:`UnlabeledId` or :class:`DuplicateMeta`.
    """
    labels = read_labels(labels_source)
    meta = read_meta(meta_source)

    build: dict[str, dict[str, set[str]]] = {}
    name = source_name(triples_source)
    for line_no, line in enumerate(iter_lines(triples_source), 1):
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 3 or not all(_valid_id(p) for p in parts):
            raise MalformedLine(line_no, name, "expected head<TAB>relation<TAB>tail")
        h, r, t = parts
        if h not in labels:
            raise UnlabeledId(h)
        if r not in labels:
            raise UnlabeledId(r)
        if t not in labels:
            raise UnlabeledId(t)
        rels = build.get(h)
        if rels is None:
            rels = build[h] = {}
        objs = rels.get(r)
        if objs is None:
            objs = rels[r] = set()
        objs.add(t)

    graph = KnowledgeGraph(_freeze(build), labels, meta, instance_of_relation)
    c = graph.counts()
    logger.info(
        "loaded graph: %d entities, %d relations, %d triples",
        c["entities"], c["relations"], c["triples"],
    )
    return graph


def objects_of(graph: KnowledgeGraph, entity: str, relation: str) -> frozenset[str]:
    return graph.objects_of(entity, relation)


def relations_of(graph: KnowledgeGraph, entity: str) -> frozenset[str]:
    return graph.relations_of(entity)
