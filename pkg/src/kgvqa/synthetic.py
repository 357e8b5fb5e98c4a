"""Seeded synthetic knowledge graphs for tests, demos and scale checks."""

from __future__ import annotations

import json
import os
import random
from pathlib import Path

import numpy as np

from .graph import EntityMeta, KnowledgeGraph

_SYLLABLES = ["ka", "ro", "vex", "li", "mar", "tun", "zo", "bel", "quin", "dra", "sil", "op", "neth", "cor", "yal", "fen"]

LINK_RELATIONS = {"L_followed": "followed by", "L_inspired": "inspired by", "L_successor": "successor"}
ATTR_RELATIONS = {"R_brand": "brand", "R_country": "country of origin", "R_designer": "designer"}
VALUE_PREFIX = {"R_brand": "Brand", "R_country": "Country", "R_designer": "Designer"}
ANCHOR_TYPES = ("vehicle", "venue", "aircraft")


def _name(rng: random.Random, k: int) -> str:
    word = "".join(rng.choice(_SYLLABLES) for _ in range(rng.randint(2, 3)))
    return f"{word.capitalize()} {k}"


def random_kg(
    seed: int = 0,
    n_anchors: int = 200,
    n_values: int = 12,
    images: tuple[int, int] = (1, 3),
    p_second_link: float = 0.5,
    p_attr: tuple[float, float, float] = (0.95, 0.8, 0.6),
    p_non_functional: float = 0.0,
    p_parallel: float = 0.0,
    types: tuple[str, ...] = ANCHOR_TYPES,
) -> KnowledgeGraph:
    """Anchors linked to each other by forward relations, each carrying functional attributes.

    ``p_non_functional`` gives an anchor a second object for an attribute;
    ``p_parallel`` duplicates a link edge under another relation.
    """
    rng = random.Random(seed)
    labels: dict[str, str] = {**LINK_RELATIONS, **ATTR_RELATIONS}
    triples: set[tuple[str, str, str]] = set()
    meta = []

    values: dict[str, list[str]] = {}
    for rel, prefix in VALUE_PREFIX.items():
        ids = []
        for k in range(n_values):
            vid = f"{rel[2:]}_{k}"
            labels[vid] = f"{prefix} {_name(rng, k)}"
            ids.append(vid)
        values[rel] = ids

    anchors = [f"A{i}" for i in range(n_anchors)]
    for i, a in enumerate(anchors):
        labels[a] = _name(rng, 100 + i)
        n_img = rng.randint(*images)
        meta.append(EntityMeta(a, types[i % len(types)], tuple(f"img/{a}_{j}.jpg" for j in range(n_img))))

    link_rels = sorted(LINK_RELATIONS)
    for a in anchors:
        n_links = 1 + (rng.random() < p_second_link)
        for r in rng.sample(link_rels, n_links):
            target = rng.choice(anchors)
            if target == a:
                continue
            triples.add((a, r, target))
            if rng.random() < p_parallel:
                other = rng.choice([x for x in link_rels if x != r])
                triples.add((a, other, target))
        for rel, p in zip(sorted(ATTR_RELATIONS, key=list(ATTR_RELATIONS).index), p_attr):
            if rng.random() < p:
                triples.add((a, rel, rng.choice(values[rel])))
                if rng.random() < p_non_functional:
                    triples.add((a, rel, rng.choice(values[rel])))
    return KnowledgeGraph.from_triples(sorted(triples), labels, meta)


def write_graph_files(graph: KnowledgeGraph, directory: str | os.PathLike, stem: str = "kg") -> tuple[Path, Path, Path]:
    """Write ``<stem>.triples.tsv``, ``<stem>.labels.tsv`` and ``<stem>.meta.jsonl``."""
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tp, lp, mp = d / f"{stem}.triples.tsv", d / f"{stem}.labels.tsv", d / f"{stem}.meta.jsonl"
    with open(tp, "w", encoding="utf-8", newline="\n") as fh:
        for h, r, t in graph.iter_triples():
            fh.write(f"{h}\t{r}\t{t}\n")
    with open(lp, "w", encoding="utf-8", newline="\n") as fh:
        for id_ in sorted(graph.labels):
            fh.write(f"{id_}\t{graph.labels[id_]}\n")
    with open(mp, "w", encoding="utf-8", newline="\n") as fh:
        for ent in sorted(graph.meta):
            m = graph.meta[ent]
            fh.write(json.dumps({"entity": m.entity, "type_label": m.type_label, "image_refs": list(m.image_refs)}) + "\n")
    return tp, lp, mp


def write_scale_graph(
    directory: str | os.PathLike,
    n_triples: int = 1_000_000,
    n_entities: int = 100_000,
    n_relations: int = 50,
    n_anchors: int = 1_000,
    seed: int = 0,
) -> tuple[Path, Path, Path]:
    """Large random graph files with a Zipf-ish relation mix (so some relations are functional-looking)."""
    rs = np.random.default_rng(seed)
    heads = rs.integers(0, n_entities, n_triples)
    rel_p = 1.0 / np.arange(1, n_relations + 1)
    rels = rs.choice(n_relations, n_triples, p=rel_p / rel_p.sum())
    tails = rs.integers(0, n_entities, n_triples)
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    tp, lp, mp = d / "scale.triples.tsv", d / "scale.labels.tsv", d / "scale.meta.jsonl"
    chunk = 200_000
    with open(tp, "w", encoding="utf-8", newline="\n") as fh:
        for s in range(0, n_triples, chunk):
            fh.write("".join(
                f"Q{h}\tP{r}\tQ{t}\n"
                for h, r, t in zip(heads[s:s + chunk].tolist(), rels[s:s + chunk].tolist(), tails[s:s + chunk].tolist())
            ))
    with open(lp, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("".join(f"Q{i}\tentity {i}\n" for i in range(n_entities)))
        fh.write("".join(f"P{j}\trelation {j}\n" for j in range(n_relations)))
    anchors = rs.choice(n_entities, n_anchors, replace=False)
    with open(mp, "w", encoding="utf-8", newline="\n") as fh:
        for a in sorted(anchors.tolist()):
            fh.write(json.dumps({"entity": f"Q{a}", "type_label": "thing", "image_refs": [f"img/Q{a}.jpg"]}) + "\n")
    return tp, lp, mp
