"""Desk-scale retrieval tools: a KG-rendered passage corpus with BM25 ranking, and a
manifest-backed image resolver."""

from __future__ import annotations

import math
from collections import Counter
from dataclasses import dataclass
from functools import cached_property
from typing import NamedTuple, Sequence

from .graph import KnowledgeGraph
from .utils import tokenize


class Passage(NamedTuple):
    id: str
    text: str


def render_triple(graph: KnowledgeGraph, h: str, r: str, t: str) -> str:
    text = f"{graph.label(h)} {graph.label(r)} {graph.label(t)}"
    return text if text.endswith(".") else text + "."


def triples_to_corpus(graph: KnowledgeGraph) -> "Corpus":
    """One passage per triple, ids assigned in canonical triple order."""
    width = max(1, len(str(graph.n_triples)))
    passages = [
        Passage(f"p{k:0{width}d}", render_triple(graph, h, r, t))
        for k, (h, r, t) in enumerate(graph.iter_triples())
    ]
    return Corpus(passages)


@dataclass
class Corpus:
    passages: list[Passage]
    k1: float = 1.5
    b: float = 0.75

    def __len__(self) -> int:
        return len(self.passages)

    @cached_property
    def _index(self):
        docs = [tokenize(p.text) for p in self.passages]
        tfs = [Counter(d) for d in docs]
        lengths = [len(d) for d in docs]
        avgdl = (sum(lengths) / len(lengths)) if lengths else 0.0
        df: Counter[str] = Counter()
        postings: dict[str, list[int]] = {}
        for k, tf in enumerate(tfs):
            for term in tf:
                df[term] += 1
                postings.setdefault(term, []).append(k)
        n = len(docs)
        idf = {t: math.log((n - d + 0.5) / (d + 0.5) + 1.0) for t, d in df.items()}
        return tfs, lengths, avgdl, idf, postings

    def scores(self, query: str) -> dict[int, float]:
        """BM25 score for every passage sharing at least one query term."""
        if not self.passages:
            return {}
        tfs, lengths, avgdl, idf, postings = self._index
        out: dict[int, float] = {}
        for term in tokenize(query):
            for k in postings.get(term, ()):
                tf = tfs[k][term]
                norm = tf + self.k1 * (1 - self.b + self.b * lengths[k] / avgdl)
                out[k] = out.get(k, 0.0) + idf[term] * tf * (self.k1 + 1) / norm
        return out

    def search(self, query: str, k: int = 3, allow_zero_score: bool = False) -> list[tuple[Passage, float]]:
        if k < 1:
            raise ValueError("k must be >= 1")
        scored = self.scores(query)
        if allow_zero_score:
            for i in range(len(self.passages)):
                scored.setdefault(i, 0.0)
        ranked = sorted(scored.items(), key=lambda kv: (-kv[1], self.passages[kv[0]].id))
        return [(self.passages[i], s) for i, s in ranked[:k]]


def text_retrieve(corpus: Corpus, query: str, k: int = 3, allow_zero_score: bool = False) -> list[Passage]:
    """Top-``k`` passages by BM25, ties broken by passage id."""
    return [p for p, _ in corpus.search(query, k, allow_zero_score)]


class ManifestImageResolver:
    """Looks image refs up in the entity meta manifest; returns ranked entity labels."""

    def __init__(self, graph: KnowledgeGraph):
        self.graph = graph

    def __call__(self, image_ref: str) -> list[str]:
        ents = self.graph.image_index.get(image_ref, ())
        return [self.graph.label(e) for e in ents]


class CorpusRetriever:
    """``(query, k) -> passages`` adapter over a :class:`Corpus`."""

    def __init__(self, corpus: Corpus, allow_zero_score: bool = False):
        self.corpus = corpus
        self.allow_zero_score = allow_zero_score

    def __call__(self, query: str, k: int) -> Sequence[Passage]:
        return text_retrieve(self.corpus, query, k, self.allow_zero_score)
