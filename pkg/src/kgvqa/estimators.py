"""Estimator-style front ends (``fit``/``transform``/``get_params``) over the functional core.

The answerers in :mod:`kgvqa.answerers` are predictors and
:class:`kgvqa.diversity.LexicalDiversity` is a transformer; this module adds the
sampler, the dataset builder and the intervention sampler, plus the input
validation helpers they share.
"""

from __future__ import annotations

from typing import Iterable, Sequence

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .answerers import Answerer, PoolAnswerer, default_language_pool
from .builder import BuildConfig, Dataset, MCQInstance, build_dataset
from .causal import DEFAULT_PAIR_COUNT, InterventionKind, PairSample, build_intervention_pairs
from .errors import AnchorIneligible
from .graph import KnowledgeGraph
from .paths import HOP_CHOICES, QueryPath, sample_query_paths
from .utils import derive_seed


def check_graph(graph) -> KnowledgeGraph:
    if not isinstance(graph, KnowledgeGraph):
        raise TypeError(f"expected a KnowledgeGraph, got {type(graph).__name__}")
    return graph


def check_instances(X) -> list[MCQInstance]:
    """Accept a :class:`Dataset` or an iterable of instances; reject anything else."""
    if isinstance(X, Dataset):
        return list(X.instances)
    items = list(X)
    for k, item in enumerate(items):
        if not isinstance(item, MCQInstance):
            raise TypeError(f"element {k} is {type(item).__name__}, not MCQInstance")
    return items


def check_hops(hops: Iterable[int]) -> tuple[int, ...]:
    hops = tuple(sorted(set(hops)))
    if not hops or any(h not in HOP_CHOICES for h in hops):
        raise ValueError(f"hops must be a non-empty subset of {HOP_CHOICES}")
    return hops


class QueryPathSampler(TransformerMixin, BaseEstimator):
    """``fit(graph)`` indexes eligible anchors; ``transform(anchors)`` samples their paths.

    Output is one list of :class:`QueryPath` per input anchor (empty for
    ineligible anchors).
    """

    def __init__(self, hops=(1, 2), max_per_anchor=None, random_state=0):
        self.hops = hops
        self.max_per_anchor = max_per_anchor
        self.random_state = random_state

    def fit(self, X, y=None):
        self.graph_ = check_graph(X)
        self.hops_ = check_hops(self.hops)
        self.anchors_ = self.graph_.anchor_candidates()
        return self

    def transform(self, X: Sequence[str]) -> list[list[QueryPath]]:
        check_is_fitted(self, "graph_")
        out = []
        for anchor in X:
            paths: list[QueryPath] = []
            for n in self.hops_:
                try:
                    paths.extend(sample_query_paths(
                        self.graph_, anchor, n, derive_seed(self.random_state, "paths", anchor, n),
                        self.max_per_anchor))
                except AnchorIneligible:
                    break
            out.append(paths)
        return out

    def fit_transform(self, X, y=None, **fit_params):
        self.fit(X)
        return self.transform(self.anchors_)


class MCQDatasetBuilder(BaseEstimator):
    """``fit(graph)`` builds ``dataset_``; the language-bias answerer defaults to a label-pool stub."""

    def __init__(self, n_train=10_000, n_dev=1_000, n_test=1_000, two_hop_fraction=None,
                 max_per_anchor=None, language_bias_answerer=None, random_state=0):
        self.n_train = n_train
        self.n_dev = n_dev
        self.n_test = n_test
        self.two_hop_fraction = two_hop_fraction
        self.max_per_anchor = max_per_anchor
        self.language_bias_answerer = language_bias_answerer
        self.random_state = random_state

    def fit(self, X, y=None):
        graph = check_graph(X)
        answerer: Answerer = self.language_bias_answerer or PoolAnswerer(default_language_pool(graph))
        config = BuildConfig(self.n_train, self.n_dev, self.n_test, self.two_hop_fraction, self.max_per_anchor)
        self.dataset_ = build_dataset(graph, config, self.random_state, answerer)
        self.exhausted_ = dict(self.dataset_.exhausted)
        return self


class InterventionSampler(BaseEstimator):
    """``fit(dataset)`` draws ``pairs_`` of one intervention kind."""

    def __init__(self, kind="TCE_Q", n_pairs=DEFAULT_PAIR_COUNT, graph=None,
                 relax_question_match=False, random_state=0):
        self.kind = kind
        self.n_pairs = n_pairs
        self.graph = graph
        self.relax_question_match = relax_question_match
        self.random_state = random_state

    def fit(self, X, y=None):
        instances = check_instances(X)
        self.pairs_: PairSample = build_intervention_pairs(
            instances, InterventionKind(self.kind), self.random_state, self.n_pairs,
            graph=self.graph, relax_question_match=self.relax_question_match)
        return self
