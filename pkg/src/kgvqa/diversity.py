"""Length-robust lexical diversity (MATTR, MTLD, HD-D) and question-prefix histograms."""

from __future__ import annotations

from collections import Counter
from typing import Iterable, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .utils import tokenize

DEFAULT_WINDOW = 50
DEFAULT_THRESHOLD = 0.72
DEFAULT_SAMPLE_SIZE = 42


class EmptyInput(ValueError):
    pass


class TooFewTokens(ValueError):
    pass


def mattr(tokens: Sequence[str], window: int = DEFAULT_WINDOW) -> float:
    """Moving-average type-token ratio; plain TTR when the text is shorter than the window."""
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(tokens)
    if n == 0:
        raise EmptyInput("mattr needs at least one token")
    if n < window:
        return len(set(tokens)) / n
    counts = Counter(tokens[:window])
    total = len(counts)
    for i in range(window, n):
        out_tok, in_tok = tokens[i - window], tokens[i]
        counts[out_tok] -= 1
        if counts[out_tok] == 0:
            del counts[out_tok]
        counts[in_tok] += 1
        total += len(counts)
    return total / ((n - window + 1) * window)


def _mtld_pass(tokens: Sequence[str], threshold: float) -> float:
    factors = 0.0
    types: set[str] = set()
    seg_len = 0
    ttr = 1.0
    for tok in tokens:
        seg_len += 1
        types.add(tok)
        ttr = len(types) / seg_len
        if ttr <= threshold:
            factors += 1.0
            types = set()
            seg_len = 0
            ttr = 1.0
    factors += (1.0 - ttr) / (1.0 - threshold)
    if factors == 0:
        return float(len(tokens))
    return len(tokens) / factors


def mtld(tokens: Sequence[str], threshold: float = DEFAULT_THRESHOLD) -> float:
    """Bidirectional MTLD: mean of the forward and reverse factor scans.

    A segment closes as soon as its running TTR reaches the threshold. A
    direction that never accumulates any factor contributes the token count.
    """
    if not 0.0 < threshold < 1.0:
        raise ValueError("threshold must lie strictly between 0 and 1")
    if not tokens:
        raise EmptyInput("mtld needs at least one token")
    forward = _mtld_pass(tokens, threshold)
    backward = _mtld_pass(list(reversed(tokens)), threshold)
    return (forward + backward) / 2.0


def _p_absent(n_tokens: int, type_count: int, draws: int) -> float:
    """Hypergeometric probability that a type with ``type_count`` copies is missed by ``draws``."""
    if n_tokens - type_count < draws:
        return 0.0
    p = 1.0
    for i in range(draws):
        p *= (n_tokens - type_count - i) / (n_tokens - i)
    return p


def hdd(tokens: Sequence[str], sample_size: int = DEFAULT_SAMPLE_SIZE) -> float:
    """HD-D: expected type coverage of a random draw of ``sample_size`` tokens, per draw."""
    if sample_size < 1:
        raise ValueError("sample_size must be >= 1")
    n = len(tokens)
    if n < sample_size:
        raise TooFewTokens(f"hdd needs >= {sample_size} tokens, got {n}")
    return sum(1.0 - _p_absent(n, c, sample_size) for c in Counter(tokens).values()) / sample_size


def prefix_histogram(questions: Iterable[str], depth: int) -> dict[str, int]:
    """Counts of lowercase leading token sequences of length ``min(depth, len)``."""
    if depth < 1:
        raise ValueError("depth must be >= 1")
    counts: Counter[str] = Counter()
    for q in questions:
        toks = tokenize(q)
        if toks:
            counts[" ".join(toks[:depth])] += 1
    return dict(sorted(counts.items(), key=lambda kv: (-kv[1], kv[0])))


def corpus_tokens(texts: Iterable[str]) -> list[str]:
    out: list[str] = []
    for t in texts:
        out.extend(tokenize(t))
    return out


def question_stats(
    questions: Sequence[str],
    window: int = DEFAULT_WINDOW,
    threshold: float = DEFAULT_THRESHOLD,
    sample_size: int = DEFAULT_SAMPLE_SIZE,
    prefix_depth: int = 2,
) -> dict:
    """Corpus-level statistics over the concatenated question tokens."""
    toks = corpus_tokens(questions)
    if not toks:
        raise EmptyInput("no tokens in questions")
    return {
        "mattr": mattr(toks, window),
        "mtld": mtld(toks, threshold),
        "hdd": hdd(toks, sample_size) if len(toks) >= sample_size else None,
        "fluency": "n/a",
        "prefix_histogram": prefix_histogram(questions, prefix_depth),
        "n_questions": len(questions),
        "n_tokens": len(toks),
    }


class LexicalDiversity(TransformerMixin, BaseEstimator):
    """Maps each text to ``[mattr, mtld, hdd]``; ``hdd`` is NaN for texts shorter than ``sample_size``."""

    def __init__(self, window=DEFAULT_WINDOW, threshold=DEFAULT_THRESHOLD, sample_size=DEFAULT_SAMPLE_SIZE):
        self.window = window
        self.threshold = threshold
        self.sample_size = sample_size

    def fit(self, X, y=None):
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        self.n_features_out_ = 3
        return self

    def transform(self, X):
        rows = []
        for text in X:
            toks = tokenize(text) if isinstance(text, str) else list(text)
            if not toks:
                rows.append([np.nan, np.nan, np.nan])
                continue
            h = hdd(toks, self.sample_size) if len(toks) >= self.sample_size else np.nan
            rows.append([mattr(toks, self.window), mtld(toks, self.threshold), h])
        return np.asarray(rows, dtype=float).reshape(-1, 3)

    def get_feature_names_out(self, input_features=None):
        return np.array(["mattr", "mtld", "hdd"], dtype=object)
