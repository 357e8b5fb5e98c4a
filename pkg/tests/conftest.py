from __future__ import annotations

import sys
import warnings
from pathlib import Path

import pytest

from kgvqa.answerers import PoolAnswerer, default_language_pool
from kgvqa.builder import BuildConfig, build_dataset, make_instance
from kgvqa.graph import EntityMeta, KnowledgeGraph, load_graph
from kgvqa.paths import sample_query_paths
from kgvqa.synthetic import random_kg

sys.path.insert(0, str(Path(__file__).parent))

TOY_DIR = Path(__file__).parent / "data" / "toy"

PT_TRIPLES = [
    ("pt_cruiser", "followed_by", "fiat_500x"),
    ("pt_cruiser", "brand", "chrysler_corp"),
    ("fiat_500x", "brand", "fiat_spa"),
]
PT_LABELS = {
    "pt_cruiser": "Chrysler PT Cruiser",
    "fiat_500x": "Fiat 500X",
    "chrysler_corp": "The Chrysler Corporation",
    "fiat_spa": "Fiat Automobiles S.p.A.",
    "followed_by": "followed by",
    "brand": "brand",
}


class FixedAnswerer(PoolAnswerer):
    """Question-only stub that always says the same thing."""

    def __init__(self, text="Tesla"):
        super().__init__([text])


def make_pt_graph(extra=(), meta=None) -> KnowledgeGraph:
    meta = meta if meta is not None else [
        EntityMeta("pt_cruiser", "vehicle", ("img/pt_cruiser_0.jpg", "img/pt_cruiser_1.jpg")),
    ]
    labels = dict(PT_LABELS)
    for h, r, t in extra:
        for x in (h, r, t):
            labels.setdefault(x, x.replace("_", " ").title())
    return KnowledgeGraph.from_triples(PT_TRIPLES + list(extra), labels, meta)


@pytest.fixture
def pt_graph():
    return make_pt_graph()


@pytest.fixture
def pt_path(pt_graph):
    (path,) = sample_query_paths(pt_graph, "pt_cruiser", 1, 7, 10)
    return path


@pytest.fixture
def pt_instance(pt_graph, pt_path):
    return make_instance(pt_graph, pt_path, 7, FixedAnswerer("Tesla"), split="test", id_="test-000000")


@pytest.fixture(scope="session")
def toy_files():
    return TOY_DIR / "triples.tsv", TOY_DIR / "labels.tsv", TOY_DIR / "meta.jsonl"


@pytest.fixture(scope="session")
def toy_graph(toy_files):
    return load_graph(*toy_files)


@pytest.fixture(scope="session")
def synth_graph():
    return random_kg(0, n_anchors=300)


@pytest.fixture(scope="session")
def synth_dataset(synth_graph):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        return build_dataset(synth_graph, BuildConfig(800, 100, 100), 1,
                             PoolAnswerer(default_language_pool(synth_graph)))


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for n in sorted(results):
            terminalreporter.write_line(results[n])
