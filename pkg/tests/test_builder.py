from __future__ import annotations

import dataclasses
import warnings

import pytest

from kgvqa.answerers import PoolAnswerer, default_language_pool
from kgvqa.builder import (
    BuildConfig, Dataset, MCQInstance, Option, OptionRole, build_dataset, build_options,
    validate_dataset, validate_instance,
)
from kgvqa.errors import CorpusExhausted, DataError, DuplicateOption, MissingLabel
from kgvqa.graph import KnowledgeGraph
from kgvqa.paths import Hop, QueryPath
from kgvqa.templates import generate_rationale, render_question

from conftest import FixedAnswerer, PT_LABELS, make_pt_graph

FIXTURE_Q = "What is the brand of the entity that this vehicle is followed by?"
FIXTURE_RATIONALE = (
    "The entity in the image is Chrysler PT Cruiser. Chrysler PT Cruiser followed by Fiat 500X. "
    "Fiat 500X brand Fiat Automobiles S.p.A. So the answer is Fiat Automobiles S.p.A."
)


def test_render_question_fixture(pt_path):
    q0 = render_question(pt_path, "vehicle", 0, PT_LABELS)
    q1 = render_question(pt_path, "vehicle", 1, PT_LABELS)
    assert q0 == FIXTURE_Q
    assert q0 != q1 and q1.endswith("?") and "this vehicle" in q1
    assert "Chrysler PT Cruiser" not in q0 + q1


def test_render_question_two_hops():
    path = QueryPath("a", (Hop("f", "b"), Hop("g", "c")), "brand", "x", "y")
    labels = {"a": "A", "b": "B", "c": "C", "f": "followed by", "g": "successor", "brand": "brand", "x": "X", "y": "Y"}
    q = render_question(path, "car", 0, labels)
    assert q == "What is the brand of the successor of the entity that this car is followed by?"


def test_render_question_missing_label(pt_path):
    labels = {k: v for k, v in PT_LABELS.items() if k != "brand"}
    with pytest.raises(MissingLabel):
        render_question(pt_path, "vehicle", 0, labels)


def test_rationale_fixture(pt_path):
    assert generate_rationale(pt_path, PT_LABELS) == FIXTURE_RATIONALE


def test_rationale_three_hop_sentences():
    path = QueryPath("a", (Hop("f", "b"), Hop("g", "c")), "brand", "x", "y")
    labels = {"a": "A", "b": "B", "c": "C", "f": "f", "g": "g", "brand": "brand", "x": "X", "y": "Y"}
    text = generate_rationale(path, labels)
    assert text.count(". ") + 1 == 5 and text.endswith("So the answer is X.")
    with pytest.raises(MissingLabel):
        generate_rationale(path, {k: v for k, v in labels.items() if k != "b"})


def test_build_options_fixture(pt_path):
    opts, idx = build_options(pt_path, PT_LABELS, "Tesla", 7)
    assert {o.text for o in opts} == {
        "Fiat Automobiles S.p.A.", "Tesla", "Chrysler PT Cruiser", "The Chrysler Corporation"}
    assert opts[idx].role == OptionRole.GroundTruth
    assert sorted(o.role for o in opts) == sorted(OptionRole)
    assert build_options(pt_path, PT_LABELS, "Tesla", 7) == (opts, idx)


def test_build_options_duplicate(pt_path):
    with pytest.raises(DuplicateOption):
        build_options(pt_path, PT_LABELS, "Fiat Automobiles S.p.A.", 7)
    with pytest.raises(DuplicateOption):
        build_options(pt_path, PT_LABELS, "  fiat automobiles s.p.a. ", 7)
    with pytest.raises(ValueError):
        build_options(pt_path, PT_LABELS, "  ", 7)


def test_seed_changes_permutation_somewhere(pt_path):
    orders = {tuple(o.role for o in build_options(pt_path, PT_LABELS, "Tesla", s)[0]) for s in range(20)}
    assert len(orders) > 1


def test_fixture_instance_is_valid(pt_graph, pt_instance):
    assert pt_instance.question == FIXTURE_Q
    assert pt_instance.rationale == FIXTURE_RATIONALE
    assert pt_instance.hop_count == 2
    assert pt_instance.image_ref in pt_graph.image_refs("pt_cruiser")
    assert validate_instance(pt_instance, pt_graph) == []


def _kinds(violations):
    return {v.kind for v in violations}


def test_validate_duplicate_option(pt_graph, pt_instance):
    opts = list(pt_instance.options)
    lb = next(i for i, o in enumerate(opts) if o.role == OptionRole.LanguageBias)
    gt = opts[pt_instance.answer_index]
    opts[lb] = Option(gt.text, OptionRole.LanguageBias)
    bad = dataclasses.replace(pt_instance, options=tuple(opts))
    assert "DuplicateOption" in _kinds(validate_instance(bad, pt_graph))


def test_validate_broken_path(pt_instance):
    g = KnowledgeGraph.from_triples(
        [("pt_cruiser", "brand", "chrysler_corp"), ("fiat_500x", "brand", "fiat_spa")],
        PT_LABELS, list(make_pt_graph().meta.values()))
    assert "BrokenPath" in _kinds(validate_instance(pt_instance, g))


def test_validate_leak_and_answer_index(pt_graph, pt_instance):
    leaked = dataclasses.replace(pt_instance, question="What is the brand of what Chrysler PT Cruiser is followed by?")
    kinds = _kinds(validate_instance(leaked, pt_graph))
    assert {"AnchorLeak", "MissingSlot"} <= kinds
    wrong = dataclasses.replace(pt_instance, answer_index=(pt_instance.answer_index + 1) % 4)
    assert "AnswerIndex" in _kinds(validate_instance(wrong, pt_graph))


def test_instance_dict_round_trip(pt_instance):
    assert MCQInstance.from_dict(pt_instance.to_dict()) == pt_instance
    assert list(pt_instance.to_dict()) == [
        "id", "image_ref", "entity", "hop_count", "question", "template_variant", "options",
        "answer_index", "rationale", "path", "split"]
    with pytest.raises(DataError):
        MCQInstance.from_dict({"id": "x"})


def test_toy_build_six_instances(toy_graph, tmp_path):
    ds = build_dataset(toy_graph, BuildConfig(4, 1, 1), 7, PoolAnswerer(default_language_pool(toy_graph)))
    assert len(ds) == 6
    assert [len(ds.by_split(s)) for s in ("train", "dev", "test")] == [4, 1, 1]
    assert validate_dataset(ds, toy_graph) == {}
    ds.to_jsonl(tmp_path / "d.jsonl")
    assert Dataset.from_jsonl(tmp_path / "d.jsonl").instances == ds.instances


def test_build_is_deterministic(toy_graph):
    lb = PoolAnswerer(default_language_pool(toy_graph))
    a = build_dataset(toy_graph, BuildConfig(4, 1, 1), 7, lb)
    b = build_dataset(toy_graph, BuildConfig(4, 1, 1), 7, lb)
    assert a.instances == b.instances


def test_shortage_warns(pt_graph):
    g = make_pt_graph(extra=[("pt_cruiser", "country", "usa"), ("fiat_500x", "country", "italy")])
    with pytest.warns(CorpusExhausted):
        ds = build_dataset(g, BuildConfig(4, 1, 1), 0, FixedAnswerer("Tesla"))
    assert len(ds) == 2
    assert sum(ds.exhausted.values()) == 4


def test_duplicate_language_bias_drops_instance(pt_graph):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", CorpusExhausted)
        ds = build_dataset(pt_graph, BuildConfig(1, 0, 0), 0, FixedAnswerer("Fiat Automobiles S.p.A."))
    assert len(ds) == 0


def test_splits_anchor_disjoint_when_possible(synth_dataset):
    anchors = {s: {i.entity for i in synth_dataset.by_split(s)} for s in ("train", "dev", "test")}
    assert not anchors["train"] & anchors["dev"]
    assert not anchors["train"] & anchors["test"]
    assert not anchors["dev"] & anchors["test"]


def test_two_hop_fraction(synth_graph):
    ds = build_dataset(synth_graph, BuildConfig(200, 50, 50, two_hop_fraction=0.5), 2,
                       PoolAnswerer(default_language_pool(synth_graph)))
    for s in ("train", "dev", "test"):
        insts = ds.by_split(s)
        assert sum(i.hop_count == 2 for i in insts) * 2 == len(insts)


def test_benchmark_mix_targets():
    t = BuildConfig.benchmark_mix().targets()
    assert t["train"] == {2: 4134, 3: 5866}
    assert t["dev"] == {2: 548, 3: 452}
    assert t["test"] == {2: 500, 3: 500}


def test_duplicate_ids_rejected(pt_instance):
    with pytest.raises(DataError):
        Dataset([pt_instance, pt_instance])
