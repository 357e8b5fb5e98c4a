from __future__ import annotations

import json

import pytest

from kgvqa.answerers import OracleAnswerer, RandomAnswerer, RolePickerAnswerer, VisionBiasedAnswerer
from kgvqa.builder import OptionRole
from kgvqa.evaluation import evaluate


def _check_report(rep):
    total = sum(rep.role_distribution.values()) + rep.invalid_rate
    assert abs(total - 1.0) < 1e-9
    n2, n3 = rep.n_instances["2hop"], rep.n_instances["3hop"]
    weighted = ((rep.accuracy_2hop or 0) * n2 + (rep.accuracy_3hop or 0) * n3) / (n2 + n3)
    assert abs(weighted - rep.accuracy_overall) < 1e-12


def test_oracle(synth_graph, synth_dataset):
    rep = evaluate(OracleAnswerer(synth_graph), synth_dataset, "test")
    assert rep.accuracy_overall == 1.0
    assert rep.role_distribution["GroundTruth"] == 1.0
    _check_report(rep)


def test_role_picker_language_bias(synth_dataset):
    rep = evaluate(RolePickerAnswerer(OptionRole.LanguageBias), synth_dataset, "dev")
    assert rep.accuracy_overall == 0.0
    assert rep.role_distribution == {"GroundTruth": 0.0, "LanguageBias": 1.0, "VisionBias": 0.0,
                                     "SemanticMisleading": 0.0}


def test_vision_biased(synth_graph, synth_dataset):
    rep = evaluate(VisionBiasedAnswerer(synth_graph), synth_dataset, "all")
    assert rep.accuracy_overall == 0.0 and rep.role_distribution["VisionBias"] == 1.0
    _check_report(rep)


def test_random_replays_and_sums(synth_dataset):
    a = evaluate(RandomAnswerer(4), synth_dataset, "all")
    b = evaluate(RandomAnswerer(4), synth_dataset, "all")
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    _check_report(a)


def test_invalid_answers_bucketed(pt_instance):
    from kgvqa.graph import KnowledgeGraph
    from conftest import PT_LABELS
    broken = KnowledgeGraph.from_triples([], PT_LABELS, [])
    rep = evaluate(OracleAnswerer(broken), [pt_instance], "test")
    assert rep.invalid_rate == 1.0 and rep.accuracy_overall == 0.0
    assert rep.records[0]["error"].startswith("BrokenPath")


def test_unknown_split(synth_dataset):
    with pytest.raises(KeyError):
        evaluate(RandomAnswerer(0), synth_dataset, "validation")


def test_csv(synth_graph, synth_dataset):
    csv_text = evaluate(OracleAnswerer(synth_graph), synth_dataset, "test").to_csv()
    rows = csv_text.splitlines()
    assert rows[0].split(",")[:5] == ["answerer", "split", "bucket", "n", "accuracy"]
    assert rows[1].startswith("oracle,test,all,100,1.000000")
