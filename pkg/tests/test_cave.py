from __future__ import annotations

import dataclasses

import pytest

from kgvqa.answerers import AnswerRecord, Answerer, OracleAnswerer
from kgvqa.cave import (
    AgentTrace, CaveAgent, CaveConfig, LLMDecomposer, TemplateDecomposer, ToolSet, decompose,
    normalize_decomposition, parse_numbered_list, replay_trace, run_cave, stability_check,
)
from kgvqa.errors import DecompositionUnparseable
from kgvqa.graph import EntityMeta
from kgvqa.templates import render_question
from kgvqa.utils import stable_hash

from conftest import make_pt_graph


class ScriptedAnswerer(Answerer):
    def __init__(self, reply):
        self.reply = reply

    def answer(self, image_ref, question, options=None, context=None):
        return AnswerRecord(self.reply, None, self.reply)


class SurfaceDecomposer:
    """Keys on surface wording, so a rephrasing changes its output."""

    def decompose(self, question, image_ref, feedback=None):
        if not question.strip():
            raise DecompositionUnparseable("empty")
        return [f"Step {stable_hash(question) % 97}?", question]


class ImageSensitiveDecomposer:
    def decompose(self, question, image_ref, feedback=None):
        return [f"What is in {image_ref}?", "<ANSWER_1>?"]


def test_llm_decomposition_world_cup_example():
    reply = ('1. "What this venue is?"\n'
             "2. Which country hosted the next World Cup after <ANSWER_1>?")
    d = LLMDecomposer(ScriptedAnswerer(reply))
    subqs = decompose("Which country is hosting the next World Cup after this venue?", "img/v.jpg", d)
    assert [s.text for s in subqs] == [
        "What this venue is?", "Which country hosted the next World Cup after <ANSWER_1>?"]
    assert [s.index for s in subqs] == [1, 2]
    filled = subqs[1].text.replace("<ANSWER_1>", "Allianz Arena")
    assert filled == "Which country hosted the next World Cup after Allianz Arena?"


def test_unparseable():
    with pytest.raises(DecompositionUnparseable):
        parse_numbered_list("I cannot help with that.")
    with pytest.raises(DecompositionUnparseable):
        decompose("", None, TemplateDecomposer(["brand"]))
    with pytest.raises(DecompositionUnparseable):
        decompose("  ", None, LLMDecomposer(ScriptedAnswerer("1. x")))


def test_template_decomposition_fixture(pt_graph, pt_instance):
    d = TemplateDecomposer.from_graph(pt_graph)
    subqs = decompose(pt_instance.question, pt_instance.image_ref, d)
    assert len(subqs) == 2
    assert subqs[0].text == "What is this vehicle?"
    assert "<ANSWER_1>" in subqs[1].text


def test_template_decomposer_stable_on_variants(synth_graph, synth_dataset):
    d = TemplateDecomposer.from_graph(synth_graph)
    for inst in synth_dataset.by_split("dev"):
        verdict = stability_check(d, inst, synth_graph)
        assert verdict.stable, (inst.id, verdict.reason)
        v1 = render_question(inst.path, synth_graph.type_label(inst.entity), 1, synth_graph.labels)
        assert normalize_decomposition(decompose(v1, inst.image_ref, d)) == \
            normalize_decomposition(decompose(inst.question, inst.image_ref, d))


def test_surface_decomposer_unstable(pt_graph, pt_instance):
    verdict = stability_check(SurfaceDecomposer(), pt_instance, pt_graph)
    assert not verdict.stable and "rephrasing" in verdict.reason


def test_image_check(pt_instance):
    two = make_pt_graph()
    assert not stability_check(ImageSensitiveDecomposer(), pt_instance, two).stable
    one = make_pt_graph(meta=[EntityMeta("pt_cruiser", "vehicle", (pt_instance.image_ref,))])
    verdict = stability_check(TemplateDecomposer.from_graph(one), pt_instance, one)
    assert verdict.stable and any("vacuous" in n for n in verdict.notes)


def test_run_cave_fixture(pt_graph, pt_instance):
    tools = ToolSet.from_graph(pt_graph)
    rec, trace = run_cave(pt_instance, tools, OracleAnswerer(pt_graph), decomposer=TemplateDecomposer.from_graph(pt_graph),
                          graph=pt_graph)
    assert rec.canonical_answer == "Fiat Automobiles S.p.A."
    assert rec.choice_index == pt_instance.answer_index
    assert len(trace.subquestions) == 2
    assert all(s.resolved_answer for s in trace.subquestions)
    assert trace.subquestions[0].resolved_answer == "Chrysler PT Cruiser"
    assert trace.dangling_evidence() == []
    assert trace.final_answer == "Fiat Automobiles S.p.A." and trace.flags == []


def test_unstable_rounds_are_capped(pt_graph, pt_instance):
    tools = ToolSet.from_graph(pt_graph)
    _, trace = run_cave(pt_instance, tools, OracleAnswerer(pt_graph), CaveConfig(max_reflection_rounds=2),
                        decomposer=SurfaceDecomposer(), graph=pt_graph)
    assert len(trace.rounds) == 2
    assert "unstable_final" in trace.flags


def test_fallback_decomposer_recovers(pt_graph, pt_instance):
    tools = ToolSet.from_graph(pt_graph)
    rec, trace = run_cave(pt_instance, tools, OracleAnswerer(pt_graph), decomposer=SurfaceDecomposer(),
                          graph=pt_graph, fallback_decomposer=TemplateDecomposer.from_graph(pt_graph))
    assert len(trace.rounds) == 2 and "unstable_final" not in trace.flags
    assert rec.choice_index == pt_instance.answer_index


def test_image_resolver_failure_degrades(pt_graph, pt_instance):
    tools = dataclasses.replace(ToolSet.from_graph(pt_graph), image_resolver=lambda ref: [])
    rec, trace = run_cave(pt_instance, tools, OracleAnswerer(pt_graph),
                          decomposer=TemplateDecomposer.from_graph(pt_graph), graph=pt_graph)
    assert any(f.startswith("tool_failure:image_resolver") for f in trace.flags)
    assert trace.subquestions[0].low_confidence


def test_text_retriever_exception_recorded(pt_graph, pt_instance):
    def boom(query, k):
        raise RuntimeError("index offline")
    tools = dataclasses.replace(ToolSet.from_graph(pt_graph), text_retriever=boom)
    rec, trace = run_cave(pt_instance, tools, OracleAnswerer(pt_graph),
                          decomposer=TemplateDecomposer.from_graph(pt_graph), graph=pt_graph)
    failed = [t for t in trace.tool_calls if not t.ok]
    assert failed and "index offline" in failed[0].error
    assert trace.final_answer  # still answered, by the answerer alone


def test_trace_replays(synth_graph, synth_dataset):
    tools = ToolSet.from_graph(synth_graph)
    d = TemplateDecomposer.from_graph(synth_graph)
    o = OracleAnswerer(synth_graph)
    for inst in synth_dataset.by_split("dev")[:20]:
        _, trace = run_cave(inst, tools, o, decomposer=d, graph=synth_graph)
        assert isinstance(trace, AgentTrace)
        assert replay_trace(trace.to_dict(), inst, tools, o, decomposer=d, graph=synth_graph)


def test_agent_as_answerer(synth_graph, synth_dataset):
    agent = CaveAgent(synth_graph, OracleAnswerer(synth_graph))
    assert agent.score(synth_dataset.by_split("dev")[:50]) >= 0.95
    assert agent.name == "cave(oracle)"
