"""Decompose, reflect on stability, resolve with verified tool evidence, synthesize.

The loop per instance:

1. decompose the question into subquestions (``<ANSWER_i>`` slots link them);
2. re-decompose under a rephrased question and an alternate image of the same
   entity; a decomposition that changes is unstable and triggers another round;
3. resolve subquestion 1 with the image resolver and later ones with the
   answerer over retrieved passages, verifying each answer appears in a
   passage (one reformulated retry, then accept as low confidence);
4. map the last resolution onto the options.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from typing import Callable, Protocol, Sequence

from .answerers import AnswerRecord, Answerer, parse_choice
from .builder import MCQInstance
from .errors import DecompositionUnparseable, KGVQAError, ToolFailure
from .graph import KnowledgeGraph
from .retrieval import CorpusRetriever, ManifestImageResolver, Passage, triples_to_corpus
from .templates import SLOT, QuestionGrammar, chain_phrase, group_for_subquestions, render_question, this_type
from .utils import short_digest

logger = logging.getLogger(__name__)

_THIS_WORD = re.compile(r"\bthis ([A-Za-z][\w-]*)")
_NUMBERED = re.compile(r"^\s*(?:subq(?:uestion)?\s*)?(\d+)\s*[.):]\s*(.+?)\s*$", re.I)

DECOMPOSE_PROMPT = (
    "Break the question about the image into simple step-by-step subquestions. "
    "Refer to the answer of subquestion i as <ANSWER_i>. Reply with a numbered list only.\n"
    "Question: {question}"
)


@dataclass
class SubQuestion:
    index: int
    text: str
    resolved_answer: str | None = None
    evidence: list[str] = field(default_factory=list)
    low_confidence: bool = False

    def to_dict(self) -> dict:
        return {
            "index": self.index,
            "text": self.text,
            "resolved_answer": self.resolved_answer,
            "evidence": list(self.evidence),
            "low_confidence": self.low_confidence,
        }


class Decomposer(Protocol):
    def decompose(self, question: str, image_ref: str | None, feedback: str | None = None) -> list[str]:
        ...


class TemplateDecomposer:
    """Inverts the question templates: identify the entity, then one step per hop stage.

    Questions outside the template grammar fall back to replacing the first
    ``this <noun>`` phrase with the identification slot.
    """

    def __init__(self, relation_labels: Sequence[str]):
        self.grammar = QuestionGrammar(relation_labels)

    @classmethod
    def from_graph(cls, graph: KnowledgeGraph) -> "TemplateDecomposer":
        return cls([graph.label(r) for r in graph.relations])

    def decompose(self, question, image_ref, feedback=None):
        q = " ".join((question or "").split())
        if not q:
            raise DecompositionUnparseable("empty question")
        parsed = self.grammar.parse_question(q, lambda b: this_type(b) is not None)
        if parsed is not None and parsed.relation_labels:
            subqs = [f"What is {parsed.base}?"]
            for k, group in enumerate(group_for_subquestions(parsed.relation_labels), 1):
                subqs.append(f"What is {chain_phrase(f'<ANSWER_{k}>', group)}?")
            return subqs
        m = _THIS_WORD.search(q)
        if m is None:
            raise DecompositionUnparseable(f"no 'this <entity>' reference in {q!r}")
        return [f"What is {m.group(0)}?", q[: m.start()] + "<ANSWER_1>" + q[m.end():]]


def parse_numbered_list(text: str) -> list[str]:
    items = []
    for line in (text or "").splitlines():
        m = _NUMBERED.match(line)
        if m:
            items.append(m.group(2).strip().strip('"“”'))
    if not items:
        raise DecompositionUnparseable("reply is not a numbered list")
    return items


class LLMDecomposer:
    """Asks an answerer for a numbered list of subquestions."""

    def __init__(self, answerer: Answerer, prompt: str = DECOMPOSE_PROMPT):
        self.answerer = answerer
        self.prompt = prompt

    def decompose(self, question, image_ref, feedback=None):
        if not question or not question.strip():
            raise DecompositionUnparseable("empty question")
        prompt = self.prompt.format(question=question)
        if feedback:
            prompt += f"\nA previous decomposition was unstable ({feedback}); decompose again."
        rec = self.answerer.answer(image_ref, prompt, None)
        return parse_numbered_list(rec.raw_text)


def decompose(question: str, image_ref: str | None, decomposer: Decomposer, feedback: str | None = None) -> list[SubQuestion]:
    texts = decomposer.decompose(question, image_ref, feedback)
    if not texts:
        raise DecompositionUnparseable("no subquestions")
    return [SubQuestion(k, t) for k, t in enumerate(texts, 1)]


def normalize_decomposition(subqs: Sequence[SubQuestion | str]) -> tuple[str, ...]:
    out = []
    for sq in subqs:
        text = sq.text if isinstance(sq, SubQuestion) else sq
        out.append(" ".join(SLOT.sub("<answer>", text).casefold().split()))
    return tuple(out)


@dataclass
class StabilityVerdict:
    stable: bool
    reason: str = ""
    notes: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"stable": self.stable, "reason": self.reason, "notes": list(self.notes)}


def rephrase(instance: MCQInstance, graph: KnowledgeGraph) -> str | None:
    type_label = graph.type_label(instance.entity)
    if not type_label:
        return None
    return render_question(instance.path, type_label, 1 - instance.template_variant, graph.labels)


def stability_check(
    decomposer: Decomposer,
    instance: MCQInstance,
    graph_meta: KnowledgeGraph,
    original: Sequence[SubQuestion] | None = None,
    paraphraser: Callable[[MCQInstance], str] | None = None,
) -> StabilityVerdict:
    """Stable iff the decomposition survives a rephrasing and a swap to another image of the entity."""
    notes: list[str] = []
    if original is None:
        original = decompose(instance.question, instance.image_ref, decomposer)
    base = normalize_decomposition(original)

    variant_q = paraphraser(instance) if paraphraser else rephrase(instance, graph_meta)
    if not variant_q or variant_q == instance.question:
        notes.append("no rephrasing available; text check vacuous")
    else:
        try:
            alt = decompose(variant_q, instance.image_ref, decomposer)
        except DecompositionUnparseable as exc:
            return StabilityVerdict(False, f"rephrased question not decomposable: {exc}", notes)
        if normalize_decomposition(alt) != base:
            return StabilityVerdict(False, "decomposition changed under rephrasing", notes)

    others = [r for r in graph_meta.image_refs(instance.entity) if r != instance.image_ref]
    if not others:
        notes.append("single-image entity; image check vacuous")
    else:
        try:
            alt = decompose(instance.question, others[0], decomposer)
        except DecompositionUnparseable as exc:
            return StabilityVerdict(False, f"not decomposable with alternate image: {exc}", notes)
        if normalize_decomposition(alt) != base:
            return StabilityVerdict(False, "decomposition changed under alternate image", notes)
    return StabilityVerdict(True, "", notes)


# -- tools -------------------------------------------------------------------

@dataclass
class ToolSet:
    text_retriever: Callable[[str, int], Sequence[Passage]]
    image_resolver: Callable[[str], Sequence[str]]

    @classmethod
    def from_graph(cls, graph: KnowledgeGraph) -> "ToolSet":
        return cls(CorpusRetriever(triples_to_corpus(graph)), ManifestImageResolver(graph))


@dataclass
class ToolCall:
    id: str
    tool: str
    query: str
    result_digest: str
    ok: bool = True
    error: str | None = None

    def to_dict(self) -> dict:
        d = {"id": self.id, "tool": self.tool, "query": self.query, "result_digest": self.result_digest, "ok": self.ok}
        if self.error:
            d["error"] = self.error
        return d


@dataclass
class AgentTrace:
    instance_id: str
    rounds: list[dict] = field(default_factory=list)
    subquestions: list[SubQuestion] = field(default_factory=list)
    tool_calls: list[ToolCall] = field(default_factory=list)
    final_answer: str = ""
    final_choice: int | None = None
    flags: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "instance_id": self.instance_id,
            "rounds": self.rounds,
            "subquestions": [s.to_dict() for s in self.subquestions],
            "tool_calls": [t.to_dict() for t in self.tool_calls],
            "final_answer": self.final_answer,
            "final_choice": self.final_choice,
            "flags": list(self.flags),
        }

    def dangling_evidence(self) -> list[str]:
        ids = {t.id for t in self.tool_calls}
        return [e for s in self.subquestions for e in s.evidence if e not in ids]


@dataclass
class CaveConfig:
    max_reflection_rounds: int = 3
    k: int = 3
    synthesis: str = "map"  # or "llm"

    def to_dict(self) -> dict:
        return {"max_reflection_rounds": self.max_reflection_rounds, "k": self.k, "synthesis": self.synthesis}


class _Recorder:
    def __init__(self, trace: AgentTrace):
        self.trace = trace

    def call(self, tool: str, query: str, fn, *args):
        call_id = f"t{len(self.trace.tool_calls) + 1}"
        try:
            result = list(fn(*args))
        except Exception as exc:  # tools are pluggable; any failure is recorded, not raised
            self.trace.tool_calls.append(ToolCall(call_id, tool, query, "", ok=False, error=f"{type(exc).__name__}: {exc}"))
            raise ToolFailure(str(exc)) from exc
        self.trace.tool_calls.append(ToolCall(call_id, tool, query, short_digest([str(r) for r in result])))
        return call_id, result


def _fill(text: str, answers: dict[int, str]) -> str:
    return SLOT.sub(lambda m: answers.get(int(m.group(1)), m.group(0)), text)


def _appears(answer: str, passages: Sequence[Passage]) -> bool:
    a = answer.casefold().strip()
    return bool(a) and any(a in p.text.casefold() for p in passages)


def run_cave(
    instance: MCQInstance,
    tools: ToolSet,
    answerer: Answerer,
    config: CaveConfig | None = None,
    *,
    decomposer: Decomposer,
    graph: KnowledgeGraph,
    fallback_decomposer: Decomposer | None = None,
) -> tuple[AnswerRecord, AgentTrace]:
    config = config or CaveConfig()
    trace = AgentTrace(instance.id)
    rec = _Recorder(trace)
    options = instance.option_texts

    # decomposition with causal self-reflection
    subqs: list[SubQuestion] | None = None
    current, feedback, stable = decomposer, None, False
    for round_no in range(1, config.max_reflection_rounds + 1):
        try:
            candidate = decompose(instance.question, instance.image_ref, current, feedback)
        except DecompositionUnparseable as exc:
            trace.rounds.append({"round": round_no, "decomposition": None, "error": str(exc)})
            feedback = str(exc)
        else:
            subqs = candidate
            verdict = stability_check(current, instance, graph, original=candidate)
            trace.rounds.append({
                "round": round_no,
                "decomposition": [s.text for s in candidate],
                "stability": verdict.to_dict(),
            })
            if verdict.stable:
                stable = True
                break
            feedback = verdict.reason
        if fallback_decomposer is not None:
            current = fallback_decomposer
    if subqs is not None and not stable:
        trace.flags.append("unstable_final")

    if subqs is None:
        trace.flags.append("decomposition_failed")
        record = answerer.answer(instance.image_ref, instance.question, options)
        trace.final_answer = record.canonical_answer or record.raw_text
        trace.final_choice = record.choice_index
        return record, trace

    answers: dict[int, str] = {}
    for sq in subqs:
        text = _fill(sq.text, answers)
        if sq.index == 1:
            try:
                call_id, cands = rec.call("image_resolver", instance.image_ref, tools.image_resolver, instance.image_ref)
                sq.evidence.append(call_id)
                if not cands:
                    raise ToolFailure("image resolver returned no candidates")
                resolved = cands[0]
            except ToolFailure as exc:
                trace.flags.append(f"tool_failure:image_resolver:{exc}")
                r = answerer.answer(instance.image_ref, text, None)
                resolved = r.canonical_answer or r.raw_text
                sq.low_confidence = True
        else:
            resolved = _resolve_with_text(sq, text, instance, tools, answerer, config, rec, trace)
        sq.resolved_answer = resolved
        answers[sq.index] = resolved
    trace.subquestions = subqs

    last = subqs[-1].resolved_answer or ""
    if config.synthesis == "llm":
        context = [f"{_fill(s.text, answers)} {s.resolved_answer}" for s in subqs]
        record = answerer.answer(instance.image_ref, instance.question, options, context=context)
    else:
        idx = parse_choice(last, options)
        record = AnswerRecord(last, idx, options[idx] if idx is not None else None)
    trace.final_answer = record.canonical_answer if record.canonical_answer is not None else last
    trace.final_choice = record.choice_index
    return record, trace


def _resolve_with_text(sq, text, instance, tools, answerer, config, rec, trace) -> str:
    try:
        call_id, passages = rec.call("text_retriever", text, tools.text_retriever, text, config.k)
        sq.evidence.append(call_id)
    except ToolFailure as exc:
        trace.flags.append(f"tool_failure:text_retriever:{exc}")
        r = answerer.answer(instance.image_ref, text, None)
        sq.low_confidence = True
        return r.canonical_answer or r.raw_text
    r = answerer.answer(instance.image_ref, text, None, context=[p.text for p in passages])
    answer = r.canonical_answer or r.raw_text
    if _appears(answer, passages):
        return answer
    # one reformulated retry with the answer terms appended
    query = f"{text} {answer}"
    try:
        call_id, passages = rec.call("text_retriever", query, tools.text_retriever, query, config.k)
        sq.evidence.append(call_id)
    except ToolFailure as exc:
        trace.flags.append(f"tool_failure:text_retriever:{exc}")
        sq.low_confidence = True
        return answer
    r = answerer.answer(instance.image_ref, text, None, context=[p.text for p in passages])
    answer = r.canonical_answer or r.raw_text
    if not _appears(answer, passages):
        sq.low_confidence = True
    return answer


def replay_trace(trace: AgentTrace | dict, instance: MCQInstance, tools: ToolSet, answerer: Answerer,
                 config: CaveConfig | None = None, **kw) -> bool:
    """Re-run the loop and report whether it reproduces the recorded trace exactly."""
    recorded = trace.to_dict() if isinstance(trace, AgentTrace) else trace
    _, fresh = run_cave(instance, tools, answerer, config, **kw)
    return fresh.to_dict() == recorded


class CaveAgent(Answerer):
    """The full loop behind the answerer protocol, so it plugs into evaluation and causal reports."""

    def __init__(self, graph: KnowledgeGraph, answerer: Answerer, tools: ToolSet | None = None,
                 decomposer: Decomposer | None = None, max_reflection_rounds: int = 3, k: int = 3):
        self.graph = graph
        self.answerer = answerer
        self.tools = tools
        self.decomposer = decomposer
        self.max_reflection_rounds = max_reflection_rounds
        self.k = k

    @property
    def name(self) -> str:
        return f"cave({getattr(self.answerer, 'name', type(self.answerer).__name__)})"

    def _parts(self):
        if getattr(self, "_tools_cache", None) is None:
            self._tools_cache = self.tools or ToolSet.from_graph(self.graph)
            self._decomposer_cache = self.decomposer or TemplateDecomposer.from_graph(self.graph)
        return self._tools_cache, self._decomposer_cache

    def run(self, instance: MCQInstance) -> tuple[AnswerRecord, AgentTrace]:
        tools, decomposer = self._parts()
        cfg = CaveConfig(self.max_reflection_rounds, self.k)
        return run_cave(instance, tools, self.answerer, cfg, decomposer=decomposer, graph=self.graph)

    def answer_instance(self, instance):
        return self.run(instance)[0]

    def answer(self, image_ref, question, options=None, context=None):
        raise KGVQAError("the agent loop needs a full instance")
