"""Answerer interface, robust choice parsing, and deterministic local answerers.

Every answerer follows the estimator protocol: ``get_params`` comes from
:class:`sklearn.base.BaseEstimator`, ``predict`` maps instances to option
indices (``-1`` for Invalid) and ``score`` returns multiple-choice accuracy.
"""

from __future__ import annotations

import logging
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import TYPE_CHECKING, Sequence

import numpy as np
from sklearn.base import BaseEstimator

from .errors import BrokenPath, KGVQAError
from .templates import SLOT, QuestionGrammar, this_type
from .utils import make_rng, stable_hash

if TYPE_CHECKING:
    from .builder import MCQInstance, OptionRole
    from .graph import KnowledgeGraph

logger = logging.getLogger(__name__)

PARSE_CHOICE_VERSION = "1"
LETTERS = "ABCD"


@dataclass(frozen=True)
class AnswerRecord:
    """One observed answer. ``canonical_answer is None`` marks an Invalid answer."""

    raw_text: str
    choice_index: int | None
    canonical_answer: str | None
    error: str | None = None

    @property
    def invalid(self) -> bool:
        return self.canonical_answer is None

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AnswerRecord":
        return cls(d["raw_text"], d["choice_index"], d["canonical_answer"], d.get("error"))

    @classmethod
    def failure(cls, error: str) -> "AnswerRecord":
        return cls("", None, None, error)


# -- choice parsing ----------------------------------------------------------

_LETTER_RE = re.compile(
    r"""^\s*
    (?i:(?:the\s+)?(?:correct\s+|final\s+|best\s+)?(?:answer|option|choice)\s*(?:is\b\s*)?[:\-]?\s*)?
    (?:
        [\(\[]\s*(?P<bracketed>[A-Da-d])\s*[\)\]]
      | (?P<punct>[A-Da-d])(?=[).:,;]|\s*$)
      | (?P<bare>[A-D])(?=\s)
    )""",
    re.X,
)


def _bounded(text: str, i: int) -> bool:
    return i < 0 or i >= len(text) or not text[i].isalnum()


def _spans(haystack: str, needle: str, bounded: bool) -> list[tuple[int, int]]:
    spans = []
    if not needle:
        return spans
    start = 0
    while True:
        i = haystack.find(needle, start)
        if i < 0:
            return spans
        j = i + len(needle)
        if not bounded or (_bounded(haystack, i - 1) and _bounded(haystack, j)):
            spans.append((i, j))
        start = i + 1


def _unique_match(raw_cf: str, opts_cf: Sequence[str], bounded: bool) -> int | None:
    found = {k: _spans(raw_cf, o, bounded) for k, o in enumerate(opts_cf)}
    found = {k: s for k, s in found.items() if s}
    # an option matched only inside a longer matching option does not count
    keep = []
    for k, spans in found.items():
        covered = all(
            any(a <= i and j <= b and (b - a) > (j - i) for other, os_ in found.items() if other != k for a, b in os_)
            for i, j in spans
        )
        if not covered:
            keep.append(k)
    return keep[0] if len(keep) == 1 else None


def parse_choice(raw_text: str, options: Sequence[str]) -> int | None:
    """Map free-form model output onto an option index, or ``None`` (Invalid).

    Order: leading standalone letter A-D, then a unique whole-word option match,
    then a unique substring option match.
    """
    if not raw_text:
        return None
    m = _LETTER_RE.match(raw_text)
    if m:
        letter = (m.group("bracketed") or m.group("punct") or m.group("bare")).upper()
        idx = LETTERS.index(letter)
        if idx < len(options):
            return idx
    raw_cf = raw_text.casefold()
    opts_cf = [o.casefold().strip() for o in options]
    stripped = raw_cf.strip().strip(".!?\"' ")
    exact = [k for k, o in enumerate(opts_cf) if o.strip(".!?\"' ") == stripped]
    if len(exact) == 1:
        return exact[0]
    idx = _unique_match(raw_cf, opts_cf, bounded=True)
    if idx is not None:
        return idx
    return _unique_match(raw_cf, opts_cf, bounded=False)


def record_from_raw(raw_text: str, options: Sequence[str] | None) -> AnswerRecord:
    if options is None:
        return AnswerRecord(raw_text, None, raw_text)
    idx = parse_choice(raw_text, options)
    if idx is None:
        return AnswerRecord(raw_text, None, None)
    return AnswerRecord(raw_text, idx, options[idx])


def choose(options: Sequence[str], idx: int | None, raw: str | None = None) -> AnswerRecord:
    if idx is None or not (0 <= idx < len(options)):
        return AnswerRecord(raw or "", None, None)
    return AnswerRecord(raw if raw is not None else LETTERS[idx], idx, options[idx])


# -- interface ---------------------------------------------------------------

class Answerer(BaseEstimator):
    """Black-box answering function over (image, question, options)."""

    deterministic = True

    def answer(self, image_ref: str | None, question: str, options: Sequence[str] | None = None,
               context: Sequence[str] | None = None) -> AnswerRecord:
        raise NotImplementedError

    def answer_instance(self, instance: "MCQInstance") -> AnswerRecord:
        return self.answer(instance.image_ref, instance.question, instance.option_texts)

    def safe_answer_instance(self, instance: "MCQInstance") -> AnswerRecord:
        try:
            return self.answer_instance(instance)
        except KGVQAError as exc:
            logger.warning("answer failed for %s: %s", instance.id, exc)
            return AnswerRecord.failure(f"{type(exc).__name__}: {exc}")

    def answer_many(self, instances: Sequence["MCQInstance"], parallelism: int = 1) -> list[AnswerRecord]:
        """Answer in input order; failures become Invalid records instead of raising."""
        if parallelism <= 1 or len(instances) <= 1:
            return [self.safe_answer_instance(inst) for inst in instances]
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            return list(pool.map(self.safe_answer_instance, instances))

    def predict(self, X: Sequence["MCQInstance"]) -> np.ndarray:
        records = self.answer_many(X)
        return np.array([-1 if r.choice_index is None else r.choice_index for r in records], dtype=int)

    def score(self, X: Sequence["MCQInstance"], y=None) -> float:
        if y is None:
            y = [inst.answer_index for inst in X]
        if len(X) == 0:
            return 0.0
        return float(np.mean(self.predict(X) == np.asarray(y)))

    @property
    def name(self) -> str:
        return type(self).__name__


# -- oracle ------------------------------------------------------------------

def oracle_answer(graph: "KnowledgeGraph", instance: "MCQInstance") -> AnswerRecord:
    """Follow the instance's true path through the graph and pick the matching option."""
    path = instance.path
    cur = path.anchor
    for hop in path.hops:
        if hop.entity not in graph.sorted_objects(cur, hop.relation):
            raise BrokenPath(f"{cur} -{hop.relation}-> {hop.entity} missing")
        cur = hop.entity
    objs = graph.sorted_objects(cur, path.shared_relation)
    if len(objs) != 1:
        raise BrokenPath(f"{cur} has {len(objs)} objects under {path.shared_relation}")
    target = graph.label(objs[0])
    texts = instance.option_texts
    for k, text in enumerate(texts):
        if text == target:
            return AnswerRecord(target, k, text)
    return AnswerRecord(target, None, None)


class OracleAnswerer(Answerer):
    """Answers from the graph itself.

    On instances it walks the recorded path. On free text it parses questions
    in the template grammar (bases: ``this <type>`` resolved through the image
    manifest, or a literal entity label) and walks relation labels.
    """

    def __init__(self, graph: "KnowledgeGraph"):
        self.graph = graph

    @property
    def name(self) -> str:
        return "oracle"

    def answer_instance(self, instance):
        return oracle_answer(self.graph, instance)

    def _grammar(self) -> QuestionGrammar:
        g = getattr(self, "_grammar_cache", None)
        if g is None:
            g = QuestionGrammar(self.graph.label(r) for r in self.graph.relations)
            self._grammar_cache = g
        return g

    def resolve_base(self, base: str, image_ref: str | None) -> set[str]:
        graph = self.graph
        t = this_type(base)
        if t is not None:
            ents = graph.image_index.get(image_ref or "", ())
            return {e for e in ents if graph.type_label(e) == t} or set(ents)
        if SLOT.fullmatch(base):
            return set()
        return set(graph.label_index.get(base.casefold(), ()))

    def resolve(self, image_ref: str | None, question: str) -> str | None:
        graph = self.graph
        parsed = self._grammar().parse_question(
            question, lambda b: bool(self.resolve_base(b, image_ref))
        )
        if parsed is None:
            return None
        cur = self.resolve_base(parsed.base, image_ref)
        for rl in parsed.relation_labels:
            rel_ids = graph.label_index.get(rl.casefold(), ())
            cur = {t for e in cur for r in rel_ids for t in graph.sorted_objects(e, r)}
        labels = {graph.label(e) for e in cur}
        return labels.pop() if len(labels) == 1 else None

    def answer(self, image_ref, question, options=None, context=None):
        target = self.resolve(image_ref, question)
        return record_from_raw(target if target is not None else "unknown", options)


# -- bias stubs --------------------------------------------------------------

def vision_biased_answer(instance: "MCQInstance", labels) -> AnswerRecord:
    """Pick the option naming the depicted entity, whatever the question says."""
    target = labels.get(instance.entity)
    texts = instance.option_texts
    for k, text in enumerate(texts):
        if text == target:
            return AnswerRecord(text, k, text)
    return AnswerRecord(target or "", None, None)


class VisionBiasedAnswerer(Answerer):
    def __init__(self, graph: "KnowledgeGraph"):
        self.graph = graph

    @property
    def name(self) -> str:
        return "vision_biased"

    def answer_instance(self, instance):
        return vision_biased_answer(instance, self.graph.labels)

    def answer(self, image_ref, question, options=None, context=None):
        ents = self.graph.image_index.get(image_ref or "", ())
        target = self.graph.label(ents[0]) if ents else ""
        if options is None:
            return AnswerRecord(target, None, target or None)
        for k, text in enumerate(options):
            if text == target:
                return AnswerRecord(text, k, text)
        return AnswerRecord(target, None, None)


def role_picker_answer(role: "OptionRole", instance: "MCQInstance") -> AnswerRecord:
    for k, o in enumerate(instance.options):
        if o.role == role:
            return AnswerRecord(o.text, k, o.text)
    return AnswerRecord("", None, None)


class RolePickerAnswerer(Answerer):
    """Test instrument with privileged access to option roles."""

    def __init__(self, role: "OptionRole | str" = "GroundTruth"):
        self.role = role

    @property
    def name(self) -> str:
        return f"role:{getattr(self.role, 'value', self.role)}"

    def answer_instance(self, instance):
        from .builder import OptionRole

        return role_picker_answer(OptionRole(self.role), instance)

    def answer(self, image_ref, question, options=None, context=None):
        raise KGVQAError("role picker needs instance-level access")


def random_answer(seed: int, instance: "MCQInstance") -> AnswerRecord:
    return RandomAnswerer(seed).answer_instance(instance)


class RandomAnswerer(Answerer):
    """Uniform choice, seeded by (seed, image, question, options)."""

    def __init__(self, seed: int = 0):
        self.seed = seed

    @property
    def name(self) -> str:
        return f"random(seed={self.seed})"

    def answer(self, image_ref, question, options=None, context=None):
        if not options:
            return AnswerRecord("", None, None)
        rng = make_rng(self.seed, "random", image_ref, question, *options)
        return choose(options, rng.randrange(len(options)))


def hash_answer(instance: "MCQInstance") -> AnswerRecord:
    return HashAnswerer().answer_instance(instance)


class HashAnswerer(Answerer):
    """Depends on the question string only: index = stable_hash(question) mod 4."""

    @property
    def name(self) -> str:
        return "hash"

    def answer(self, image_ref, question, options=None, context=None):
        if not options:
            return AnswerRecord("", None, None)
        return choose(options, stable_hash(question) % 4)


class PoolAnswerer(Answerer):
    """Question-only stub answering with ``pool[stable_hash(question) mod len(pool)]``.

    Stands in for a text-only model when generating language-bias options offline.
    """

    def __init__(self, pool: Sequence[str] = ()):
        self.pool = pool

    @property
    def name(self) -> str:
        return "pool"

    def answer(self, image_ref, question, options=None, context=None):
        if not self.pool:
            return AnswerRecord("", None, None)
        text = self.pool[stable_hash(question) % len(self.pool)]
        return record_from_raw(text, options)


def default_language_pool(graph: "KnowledgeGraph") -> list[str]:
    """Sorted labels of every entity that occurs as a triple tail."""
    tails = {t for _, _, t in graph.iter_triples()}
    return sorted({graph.label(t) for t in tails})
