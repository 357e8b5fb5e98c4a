"""Intervention pairs and total/direct causal effect estimation with the answer-change metric."""

from __future__ import annotations

import csv
import enum
import io
import logging
import math
from collections import defaultdict
from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

from .answerers import PARSE_CHOICE_VERSION, Answerer, AnswerRecord
from .builder import MCQInstance, OptionRole
from .errors import InvalidPair, NoEligiblePairs
from .graph import KnowledgeGraph
from .templates import render_question
from .utils import make_rng, normalize_text

logger = logging.getLogger(__name__)

DEFAULT_PAIR_COUNT = 100


class InterventionKind(str, enum.Enum):
    """Estimable interventions. The direct effect of the core entity is intentionally absent."""

    TCE_Q = "TCE_Q"   # swap question for another about the same entity
    DCE_T = "DCE_T"   # rephrase the question, meaning unchanged
    TCE_I = "TCE_I"   # same question, image of a different entity
    DCE_C = "DCE_C"   # another image of the same entity

    def __str__(self) -> str:
        return self.value


SENSITIVITY = (InterventionKind.TCE_Q, InterventionKind.TCE_I)
ROBUSTNESS = (InterventionKind.DCE_T, InterventionKind.DCE_C)


@dataclass(frozen=True)
class InterventionPair:
    kind: InterventionKind
    pre: MCQInstance
    post: MCQInstance
    constraint_note: str = ""


@dataclass
class PairSample:
    kind: InterventionKind
    pairs: list[InterventionPair]
    eligible: int
    requested: int

    @property
    def shortage(self) -> bool:
        return len(self.pairs) < self.requested

    def __iter__(self):
        return iter(self.pairs)

    def __len__(self) -> int:
        return len(self.pairs)

    def __getitem__(self, k):
        return self.pairs[k]


def _answer_key(x: AnswerRecord | str | None) -> str | None:
    if isinstance(x, AnswerRecord):
        x = None if x.invalid else x.canonical_answer
    return None if x is None else normalize_text(x)


def delta_cp(record_pre: AnswerRecord | str | None, record_post: AnswerRecord | str | None) -> int:
    """1 iff the canonical answers differ; Invalid (``None``) is its own sentinel value."""
    return int(_answer_key(record_pre) != _answer_key(record_post))


def _gt_text(inst: MCQInstance) -> str:
    return normalize_text(inst.options[inst.answer_index].text)


def _role_text(inst: MCQInstance, role: OptionRole) -> str | None:
    o = inst.option_for(role)
    return normalize_text(o.text) if o else None


def _this_pattern(inst: MCQInstance, graph: KnowledgeGraph | None) -> str:
    q = inst.question
    t = graph.type_label(inst.entity) if graph is not None else None
    if t:
        q = q.replace(f"this {t}", "this <TYPE>")
    return q


def check_pair(pair: InterventionPair) -> list[str]:
    """Violations of the pair's kind invariants (empty when the pair is valid)."""
    pre, post, kind = pair.pre, pair.post, pair.kind
    v = []
    if kind == InterventionKind.TCE_Q:
        if pre.image_ref != post.image_ref:
            v.append("image changed")
        if pre.entity != post.entity:
            v.append("entity changed")
        if pre.question == post.question:
            v.append("question unchanged")
        if _gt_text(pre) == _gt_text(post):
            v.append("ground truth unchanged")
    elif kind == InterventionKind.DCE_T:
        if pre.question == post.question:
            v.append("question unchanged")
        if pre.template_variant == post.template_variant and pair.constraint_note.startswith("template"):
            v.append("template variant unchanged")
        if (pre.path, pre.options, pre.answer_index, pre.image_ref, pre.entity) != (
                post.path, post.options, post.answer_index, post.image_ref, post.entity):
            v.append("non-text field changed")
    elif kind == InterventionKind.TCE_I:
        if pre.question != post.question:
            v.append("question changed")
        if pre.entity == post.entity:
            v.append("entity unchanged")
        if _gt_text(pre) == _gt_text(post):
            v.append("ground truth unchanged")
    elif kind == InterventionKind.DCE_C:
        if pre.image_ref == post.image_ref:
            v.append("image unchanged")
        if replace(post, image_ref=pre.image_ref, id=pre.id) != pre:
            v.append("field other than image changed")
    else:  # pragma: no cover
        v.append(f"unknown kind {kind}")
    return v


def _eligible(
    instances: Sequence[MCQInstance],
    kind: InterventionKind,
    graph: KnowledgeGraph | None,
    paraphraser: Callable[[MCQInstance], str] | None,
    relax_question_match: bool,
) -> list[InterventionPair]:
    insts = sorted(instances, key=lambda i: i.id)
    out: list[InterventionPair] = []

    if kind == InterventionKind.TCE_Q:
        by_entity: dict[str, list[MCQInstance]] = defaultdict(list)
        for inst in insts:
            by_entity[inst.entity].append(inst)
        for ent in sorted(by_entity):
            group = by_entity[ent]
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    if a.question != b.question and _gt_text(a) != _gt_text(b):
                        post = replace(b, image_ref=a.image_ref, id=f"{b.id}/tce_q/{a.id}")
                        out.append(InterventionPair(kind, a, post, "same image, other question on the same entity"))

    elif kind == InterventionKind.DCE_T:
        if graph is None and paraphraser is None:
            raise ValueError("DCE_T pairs need the graph (template rephrasing) or a paraphraser")
        for a in insts:
            if paraphraser is not None:
                new_q, note, variant = paraphraser(a), "paraphrase", a.template_variant
            else:
                type_label = graph.type_label(a.entity)
                if not type_label:
                    continue
                variant = 1 - a.template_variant
                new_q = render_question(a.path, type_label, variant, graph.labels)
                note = f"template variant {a.template_variant}->{variant}"
            if new_q and new_q != a.question:
                post = replace(a, question=new_q, template_variant=variant, id=f"{a.id}/dce_t")
                out.append(InterventionPair(kind, a, post, note))

    elif kind == InterventionKind.TCE_I:
        groups: dict[str, list[MCQInstance]] = defaultdict(list)
        for inst in insts:
            key = _this_pattern(inst, graph) if relax_question_match else inst.question
            groups[key].append(inst)
        for key in sorted(groups):
            group = groups[key]
            for i, a in enumerate(group):
                for b in group[i + 1:]:
                    if (a.entity != b.entity and _gt_text(a) != _gt_text(b)
                            and _role_text(a, OptionRole.VisionBias) != _role_text(b, OptionRole.VisionBias)):
                        post = b if b.question == a.question else replace(b, question=a.question)
                        post = replace(post, id=f"{b.id}/tce_i/{a.id}")
                        out.append(InterventionPair(kind, a, post, "same question, image of another entity"))

    elif kind == InterventionKind.DCE_C:
        pool: dict[str, set[str]] = defaultdict(set)
        for inst in insts:
            pool[inst.entity].add(inst.image_ref)
            if graph is not None:
                pool[inst.entity].update(graph.image_refs(inst.entity))
        for a in insts:
            for k, alt in enumerate(sorted(pool[a.entity] - {a.image_ref})):
                post = replace(a, image_ref=alt, id=f"{a.id}/dce_c/{k}")
                out.append(InterventionPair(kind, a, post, "another image of the same entity"))
    return out


def build_intervention_pairs(
    dataset: Iterable[MCQInstance],
    kind: InterventionKind | str,
    rng_seed: int,
    count: int = DEFAULT_PAIR_COUNT,
    *,
    graph: KnowledgeGraph | None = None,
    paraphraser: Callable[[MCQInstance], str] | None = None,
    relax_question_match: bool = False,
) -> PairSample:
    """Sample ``count`` pairs of one kind uniformly without replacement.

    Returns fewer pairs (``shortage`` set) when eligibility runs out and raises
    :class:`NoEligiblePairs` when there are none at all.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    kind = InterventionKind(kind)
    eligible = _eligible(list(dataset), kind, graph, paraphraser, relax_question_match)
    if not eligible:
        raise NoEligiblePairs(kind.value)
    if len(eligible) > count:
        pairs = make_rng(rng_seed, "pairs", kind.value).sample(eligible, count)
    else:
        pairs = eligible
    return PairSample(kind, pairs, len(eligible), count)


@dataclass
class PairRecord:
    pre_id: str
    post_id: str
    pre: AnswerRecord
    post: AnswerRecord
    delta: int

    def to_dict(self) -> dict:
        return {
            "pre_id": self.pre_id,
            "post_id": self.post_id,
            "pre": self.pre.to_dict(),
            "post": self.post.to_dict(),
            "delta": self.delta,
        }


def estimate_effect(
    answerer: Answerer,
    pairs: Sequence[InterventionPair],
    parallelism: int = 1,
) -> tuple[float, list[PairRecord]]:
    """Empirical mean of the answer-change indicator over homogeneous pairs.

    Pairs are re-validated first; any violation aborts with :class:`InvalidPair`.
    Transport failures are kept as Invalid answers.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("pairs must be non-empty")
    kinds = {p.kind for p in pairs}
    if len(kinds) != 1:
        raise ValueError(f"pairs must share one kind, got {sorted(map(str, kinds))}")
    for p in pairs:
        bad = check_pair(p)
        if bad:
            raise InvalidPair(f"{p.kind} pair {p.pre.id} -> {p.post.id}: {', '.join(bad)}")
    flat = [inst for p in pairs for inst in (p.pre, p.post)]
    answers = answerer.answer_many(flat, parallelism=parallelism)
    records = []
    for k, p in enumerate(pairs):
        pre, post = answers[2 * k], answers[2 * k + 1]
        records.append(PairRecord(p.pre.id, p.post.id, pre, post, delta_cp(pre, post)))
    mean = sum(r.delta for r in records) / len(records)
    return mean, records


# -- reports -----------------------------------------------------------------

@dataclass
class CausalConfig:
    seed: int = 0
    counts: dict[str, int] = field(default_factory=lambda: {k.value: DEFAULT_PAIR_COUNT for k in InterventionKind})
    split: str | None = None
    relax_question_match: bool = False
    confidence_interval: bool = False
    parallelism: int = 1

    @classmethod
    def uniform(cls, seed: int, count: int = DEFAULT_PAIR_COUNT, **kw) -> "CausalConfig":
        return cls(seed=seed, counts={k.value: count for k in InterventionKind}, **kw)


@dataclass
class KindResult:
    mean_delta: float | None
    pair_count: int
    shortage: bool
    eligible: int
    pairs: list[PairRecord] = field(default_factory=list)
    error: str | None = None
    ci95: tuple[float, float] | None = None

    def to_dict(self) -> dict:
        d = {
            "mean_delta": self.mean_delta,
            "pair_count": self.pair_count,
            "shortage": self.shortage,
            "eligible": self.eligible,
        }
        if self.error:
            d["error"] = self.error
        if self.ci95 is not None:
            d["ci95"] = list(self.ci95)
        d["pairs"] = [r.to_dict() for r in self.pairs]
        return d


@dataclass
class CausalEffectReport:
    answerer: str
    seed: int
    per_kind: dict[str, KindResult]
    provenance: dict = field(default_factory=dict)

    def mean(self, kind: InterventionKind | str) -> float | None:
        return self.per_kind[InterventionKind(kind).value].mean_delta

    def summary(self) -> dict:
        sens = {k.value: self.mean(k) for k in SENSITIVITY if k.value in self.per_kind}
        rob = {k.value: self.mean(k) for k in ROBUSTNESS if k.value in self.per_kind}
        tq, dt = sens.get("TCE_Q"), rob.get("DCE_T")
        contrast = None if tq is None or dt is None else tq - dt
        return {
            "sensitivity": sens,
            "robustness": rob,
            "heuristic_semantic_contrast": {
                "value": contrast,
                "note": "TCE_Q - DCE_T; a heuristic contrast of two measured effects, not an estimator",
            },
        }

    def to_dict(self) -> dict:
        return {
            "answerer": self.answerer,
            "seed": self.seed,
            "parse_choice_version": PARSE_CHOICE_VERSION,
            "summary": self.summary(),
            "per_kind": {k: v.to_dict() for k, v in self.per_kind.items()},
            "provenance": self.provenance,
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["kind", "mean_delta", "pair_count", "eligible", "shortage", "error"])
        for k, v in self.per_kind.items():
            w.writerow([k, "" if v.mean_delta is None else f"{v.mean_delta:.6f}", v.pair_count,
                        v.eligible, int(v.shortage), v.error or ""])
        return buf.getvalue()


def _normal_ci(p: float, n: int) -> tuple[float, float]:
    half = 1.959963984540054 * math.sqrt(p * (1 - p) / n)
    return max(0.0, p - half), min(1.0, p + half)


def causal_report(
    answerer: Answerer,
    dataset: Iterable[MCQInstance],
    config: CausalConfig,
    *,
    graph: KnowledgeGraph | None = None,
    paraphraser: Callable[[MCQInstance], str] | None = None,
) -> CausalEffectReport:
    """Build pairs and estimate the effect for every configured kind.

    A kind without eligible pairs is recorded in the report, not raised.
    """
    instances = list(dataset)
    if config.split:
        instances = [i for i in instances if i.split == config.split]
    per_kind: dict[str, KindResult] = {}
    for kind in InterventionKind:
        count = config.counts.get(kind.value)
        if not count:
            continue
        try:
            sample = build_intervention_pairs(
                instances, kind, config.seed, count, graph=graph, paraphraser=paraphraser,
                relax_question_match=config.relax_question_match,
            )
        except (NoEligiblePairs, ValueError) as exc:
            per_kind[kind.value] = KindResult(None, 0, True, 0, error=f"{type(exc).__name__}: {exc}")
            continue
        mean, records = estimate_effect(answerer, sample.pairs, config.parallelism)
        ci = _normal_ci(mean, len(records)) if config.confidence_interval else None
        per_kind[kind.value] = KindResult(mean, len(records), sample.shortage, sample.eligible, records, ci95=ci)
    return CausalEffectReport(getattr(answerer, "name", type(answerer).__name__), config.seed, per_kind)
