"""Deterministic question templates, their inverse parser, and rule-based rationales.

Noun phrases are built inside-out from a base (``this vehicle``, an entity
label, or an answer slot) by applying relation labels in traversal order:

* a label ending in `` by`` (passive, e.g. ``followed by``) yields
  ``the entity that <np> is <label>``
* any other label yields ``the <label> of <np>``

Variant 0 wraps the phrase as ``What is <np>?`` and variant 1 as
``Which entity is <np>?``. Both variants share the same phrase, which is what
keeps decompositions identical across rephrasings.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping, Sequence

from .errors import MissingLabel
from .paths import QueryPath

VARIANTS = (0, 1)
_PREFIXES = {0: "What is ", 1: "Which entity is "}
_THIS = re.compile(r"^this (?P<type>\S.*)$")
SLOT = re.compile(r"<ANSWER_(\d+)>")


def _label(labels: Mapping[str, str], id_: str) -> str:
    try:
        return labels[id_]
    except KeyError:
        raise MissingLabel(id_) from None


def is_passive(relation_label: str) -> bool:
    return relation_label.endswith(" by")


def apply_relation(np: str, relation_label: str) -> str:
    if is_passive(relation_label):
        return f"the entity that {np} is {relation_label}"
    return f"the {relation_label} of {np}"


def chain_phrase(base: str, relation_labels: Iterable[str]) -> str:
    np = base
    for rl in relation_labels:
        np = apply_relation(np, rl)
    return np


def wrap_question(phrase: str, variant: int) -> str:
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant}")
    return f"{_PREFIXES[variant]}{phrase}?"


def render_question(path: QueryPath, type_label: str, variant: int, labels: Mapping[str, str]) -> str:
    """Anonymized question for ``path``; the anchor appears only as ``this <type_label>``."""
    if variant not in VARIANTS:
        raise ValueError(f"variant must be one of {VARIANTS}, got {variant}")
    rel_labels = [_label(labels, r) for r in path.relations]
    for e in path.entities:
        _label(labels, e)
    return wrap_question(chain_phrase(f"this {type_label}", rel_labels), variant)


def generate_rationale(path: QueryPath, labels: Mapping[str, str]) -> str:
    """Opening identification sentence, one sentence per hop, closing answer sentence."""
    ents = [_label(labels, e) for e in path.entities] + [_label(labels, path.ground_truth)]
    rels = [_label(labels, r) for r in path.relations]
    sentences = [f"The entity in the image is {ents[0]}"]
    for i, rel in enumerate(rels):
        sentences.append(f"{ents[i]} {rel} {ents[i + 1]}")
    sentences.append(f"So the answer is {ents[-1]}")
    return " ".join(_terminate(s) for s in sentences)


def _terminate(sentence: str) -> str:
    return sentence if sentence.endswith(".") else sentence + "."


# -- inverse parsing ---------------------------------------------------------

@dataclass(frozen=True)
class ParsedQuestion:
    base: str
    relation_labels: tuple[str, ...]
    variant: int | None = None


class QuestionGrammar:
    """Parses phrases produced by :func:`chain_phrase` back into base + relation labels.

    Relation labels are matched against a known vocabulary; when several parses
    exist the one with the longest relation chain whose base satisfies
    ``accept_base`` wins, ties broken by label order.
    """

    def __init__(self, relation_labels: Iterable[str]):
        labels = sorted(set(relation_labels), key=lambda s: (-len(s), s))
        self._passive = [rl for rl in labels if is_passive(rl)]
        self._active = [rl for rl in labels if not is_passive(rl)]

    def parse_phrase(self, phrase: str) -> list[tuple[str, tuple[str, ...]]]:
        memo: dict[str, list[tuple[str, tuple[str, ...]]]] = {}
        return self._parse(phrase, memo)

    def _parse(self, phrase, memo):
        if phrase in memo:
            return memo[phrase]
        out = [(phrase, ())]
        if phrase.startswith("the entity that "):
            rest = phrase[len("the entity that "):]
            for rl in self._passive:
                suffix = " is " + rl
                if rest.endswith(suffix) and len(rest) > len(suffix):
                    for base, rels in self._parse(rest[: -len(suffix)], memo):
                        out.append((base, rels + (rl,)))
        if phrase.startswith("the "):
            rest = phrase[4:]
            for rl in self._active:
                prefix = rl + " of "
                if rest.startswith(prefix) and len(rest) > len(prefix):
                    for base, rels in self._parse(rest[len(prefix):], memo):
                        out.append((base, rels + (rl,)))
        memo[phrase] = out
        return out

    def parse_question(
        self,
        question: str,
        accept_base: Callable[[str], bool] = lambda b: True,
    ) -> ParsedQuestion | None:
        q = question.strip()
        if not q.endswith("?"):
            return None
        for variant, prefix in _PREFIXES.items():
            if q.startswith(prefix):
                phrase = q[len(prefix):-1]
                break
        else:
            return None
        candidates = [
            (base, rels) for base, rels in self.parse_phrase(phrase)
            if accept_base(base)
        ]
        if not candidates:
            return None
        candidates.sort(key=lambda c: (-len(c[1]), c[1]))
        base, rels = candidates[0]
        return ParsedQuestion(base, rels, variant)


def this_type(base: str) -> str | None:
    m = _THIS.match(base)
    return m.group("type") if m else None


def group_for_subquestions(relation_labels: Sequence[str]) -> list[tuple[str, ...]]:
    """One group per intermediate hop; the last path hop shares a group with the final relation."""
    rels = tuple(relation_labels)
    if len(rels) <= 2:
        return [rels] if rels else []
    return [(r,) for r in rels[:-2]] + [rels[-2:]]
