"""Multiple-choice instance construction, validation, and split assembly."""

from __future__ import annotations

import enum
import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import TYPE_CHECKING, Iterable, Mapping, NamedTuple

from .errors import CorpusExhausted, DataError, DuplicateOption, KGVQAError, MissingLabel, TransportError
from .graph import KnowledgeGraph
from .paths import HOP_CHOICES, QueryPath, check_path_uniqueness, sample_query_paths
from .templates import generate_rationale, render_question
from .utils import derive_seed, make_rng, normalize_text, read_jsonl, write_jsonl

if TYPE_CHECKING:
    from .answerers import Answerer

logger = logging.getLogger(__name__)

SPLITS = ("train", "dev", "test")


class OptionRole(str, enum.Enum):
    GroundTruth = "GroundTruth"
    LanguageBias = "LanguageBias"
    VisionBias = "VisionBias"
    SemanticMisleading = "SemanticMisleading"

    def __str__(self) -> str:
        return self.value


class Option(NamedTuple):
    text: str
    role: OptionRole


@dataclass(frozen=True)
class MCQInstance:
    id: str
    image_ref: str
    entity: str
    hop_count: int
    question: str
    template_variant: int
    options: tuple[Option, ...]
    answer_index: int
    rationale: str
    path: QueryPath
    split: str = "train"

    @property
    def option_texts(self) -> list[str]:
        return [o.text for o in self.options]

    def option_for(self, role: OptionRole) -> Option | None:
        for o in self.options:
            if o.role == role:
                return o
        return None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "image_ref": self.image_ref,
            "entity": self.entity,
            "hop_count": self.hop_count,
            "question": self.question,
            "template_variant": self.template_variant,
            "options": [{"text": o.text, "role": o.role.value} for o in self.options],
            "answer_index": self.answer_index,
            "rationale": self.rationale,
            "path": self.path.to_dict(),
            "split": self.split,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "MCQInstance":
        try:
            return cls(
                id=d["id"],
                image_ref=d["image_ref"],
                entity=d["entity"],
                hop_count=int(d["hop_count"]),
                question=d["question"],
                template_variant=int(d["template_variant"]),
                options=tuple(Option(o["text"], OptionRole(o["role"])) for o in d["options"]),
                answer_index=int(d["answer_index"]),
                rationale=d["rationale"],
                path=QueryPath.from_dict(d["path"]),
                split=d["split"],
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise DataError(f"bad instance record: {exc!r}") from None


@dataclass
class Dataset:
    instances: list[MCQInstance]
    exhausted: dict[str, int] = field(default_factory=dict)
    notes: list[str] = field(default_factory=list)

    def __post_init__(self):
        ids = [inst.id for inst in self.instances]
        if len(set(ids)) != len(ids):
            raise DataError("instance ids are not unique")

    def __len__(self) -> int:
        return len(self.instances)

    def __iter__(self):
        return iter(self.instances)

    @property
    def split(self) -> dict[str, str]:
        return {inst.id: inst.split for inst in self.instances}

    def by_split(self, split: str | None) -> list[MCQInstance]:
        if split is None or split == "all":
            return list(self.instances)
        return [inst for inst in self.instances if inst.split == split]

    def get(self, id_: str) -> MCQInstance:
        for inst in self.instances:
            if inst.id == id_:
                return inst
        raise KeyError(id_)

    def to_jsonl(self, path) -> None:
        write_jsonl(path, (inst.to_dict() for inst in self.instances))

    @classmethod
    def from_jsonl(cls, path) -> "Dataset":
        return cls([MCQInstance.from_dict(row) for row in read_jsonl(path)])


# -- options -----------------------------------------------------------------

def build_options(
    path: QueryPath,
    labels: Mapping[str, str],
    language_bias_text: str,
    rng_seed: int,
) -> tuple[tuple[Option, ...], int]:
    """Four role-tagged options in seeded shuffled order, plus the ground-truth index."""
    if not language_bias_text or not language_bias_text.strip():
        raise ValueError("language_bias_text must be non-empty")

    def lab(id_):
        try:
            return labels[id_]
        except KeyError:
            raise MissingLabel(id_) from None

    options = [
        Option(lab(path.ground_truth), OptionRole.GroundTruth),
        Option(language_bias_text.strip(), OptionRole.LanguageBias),
        Option(lab(path.anchor), OptionRole.VisionBias),
        Option(lab(path.misleading), OptionRole.SemanticMisleading),
    ]
    seen: set[str] = set()
    for o in options:
        key = normalize_text(o.text)
        if key in seen:
            raise DuplicateOption(o.text)
        seen.add(key)
    make_rng(rng_seed, "options").shuffle(options)
    answer_index = next(i for i, o in enumerate(options) if o.role == OptionRole.GroundTruth)
    return tuple(options), answer_index


# -- validation --------------------------------------------------------------

class Violation(NamedTuple):
    kind: str
    detail: str = ""


def validate_instance(instance: MCQInstance, graph: KnowledgeGraph) -> list[Violation]:
    """Every broken instance invariant, as data. Empty list means valid."""
    out: list[Violation] = []
    opts = instance.options
    path = instance.path
    labels = graph.labels

    if len(opts) != 4:
        out.append(Violation("OptionCount", f"{len(opts)} options"))
    norm = [normalize_text(o.text) for o in opts]
    if len(set(norm)) != len(norm):
        out.append(Violation("DuplicateOption"))
    roles = [o.role for o in opts]
    if sorted(roles) != sorted(OptionRole):
        out.append(Violation("RoleCount", ",".join(r.value for r in roles)))
    if not (0 <= instance.answer_index < len(opts)) or opts[instance.answer_index].role != OptionRole.GroundTruth:
        out.append(Violation("AnswerIndex", str(instance.answer_index)))
    if path.n not in HOP_CHOICES or instance.hop_count != path.hop_count:
        out.append(Violation("HopCount", str(instance.hop_count)))
    if instance.entity != path.anchor:
        out.append(Violation("EntityMismatch"))
    if path.ground_truth == path.misleading:
        out.append(Violation("GroundTruthEqualsMisleading"))
    if len(set(path.entities)) != len(path.entities):
        out.append(Violation("RepeatedEntity"))

    anchor_label = labels.get(path.anchor)
    type_label = graph.type_label(path.anchor)
    if anchor_label and anchor_label.casefold() in instance.question.casefold():
        out.append(Violation("AnchorLeak"))
    if not type_label or f"this {type_label}" not in instance.question:
        out.append(Violation("MissingSlot"))
    if instance.image_ref not in graph.image_refs(path.anchor):
        out.append(Violation("UnknownImage", instance.image_ref))

    expected = {
        OptionRole.GroundTruth: labels.get(path.ground_truth),
        OptionRole.VisionBias: anchor_label,
        OptionRole.SemanticMisleading: labels.get(path.misleading),
    }
    for o in opts:
        want = expected.get(o.role)
        if o.role in expected and o.text != want:
            out.append(Violation("OptionText", f"{o.role.value}: {o.text!r} != {want!r}"))

    edges = [(path.anchor, path.hops[0].relation, path.hops[0].entity)] if path.hops else []
    for prev, hop in zip(path.hops, path.hops[1:]):
        edges.append((prev.entity, hop.relation, hop.entity))
    if path.hops:
        edges.append((path.terminal, path.shared_relation, path.ground_truth))
    edges.append((path.anchor, path.shared_relation, path.misleading))
    missing = [e for e in edges if e not in graph]
    if missing or not path.hops:
        out.append(Violation("BrokenPath", "; ".join(map(str, missing))))
        return out
    if (graph.unique_object(path.terminal, path.shared_relation) != path.ground_truth
            or graph.unique_object(path.anchor, path.shared_relation) != path.misleading):
        out.append(Violation("SharedNotFunctional", path.shared_relation))
    if not check_path_uniqueness(graph, path.anchor, path.terminal, path.n):
        out.append(Violation("PathNotUnique"))
    return out


# -- dataset assembly --------------------------------------------------------

# 2-hop share of each split in the released benchmark statistics.
BENCHMARK_TWO_HOP = {"train": 4134 / 10000, "dev": 548 / 1000, "test": 500 / 1000}


@dataclass
class BuildConfig:
    train: int = 10_000
    dev: int = 1_000
    test: int = 1_000
    two_hop_fraction: float | Mapping[str, float] | None = None
    max_per_anchor: int | None = None
    template_variant: int = 0

    @classmethod
    def benchmark_mix(cls) -> "BuildConfig":
        return cls(two_hop_fraction=dict(BENCHMARK_TWO_HOP))

    def targets(self) -> dict[str, dict[int | None, int]]:
        """``split -> hop_count -> count``; key ``None`` means any hop count."""
        out = {}
        for split in SPLITS:
            total = int(getattr(self, split))
            frac = self.two_hop_fraction
            if isinstance(frac, Mapping):
                frac = frac.get(split)
            if frac is None:
                out[split] = {None: total}
            else:
                two = int(round(total * float(frac)))
                out[split] = {2: two, 3: total - two}
        return out


class _Fill:
    def __init__(self, targets):
        self.targets = targets
        self.got = {s: {h: [] for h in t} for s, t in targets.items()}

    def need(self, split, hop_count) -> bool:
        key = hop_count if hop_count in self.targets[split] else None
        if key not in self.targets[split]:
            return False
        return len(self.got[split][key]) < self.targets[split][key]

    def add(self, split, hop_count, inst):
        key = hop_count if hop_count in self.targets[split] else None
        self.got[split][key].append(inst)

    def ratio(self, split) -> float:
        target = sum(self.targets[split].values())
        if target == 0:
            return float("inf")
        return sum(len(v) for v in self.got[split].values()) / target

    def open_splits(self) -> list[str]:
        return [
            s for s in SPLITS
            if any(len(self.got[s][k]) < n for k, n in self.targets[s].items())
        ]

    def missing(self) -> dict[str, int]:
        out = {}
        for s in SPLITS:
            m = sum(n - len(self.got[s][k]) for k, n in self.targets[s].items())
            if m > 0:
                out[s] = m
        return out


def _path_key(path: QueryPath) -> str:
    return "|".join([path.anchor, *(f"{h.relation}>{h.entity}" for h in path.hops), path.shared_relation])


def make_instance(
    graph: KnowledgeGraph,
    path: QueryPath,
    rng_seed: int,
    language_bias_answerer: "Answerer",
    *,
    split: str = "train",
    id_: str = "",
    variant: int = 0,
) -> MCQInstance:
    """Materialize one instance; raises :class:`DuplicateOption` or a leak error to signal a drop."""
    labels = graph.labels
    type_label = graph.type_label(path.anchor)
    if not type_label:
        raise KGVQAError(f"anchor {path.anchor!r} has no type label")
    question = render_question(path, type_label, variant, labels)
    if labels[path.anchor].casefold() in question.casefold():
        raise KGVQAError("anchor label leaks into question")
    record = language_bias_answerer.answer(None, question, None)
    lb_text = (record.canonical_answer or record.raw_text or "").strip()
    if not lb_text:
        raise KGVQAError("empty language-bias answer")
    key = _path_key(path)
    options, answer_index = build_options(path, labels, lb_text, derive_seed(rng_seed, "options", key))
    image_ref = make_rng(rng_seed, "image", key).choice(graph.image_refs(path.anchor))
    return MCQInstance(
        id=id_,
        image_ref=image_ref,
        entity=path.anchor,
        hop_count=path.hop_count,
        question=question,
        template_variant=variant,
        options=options,
        answer_index=answer_index,
        rationale=generate_rationale(path, labels),
        path=path,
        split=split,
    )


def build_dataset(
    graph: KnowledgeGraph,
    config: BuildConfig | None,
    rng_seed: int,
    language_bias_answerer: "Answerer",
) -> Dataset:
    """Assemble train/dev/test instances from anchor-disjoint pools where possible.

    Instances whose options collide are dropped, not retried. When the corpus
    cannot meet a target, a :class:`CorpusExhausted` warning is emitted and the
    partial dataset is returned with ``Dataset.exhausted`` filled in.
    """
    config = config or BuildConfig()
    targets = config.targets()
    fill = _Fill(targets)
    notes: list[str] = []

    anchors = graph.anchor_candidates()
    pools: dict[str, list[QueryPath]] = {}
    for a in anchors:
        paths: list[QueryPath] = []
        for n in HOP_CHOICES:
            paths.extend(sample_query_paths(graph, a, n, derive_seed(rng_seed, "paths", a, n), config.max_per_anchor))
        make_rng(rng_seed, "order", a).shuffle(paths)
        if paths:
            pools[a] = paths
    order = sorted(pools)
    make_rng(rng_seed, "anchors").shuffle(order)

    consumed: set[str] = set()

    def try_add(split: str, path: QueryPath) -> bool:
        key = _path_key(path)
        consumed.add(key)
        try:
            inst = make_instance(graph, path, rng_seed, language_bias_answerer,
                                 split=split, variant=config.template_variant)
        except TransportError:
            raise  # a dead endpoint would otherwise drop every instance
        except (DuplicateOption, KGVQAError) as exc:
            logger.debug("dropping %s: %s", key, exc)
            return False
        fill.add(split, path.hop_count, inst)
        return True

    # anchor-disjoint pass
    for a in order:
        open_ = fill.open_splits()
        if not open_:
            break
        usable = [s for s in open_ if any(fill.need(s, p.hop_count) for p in pools[a])]
        if not usable:
            continue
        split = min(usable, key=lambda s: (fill.ratio(s), SPLITS.index(s)))
        for p in pools[a]:
            if fill.need(split, p.hop_count):
                try_add(split, p)

    # instance-level fallback
    if fill.open_splits():
        leftovers = [p for a in sorted(pools) for p in pools[a] if _path_key(p) not in consumed]
        if leftovers:
            msg = "anchors too scarce for disjoint splits; falling back to instance-level splitting"
            logger.warning(msg)
            notes.append(msg)
            make_rng(rng_seed, "fallback").shuffle(leftovers)
            for p in leftovers:
                usable = [s for s in fill.open_splits() if fill.need(s, p.hop_count)]
                if not usable:
                    if not fill.open_splits():
                        break
                    continue
                split = min(usable, key=lambda s: (fill.ratio(s), SPLITS.index(s)))
                try_add(split, p)

    instances = []
    for split in SPLITS:
        got = [inst for key in targets[split] for inst in fill.got[split][key]]
        for i, inst in enumerate(got):
            instances.append(replace(inst, id=f"{split}-{i:06d}"))

    exhausted = fill.missing()
    for split, missing in exhausted.items():
        msg = f"corpus exhausted for split {split!r}: {missing} instance(s) short"
        notes.append(msg)
        warnings.warn(msg, CorpusExhausted, stacklevel=2)
    return Dataset(instances, exhausted=exhausted, notes=notes)


def validate_dataset(dataset: Iterable[MCQInstance], graph: KnowledgeGraph) -> dict[str, list[Violation]]:
    """``instance id -> violations`` for every invalid instance."""
    bad = {}
    for inst in dataset:
        v = validate_instance(inst, graph)
        if v:
            bad[inst.id] = v
    return bad
