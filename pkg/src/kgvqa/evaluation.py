"""Multiple-choice accuracy and option-role distribution of an answerer over a split."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Iterable

from .answerers import PARSE_CHOICE_VERSION, Answerer, AnswerRecord
from .builder import Dataset, MCQInstance, OptionRole


@dataclass
class EvalReport:
    answerer: str
    split: str
    accuracy_overall: float
    accuracy_2hop: float | None
    accuracy_3hop: float | None
    role_distribution: dict[str, float]
    invalid_rate: float
    n_instances: dict[str, int]
    records: list[dict] = field(default_factory=list)
    provenance: dict = field(default_factory=dict)

    def to_dict(self, with_records: bool = True) -> dict:
        d = {
            "answerer": self.answerer,
            "split": self.split,
            "parse_choice_version": PARSE_CHOICE_VERSION,
            "accuracy_overall": self.accuracy_overall,
            "accuracy_2hop": self.accuracy_2hop,
            "accuracy_3hop": self.accuracy_3hop,
            "role_distribution": self.role_distribution,
            "invalid_rate": self.invalid_rate,
            "n_instances": self.n_instances,
        }
        if with_records:
            d["records"] = self.records
        d["provenance"] = self.provenance
        return d

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["answerer", "split", "bucket", "n", "accuracy"]
                   + [r.value for r in OptionRole] + ["Invalid"])
        for bucket, acc in (("all", self.accuracy_overall), ("2hop", self.accuracy_2hop), ("3hop", self.accuracy_3hop)):
            row = [self.answerer, self.split, bucket, self.n_instances.get(bucket, 0),
                   "" if acc is None else f"{acc:.6f}"]
            if bucket == "all":
                row += [f"{self.role_distribution.get(r.value, 0.0):.6f}" for r in OptionRole]
                row.append(f"{self.invalid_rate:.6f}")
            w.writerow(row)
        return buf.getvalue()


def _score(records: list[tuple[MCQInstance, AnswerRecord]]) -> float | None:
    if not records:
        return None
    return sum(r.choice_index == inst.answer_index for inst, r in records) / len(records)


def evaluate(
    answerer: Answerer,
    dataset: Dataset | Iterable[MCQInstance],
    split: str | None = "test",
    parallelism: int = 1,
) -> EvalReport:
    """Query the answerer once per instance of ``split`` (``None``/``"all"`` for everything)."""
    if isinstance(dataset, Dataset):
        if split not in (None, "all") and split not in set(dataset.split.values()):
            raise KeyError(f"split {split!r} not in dataset")
        instances = dataset.by_split(split)
    else:
        instances = [i for i in dataset if split in (None, "all") or i.split == split]
    answers = answerer.answer_many(instances, parallelism=parallelism)
    pairs = list(zip(instances, answers))

    counts = {r.value: 0 for r in OptionRole}
    invalid = 0
    records = []
    for inst, rec in pairs:
        if rec.choice_index is None or not (0 <= rec.choice_index < len(inst.options)):
            invalid += 1
            role = None
        else:
            role = inst.options[rec.choice_index].role.value
            counts[role] += 1
        records.append({
            "id": inst.id,
            "hop_count": inst.hop_count,
            "answer_index": inst.answer_index,
            "choice_index": rec.choice_index,
            "role": role,
            "correct": rec.choice_index == inst.answer_index,
            "raw_text": rec.raw_text,
            "error": rec.error,
        })

    n = len(pairs)
    two = [p for p in pairs if p[0].hop_count == 2]
    three = [p for p in pairs if p[0].hop_count == 3]
    return EvalReport(
        answerer=getattr(answerer, "name", type(answerer).__name__),
        split=split or "all",
        accuracy_overall=_score(pairs) or 0.0,
        accuracy_2hop=_score(two),
        accuracy_3hop=_score(three),
        role_distribution={k: (v / n if n else 0.0) for k, v in counts.items()},
        invalid_rate=invalid / n if n else 0.0,
        n_instances={"all": n, "2hop": len(two), "3hop": len(three)},
        records=records,
    )
