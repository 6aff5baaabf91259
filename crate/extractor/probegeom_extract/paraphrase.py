"""Answer-style templates used to test that correctness, not phrasing, is
what the probe picks up."""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Iterable, List, Optional

TEMPLATES = (
    "{answer}",
    "The answer is: {answer}",
    "To be precise, {answer}",
    "In other words, {answer}",
    "Simply put, {answer}",
)


@dataclass(frozen=True)
class Row:
    question: str
    answer: str
    label: int
    group_id: int
    paraphrase_id: int = 0
    dataset_tag: str = ""
    record_id: Optional[int] = None

    @classmethod
    def from_json(cls, d: dict) -> "Row":
        missing = [k for k in ("question", "answer", "label", "group_id") if k not in d]
        if missing:
            raise ValueError(f"row is missing {', '.join(missing)}")
        label = d["label"]
        if isinstance(label, bool):
            label = int(label)
        if label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {label!r}")
        return cls(
            question=str(d["question"]),
            answer=str(d["answer"]),
            label=label,
            group_id=int(d["group_id"]),
            paraphrase_id=int(d.get("paraphrase_id", 0)),
            dataset_tag=str(d.get("dataset_tag", "")),
            record_id=None if d.get("record_id") is None else int(d["record_id"]),
        )


def paraphrase_rows(rows: Iterable[Row]) -> List[Row]:
    """Each row becomes one row per template, `paraphrase_id` 0..4.

    Record ids are cleared; the writer assigns fresh ones.
    """
    out = []
    for r in rows:
        for k, t in enumerate(TEMPLATES):
            out.append(replace(r, answer=t.format(answer=r.answer), paraphrase_id=k, record_id=None))
    return out
