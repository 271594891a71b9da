"""Instruction records: ingestion, validation, conversion, and filtering.

Dataset files are JSON Lines with fields
{"instruction", "input" (nullable), "output", "category", "source"}.
"""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path

CATEGORIES = frozenset({
    "commonsense",
    "summarization",
    "reading-comprehension",
    "simplification",
    "correction",
    "translation",
    "qa",
    "other",
})

DEFAULT_TYPO_INSTRUCTION = "Correct the typos in the following text."
DEFAULT_QA_INSTRUCTION = "Answer the following question."


class RecordError(ValueError):
    """A record violates the schema; carries a line number when loading."""


@dataclass(frozen=True)
class InstructionRecord:
    """One instruction/input/response triple with task-category metadata."""

    instruction: str
    output: str
    input: str | None = None
    category: str = "other"
    source: str = "unknown"

    def __post_init__(self):
        if not self.instruction:
            raise RecordError("instruction must be non-empty")
        if not self.output:
            raise RecordError("output must be non-empty")
        if self.category not in CATEGORIES:
            raise RecordError(f"unknown category {self.category!r}; expected one of {sorted(CATEGORIES)}")

    def to_json(self) -> str:
        return json.dumps({
            "instruction": self.instruction,
            "input": self.input,
            "output": self.output,
            "category": self.category,
            "source": self.source,
        }, ensure_ascii=False)


@dataclass
class DatasetManifest:
    """Record counts per category and per source."""

    total: int = 0
    by_category: dict = field(default_factory=dict)
    by_source: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"total": self.total, "by_category": dict(self.by_category), "by_source": dict(self.by_source)}


def dataset_stats(records) -> DatasetManifest:
    by_cat = Counter(r.category for r in records)
    by_src = Counter(r.source for r in records)
    return DatasetManifest(total=len(records), by_category=dict(by_cat), by_source=dict(by_src))


def load_records(path) -> tuple[list[InstructionRecord], DatasetManifest]:
    """Parse a JSON Lines file; malformed lines are reported with their number."""
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise RecordError(f"{path}: line {lineno}: invalid JSON: {exc}") from exc
            if not isinstance(obj, dict):
                raise RecordError(f"{path}: line {lineno}: expected an object")
            for key in ("instruction", "output"):
                if not obj.get(key):
                    raise RecordError(f"{path}: line {lineno}: missing required field {key!r}")
            try:
                records.append(InstructionRecord(
                    instruction=obj["instruction"],
                    input=obj.get("input"),
                    output=obj["output"],
                    category=obj.get("category", "other"),
                    source=obj.get("source", Path(path).stem),
                ))
            except RecordError as exc:
                raise RecordError(f"{path}: line {lineno}: {exc}") from exc
    return records, dataset_stats(records)


def save_records(records, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for r in records:
            fh.write(r.to_json() + "\n")


def filter_by_category(records, excluded) -> list[InstructionRecord]:
    """Order-preserving removal of records whose category is excluded."""
    excluded = set(excluded)
    return [r for r in records if r.category not in excluded]


def convert_typo_pair(wrong_text: str, corrected_text: str,
                      instruction: str = DEFAULT_TYPO_INSTRUCTION,
                      source: str = "typo-pairs") -> InstructionRecord:
    if not wrong_text or not corrected_text:
        raise RecordError("typo pair texts must be non-empty")
    return InstructionRecord(instruction=instruction, input=wrong_text,
                             output=corrected_text, category="correction", source=source)


def convert_qa_pair(question: str, answer: str,
                    instruction: str = DEFAULT_QA_INSTRUCTION,
                    source: str = "qa-pairs") -> InstructionRecord:
    if not question or not answer:
        raise RecordError("qa pair texts must be non-empty")
    return InstructionRecord(instruction=instruction, input=question,
                             output=answer, category="qa", source=source)
