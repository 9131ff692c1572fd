"""Canonical corpus record schema and JSONL (de)serialization.

Every pipeline stage exchanges newline-delimited UTF-8 JSON objects with
one record per line. Records are immutable values: parsing and writing
are reentrant and safe to use from multiple threads.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum
from typing import IO, Iterable, Iterator, Union


class Language(str, Enum):
    EN = "en"
    ZH = "zh"
    HI = "hi"
    ES = "es"
    FR = "fr"
    AR = "ar"


class Stage(str, Enum):
    PRETRAIN = "pretrain"
    INSTRUCTION = "instruction"


class RecordError(ValueError):
    """Raised for malformed or invalid corpus lines; carries the line number."""

    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


@dataclass(frozen=True)
class CorpusRecord:
    """One pretraining or instruction item.

    Pretrain records carry ``text``; instruction records carry
    ``question`` and ``answer``. ``token_estimate`` counts Unicode scalar
    values, deliberately tokenizer-agnostic.
    """

    id: str
    lang: Language
    source: str
    stage: Stage
    text: str | None = None
    question: str | None = None
    answer: str | None = None

    def validate(self) -> None:
        if not self.id:
            raise RecordError("record id must be a non-empty string")
        if self.stage is Stage.PRETRAIN:
            if not self.text:
                raise RecordError(f"pretrain record {self.id!r} has empty text")
            if self.question is not None or self.answer is not None:
                raise RecordError(
                    f"pretrain record {self.id!r} must not carry question/answer"
                )
        else:
            if not self.question or not self.answer:
                raise RecordError(
                    f"instruction record {self.id!r} needs non-empty question and answer"
                )
            if self.text is not None:
                raise RecordError(f"instruction record {self.id!r} must not carry text")

    @property
    def token_estimate(self) -> int:
        if self.stage is Stage.PRETRAIN:
            return len(self.text or "")
        return len(self.question or "") + len(self.answer or "")

    def body_text(self) -> str:
        """The record's full text content, for scoring and screening."""
        if self.stage is Stage.PRETRAIN:
            return self.text or ""
        return f"{self.question} {self.answer}"

    def to_json(self) -> dict:
        obj: dict = {
            "id": self.id,
            "lang": self.lang.value,
            "source": self.source,
            "stage": self.stage.value,
        }
        if self.stage is Stage.PRETRAIN:
            obj["text"] = self.text
        else:
            obj["question"] = self.question
            obj["answer"] = self.answer
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "CorpusRecord":
        if not isinstance(obj, dict):
            raise RecordError("record must be a JSON object")
        for key in ("id", "lang", "stage"):
            if key not in obj:
                raise RecordError(f"missing required field {key!r}")
        try:
            lang = Language(obj["lang"])
        except ValueError:
            raise RecordError(f"unknown language code: {obj['lang']!r}") from None
        try:
            stage = Stage(obj["stage"])
        except ValueError:
            raise RecordError(f"unknown stage: {obj['stage']!r}") from None
        record = cls(
            id=str(obj["id"]),
            lang=lang,
            source=str(obj.get("source", "")),
            stage=stage,
            text=obj.get("text"),
            question=obj.get("question"),
            answer=obj.get("answer"),
        )
        record.validate()
        return record


Line = Union[str, bytes]


def parse_jsonl(stream: Union[IO, Iterable[Line]]) -> Iterator[CorpusRecord]:
    """Yield records from a JSONL stream in file order.

    ``stream`` is any iterable of lines (text or bytes). Blank lines are
    skipped. Every defect raises :class:`RecordError` naming the 1-based
    line number; nothing is silently dropped.
    """
    seen: set[str] = set()
    for lineno, raw in enumerate(stream, start=1):
        if isinstance(raw, bytes):
            try:
                raw = raw.decode("utf-8")
            except UnicodeDecodeError as exc:
                raise RecordError(f"line {lineno}: invalid UTF-8 ({exc})", lineno) from None
        if not raw.strip():
            continue
        try:
            obj = json.loads(raw)
        except json.JSONDecodeError as exc:
            raise RecordError(f"line {lineno}: malformed JSON ({exc.msg})", lineno) from None
        try:
            record = CorpusRecord.from_json(obj)
        except RecordError as exc:
            raise RecordError(f"line {lineno}: {exc}", lineno) from None
        if record.id in seen:
            raise RecordError(f"duplicate id at line {lineno}: {record.id!r}", lineno)
        seen.add(record.id)
        yield record


def write_jsonl(records: Iterable[CorpusRecord], sink: IO) -> int:
    """Write records as JSONL; returns the number of records written.

    Round-trips with :func:`parse_jsonl` field for field. ``sink`` may be
    a text or binary file object; output is UTF-8 with LF line endings.
    """
    count = 0
    for record in records:
        record.validate()
        line = json.dumps(record.to_json(), ensure_ascii=False) + "\n"
        try:
            sink.write(line)
        except TypeError:
            sink.write(line.encode("utf-8"))
        count += 1
    return count


def read_jsonl_file(path) -> list[CorpusRecord]:
    with open(path, "r", encoding="utf-8") as fh:
        return list(parse_jsonl(fh))


def write_jsonl_file(records: Iterable[CorpusRecord], path) -> int:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        return write_jsonl(records, fh)
