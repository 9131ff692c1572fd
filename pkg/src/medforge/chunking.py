"""Split documents into bounded chunks along semantic-unit boundaries.

Documents are first partitioned into units (paragraphs, headed
sections, or sentences, tried in that order), then units are greedily
packed into chunks no longer than the per-language scalar limit.
Default limits: 2048 scalars for en/es/fr/hi, 256 for zh, 128 for ar.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

from .records import CorpusRecord, Language, RecordError

DEFAULT_LIMITS: dict[Language, int] = {
    Language.EN: 2048,
    Language.ES: 2048,
    Language.FR: 2048,
    Language.HI: 2048,
    Language.ZH: 256,
    Language.AR: 128,
}

_WS_RE = re.compile(r"\s+")
_BLANK_LINE_RE = re.compile(r"\n\s*\n")
_HEADING_RE = re.compile(r"(?m)^(?=#{1,6}\s)")
# union of terminal punctuation across the six scripts
_SENTENCE_RE = re.compile(r"(?<=[.!?。！？؟।])\s+")

_SPLITTERS = {
    "blank_line": _BLANK_LINE_RE,
    "heading": _HEADING_RE,
    "sentence": _SENTENCE_RE,
}


def _squash(text: str) -> str:
    return _WS_RE.sub(" ", text).strip()


@dataclass
class ChunkPolicy:
    limits: dict[Language, int] = field(default_factory=lambda: dict(DEFAULT_LIMITS))
    unit_separators: tuple[str, ...] = ("blank_line", "heading", "sentence")

    def __post_init__(self):
        for lang, limit in self.limits.items():
            if limit <= 0:
                raise ValueError(f"limit for {lang.value} must be > 0, got {limit}")
        for name in self.unit_separators:
            if name not in _SPLITTERS:
                raise ValueError(f"unknown separator {name!r}")

    def limit_for(self, lang: Language) -> int:
        return self.limits[lang]


@dataclass
class Chunk:
    parent_id: str
    seq: int
    lang: Language
    text: str
    source: str = ""

    def to_json(self) -> dict:
        return {
            "parent_id": self.parent_id,
            "seq": self.seq,
            "lang": self.lang.value,
            "source": self.source,
            "text": self.text,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Chunk":
        try:
            lang = Language(obj["lang"])
        except (KeyError, ValueError):
            raise RecordError(f"chunk has unknown language: {obj.get('lang')!r}") from None
        return cls(
            parent_id=str(obj["parent_id"]),
            seq=int(obj["seq"]),
            lang=lang,
            text=str(obj["text"]),
            source=str(obj.get("source", "")),
        )


def split_units(doc: CorpusRecord, policy: ChunkPolicy) -> list[str]:
    """Partition a document at the highest-priority separator that splits it.

    Each unit is whitespace-normalized. Falls back to the whole document
    as a single unit when no separator matches.
    """
    text = doc.text or ""
    for name in policy.unit_separators:
        parts = [_squash(p) for p in _SPLITTERS[name].split(text)]
        parts = [p for p in parts if p]
        if len(parts) >= 2:
            return parts
    whole = _squash(text)
    return [whole] if whole else []


def _sentence_pieces(unit: str, limit: int) -> list[str]:
    """Cut an oversized unit at sentence boundaries, hard-splitting any
    sentence that still exceeds the limit."""
    pieces: list[str] = []
    for sentence in _SENTENCE_RE.split(unit):
        sentence = sentence.strip()
        if not sentence:
            continue
        if len(sentence) <= limit:
            pieces.append(sentence)
        else:
            pieces.extend(sentence[i : i + limit] for i in range(0, len(sentence), limit))
    return pieces


def pack_chunks(units: Sequence[str], limit: int) -> list[str]:
    """Greedy first-fit packing with a single-space joiner.

    Consecutive units merge while the merged length stays within the
    limit; oversized units are first reduced to sentence pieces. No
    returned chunk exceeds ``limit`` scalars.
    """
    if limit <= 0:
        raise ValueError(f"limit must be > 0, got {limit}")
    pieces: list[str] = []
    for unit in units:
        if len(unit) <= limit:
            pieces.append(unit)
        else:
            pieces.extend(_sentence_pieces(unit, limit))
    chunks: list[str] = []
    current = ""
    for piece in pieces:
        candidate = piece if not current else f"{current} {piece}"
        if len(candidate) <= limit:
            current = candidate
        else:
            chunks.append(current)
            current = piece
    if current:
        chunks.append(current)
    return chunks


def chunk_document(doc: CorpusRecord, policy: ChunkPolicy) -> list[Chunk]:
    limit = policy.limit_for(doc.lang)
    texts = pack_chunks(split_units(doc, policy), limit)
    return [
        Chunk(parent_id=doc.id, seq=i, lang=doc.lang, text=t, source=doc.source)
        for i, t in enumerate(texts)
    ]


def chunk_corpus(
    docs: Iterable[CorpusRecord], policy: ChunkPolicy | None = None
) -> Iterator[Chunk]:
    policy = policy or ChunkPolicy()
    for doc in docs:
        yield from chunk_document(doc, policy)
