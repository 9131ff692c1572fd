"""Benchmark-contamination screening.

A training item is leaked when its normalized text contains an entire
benchmark question, or shares at least ``window_length`` consecutive
Unicode scalar values (default 64) with benchmark text. Candidate
overlaps are found with a 64-bit polynomial rolling hash and confirmed
by exact string comparison, so hash collisions can never flag an item.

"Characters" means Unicode scalar values after NFC normalization and
whitespace collapsing, not bytes; byte counting would make the rule
about three times stricter for CJK text than for Latin text.
"""

from __future__ import annotations

import re
import unicodedata
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Optional, Sequence

from .records import CorpusRecord, Stage

_WS_RE = re.compile(r"\s+")

_MASK64 = (1 << 64) - 1
_BASE = 6364136223846793005  # odd multiplier, good mixing mod 2^64


def normalize(text: str) -> str:
    """NFC-normalize and collapse whitespace runs to single spaces."""
    return _WS_RE.sub(" ", unicodedata.normalize("NFC", text)).strip()


def _window_hashes(text: str, length: int) -> Iterator[tuple[int, int]]:
    """Yield (offset, hash) for every ``length``-scalar window of ``text``."""
    n = len(text)
    if length <= 0 or n < length:
        return
    h = 0
    for ch in text[:length]:
        h = (h * _BASE + ord(ch)) & _MASK64
    lead = pow(_BASE, length - 1, 1 << 64)
    yield 0, h
    for i in range(1, n - length + 1):
        h = ((h - ord(text[i - 1]) * lead) * _BASE + ord(text[i + length - 1])) & _MASK64
        yield i, h


@dataclass
class LeakEvidence:
    item_id: str
    benchmark_id: str
    kind: str  # "question" or "window"
    substring: str
    item_offset: int
    bench_offset: int

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "benchmark_id": self.benchmark_id,
            "kind": self.kind,
            "substring": self.substring,
            "item_offset": self.item_offset,
            "bench_offset": self.bench_offset,
        }


@dataclass
class ScreenReport:
    total: int
    removed: int
    evidence: list[LeakEvidence]

    @property
    def screening_rate(self) -> float:
        return self.removed / self.total if self.total else 0.0

    def to_json(self) -> dict:
        return {
            "total": self.total,
            "removed": self.removed,
            "screening_rate": self.screening_rate,
            "evidence": [e.to_json() for e in self.evidence],
        }


def _bench_question(record: CorpusRecord) -> str:
    return record.question if record.stage is Stage.INSTRUCTION else (record.text or "")


@dataclass
class OverlapIndex:
    """Immutable window/question index over normalized benchmark text."""

    window_length: int
    # window hash -> [(benchmark id, offset)]; confirmed against texts
    window_store: dict[int, list[tuple[str, int]]] = field(default_factory=dict)
    texts: dict[str, str] = field(default_factory=dict)
    # question length -> hash -> [(benchmark id, question)]
    question_store: dict[int, dict[int, list[tuple[str, str]]]] = field(default_factory=dict)

    @property
    def hashes(self) -> set[int]:
        return set(self.window_store)

    @property
    def questions(self) -> set[str]:
        return {
            q
            for by_hash in self.question_store.values()
            for entries in by_hash.values()
            for _, q in entries
        }

    def window_count(self) -> int:
        return sum(len(v) for v in self.window_store.values())


def build_index(
    benchmark: Sequence[CorpusRecord] | Iterable[CorpusRecord],
    window_length: int = 64,
) -> OverlapIndex:
    """Index every ``window_length``-scalar window of benchmark text plus
    every full normalized question string.

    Benchmark texts shorter than the window contribute only to the
    full-question set.
    """
    if window_length < 8:
        raise ValueError(f"window_length must be >= 8, got {window_length}")
    index = OverlapIndex(window_length=window_length)
    count = 0
    for record in benchmark:
        count += 1
        text = normalize(record.body_text())
        index.texts[record.id] = text
        for offset, h in _window_hashes(text, window_length):
            index.window_store.setdefault(h, []).append((record.id, offset))
        question = normalize(_bench_question(record))
        if question:
            h = 0
            for ch in question:
                h = (h * _BASE + ord(ch)) & _MASK64
            by_hash = index.question_store.setdefault(len(question), {})
            by_hash.setdefault(h, []).append((record.id, question))
    if count == 0:
        raise ValueError("empty benchmark")
    return index


def is_leaked(
    item: CorpusRecord, index: OverlapIndex
) -> tuple[bool, Optional[LeakEvidence]]:
    """Check one item against the index; evidence names the benchmark
    item, the matched substring and both offsets."""
    text = normalize(item.body_text())
    # whole-question rule: applies at any length, even below the window
    for qlen in sorted(index.question_store):
        if qlen > len(text):
            break
        by_hash = index.question_store[qlen]
        for offset, h in _window_hashes(text, qlen):
            entries = by_hash.get(h)
            if not entries:
                continue
            fragment = text[offset : offset + qlen]
            for bench_id, question in entries:
                if fragment == question:
                    return True, LeakEvidence(
                        item_id=item.id,
                        benchmark_id=bench_id,
                        kind="question",
                        substring=question,
                        item_offset=offset,
                        bench_offset=0,
                    )
    # shared-window rule
    w = index.window_length
    for offset, h in _window_hashes(text, w):
        candidates = index.window_store.get(h)
        if not candidates:
            continue
        fragment = text[offset : offset + w]
        for bench_id, bench_offset in candidates:
            if index.texts[bench_id][bench_offset : bench_offset + w] == fragment:
                return True, LeakEvidence(
                    item_id=item.id,
                    benchmark_id=bench_id,
                    kind="window",
                    substring=fragment,
                    item_offset=offset,
                    bench_offset=bench_offset,
                )
    return False, None


def screen(
    items: Sequence[CorpusRecord] | Iterable[CorpusRecord],
    index: OverlapIndex,
) -> tuple[list[CorpusRecord], ScreenReport]:
    """Drop leaked items, preserving order; report every removal with
    its evidence."""
    kept: list[CorpusRecord] = []
    evidence: list[LeakEvidence] = []
    total = 0
    for item in items:
        total += 1
        leaked, ev = is_leaked(item, index)
        if leaked:
            assert ev is not None
            evidence.append(ev)
        else:
            kept.append(item)
    return kept, ScreenReport(total=total, removed=len(evidence), evidence=evidence)
