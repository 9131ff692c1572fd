"""Dictionary-based domain-relevance filtering.

A document is kept when the fraction of its words matched by a medical
term list is strictly greater than a threshold (default 4%). For
space-delimited languages the fraction is matched-words over total
words; in ``substring`` mode (intended for zh) it is term occurrences
over the scalar-value length of the text.
"""

from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Sequence

from .records import CorpusRecord

logger = logging.getLogger(__name__)

_WORD_RE = re.compile(r"\w+")


class MatchingMode(str, Enum):
    WORD_BOUNDARY = "word_boundary"
    SUBSTRING = "substring"


def tokenize(text: str) -> list[str]:
    """Lowercased word tokens, splitting on whitespace and punctuation."""
    return _WORD_RE.findall(text.lower())


@dataclass
class TermSet:
    terms: frozenset[str]
    matching_mode: MatchingMode = MatchingMode.WORD_BOUNDARY
    # phrase index: first word -> word tuples, longest first
    _phrases: dict[str, list[tuple[str, ...]]] = field(init=False, repr=False)

    def __post_init__(self):
        if not self.terms:
            raise ValueError("empty dictionary")
        if any(not t.strip() for t in self.terms):
            raise ValueError("dictionary terms must be non-empty after trimming")
        phrases: dict[str, list[tuple[str, ...]]] = {}
        for term in self.terms:
            words = tuple(tokenize(term))
            if not words:
                continue
            phrases.setdefault(words[0], []).append(words)
        for head in phrases:
            phrases[head].sort(key=len, reverse=True)
        self._phrases = phrases

    def __len__(self) -> int:
        return len(self.terms)


@dataclass
class FilterReport:
    total: int
    kept: int
    fractions: dict[str, float]

    def to_json(self) -> dict:
        return {"total": self.total, "kept": self.kept, "fractions": self.fractions}


def load_dictionary(path, mode: MatchingMode = MatchingMode.WORD_BOUNDARY) -> TermSet:
    """Load a one-term-per-line UTF-8 dictionary; lowercases and dedups."""
    with open(path, "r", encoding="utf-8") as fh:
        terms = {line.strip().lower() for line in fh if line.strip()}
    if not terms:
        raise ValueError("empty dictionary")
    term_set = TermSet(terms=frozenset(terms), matching_mode=mode)
    logger.info("loaded %d dictionary terms from %s", len(term_set), path)
    return term_set


def medical_fraction(doc: CorpusRecord, terms: TermSet) -> float:
    """Fraction of the document matched by the term set, in [0, 1].

    A multi-word term matches as a contiguous word sequence and counts
    as a single hit. A document with no words scores 0.
    """
    text = doc.body_text()
    if terms.matching_mode is MatchingMode.SUBSTRING:
        denom = len(text)
        if denom == 0:
            return 0.0
        hay = text.lower()
        hits = sum(hay.count(term) for term in terms.terms)
        # disjoint occurrences of distinct terms can overlap each other
        return min(1.0, hits / denom)

    words = tokenize(text)
    if not words:
        return 0.0
    hits = 0
    i = 0
    n = len(words)
    while i < n:
        advanced = False
        for phrase in terms._phrases.get(words[i], ()):
            if tuple(words[i : i + len(phrase)]) == phrase:
                hits += 1
                i += len(phrase)
                advanced = True
                break
        if not advanced:
            i += 1
    return hits / n


def filter_corpus(
    docs: Sequence[CorpusRecord] | Iterable[CorpusRecord],
    terms: TermSet,
    threshold: float = 0.04,
) -> tuple[list[CorpusRecord], FilterReport]:
    """Keep documents whose fraction is strictly greater than ``threshold``.

    Order is preserved. A document sitting exactly at the threshold is
    excluded ("more than" is strict).
    """
    if not 0.0 <= threshold <= 1.0:
        raise ValueError(f"threshold must be in [0, 1], got {threshold}")
    kept: list[CorpusRecord] = []
    fractions: dict[str, float] = {}
    total = 0
    for doc in docs:
        total += 1
        frac = medical_fraction(doc, terms)
        fractions[doc.id] = frac
        if frac > threshold:
            kept.append(doc)
    return kept, FilterReport(total=total, kept=len(kept), fractions=fractions)
