import random

import pytest

from medforge.medfilter import (
    MatchingMode,
    TermSet,
    filter_corpus,
    load_dictionary,
    medical_fraction,
    tokenize,
)
from medforge.records import Language

from conftest import make_pretrain

FILLER = [
    "river", "stone", "cloud", "window", "garden", "music", "yellow", "carpet",
    "butter", "candle", "mirror", "pencil", "basket", "ladder", "copper", "velvet",
]
MEDICAL = ["aspirin", "fever", "insulin", "diagnosis", "artery", "sepsis"]


def terms(*entries: str, mode: MatchingMode = MatchingMode.WORD_BOUNDARY) -> TermSet:
    return TermSet(terms=frozenset(e.lower() for e in entries), matching_mode=mode)


def test_load_dictionary_dedups_after_lowercase(tmp_path):
    path = tmp_path / "dict.txt"
    path.write_text("Aspirin\nfever\naspirin\n", encoding="utf-8")
    loaded = load_dictionary(path)
    assert len(loaded) == 2
    assert loaded.terms == frozenset({"aspirin", "fever"})


def test_load_dictionary_rejects_empty(tmp_path):
    path = tmp_path / "empty.txt"
    path.write_text("\n\n", encoding="utf-8")
    with pytest.raises(ValueError, match="empty dictionary"):
        load_dictionary(path)


def test_load_dictionary_10k_terms(tmp_path):
    path = tmp_path / "big.txt"
    path.write_text("\n".join(f"term{i}" for i in range(10_000)), encoding="utf-8")
    loaded = load_dictionary(path)
    assert len(loaded) == 10_000


def test_fraction_five_hits_in_hundred_words():
    words = ["aspirin"] * 5 + ["river"] * 95
    doc = make_pretrain("d", " ".join(words))
    assert medical_fraction(doc, terms("aspirin")) == pytest.approx(0.05)


def test_fraction_zero_words_is_zero():
    doc = make_pretrain("d", " \t\n ")
    assert medical_fraction(doc, terms("aspirin")) == 0.0


def test_fraction_case_insensitive():
    doc = make_pretrain("d", "ASPIRIN helps; Aspirin does.")
    assert medical_fraction(doc, terms("aspirin")) == pytest.approx(2 / 4)


def brute_force_fraction(text: str, single_word_terms: set) -> float:
    """Independent recount for single-word dictionaries: plain membership
    test per token."""
    tokens = tokenize(text)
    if not tokens:
        return 0.0
    return sum(1 for t in tokens if t in single_word_terms) / len(tokens)


def test_fraction_matches_brute_force_on_constructed_doc(rng):
    # exactly 4 dictionary tokens + 96 filler tokens -> 0.04
    body = ["aspirin", "fever", "insulin", "sepsis"] + [rng.choice(FILLER) for _ in range(96)]
    rng.shuffle(body)
    doc = make_pretrain("d", " ".join(body))
    term_set = terms(*MEDICAL)
    expected = brute_force_fraction(doc.text, set(MEDICAL))
    assert expected == pytest.approx(0.04)
    assert medical_fraction(doc, term_set) == pytest.approx(expected)


def test_multiword_term_counts_one_hit():
    doc = make_pretrain("d", "acute renal failure is serious")  # 5 words, 1 phrase hit
    assert medical_fraction(doc, terms("acute renal failure")) == pytest.approx(1 / 5)


def test_multiword_prefers_longest_match():
    term_set = terms("renal failure", "acute renal failure")
    doc = make_pretrain("d", "acute renal failure")
    assert medical_fraction(doc, term_set) == pytest.approx(1 / 3)


def test_substring_mode_counts_occurrences_over_scalars():
    # 12-scalar text, two occurrences of a 2-scalar term
    text = "医生说医生很忙。你好世界"
    assert len(text) == 12
    doc = make_pretrain("d", text, Language.ZH)
    term_set = terms("医生", mode=MatchingMode.SUBSTRING)
    assert medical_fraction(doc, term_set) == pytest.approx(2 / 12)


def test_strict_threshold_boundary():
    docs = [
        make_pretrain("hi", " ".join(["aspirin"] * 5 + ["river"] * 95)),   # 0.05
        make_pretrain("at", " ".join(["aspirin"] * 4 + ["river"] * 96)),   # 0.04
        make_pretrain("lo", " ".join(["aspirin"] * 39 + ["river"] * 961)), # 0.039
    ]
    kept, report = filter_corpus(docs, terms("aspirin"), threshold=0.04)
    assert [d.id for d in kept] == ["hi"]
    assert report.total == 3 and report.kept == 1
    assert report.fractions["at"] == pytest.approx(0.04)


def test_threshold_zero_keeps_any_hit():
    docs = [
        make_pretrain("one-hit", "aspirin " + " ".join(["river"] * 99)),
        make_pretrain("no-hit", " ".join(["river"] * 100)),
    ]
    kept, _ = filter_corpus(docs, terms("aspirin"), threshold=0.0)
    assert [d.id for d in kept] == ["one-hit"]


def synthetic_doc(rng: random.Random, rid: str):
    n = rng.randint(20, 200)
    n_med = rng.randint(0, max(1, n // 10))
    body = [rng.choice(MEDICAL) for _ in range(n_med)]
    body += [rng.choice(FILLER) for _ in range(n - n_med)]
    rng.shuffle(body)
    return make_pretrain(rid, " ".join(body))


def test_thousand_docs_match_recount_oracle():
    rng = random.Random(99)
    docs = [synthetic_doc(rng, f"d{i}") for i in range(1000)]
    term_set = terms(*MEDICAL)
    threshold = 0.04
    kept, report = filter_corpus(docs, term_set, threshold)
    oracle_kept = [
        d.id for d in docs if brute_force_fraction(d.text, set(MEDICAL)) > threshold
    ]
    assert [d.id for d in kept] == oracle_kept
    for doc in docs:
        assert report.fractions[doc.id] == pytest.approx(
            brute_force_fraction(doc.text, set(MEDICAL))
        )


def test_monotonicity_raising_threshold_never_adds():
    rng = random.Random(123)
    docs = [synthetic_doc(rng, f"d{i}") for i in range(200)]
    term_set = terms(*MEDICAL)
    previous = None
    for threshold in (0.0, 0.02, 0.04, 0.08, 0.2, 1.0):
        kept_ids = {d.id for d in filter_corpus(docs, term_set, threshold)[0]}
        if previous is not None:
            assert kept_ids <= previous
        previous = kept_ids


def test_determinism():
    rng = random.Random(5)
    docs = [synthetic_doc(rng, f"d{i}") for i in range(50)]
    term_set = terms(*MEDICAL)
    first = filter_corpus(docs, term_set, 0.04)
    second = filter_corpus(docs, term_set, 0.04)
    assert [d.id for d in first[0]] == [d.id for d in second[0]]
    assert first[1].fractions == second[1].fractions
