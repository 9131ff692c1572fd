import random
import string

import pytest

from medforge.records import CorpusRecord, Language, Stage


def make_pretrain(rid: str, text: str, lang: Language = Language.EN, source: str = "books") -> CorpusRecord:
    return CorpusRecord(id=rid, lang=lang, source=source, stage=Stage.PRETRAIN, text=text)


def make_instruction(
    rid: str, question: str, answer: str, lang: Language = Language.EN, source: str = "exams"
) -> CorpusRecord:
    return CorpusRecord(
        id=rid, lang=lang, source=source, stage=Stage.INSTRUCTION,
        question=question, answer=answer,
    )


def random_text(rng: random.Random, length: int, alphabet: str = string.ascii_lowercase) -> str:
    return "".join(rng.choice(alphabet) for _ in range(length))


@pytest.fixture
def rng():
    return random.Random(0xC0FFEE)
