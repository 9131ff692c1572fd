"""Few-shot multiple-choice evaluation harness.

Prompts follow a fixed exam template; the model answer is recovered by
regular-expression matching with a strict precedence, and anything
unparseable scores as incorrect, so accuracy is always a total
function of the transcript. Reports carry per-dataset accuracy,
per-language means and the macro average over datasets.
"""

from __future__ import annotations

import json
import logging
import re
import string
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional, Sequence

from .records import Language

logger = logging.getLogger(__name__)

INSTRUCTION = (
    "You are a medical doctor answering real-world medical exam questions. "
    "Select one correct answer from A to {last_letter}."
)


@dataclass(frozen=True)
class EvalItem:
    id: str
    question: str
    options: tuple[str, ...]
    gold: int

    def __post_init__(self):
        if len(self.options) < 2:
            raise ValueError(f"item {self.id!r} needs at least 2 options")
        if not 0 <= self.gold < len(self.options):
            raise ValueError(f"item {self.id!r} gold index {self.gold} out of range")


@dataclass
class EvalTask:
    dataset: str
    lang: Language
    items: list[EvalItem]
    variable_options: bool = False

    def __post_init__(self):
        if not self.items:
            raise ValueError(f"task {self.dataset!r} has no items")
        counts = {len(item.options) for item in self.items}
        if len(counts) > 1 and not self.variable_options:
            raise ValueError(
                f"task {self.dataset!r} mixes option counts {sorted(counts)}; "
                "flag it variable_options to allow this"
            )

    @property
    def n_options(self) -> int:
        return max(len(item.options) for item in self.items)


@dataclass
class GenerationConfig:
    shots: int = 3
    max_new_tokens: int = 128
    min_new_tokens: int = 2

    def __post_init__(self):
        if self.shots < 0:
            raise ValueError("shots must be >= 0")
        if not self.max_new_tokens >= self.min_new_tokens >= 0:
            raise ValueError("need max_new_tokens >= min_new_tokens >= 0")


@dataclass
class PromptStyle:
    """Rendering knobs for the exam template; the special token slot is
    model-specific and empty by default."""

    special_token: str = ""


def _option_letter(i: int) -> str:
    return string.ascii_uppercase[i]


def _render_block(item: EvalItem, style: PromptStyle, answered: bool) -> str:
    letters = [_option_letter(i) for i in range(len(item.options))]
    options = " ".join(f"({L}) {text}" for L, text in zip(letters, item.options))
    instruction = INSTRUCTION.format(last_letter=letters[-1])
    block = (
        f"User:{instruction} Question: {item.question}\n"
        f"Options: {options}\n"
        "Assistant:The correct answer is"
    )
    if answered:
        block += f" ({letters[item.gold]})."
        if style.special_token:
            block += f" {style.special_token}"
    return block


def build_prompt(
    item: EvalItem,
    exemplars: Sequence[EvalItem],
    style: PromptStyle | None = None,
) -> str:
    """Render shots then the query; the query's assistant turn is left
    open after "The correct answer is". Exemplars must be disjoint from
    the query, else the harness itself would leak answers."""
    style = style or PromptStyle()
    for exemplar in exemplars:
        if exemplar.id == item.id or exemplar.question == item.question:
            raise ValueError(f"exemplar {exemplar.id!r} overlaps the evaluated item")
    blocks = [_render_block(e, style, answered=True) for e in exemplars]
    blocks.append(_render_block(item, style, answered=False))
    return "\n\n".join(blocks)


_PHRASE_RE = re.compile(r"correct answer is\s*\(?\s*([A-Za-z])(?![A-Za-z])", re.IGNORECASE)
_PAREN_RE = re.compile(r"\(\s*([A-Za-z])\s*\)")
_LEADING_RE = re.compile(r"^\s*([A-Za-z])\s*[).:\],]")


def extract_choice(completion: str, n_options: int) -> Optional[int]:
    """First match wins: the answer phrase, then a parenthesized letter,
    then a leading bare letter with punctuation. Letters outside the
    option range never match; no letter means no extraction."""
    for pattern in (_PHRASE_RE, _PAREN_RE, _LEADING_RE):
        for match in pattern.finditer(completion):
            idx = ord(match.group(1).upper()) - ord("A")
            if 0 <= idx < n_options:
                return idx
    return None


@dataclass
class Transcript:
    item_id: str
    prompt: str
    completion: Optional[str]
    extracted: Optional[int]
    correct: bool
    errored: bool = False

    def to_json(self) -> dict:
        return {
            "item_id": self.item_id,
            "prompt": self.prompt,
            "completion": self.completion,
            "extracted": None if self.extracted is None else _option_letter(self.extracted),
            "correct": self.correct,
            "errored": self.errored,
        }


@dataclass
class DatasetResult:
    dataset: str
    lang: Language
    total: int
    correct: int
    unparsed: int
    errored: int
    transcripts: list[Transcript] = field(default_factory=list, repr=False)
    strict: bool = True

    @property
    def accuracy(self) -> float:
        denominator = self.total if self.strict else self.total - self.errored
        return self.correct / denominator if denominator else 0.0

    def to_json(self, include_transcripts: bool = True) -> dict:
        obj = {
            "dataset": self.dataset,
            "lang": self.lang.value,
            "total": self.total,
            "correct": self.correct,
            "incorrect": self.total - self.correct - self.errored,
            "unparsed": self.unparsed,
            "errored": self.errored,
            "accuracy": self.accuracy,
        }
        if include_transcripts:
            obj["transcripts"] = [t.to_json() for t in self.transcripts]
        return obj


Backend = Callable[[str, GenerationConfig], str]


class BackendError(RuntimeError):
    """A backend failed to produce a completion for one prompt."""


def fixed_prefix_exemplars(dev_items: Sequence[EvalItem], shots: int) -> list[EvalItem]:
    """Default exemplar policy: the first ``shots`` items of a dev split,
    fixed across the whole run for reproducibility."""
    if len(dev_items) < shots:
        raise ValueError(f"dev split has {len(dev_items)} items, need {shots}")
    return list(dev_items[:shots])


def score_dataset(
    backend: Backend,
    task: EvalTask,
    cfg: GenerationConfig,
    exemplars: Sequence[EvalItem],
    style: PromptStyle | None = None,
    strict: bool = True,
) -> DatasetResult:
    """Evaluate every item; deterministic given a deterministic backend.

    Backend failures mark the item errored; with ``strict`` (default)
    errored items stay in the accuracy denominator as incorrect,
    otherwise they are excluded from it.
    """
    if len(exemplars) != cfg.shots:
        raise ValueError(f"got {len(exemplars)} exemplars for {cfg.shots}-shot eval")
    correct = unparsed = errored = 0
    transcripts: list[Transcript] = []
    for item in task.items:
        prompt = build_prompt(item, exemplars, style)
        try:
            completion = backend(prompt, cfg)
        except BackendError as exc:
            logger.warning("backend failed on item %s: %s", item.id, exc)
            errored += 1
            transcripts.append(
                Transcript(item.id, prompt, None, None, correct=False, errored=True)
            )
            continue
        choice = extract_choice(completion, len(item.options))
        if choice is None:
            unparsed += 1
        ok = choice == item.gold
        correct += ok
        transcripts.append(Transcript(item.id, prompt, completion, choice, correct=ok))
    return DatasetResult(
        dataset=task.dataset,
        lang=task.lang,
        total=len(task.items),
        correct=correct,
        unparsed=unparsed,
        errored=errored,
        transcripts=transcripts,
        strict=strict,
    )


@dataclass
class EvalReport:
    fragments: list[DatasetResult]
    per_language: dict[str, float]
    macro_average: float
    language_macro_average: float

    def to_json(self, include_transcripts: bool = True) -> dict:
        return {
            "datasets": [f.to_json(include_transcripts) for f in self.fragments],
            "per_language": self.per_language,
            "macro_average": self.macro_average,
            "language_macro_average": self.language_macro_average,
        }


def aggregate(fragments: Sequence[DatasetResult]) -> EvalReport:
    """Unweighted means: per language over that language's datasets, and
    macro over all datasets. Both views are reported because they answer
    different questions when languages have unequal dataset counts."""
    if not fragments:
        raise ValueError("nothing to aggregate")
    by_language: dict[str, list[float]] = {}
    for fragment in fragments:
        by_language.setdefault(fragment.lang.value, []).append(fragment.accuracy)
    per_language = {lang: sum(v) / len(v) for lang, v in sorted(by_language.items())}
    macro = sum(f.accuracy for f in fragments) / len(fragments)
    language_macro = sum(per_language.values()) / len(per_language)
    return EvalReport(
        fragments=list(fragments),
        per_language=per_language,
        macro_average=macro,
        language_macro_average=language_macro,
    )


def load_task(path, dataset: str, lang: Language, variable_options: bool = False) -> EvalTask:
    """Task JSONL: {"q": str, "options": [str...], "gold": int} per line,
    with an optional "id"."""
    items: list[EvalItem] = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}: line {lineno}: malformed JSON ({exc.msg})") from None
            try:
                items.append(
                    EvalItem(
                        id=str(obj.get("id", f"item-{lineno}")),
                        question=str(obj["q"]),
                        options=tuple(str(o) for o in obj["options"]),
                        gold=int(obj["gold"]),
                    )
                )
            except (KeyError, TypeError) as exc:
                raise ValueError(f"{path}: line {lineno}: bad task item ({exc})") from None
    return EvalTask(dataset=dataset, lang=lang, items=items, variable_options=variable_options)
