"""Decoding-time logit composition with an expert/anti-expert pair.

At each step the base model's logits are shifted by the difference
between a tuned small model and its untuned counterpart:

    p'(x_t | ctx) = softmax(l_base + alpha * (l_tuned - l_raw))

With alpha = 1 this equals the base distribution multiplied by the
tuned/raw probability ratio and renormalized, which is how a small
fine-tuned model can steer a larger base model without touching its
parameters. Providers only need to expose a shared vocabulary and
per-context logits; a character n-gram language model is included so
the whole mechanism can be verified without any neural network.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

BOS = ""
EOS = ""


class TokenDistributionProvider(Protocol):
    def vocabulary(self) -> list[str]: ...

    def logits(self, context: Sequence[str]) -> np.ndarray: ...


def softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exps = np.exp(shifted)
    return exps / exps.sum()


@dataclass
class ProxyEnsemble:
    base: TokenDistributionProvider
    tuned: TokenDistributionProvider
    raw: TokenDistributionProvider
    alpha: float = 1.0

    def __post_init__(self):
        vocab = self.base.vocabulary()
        for name, provider in (("tuned", self.tuned), ("raw", self.raw)):
            if provider.vocabulary() != vocab:
                raise ValueError(f"provider {name!r} vocabulary differs from base")
        self._vocab = vocab

    def vocabulary(self) -> list[str]:
        return self._vocab


def _checked_logits(
    provider: TokenDistributionProvider, name: str, context: Sequence[str], size: int
) -> np.ndarray:
    logits = np.asarray(provider.logits(context), dtype=np.float64)
    if logits.shape != (size,):
        raise ValueError(
            f"provider {name!r} returned {logits.shape} logits, expected ({size},)"
        )
    if not np.all(np.isfinite(logits)):
        raise ValueError(f"provider {name!r} returned non-finite logits")
    return logits


def combine_step(ensemble: ProxyEnsemble, context: Sequence[str]) -> np.ndarray:
    """Probability vector softmax(l_base + alpha * (l_tuned - l_raw))."""
    size = len(ensemble.vocabulary())
    l_base = _checked_logits(ensemble.base, "base", context, size)
    l_tuned = _checked_logits(ensemble.tuned, "tuned", context, size)
    l_raw = _checked_logits(ensemble.raw, "raw", context, size)
    return softmax(l_base + ensemble.alpha * (l_tuned - l_raw))


def greedy_decode(
    ensemble: ProxyEnsemble,
    prompt: Sequence[str],
    max_tokens: int,
    min_tokens: int = 0,
    stop: Iterable[str] = (),
) -> list[str]:
    """Append the argmax token each step; ties go to the lowest
    vocabulary index. Stop tokens terminate generation (and are
    included in the output) only once ``min_tokens`` tokens exist."""
    if min_tokens < 0 or max_tokens < min_tokens:
        raise ValueError("need max_tokens >= min_tokens >= 0")
    vocab = ensemble.vocabulary()
    if not vocab:
        raise ValueError("empty vocabulary")
    stop_set = set(stop)
    context = list(prompt)
    out: list[str] = []
    for _ in range(max_tokens):
        probs = combine_step(ensemble, context)
        token = vocab[int(np.argmax(probs))]
        out.append(token)
        context.append(token)
        if token in stop_set and len(out) >= min_tokens:
            break
    return out


class NgramLM:
    """Character n-gram model with additive smoothing.

    Contexts are the previous ``order - 1`` characters, left-padded
    with a begin marker; every string is terminated with ``EOS``. The
    begin marker is context-only and never predicted.
    """

    def __init__(
        self,
        order: int,
        delta: float,
        vocab: list[str],
        counts: dict[str, dict[str, int]] | None = None,
    ):
        if order < 1:
            raise ValueError("order must be >= 1")
        if delta <= 0:
            raise ValueError("smoothing delta must be > 0")
        self.order = order
        self.delta = delta
        self._vocab = list(vocab)
        self._index = {t: i for i, t in enumerate(self._vocab)}
        self.counts: dict[str, dict[str, int]] = counts if counts is not None else {}
        self._cache: dict[str, np.ndarray] = {}

    def vocabulary(self) -> list[str]:
        return self._vocab

    def observe(self, text: str) -> None:
        seq = [BOS] * (self.order - 1) + list(text) + [EOS]
        for i in range(self.order - 1, len(seq)):
            context = "".join(seq[i - self.order + 1 : i])
            bucket = self.counts.setdefault(context, {})
            bucket[seq[i]] = bucket.get(seq[i], 0) + 1
        self._cache.clear()

    def _context_key(self, context: Sequence[str]) -> str:
        window = [BOS] * (self.order - 1) + list(context)
        return "".join(window[len(window) - self.order + 1 :]) if self.order > 1 else ""

    def probabilities(self, context: Sequence[str]) -> np.ndarray:
        key = self._context_key(context)
        cached = self._cache.get(key)
        if cached is not None:
            return cached
        v = len(self._vocab)
        raw = np.full(v, self.delta, dtype=np.float64)
        bucket = self.counts.get(key)
        total = self.delta * v
        if bucket:
            for token, count in bucket.items():
                idx = self._index.get(token)
                if idx is not None:
                    raw[idx] += count
                    total += count
        probs = raw / total
        self._cache[key] = probs
        return probs

    def logits(self, context: Sequence[str]) -> np.ndarray:
        return np.log(self.probabilities(context))

    def to_json(self) -> dict:
        return {
            "order": self.order,
            "delta": self.delta,
            "vocabulary": self._vocab,
            "counts": self.counts,
        }

    @classmethod
    def from_json(cls, obj: dict) -> "NgramLM":
        return cls(
            order=int(obj["order"]),
            delta=float(obj["delta"]),
            vocab=list(obj["vocabulary"]),
            counts={k: {t: int(c) for t, c in v.items()} for k, v in obj["counts"].items()},
        )


def train_ngram(
    corpus: Sequence[str],
    order: int,
    delta: float = 1.0,
    vocabulary: Iterable[str] | None = None,
) -> NgramLM:
    """Count character transitions over ``corpus``.

    The predicted vocabulary is the sorted set of corpus characters
    plus the end marker, optionally widened with ``vocabulary`` so that
    several models can share one token space.
    """
    corpus = [s.replace(BOS, "").replace(EOS, "") for s in corpus]
    if not corpus or not any(corpus):
        raise ValueError("empty corpus")
    chars = set()
    for s in corpus:
        chars.update(s)
    if vocabulary is not None:
        chars.update(t for t in vocabulary if t not in (BOS, EOS))
    vocab = sorted(chars) + [EOS]
    model = NgramLM(order=order, delta=delta, vocab=vocab)
    for s in corpus:
        model.observe(s)
    return model


def save_ngram(model: NgramLM, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(model.to_json(), fh, ensure_ascii=False)


def load_ngram(path) -> NgramLM:
    with open(path, "r", encoding="utf-8") as fh:
        return NgramLM.from_json(json.load(fh))


def mean_log_probability(
    step: Callable[[Sequence[str]], np.ndarray],
    vocab: Sequence[str],
    text: str,
) -> float:
    """Mean per-character log-probability of ``text`` under ``step``,
    a function mapping a context to a probability vector over ``vocab``."""
    index = {t: i for i, t in enumerate(vocab)}
    total = 0.0
    context: list[str] = []
    for ch in text:
        idx = index.get(ch)
        if idx is None:
            raise ValueError(f"character {ch!r} not in vocabulary")
        total += math.log(float(step(context)[idx]))
        context.append(ch)
    return total / len(text) if text else 0.0
