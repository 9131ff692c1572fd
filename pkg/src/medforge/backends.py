"""Text-completion backends for the evaluation harness.

A backend is any ``(prompt, GenerationConfig) -> completion`` callable.
Local backends decode greedily over a token-distribution provider (a
single model or a proxy ensemble); the HTTP backend posts
``{"prompt", "max_new_tokens", "min_new_tokens"}`` and expects
``{"completion": str}`` back.
"""

from __future__ import annotations

from .evalharness import BackendError, GenerationConfig
from .proxy import (
    EOS,
    ProxyEnsemble,
    TokenDistributionProvider,
    greedy_decode,
)


class IdentityEnsemble(ProxyEnsemble):
    """Wraps a single provider so plain decoding shares the proxy path
    (tuned == raw makes the offset vanish identically)."""

    def __init__(self, provider: TokenDistributionProvider):
        super().__init__(base=provider, tuned=provider, raw=provider, alpha=0.0)


def decode_text(ensemble: ProxyEnsemble, prompt: str, cfg: GenerationConfig) -> str:
    tokens = greedy_decode(
        ensemble,
        prompt=list(prompt),
        max_tokens=cfg.max_new_tokens,
        min_tokens=cfg.min_new_tokens,
        stop={EOS},
    )
    return "".join(t for t in tokens if t != EOS)


class ProviderBackend:
    """Greedy character decoding over a provider or proxy ensemble."""

    def __init__(self, ensemble: ProxyEnsemble):
        self.ensemble = ensemble

    def __call__(self, prompt: str, cfg: GenerationConfig) -> str:
        return decode_text(self.ensemble, prompt, cfg)


class HttpBackend:
    def __init__(self, endpoint: str, timeout: float = 120.0):
        import requests

        self._requests = requests
        self.endpoint = endpoint
        self.timeout = timeout
        self._session = requests.Session()

    def __call__(self, prompt: str, cfg: GenerationConfig) -> str:
        payload = {
            "prompt": prompt,
            "max_new_tokens": cfg.max_new_tokens,
            "min_new_tokens": cfg.min_new_tokens,
        }
        try:
            response = self._session.post(self.endpoint, json=payload, timeout=self.timeout)
        except self._requests.RequestException as exc:
            raise BackendError(str(exc)) from exc
        if response.status_code // 100 != 2:
            raise BackendError(f"HTTP {response.status_code}: {response.text[:200]}")
        try:
            return str(response.json()["completion"])
        except (KeyError, TypeError, ValueError) as exc:
            raise BackendError(f"malformed completion payload: {exc}") from exc
