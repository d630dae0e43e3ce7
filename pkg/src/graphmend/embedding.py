"""Text embedding providers used for node features.

Entity labels and chunk text are embedded into the same space, so a single
provider serves the whole index.
"""

from __future__ import annotations

import hashlib
import os
from typing import Protocol

import numpy as np

from .errors import EmbeddingError

DEFAULT_DIM = 64


class EmbeddingProvider(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray: ...


def _unit(vec: np.ndarray) -> np.ndarray:
    norm = float(np.linalg.norm(vec))
    if not np.isfinite(norm) or norm == 0.0:
        raise EmbeddingError("embedding has zero or non-finite norm")
    return vec / norm


class MockEmbeddingProvider:
    """Deterministic hash-seeded embeddings, no model required.

    The text is hashed together with ``seed``; the digest seeds a generator
    that draws ``dim`` standard normal values, which are then unit-normalized.
    """

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim <= 0:
            raise ValueError("dim must be positive")
        self.dim = dim
        self.seed = seed

    def embed(self, text: str) -> np.ndarray:
        if not text:
            raise EmbeddingError("cannot embed empty text")
        digest = hashlib.blake2b(
            f"{self.seed}\x00{text}".encode("utf-8"), digest_size=32
        ).digest()
        rng = np.random.default_rng(np.frombuffer(digest, dtype=np.uint32))
        return _unit(rng.standard_normal(self.dim))


class HttpEmbeddingProvider:
    """Client for an OpenAI-style ``/embeddings`` endpoint.

    The dimension is discovered on first use by embedding a probe string.
    """

    def __init__(
        self,
        base_url: str,
        model: str = "",
        token_env: str = "EMBEDDING_API_TOKEN",
        timeout: float = 30.0,
        client=None,
    ):
        import httpx

        self.base_url = base_url.rstrip("/")
        self.model = model
        self.token = os.environ.get(token_env, "")
        self._client = client or httpx.Client(timeout=timeout)
        self._dim: int | None = None

    @property
    def dim(self) -> int:
        if self._dim is None:
            self._dim = len(self.embed("dimension probe"))
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        import httpx

        if not text:
            raise EmbeddingError("cannot embed empty text")
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        body = {"input": text}
        if self.model:
            body["model"] = self.model
        try:
            resp = self._client.post(f"{self.base_url}/embeddings", json=body, headers=headers)
            resp.raise_for_status()
            vec = np.asarray(resp.json()["data"][0]["embedding"], dtype=np.float64)
        except (httpx.HTTPError, KeyError, IndexError, TypeError, ValueError) as exc:
            raise EmbeddingError(f"embedding request failed: {exc}") from exc
        if self._dim is not None and len(vec) != self._dim:
            raise EmbeddingError(f"provider returned dim {len(vec)}, expected {self._dim}")
        return _unit(vec)


def embed_text(provider: EmbeddingProvider, text: str) -> np.ndarray:
    return provider.embed(text)


def make_provider(kind: str = "mock", dim: int = DEFAULT_DIM, seed: int = 0, **http_kwargs):
    if kind == "mock":
        return MockEmbeddingProvider(dim=dim, seed=seed)
    if kind == "http":
        return HttpEmbeddingProvider(**http_kwargs)
    raise ValueError(f"unknown embedding provider {kind!r}")
