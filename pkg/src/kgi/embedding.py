"""Text embedders feeding the dense index.

Two implementations of one capability: a client for a remote encoder
service, and a deterministic hashed bag-of-words embedder that keeps the
whole pipeline runnable (and testable) offline. The hashed embedder
L2-normalizes its output so inner product equals cosine similarity.
"""

from __future__ import annotations

import hashlib
import json
from typing import Protocol

import httpx
import numpy as np

from kgi.errors import TransportError, ValidationError
from kgi.tokenization import tokenize


class Embedder(Protocol):
    dim: int

    def embed(self, text: str) -> np.ndarray:
        ...


def _bucket(token: str, dim: int) -> int:
    digest = hashlib.sha1(token.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") % dim


class HashedBowEmbedder:
    """Deterministic test embedder: token counts hashed into a fixed-size vector.

    Same text always embeds to the same vector, across processes (sha1
    bucketing, not the salted builtin hash). Scaling all counts and then
    normalizing keeps repeated-token texts parallel to their singletons.
    """

    def __init__(self, dim: int = 256):
        if dim < 1:
            raise ValidationError(f"dim must be >= 1, got {dim}")
        self.dim = dim

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise ValidationError("cannot embed text with no tokens")
        vector = np.zeros(self.dim, dtype=np.float32)
        for token in tokens:
            vector[_bucket(token, self.dim)] += 1.0
        return vector / np.linalg.norm(vector)


class RemoteEmbedder:
    """Client for a remote encoder: POST {texts:[...]} -> {vectors:[[...]]}."""

    def __init__(
        self,
        endpoint: str,
        dim: int,
        timeout: float = 30.0,
        attempts: int = 2,
        transport: httpx.BaseTransport | None = None,
    ):
        self.endpoint = endpoint
        self.dim = dim
        self.timeout = timeout
        self.attempts = attempts
        self._client = httpx.Client(transport=transport, timeout=timeout)

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        last_error: Exception | None = None
        for _ in range(self.attempts):
            try:
                response = self._client.post(self.endpoint, content=json.dumps({"texts": texts}))
                response.raise_for_status()
                vectors = response.json()["vectors"]
                result = [np.asarray(v, dtype=np.float32) for v in vectors]
                if len(result) != len(texts) or any(v.shape != (self.dim,) for v in result):
                    raise TransportError(
                        "embedder response shape mismatch",
                        endpoint=self.endpoint,
                        attempts=self.attempts,
                    )
                return result
            except TransportError:
                raise
            except (httpx.HTTPError, KeyError, ValueError) as exc:
                last_error = exc
        raise TransportError(
            f"embedder unreachable after {self.attempts} attempts: {last_error}",
            endpoint=self.endpoint,
            attempts=self.attempts,
            cause=last_error,
        )


def embed(embedder: Embedder, text: str) -> np.ndarray:
    """Embed one text; output length always equals the embedder's dim."""
    vector = embedder.embed(text)
    if vector.shape != (embedder.dim,):
        raise ValidationError(
            f"embedder produced shape {vector.shape}, expected ({embedder.dim},)"
        )
    return vector
