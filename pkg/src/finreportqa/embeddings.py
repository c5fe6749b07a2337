"""Embedding providers and the on-disk embedding cache.

Providers turn text into fixed-dimension vectors. The HTTP provider speaks
the common embeddings wire format (POST {model, input} -> data[].embedding).
The cache is content-addressed by (model, sha256 of text) so reruns and
offline replays never re-embed.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import tempfile
import threading
from pathlib import Path
from typing import Callable, Optional, Sequence

from .errors import DimensionMismatchError, ProviderError


class EmbeddingProvider:
    """Interface: subclasses set model/dimension and implement embed()."""

    model: str
    dimension: int

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        raise NotImplementedError


class HttpEmbeddingProvider(EmbeddingProvider):
    """Calls an embeddings endpoint over HTTP.

    transport(url, payload, headers, timeout) -> decoded JSON dict; the
    default uses requests. Injectable for tests. Identical text embeds
    identically within a session (in-memory memo); concurrent requests are
    bounded by max_in_flight.
    """

    def __init__(self, endpoint: str, model: str, dimension: int,
                 api_key_env: str = "FINDOC_API_KEY", timeout: float = 60.0,
                 transport: Optional[Callable] = None, max_in_flight: int = 4):
        self.endpoint = endpoint
        self.model = model
        self.dimension = dimension
        self.api_key_env = api_key_env
        self.timeout = timeout
        self._transport = transport or self._default_transport
        self._memo: dict[str, list[float]] = {}
        self._semaphore = threading.Semaphore(max_in_flight)

    def _default_transport(self, url: str, payload: dict, headers: dict, timeout: float) -> dict:
        import requests

        try:
            response = requests.post(url, json=payload, headers=headers, timeout=timeout)
        except requests.RequestException as exc:
            raise ProviderError(f"embedding request failed: {exc}") from exc
        if response.status_code != 200:
            raise ProviderError(f"embedding endpoint returned {response.status_code}")
        return response.json()

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        pending = [t for t in dict.fromkeys(texts) if t not in self._memo]
        if pending:
            for text, vector in zip(pending, self._request(pending)):
                self._memo[text] = vector
        return [list(self._memo[t]) for t in texts]

    def _request(self, texts: list[str]) -> list[list[float]]:
        headers = {"Content-Type": "application/json"}
        api_key = os.environ.get(self.api_key_env)
        if api_key:
            headers["Authorization"] = f"Bearer {api_key}"
        payload = {"model": self.model, "input": texts}
        try:
            with self._semaphore:
                body = self._transport(self.endpoint, payload, headers, self.timeout)
            vectors = [item["embedding"] for item in body["data"]]
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(f"could not decode embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise ProviderError(f"expected {len(texts)} vectors, got {len(vectors)}")
        for vector in vectors:
            if len(vector) != self.dimension:
                raise DimensionMismatchError(
                    f"provider returned dimension {len(vector)}, expected {self.dimension}")
        return [list(map(float, v)) for v in vectors]


def text_sha256(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


class EmbeddingCache:
    """Directory of per-text vector files, keyed by (model, content hash)."""

    def __init__(self, root: str | Path):
        self.root = Path(root)
        self._lock = threading.Lock()

    def _path(self, model: str, text: str) -> Path:
        slug = re.sub(r"[^A-Za-z0-9._-]+", "_", model)
        return self.root / slug / f"{text_sha256(text)}.json"

    def get(self, model: str, text: str) -> Optional[list[float]]:
        path = self._path(model, text)
        if not path.exists():
            return None
        return json.loads(path.read_text(encoding="utf-8"))["vector"]

    def put(self, model: str, text: str, vector: Sequence[float]) -> None:
        path = self._path(model, text)
        with self._lock:
            path.parent.mkdir(parents=True, exist_ok=True)
            payload = {"model": model, "sha256": text_sha256(text), "vector": list(vector)}
            fd, tmp = tempfile.mkstemp(dir=path.parent, suffix=".tmp")
            with os.fdopen(fd, "w", encoding="utf-8") as fh:
                json.dump(payload, fh)
            os.replace(tmp, path)


class CachedEmbeddingProvider(EmbeddingProvider):
    """Serves vectors from the cache, calling the inner provider on misses.

    With a warm cache the inner provider is never touched, so offline
    replay works for any previously embedded text.
    """

    def __init__(self, provider: EmbeddingProvider, cache: EmbeddingCache):
        self.provider = provider
        self.cache = cache
        self.model = provider.model
        self.dimension = provider.dimension

    def embed(self, texts: Sequence[str]) -> list[list[float]]:
        results: list[Optional[list[float]]] = [self.cache.get(self.model, t) for t in texts]
        missing = [i for i, vec in enumerate(results) if vec is None]
        if missing:
            fresh = self.provider.embed([texts[i] for i in missing])
            for i, vector in zip(missing, fresh):
                self.cache.put(self.model, texts[i], vector)
                results[i] = vector
        return results  # type: ignore[return-value]
