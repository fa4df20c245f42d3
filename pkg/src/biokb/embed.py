"""Embedding providers: deterministic hashing stubs and an HTTP client."""

from __future__ import annotations

import hashlib
import os
import re
import threading
from functools import lru_cache
from concurrent.futures import ThreadPoolExecutor
from typing import Iterable, Mapping, Protocol, Sequence

import httpx
import numpy as np

from .domain import canonical_name

DEFAULT_DIM = 64
NORM_TOL = 1e-6
_TOKEN = re.compile(r"\w+", re.UNICODE)


class DimensionMismatch(ValueError):
    pass


class Transport(RuntimeError):
    pass


class BadResponse(RuntimeError):
    pass


class TextEmbedder(Protocol):
    def embed(self, text: str) -> np.ndarray: ...

    def dim(self) -> int: ...


class FaceEmbedder(Protocol):
    def embed(self, image: bytes) -> np.ndarray: ...

    def dim(self) -> int: ...


def l2_normalize(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v)
    if n == 0 or not np.isfinite(n):
        raise ValueError("cannot normalize a zero or non-finite vector")
    return v / n


def _hash_vector(data: bytes, dim: int, seed: int) -> np.ndarray:
    """Expand a keyed BLAKE2b digest into ``dim`` floats in [-1, 1)."""
    key = seed.to_bytes(8, "little", signed=True)
    words = []
    counter = 0
    while len(words) < dim:
        h = hashlib.blake2b(data, key=key, digest_size=64, person=counter.to_bytes(8, "little"))
        words.extend(np.frombuffer(h.digest(), dtype="<u8").tolist())
        counter += 1
    u = np.array(words[:dim], dtype=np.float64) / 2.0**64
    return 2.0 * u - 1.0


@lru_cache(maxsize=200_000)
def _token_vector(token: str, dim: int, seed: int) -> np.ndarray:
    v = _hash_vector(token.encode("utf-8"), dim, seed)
    v.flags.writeable = False
    return v


def stub_embed(text: str, dim: int = DEFAULT_DIM, seed: int = 0) -> np.ndarray:
    """Feature-hashing embedding: sum of keyed per-token hash vectors, L2-normalized.

    Texts sharing tokens get positive cosine, which is enough for the
    semantic stages to behave sensibly in tests. Token-free text hashes
    the whole string.
    """
    if dim < 2:
        raise ValueError("dim must be >= 2")
    tokens = _TOKEN.findall(canonical_name(text))
    if not tokens:
        return l2_normalize(_hash_vector(text.encode("utf-8"), dim, seed))
    acc = np.zeros(dim)
    for tok in tokens:
        acc += _token_vector(tok, dim, seed)
    if not np.any(acc):
        acc = _hash_vector(text.encode("utf-8"), dim, seed)
    return l2_normalize(acc)


class StubEmbedder:
    """Deterministic text embedder; embed(x) depends only on (x, dim, seed)."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 0):
        if dim < 2:
            raise ValueError("dim must be >= 2")
        self._dim = dim
        self.seed = seed

    def dim(self) -> int:
        return self._dim

    def embed(self, text: str) -> np.ndarray:
        return stub_embed(text, self._dim, self.seed)

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class StubFaceEmbedder:
    """Hashes raw image bytes (or a URL's bytes) to a unit vector."""

    def __init__(self, dim: int = DEFAULT_DIM, seed: int = 1):
        self._dim = dim
        self.seed = seed

    def dim(self) -> int:
        return self._dim

    def embed(self, image: bytes) -> np.ndarray:
        return l2_normalize(_hash_vector(bytes(image), self._dim, self.seed))


class RemoteEmbedder:
    """Client for ``POST {"texts": [...]} -> {"vectors": [[...], ...]}``.

    Batches larger than ``max_batch`` are split; at most ``max_in_flight``
    requests run at once.
    """

    def __init__(
        self,
        endpoint: str | None = None,
        dim: int | None = None,
        *,
        max_batch: int = 64,
        max_in_flight: int = 4,
        timeout: float = 30.0,
        client: httpx.Client | None = None,
    ):
        endpoint = endpoint or os.environ.get("EMBED_ENDPOINT")
        if not endpoint:
            raise ValueError("no embedding endpoint (pass one or set EMBED_ENDPOINT)")
        self.endpoint = endpoint
        self._dim = dim
        self.max_batch = max_batch
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)
        self.max_in_flight = max_in_flight

    def dim(self) -> int:
        if self._dim is None:
            self._dim = len(self.embed_batch(["dimension probe"])[0])
        return self._dim

    def _post(self, texts: Sequence[str]) -> list[np.ndarray]:
        with self._slots:
            try:
                resp = self._client.post(self.endpoint, json={"texts": list(texts)})
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise Transport(f"embedding request failed: {exc}") from exc
        try:
            vectors = resp.json()["vectors"]
        except (ValueError, KeyError, TypeError) as exc:
            raise BadResponse(f"malformed embedding response: {exc}") from exc
        if not isinstance(vectors, list) or len(vectors) != len(texts):
            raise BadResponse(f"expected {len(texts)} vectors, got {len(vectors) if isinstance(vectors, list) else vectors!r}")
        out = []
        for v in vectors:
            arr = np.asarray(v, dtype=np.float64)
            if arr.ndim != 1:
                raise BadResponse("vector is not one-dimensional")
            if self._dim is not None and arr.shape[0] != self._dim:
                raise DimensionMismatch(f"expected dim {self._dim}, got {arr.shape[0]}")
            try:
                out.append(l2_normalize(arr))
            except ValueError as exc:
                raise BadResponse(str(exc)) from None
        return out

    def embed_batch(self, texts: Sequence[str]) -> list[np.ndarray]:
        chunks = [texts[i : i + self.max_batch] for i in range(0, len(texts), self.max_batch)]
        if len(chunks) <= 1:
            return self._post(texts) if texts else []
        with ThreadPoolExecutor(max_workers=self.max_in_flight) as pool:
            results = list(pool.map(self._post, chunks))
        return [v for chunk in results for v in chunk]

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


def write_sidecar(path, vectors: Mapping[str, np.ndarray]) -> None:
    """``dim=<int>`` header, then ``qid<TAB>f1,f2,...`` sorted by qid."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(sidecar_text(vectors))


def sidecar_text(vectors: Mapping[str, np.ndarray]) -> str:
    dims = {len(v) for v in vectors.values()}
    if len(dims) > 1:
        raise DimensionMismatch(f"mixed dimensions {sorted(dims)}")
    dim = dims.pop() if dims else 0
    lines = [f"dim={dim}"]
    for qid in sorted(vectors):
        lines.append(qid + "\t" + ",".join(repr(float(x)) for x in vectors[qid]))
    return "\n".join(lines) + "\n"


def read_sidecar(path) -> dict[str, np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith("dim="):
            raise BadResponse(f"{path}: missing dim= header")
        dim = int(header[4:])
        out = {}
        for lineno, line in enumerate(fh, 2):
            if not line.strip():
                continue
            qid, _, values = line.rstrip("\n").partition("\t")
            vec = np.array([float(x) for x in values.split(",")], dtype=np.float64)
            if vec.shape[0] != dim:
                raise DimensionMismatch(f"{path}:{lineno}: expected {dim} values, got {vec.shape[0]}")
            out[qid] = vec
    return out


def embed_texts(embedder: TextEmbedder, texts: Iterable[str]) -> list[np.ndarray]:
    texts = list(texts)
    batch = getattr(embedder, "embed_batch", None)
    if batch is not None:
        return list(batch(texts))
    return [embedder.embed(t) for t in texts]
