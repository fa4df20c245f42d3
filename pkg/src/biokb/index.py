"""Write-once in-memory store: alias lookup plus exact cosine k-NN per channel."""

from __future__ import annotations

from dataclasses import dataclass
from types import MappingProxyType
from typing import Iterable, Mapping

import numpy as np

from .domain import PersonRecord, canonical_name
from .embed import DimensionMismatch

BIOGRAPHY = "biography"
FACE = "face"
CHANNELS = (BIOGRAPHY, FACE)


class MissingEmbedding(KeyError):
    pass


class UnknownChannel(KeyError):
    pass


@dataclass(frozen=True)
class ScoredHit:
    qid: str
    score: float
    channel: str


class _Channel:
    __slots__ = ("qids", "matrix", "rank", "pos")

    def __init__(self, qids: list[str], matrix: np.ndarray):
        order = np.argsort(np.array(qids, dtype=object), kind="stable")
        self.qids = [qids[i] for i in order]
        m = np.ascontiguousarray(matrix[order], dtype=np.float64)
        m /= np.linalg.norm(m, axis=1, keepdims=True)
        m.flags.writeable = False
        self.matrix = m
        # row i holds the i-th smallest qid, so the row index is the qid tie-break rank
        self.rank = np.arange(len(self.qids))
        self.pos = {q: i for i, q in enumerate(self.qids)}

    @property
    def dim(self) -> int:
        return self.matrix.shape[1]


class StoreIndex:
    """Immutable after build(); queries are read-only and safe to run concurrently."""

    def __init__(self, records: Mapping[str, PersonRecord], aliases: Mapping[str, frozenset[str]],
                 channels: Mapping[str, _Channel]):
        self._records = MappingProxyType(dict(records))
        self._aliases = MappingProxyType(dict(aliases))
        self._channels = MappingProxyType(dict(channels))

    @classmethod
    def build(
        cls,
        records: Iterable[PersonRecord],
        embeddings: Mapping[str, Mapping[str, np.ndarray]],
    ) -> "StoreIndex":
        """``embeddings`` maps channel -> qid -> vector; biography is mandatory for every record."""
        recs: dict[str, PersonRecord] = {}
        for r in records:
            if r.qid in recs:
                raise ValueError(f"duplicate qid {r.qid}")
            recs[r.qid] = r
        bio = embeddings.get(BIOGRAPHY, {})
        for qid in recs:
            if qid not in bio:
                raise MissingEmbedding(qid)

        aliases: dict[str, set[str]] = {}
        for r in recs.values():
            for name in r.names.values():
                aliases.setdefault(canonical_name(name), set()).add(r.qid)

        channels = {}
        for ch, vecs in embeddings.items():
            if ch not in CHANNELS:
                raise UnknownChannel(ch)
            qids = [q for q in vecs if q in recs]
            if not qids:
                continue
            dims = {np.asarray(vecs[q]).shape[0] for q in qids}
            if len(dims) != 1:
                raise DimensionMismatch(f"channel {ch} has mixed dims {sorted(dims)}")
            matrix = np.vstack([np.asarray(vecs[q], dtype=np.float64) for q in qids])
            channels[ch] = _Channel(qids, matrix)
        return cls(recs, {k: frozenset(v) for k, v in aliases.items()}, channels)

    def __len__(self) -> int:
        return len(self._records)

    def __contains__(self, qid: str) -> bool:
        return qid in self._records

    def record(self, qid: str) -> PersonRecord:
        return self._records[qid]

    @property
    def records(self) -> Mapping[str, PersonRecord]:
        return self._records

    def has_channel(self, channel: str) -> bool:
        return channel in self._channels

    def channel_dim(self, channel: str) -> int:
        return self._channels[channel].dim

    def channel_size(self, channel: str) -> int:
        return len(self._channels[channel].qids) if channel in self._channels else 0

    def vector(self, channel: str, qid: str) -> np.ndarray | None:
        ch = self._channels.get(channel)
        if ch is None:
            return None
        i = ch.pos.get(qid)
        return None if i is None else ch.matrix[i]

    def exact_lookup(self, name: str) -> set[str]:
        return set(self._aliases.get(canonical_name(name), ()))

    def knn(self, channel: str, query: np.ndarray, k: int) -> list[ScoredHit]:
        """Exact top-k by cosine; rows and query are unit vectors so cosine is the dot product."""
        if k < 1:
            raise ValueError("k must be >= 1")
        ch = self._channels.get(channel)
        if ch is None:
            raise UnknownChannel(channel)
        q = np.asarray(query, dtype=np.float64)
        if q.shape != (ch.dim,):
            raise DimensionMismatch(f"query dim {q.shape} != channel dim {ch.dim}")
        scores = ch.matrix @ q
        order = np.lexsort((ch.rank, -scores))[:k]
        return [ScoredHit(ch.qids[i], float(scores[i]), channel) for i in order]

    def scores_for(self, channel: str, query: np.ndarray, qids: Iterable[str]) -> dict[str, float]:
        """Cosine of ``query`` against the given qids' stored vectors (missing qids skipped)."""
        out = {}
        for qid in qids:
            v = self.vector(channel, qid)
            if v is not None:
                out[qid] = float(v @ query)
        return out
