"""Benchmark subject selection.

Per eligible country: a cluster count from the country's population share,
a three-way popularity split, k-means per tier over (biography embedding,
quantized birth year) features, and one representative per cluster.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
import re
from dataclasses import dataclass, field
from decimal import Decimal
from functools import lru_cache
from importlib import resources
from typing import Iterable, Mapping, Sequence

import numpy as np
import pycountry
from babel import Locale, UnknownLocaleError

from .domain import ManifestEntry, PersonRecord, PopularityTier
from .embed import TextEmbedder, embed_texts
from .ingest import MIN_PER_COUNTRY, coverage_report, eligible_countries

log = logging.getLogger(__name__)

TIER_ORDER = (PopularityTier.HIGH, PopularityTier.MEDIUM, PopularityTier.LOW)


class OutOfRange(ValueError):
    pass


class KTooLarge(ValueError):
    pass


class MissingBirthYear(ValueError):
    pass


def cluster_count(p: float) -> int:
    """ceil(5p + 0.01), evaluated in decimal so that e.g. p=0.198 gives exactly 1."""
    if not 0 <= p <= 1:
        raise OutOfRange(f"population proportion must be in [0, 1], got {p}")
    return math.ceil(Decimal(repr(float(p))) * 5 + Decimal("0.01"))


def quantize_year(year: int) -> int:
    """Nearest multiple of 50; midpoints round up."""
    return ((year + 25) // 50) * 50


def high_tier_size(n: int, k: int) -> int:
    return min(5 * k, n)


def tier_split(records: Sequence[PersonRecord], k: int) -> dict[str, PopularityTier]:
    """High = top 5k, Medium = top ceil(0.75 n) minus High, Low = the rest.

    Records are ranked by (popularity desc, qid asc) here, whatever their input order.
    """
    ranked = sorted(records, key=lambda r: (-r.popularity, r.qid))
    n = len(ranked)
    high = high_tier_size(n, k)
    medium_end = max(high, (3 * n + 3) // 4)
    out = {}
    for i, r in enumerate(ranked):
        if i < high:
            out[r.qid] = PopularityTier.HIGH
        elif i < medium_end:
            out[r.qid] = PopularityTier.MEDIUM
        else:
            out[r.qid] = PopularityTier.LOW
    return out


@lru_cache(maxsize=1)
def _mask_regex() -> re.Pattern:
    data = resources.files("biokb")
    masking = json.loads(data.joinpath("data/masking.json").read_text("utf-8"))
    nat = json.loads(data.joinpath("data/nationalities.json").read_text("utf-8"))
    terms = set(nat["historical"]) | set(nat["demonyms"]) | set(masking["extra_terms"])
    for c in pycountry.countries:
        terms.add(c.name)
        if hasattr(c, "common_name"):
            terms.add(c.common_name)
    words = sorted(terms, key=lambda t: (-len(t), t))
    lexicon = r"\b(?:" + "|".join(re.escape(w) for w in words) + r")\b"
    return re.compile("|".join(masking["patterns"] + [lexicon]), re.IGNORECASE)


def mask_biography(text: str) -> str:
    """Remove explicit years, ages, countries and demonyms."""
    masked = _mask_regex().sub(" ", text)
    return re.sub(r"\s+", " ", masked).strip()


def date_coordinate(year: int, weight: float) -> float:
    return weight * (quantize_year(year) - 1000) / 1000.0


def build_features(records: Sequence[PersonRecord], embedder: TextEmbedder, date_weight: float = 1.0) -> np.ndarray:
    """Rows = [unit biography embedding of the masked text, weighted date coordinate]."""
    for r in records:
        if r.birth_date is None or r.birth_date.year is None:
            raise MissingBirthYear(r.qid)
    if not records:
        return np.zeros((0, embedder.dim() + 1))
    vecs = embed_texts(embedder, [mask_biography(r.biography) for r in records])
    bio = np.vstack(vecs).astype(np.float64)
    bio /= np.linalg.norm(bio, axis=1, keepdims=True)
    dates = np.array([[date_coordinate(r.birth_year, date_weight)] for r in records])
    return np.hstack([bio, dates])


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0

    @property
    def inertia(self) -> float:
        return self.inertia_history[-1] if self.inertia_history else 0.0


def _sq_dists(x: np.ndarray, c: np.ndarray) -> np.ndarray:
    diff = x[:, None, :] - c[None, :, :]
    return (diff * diff).sum(2)


def kmeans_plusplus(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    chosen = [int(rng.integers(n))]
    closest = _sq_dists(x, x[chosen])[:, 0]
    for _ in range(1, k):
        total = closest.sum()
        if total > 0:
            idx = int(rng.choice(n, p=closest / total))
        else:
            # every remaining point coincides with a centre
            rest = np.setdiff1d(np.arange(n), chosen)
            idx = int(rng.choice(rest))
        chosen.append(idx)
        closest = np.minimum(closest, _sq_dists(x, x[idx : idx + 1])[:, 0])
    return x[chosen].copy()


def _inertia(x: np.ndarray, labels: np.ndarray, centroids: np.ndarray) -> float:
    diff = x - centroids[labels]
    return float((diff * diff).sum())


def kmeans(x: np.ndarray, k: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-8) -> KMeansResult:
    """Lloyd iterations from a k-means++ start.

    An emptied cluster is re-seeded with the point farthest from its current
    centroid, which keeps the recorded inertia non-increasing.
    """
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    if k < 1:
        raise ValueError("k must be >= 1")
    if k > n:
        raise KTooLarge(f"k={k} exceeds the number of points ({n})")
    rng = np.random.default_rng(seed)
    centroids = kmeans_plusplus(x, k, rng)
    labels = np.zeros(n, dtype=np.int64)
    history: list[float] = []
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_dists(x, centroids)
        labels = np.argmin(d, axis=1)
        counts = np.bincount(labels, minlength=k)
        for j in np.flatnonzero(counts == 0):
            own = d[np.arange(n), labels]
            donors = counts[labels] > 1
            if not donors.any() or own[donors].max() <= 0:
                continue
            far = int(np.flatnonzero(donors)[np.argmax(own[donors])])
            counts[labels[far]] -= 1
            labels[far] = j
            counts[j] = 1
        new = centroids.copy()
        for j in range(k):
            members = labels == j
            if members.any():
                new[j] = x[members].mean(axis=0)
        shift = float(np.sqrt(((new - centroids) ** 2).sum(1)).max())
        centroids = new
        history.append(_inertia(x, labels, centroids))
        if shift < tol:
            break
    return KMeansResult(labels, centroids, history, it)


def select_representatives(
    tier: PopularityTier,
    records: Sequence[PersonRecord],
    features: np.ndarray,
    result: KMeansResult,
) -> dict[int, str]:
    """cluster id -> qid: closest to centroid for High/Medium, most viewed for Low."""
    out = {}
    for j in range(result.centroids.shape[0]):
        members = np.flatnonzero(result.labels == j)
        if members.size == 0:
            continue
        if tier is PopularityTier.LOW:
            best = min(members, key=lambda i: (-records[i].popularity, records[i].qid))
        else:
            dist = np.sqrt(((features[members] - result.centroids[j]) ** 2).sum(1))
            best = min(zip(dist.tolist(), members.tolist()), key=lambda t: (t[0], records[t[1]].qid))[1]
        out[j] = records[int(best)].qid
    return out


def country_seed(seed: int, country: str) -> int:
    h = hashlib.blake2b(country.encode("utf-8"), digest_size=8).digest()
    return (seed ^ int.from_bytes(h, "little")) & (2**63 - 1)


def original_language(country: str) -> str:
    """Most likely language of a country via CLDR likely subtags; English when unknown."""
    try:
        return Locale.parse(f"und_{country}").language or "en"
    except (UnknownLocaleError, ValueError):
        return "en"


def read_population(path) -> dict[str, float]:
    with open(path, encoding="utf-8", newline="") as fh:
        return {row["country"].strip().upper(): float(row["proportion"]) for row in csv.DictReader(fh)}


@dataclass(frozen=True)
class SamplerConfig:
    date_weight: float = 1.0
    max_iter: int = 300
    tol: float = 1e-8
    min_per_country: int = MIN_PER_COUNTRY


def sample_country(
    country: str,
    people: Sequence[PersonRecord],
    proportion: float,
    embedder: TextEmbedder,
    cfg: SamplerConfig,
    seed: int,
) -> list[ManifestEntry]:
    k = cluster_count(proportion)
    tiers = tier_split(people, k)
    lang = original_language(country)
    cseed = country_seed(seed, country)
    out = []
    for t_i, tier in enumerate(TIER_ORDER):
        members = sorted((r for r in people if tiers[r.qid] is tier), key=lambda r: r.qid)
        if not members:
            continue
        feats = build_features(members, embedder, cfg.date_weight)
        kk = min(k, len(members))
        result = kmeans(feats, kk, seed=cseed + t_i, max_iter=cfg.max_iter, tol=cfg.tol)
        reps = select_representatives(tier, members, feats, result)
        for cluster, qid in sorted(reps.items()):
            out.append(ManifestEntry(qid, country, tier, cluster, lang))
    return out


def sample_benchmark(
    records: Iterable[PersonRecord],
    population: Mapping[str, float],
    embedder: TextEmbedder,
    cfg: SamplerConfig = SamplerConfig(),
    seed: int = 0,
) -> list[ManifestEntry]:
    """Manifest ordered by (country, tier, cluster); deterministic for a given seed."""
    records = list(records)
    eligible = eligible_countries(coverage_report(records, cfg.min_per_country))
    by_country: dict[str, list[PersonRecord]] = {}
    for r in records:
        if r.nationality in eligible:
            by_country.setdefault(r.nationality, []).append(r)
    manifest = []
    for country in sorted(by_country):
        if country not in population:
            log.warning("no population share for %s; using 0", country)
        manifest.extend(
            sample_country(country, by_country[country], population.get(country, 0.0), embedder, cfg, seed)
        )
    return manifest
