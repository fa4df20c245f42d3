"""Quick oracle checks runnable from an installed package (``biokb selftest``)."""

from __future__ import annotations

import sys
import time
from collections import Counter
from typing import Callable, TextIO

import numpy as np

from . import synth
from .embed import StubEmbedder
from .index import BIOGRAPHY, StoreIndex
from .ingest import modal_value
from .retrieval import RetrievalQuery, disambiguate_text
from .sampler import cluster_count, kmeans, quantize_year


def _linear_scan(rows: dict[str, np.ndarray], q: np.ndarray, k: int) -> list[tuple[str, float]]:
    scored = [(qid, float(np.dot(v, q))) for qid, v in rows.items()]
    scored.sort(key=lambda t: (-t[1], t[0]))
    return scored[:k]


def check_cluster_count() -> str | None:
    for p, want in [(0, 1), (0.01, 1), (0.2, 2), (0.5, 3), (1, 6)]:
        if cluster_count(p) != want:
            return f"cluster_count({p}) = {cluster_count(p)}, want {want}"
    return None


def check_quantize() -> str | None:
    rng = np.random.default_rng(7)
    for y in rng.integers(-3000, 3000, size=2000).tolist():
        q = quantize_year(y)
        if q % 50 or abs(q - y) > 25:
            return f"quantize_year({y}) = {q}"
    return None


def check_knn() -> str | None:
    rng = np.random.default_rng(3)
    rows = {f"Q{i}": v / np.linalg.norm(v) for i, v in enumerate(rng.normal(size=(1000, 32)))}
    people = synth.make_world(1000, seed=3)
    recs = [synth.make_person(rng, qid, p.names["en"], p.nationality) for qid, p in zip(rows, people)]
    idx = StoreIndex.build(recs, {BIOGRAPHY: rows})
    for _ in range(20):
        q = rng.normal(size=32)
        q /= np.linalg.norm(q)
        got = [(h.qid, h.score) for h in idx.knn(BIOGRAPHY, q, 10)]
        want = _linear_scan(rows, q, 10)
        if [g[0] for g in got] != [w[0] for w in want]:
            return "k-NN order differs from linear scan"
        if max(abs(g[1] - w[1]) for g, w in zip(got, want)) > 1e-9:
            return "k-NN scores differ from linear scan"
    return None


def check_cascade() -> str | None:
    people, pairs = synth.homonym_fixture()
    emb = StubEmbedder(64)
    idx = StoreIndex.build(people, {BIOGRAPHY: {p.qid: emb.embed(p.biography) for p in people}})
    for pair in pairs:
        for qid in pair:
            r = idx.record(qid)
            q = RetrievalQuery(r.names["en"], f"What is {r.names['en']} known for?", r.nationality, r.birth_year + 20)
            top = disambiguate_text(q, idx, emb)[0].qid
            if top != qid:
                return f"cascade picked {top} for {qid}"
    return None


def check_kmeans() -> str | None:
    rng = np.random.default_rng(11)
    for trial in range(20):
        x = rng.normal(size=(60, 4))
        hist = kmeans(x, 4, seed=trial).inertia_history
        for a, b in zip(hist, hist[1:]):
            if b > a * (1 + 1e-12):
                return f"inertia increased in trial {trial}: {a} -> {b}"
    return None


def check_modal() -> str | None:
    rng = np.random.default_rng(5)
    for _ in range(200):
        vals = [str(v) for v in rng.choice(["DE", "FR", "IT", "PL"], size=int(rng.integers(1, 8)))]
        counts = Counter(vals)
        chosen = modal_value(vals)
        top = max(counts.values())
        if counts[chosen] != top or chosen != min(v for v, c in counts.items() if c == top):
            return f"modal_value({vals}) = {chosen}"
    return None


CHECKS: list[tuple[str, Callable[[], str | None]]] = [
    ("cluster count table", check_cluster_count),
    ("year quantization", check_quantize),
    ("k-NN vs linear scan", check_knn),
    ("disambiguation cascade", check_cascade),
    ("k-means inertia monotone", check_kmeans),
    ("modal consolidation", check_modal),
]


def run_selftest(out: TextIO = sys.stdout) -> bool:
    ok = True
    for name, fn in CHECKS:
        t0 = time.perf_counter()
        try:
            problem = fn()
        except Exception as exc:  # report and keep going
            problem = f"{type(exc).__name__}: {exc}"
        dt = time.perf_counter() - t0
        status = "PASS" if problem is None else "FAIL"
        ok &= problem is None
        print(f"{status}  {name:<28} {dt:6.2f}s" + (f"  {problem}" if problem else ""), file=out)
    return ok
