"""Retrieval-augmented answering: candidate retrieval and prompt augmentation.

Text queries go through a cascade (exact alias -> semantic k-NN ->
nationality filter -> birth-year window -> context cosine); face queries
through face k-NN followed by the same two filters.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .domain import PersonRecord, normalize_nationality
from .embed import TextEmbedder
from .index import BIOGRAPHY, FACE, StoreIndex

DEFAULT_BIO_BUDGET = 1500
ELLIPSIS = "…"
DEFAULT_TEMPLATE = "CONTEXT:\n{context}\n\nQUESTION:\n{question}\n"


class Stage(str, enum.Enum):
    EXACT_MATCH = "ExactMatch"
    SEMANTIC = "Semantic"
    NATIONALITY_FILTER = "NationalityFilter"
    BIRTHDATE_FILTER = "BirthdateFilter"
    CONTEXT_COSINE = "ContextCosine"
    FACE_KNN = "FaceKnn"
    POPULARITY_RANK = "PopularityRank"


class EmptyQuery(ValueError):
    pass


class NoCandidates(LookupError):
    """Every candidate was filtered out; callers fall back to answering without context."""


class NoFaceChannel(LookupError):
    pass


@dataclass(frozen=True)
class RetrievalQuery:
    name: str | None = None
    context: str | None = None
    nationality: str | None = None
    birth_year: int | None = None
    face: np.ndarray | None = field(default=None, compare=False)
    language: str | None = None

    def __post_init__(self):
        if not (self.name or self.context or self.face is not None):
            raise EmptyQuery("query needs a name, a context or a face")


@dataclass(frozen=True)
class Candidate:
    qid: str
    score: float
    provenance: tuple[Stage, ...]

    def to_dict(self) -> dict:
        return {"qid": self.qid, "score": self.score, "provenance": [s.value for s in self.provenance]}


@dataclass(frozen=True)
class RagConfig:
    semantic_k: int = 50
    face_k: int = 100
    face_final: int = 5
    birth_window_years: int = 20
    popularity_weight: float = 0.3
    face_popularity: bool = False
    bio_budget: int = DEFAULT_BIO_BUDGET
    context_k: int = 3  # candidates rendered into the prompt

    def __post_init__(self):
        for name in ("semantic_k", "face_k", "face_final", "birth_window_years", "bio_budget", "context_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if not 0.0 <= self.popularity_weight <= 1.0:
            raise ValueError("popularity_weight must lie in [0, 1]")


def _sorted(cands: list[Candidate]) -> list[Candidate]:
    return sorted(cands, key=lambda c: (-c.score, c.qid))


def _with_stage(cands: list[Candidate], stage: Stage) -> list[Candidate]:
    return [replace(c, provenance=c.provenance + (stage,)) for c in cands]


def _apply_filters(cands: list[Candidate], query: RetrievalQuery, index: StoreIndex,
                   cfg: RagConfig) -> list[Candidate]:
    # absent query metadata means the filter is skipped and not recorded
    if query.nationality:
        want = normalize_nationality(query.nationality) or query.nationality.upper()
        cands = [c for c in cands if index.record(c.qid).nationality == want]
        cands = _with_stage(cands, Stage.NATIONALITY_FILTER)
    if query.birth_year is not None:
        w = cfg.birth_window_years
        cands = [c for c in cands if abs(index.record(c.qid).birth_year - query.birth_year) <= w]
        cands = _with_stage(cands, Stage.BIRTHDATE_FILTER)
    return cands


def _join(*parts: str | None) -> str:
    return " ".join(p for p in parts if p)


def disambiguate_text(query: RetrievalQuery, index: StoreIndex, embedder: TextEmbedder,
                      cfg: RagConfig = RagConfig()) -> list[Candidate]:
    if not (query.name or query.context):
        raise EmptyQuery("text disambiguation needs a name or a context")
    if query.name:
        exact = index.exact_lookup(query.name)
        if len(exact) == 1:
            (qid,) = exact
            return [Candidate(qid, 1.0, (Stage.EXACT_MATCH,))]

    hits = index.knn(BIOGRAPHY, embedder.embed(_join(query.name, query.context)), cfg.semantic_k)
    cands = [Candidate(h.qid, h.score, (Stage.SEMANTIC,)) for h in hits]
    cands = _apply_filters(cands, query, index, cfg)
    if not cands:
        raise NoCandidates(f"no candidate survived the filters for {query.name or query.context!r}")
    if query.context:
        scores = index.scores_for(BIOGRAPHY, embedder.embed(query.context), [c.qid for c in cands])
        cands = [Candidate(c.qid, scores[c.qid], c.provenance + (Stage.CONTEXT_COSINE,)) for c in cands]
    return _sorted(cands)


def retrieve_by_face(query: RetrievalQuery, index: StoreIndex, cfg: RagConfig = RagConfig()) -> list[Candidate]:
    if query.face is None:
        raise EmptyQuery("face retrieval needs a face embedding")
    if not index.has_channel(FACE):
        raise NoFaceChannel("index has no face embeddings")
    hits = index.knn(FACE, query.face, cfg.face_k)
    cands = [Candidate(h.qid, h.score, (Stage.FACE_KNN,)) for h in hits]
    cands = _apply_filters(cands, query, index, cfg)
    if not cands:
        raise NoCandidates("no face candidate survived the filters")
    return _sorted(cands)[: cfg.face_final]


def popularity_rank(cands: Sequence[Candidate], index: StoreIndex, weight: float) -> list[Candidate]:
    """Blend each score with log-scaled page views relative to the candidate set's maximum."""
    if not 0.0 <= weight <= 1.0:
        raise ValueError("weight must lie in [0, 1]")
    if not cands:
        return []
    pops = {c.qid: index.record(c.qid).popularity for c in cands}
    denom = math.log10(1 + max(pops.values()))
    out = []
    for c in cands:
        pop_term = math.log10(1 + pops[c.qid]) / denom if denom > 0 else 0.0
        score = (1.0 - weight) * c.score + weight * pop_term
        out.append(Candidate(c.qid, score, c.provenance + (Stage.POPULARITY_RANK,)))
    return _sorted(out)


def retrieve(query: RetrievalQuery, index: StoreIndex, embedder: TextEmbedder | None,
             cfg: RagConfig = RagConfig()) -> list[Candidate]:
    """Face path when a face is given, otherwise the text cascade; then popularity re-ranking."""
    if query.face is not None:
        cands = retrieve_by_face(query, index, cfg)
        if cfg.face_popularity and cfg.popularity_weight > 0 and len(cands) > 1:
            cands = popularity_rank(cands, index, cfg.popularity_weight)
        return cands
    if embedder is None:
        raise ValueError("text retrieval needs an embedder")
    cands = disambiguate_text(query, index, embedder, cfg)
    if cfg.popularity_weight > 0 and len(cands) > 1:
        cands = popularity_rank(cands, index, cfg.popularity_weight)
    return cands


def truncate_text(text: str, budget: int) -> str:
    """Cut to at most ``budget`` characters, ending in an ellipsis when cut."""
    if len(text) <= budget:
        return text
    return text[: max(budget - 1, 0)] + ELLIPSIS


def render_candidate(rec: PersonRecord, budget: int, language: str | None = None) -> str:
    return "\n".join([
        f"Name: {rec.display_name(language)}",
        f"Birth date: {rec.birth_date}",
        f"Birthplace: {rec.birthplace}",
        f"Nationality: {rec.nationality}",
        f"Biography: {truncate_text(rec.biography, budget)}",
    ])


def augment_prompt(question: str, records: Sequence[PersonRecord], template: str = DEFAULT_TEMPLATE,
                   budget: int = DEFAULT_BIO_BUDGET, language: str | None = None) -> str:
    """Fill ``template`` ({context}, {question}) with one block per candidate record."""
    if not records:
        raise ValueError("augment_prompt needs at least one candidate record")
    blocks = [f"[{i}]\n{render_candidate(r, budget, language)}" for i, r in enumerate(records, 1)]
    return template.format(context="\n\n".join(blocks), question=question.strip())
