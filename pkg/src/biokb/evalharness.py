"""Run benchmark items against a model and report accuracy per stratum."""

from __future__ import annotations

import csv
import io
import json
import logging
import re
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Mapping, Sequence

from .benchgen import BenchmarkItem, LlmClient
from .domain import BloomLevel, LanguageVariant, ManifestEntry, PersonRecord, PopularityTier
from .embed import TextEmbedder
from .index import StoreIndex
from .retrieval import NoCandidates, RagConfig, RetrievalQuery, augment_prompt, retrieve

log = logging.getLogger(__name__)

LETTERS = "ABCD"
REPORT_COLUMNS = ("bloom", "variant", "tier", "rag", "image", "n", "accuracy")
STRATA = ("bloom", "variant", "tier", "rag", "image")
ALL = "ALL"
_ANSWER = re.compile(r"(?<![A-Za-z])([A-Da-d])(?![A-Za-z])")


class UnknownItem(KeyError):
    pass


@dataclass(frozen=True)
class EvalCondition:
    rag: bool = False
    image: bool = False
    variant: LanguageVariant = LanguageVariant.ENGLISH
    model: str = "model"

    def to_dict(self) -> dict[str, Any]:
        return {"rag": self.rag, "image": self.image, "variant": self.variant.value, "model": self.model}

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalCondition":
        return cls(bool(d["rag"]), bool(d["image"]), LanguageVariant(d["variant"]), d.get("model", "model"))


@dataclass(frozen=True)
class EvalOutcome:
    item_id: str
    condition: EvalCondition
    choice: int | None  # None = abstention
    correct: bool
    rag_fallback: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "condition": self.condition.to_dict(),
            "choice": self.choice,
            "correct": self.correct,
            "rag_fallback": self.rag_fallback,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "EvalOutcome":
        return cls(d["item_id"], EvalCondition.from_dict(d["condition"]), d["choice"], bool(d["correct"]),
                   bool(d.get("rag_fallback", False)))


@dataclass(frozen=True)
class ReportCell:
    """``None`` in a stratum field means the cell pools over that dimension."""

    bloom: BloomLevel | None
    variant: LanguageVariant | None
    tier: PopularityTier | None
    rag: bool | None
    image: bool | None
    n: int
    correct: int

    @property
    def accuracy(self) -> float:
        return self.correct / self.n


@lru_cache(maxsize=1)
def default_fewshot() -> tuple[dict[str, Any], ...]:
    raw = json.loads(resources.files("biokb").joinpath("data/fewshot.json").read_text("utf-8"))
    return tuple(raw["exemplars"])


def load_fewshot(path) -> tuple[dict[str, Any], ...]:
    with open(path, encoding="utf-8") as fh:
        return tuple(json.load(fh)["exemplars"])


def format_question(question: str, options: Sequence[str]) -> str:
    lines = [question.strip()]
    lines += [f"{LETTERS[i]}. {opt}" for i, opt in enumerate(options)]
    return "\n".join(lines)


def fewshot_block(exemplars: Sequence[Mapping[str, Any]]) -> str:
    parts = [f"{format_question(ex['question'], ex['options'])}\nAnswer: {ex['answer']}" for ex in exemplars]
    return "\n\n".join(parts)


ANSWER_INSTRUCTION = "Answer with a single letter (A, B, C or D)."


@dataclass(frozen=True)
class PromptBundle:
    prompt: str
    image_url: str | None
    rag_fallback: bool


def make_answer_prompt(
    item: BenchmarkItem,
    condition: EvalCondition,
    record: PersonRecord | None,
    entry: ManifestEntry | None = None,
    *,
    index: StoreIndex | None = None,
    embedder: TextEmbedder | None = None,
    rag_cfg: RagConfig = RagConfig(),
    fewshot: Sequence[Mapping[str, Any]] | None = None,
) -> PromptBundle:
    exemplars = default_fewshot() if fewshot is None else fewshot
    question = format_question(item.question, item.options)
    language = entry.original_language if entry and condition.variant is LanguageVariant.ORIGINAL else "en"

    body = question
    fallback = False
    if condition.rag:
        if index is None or embedder is None or record is None:
            raise ValueError("RAG condition needs an index, an embedder and the subject record")
        query = RetrievalQuery(
            name=record.display_name(language),
            context=item.question,
            nationality=entry.country if entry else None,
            language=language,
        )
        try:
            cands = retrieve(query, index, embedder, rag_cfg)
            hits = [index.record(c.qid) for c in cands[: rag_cfg.context_k]]
            body = augment_prompt(question, hits, budget=rag_cfg.bio_budget, language=language).rstrip("\n")
        except NoCandidates:
            fallback = True

    image_url = None
    if condition.image:
        if record is None or not record.image_urls:
            raise ValueError(f"image condition needs an image for {item.subject}")
        image_url = record.image_urls[0]

    parts = []
    if exemplars:
        parts.append(fewshot_block(exemplars))
    if image_url:
        parts.append(f"IMAGE: {image_url}")
    parts.append(body)
    parts.append(ANSWER_INSTRUCTION + "\nAnswer:")
    return PromptBundle("\n\n".join(parts), image_url, fallback)


def parse_choice(response: str) -> int | None:
    m = _ANSWER.search(response)
    return LETTERS.index(m.group(1).upper()) if m else None


def grade(response: str, item: BenchmarkItem, condition: EvalCondition = EvalCondition(),
          rag_fallback: bool = False) -> EvalOutcome:
    choice = parse_choice(response)
    return EvalOutcome(item.item_id, condition, choice, choice == item.answer_index, rag_fallback)


class FixedAnswerModel:
    """Always answers the same letter."""

    def __init__(self, letter: str = "A"):
        self.letter = letter

    def complete(self, prompt: str, **params: Any) -> str:
        return self.letter


@dataclass
class EvalRun:
    outcomes: list[EvalOutcome]
    skipped: list[str]


def evaluate(
    items: Sequence[BenchmarkItem],
    condition: EvalCondition,
    model: LlmClient,
    records: Mapping[str, PersonRecord],
    manifest: Mapping[str, ManifestEntry],
    *,
    index: StoreIndex | None = None,
    embedder: TextEmbedder | None = None,
    rag_cfg: RagConfig = RagConfig(),
    fewshot: Sequence[Mapping[str, Any]] | None = None,
    max_workers: int = 4,
) -> EvalRun:
    """Items of ``condition.variant`` only; image runs skip subjects without an image."""
    todo = []
    skipped = []
    for it in items:
        if it.variant is not condition.variant:
            continue
        rec = records.get(it.subject)
        if condition.image and (rec is None or not rec.image_urls):
            skipped.append(it.item_id)
            continue
        todo.append(it)

    def one(it: BenchmarkItem) -> EvalOutcome:
        bundle = make_answer_prompt(it, condition, records.get(it.subject), manifest.get(it.subject),
                                    index=index, embedder=embedder, rag_cfg=rag_cfg, fewshot=fewshot)
        params = {"image_url": bundle.image_url} if bundle.image_url else {}
        return grade(model.complete(bundle.prompt, **params), it, condition, bundle.rag_fallback)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        outcomes = list(pool.map(one, todo))
    return EvalRun(outcomes, skipped)


def _item_strata(item_id: str, items: Mapping[str, BenchmarkItem], manifest: Mapping[str, ManifestEntry]):
    it = items.get(item_id)
    if it is None or it.subject not in manifest:
        raise UnknownItem(item_id)
    return it.bloom, it.variant, manifest[it.subject].tier


def aggregate(
    outcomes: Iterable[EvalOutcome],
    items: Mapping[str, BenchmarkItem],
    manifest: Mapping[str, ManifestEntry],
    by: Sequence[str] = STRATA,
) -> list[ReportCell]:
    """Pool outcomes per stratum. Dimensions missing from ``by`` are pooled (None in the cell)."""
    unknown = set(by) - set(STRATA)
    if unknown:
        raise ValueError(f"unknown strata {sorted(unknown)}")
    n: dict[tuple, int] = defaultdict(int)
    hits: dict[tuple, int] = defaultdict(int)
    for o in outcomes:
        bloom, variant, tier = _item_strata(o.item_id, items, manifest)
        full = {"bloom": bloom, "variant": variant, "tier": tier, "rag": o.condition.rag,
                "image": o.condition.image}
        key = tuple(full[s] if s in by else None for s in STRATA)
        n[key] += 1
        hits[key] += int(o.correct)
    return sorted((ReportCell(*key, n[key], hits[key]) for key in n), key=_cell_order)


_TIER_RANK = {PopularityTier.HIGH: 0, PopularityTier.MEDIUM: 1, PopularityTier.LOW: 2}
_VARIANT_RANK = {LanguageVariant.ENGLISH: 0, LanguageVariant.ORIGINAL: 1}


def _cell_order(c: ReportCell):
    def rank(v, table=None):
        if v is None:
            return 99
        return table[v] if table else int(v)

    return (rank(c.bloom), rank(c.variant, _VARIANT_RANK), rank(c.tier, _TIER_RANK), rank(c.rag), rank(c.image))


def pooled_accuracy(outcomes: Iterable[EvalOutcome]) -> float:
    outcomes = list(outcomes)
    if not outcomes:
        raise ValueError("no outcomes")
    return sum(o.correct for o in outcomes) / len(outcomes)


def _fmt(v: Any) -> str:
    if v is None:
        return ALL
    if isinstance(v, BloomLevel):
        return v.label
    if isinstance(v, bool):
        return "yes" if v else "no"
    if hasattr(v, "value"):
        return v.value
    return str(v)


def cell_row(c: ReportCell) -> list[str]:
    return [_fmt(c.bloom), _fmt(c.variant), _fmt(c.tier), _fmt(c.rag), _fmt(c.image), str(c.n),
            f"{c.accuracy:.3f}"]


def render_report(cells: Sequence[ReportCell]) -> tuple[str, str]:
    """(CSV text, aligned plain-text table)."""
    if not cells:
        raise ValueError("no cells to render")
    rows = [cell_row(c) for c in cells]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(REPORT_COLUMNS)
    w.writerows(rows)
    widths = [max(len(h), *(len(r[i]) for r in rows)) for i, h in enumerate(REPORT_COLUMNS)]
    numeric = {5, 6}

    def line(vals):
        return "  ".join(v.rjust(widths[i]) if i in numeric else v.ljust(widths[i])
                         for i, v in enumerate(vals)).rstrip()

    table = [line(REPORT_COLUMNS), "  ".join("-" * wd for wd in widths)] + [line(r) for r in rows]
    return buf.getvalue(), "\n".join(table) + "\n"
