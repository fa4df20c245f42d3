"""LLM-driven question generation for the sampled subjects."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol, Sequence

import httpx

from .domain import BloomLevel, LanguageVariant, ManifestEntry, PersonRecord

log = logging.getLogger(__name__)

N_OPTIONS = 4
DEFAULT_IMAGE_LEVELS = (BloomLevel.REMEMBERING, BloomLevel.UNDERSTANDING)
ITEM_FIELDS = ("bloom", "variant", "question", "options", "answer_index")


class LlmClient(Protocol):
    def complete(self, prompt: str, **params: Any) -> str: ...


class MissingOriginalLanguage(ValueError):
    pass


class LlmError(RuntimeError):
    pass


@dataclass(frozen=True)
class BenchmarkItem:
    subject: str
    bloom: BloomLevel
    variant: LanguageVariant
    question: str
    options: tuple[str, ...]
    answer_index: int
    uses_image: bool = False

    def __post_init__(self):
        object.__setattr__(self, "options", tuple(self.options))
        if not self.question.strip():
            raise ValueError("question is empty")
        if len(self.options) != N_OPTIONS:
            raise ValueError(f"expected {N_OPTIONS} options, got {len(self.options)}")
        if len(set(self.options)) != N_OPTIONS:
            raise ValueError("options are not distinct")
        if not 0 <= self.answer_index < N_OPTIONS:
            raise ValueError(f"answer_index {self.answer_index} out of range")

    @property
    def item_id(self) -> str:
        return f"{self.subject}:{self.bloom.value}:{self.variant.value}"

    def to_dict(self) -> dict[str, Any]:
        return {
            "item_id": self.item_id,
            "subject": self.subject,
            "bloom": self.bloom.label,
            "variant": self.variant.value,
            "question": self.question,
            "options": list(self.options),
            "answer_index": self.answer_index,
            "uses_image": self.uses_image,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "BenchmarkItem":
        return cls(
            d["subject"],
            BloomLevel.from_label(d["bloom"]),
            LanguageVariant(d["variant"]),
            d["question"],
            tuple(d["options"]),
            int(d["answer_index"]),
            bool(d.get("uses_image", False)),
        )


def item_json(item: BenchmarkItem) -> str:
    return json.dumps(item.to_dict(), ensure_ascii=False, separators=(",", ":"))


def read_bench(path) -> list[BenchmarkItem]:
    with open(path, encoding="utf-8") as fh:
        return [BenchmarkItem.from_dict(json.loads(line)) for line in fh if line.strip()]


_LEVEL_HINTS = {
    BloomLevel.REMEMBERING: "recall of a concrete fact",
    BloomLevel.UNDERSTANDING: "explaining the meaning of their work or life events",
    BloomLevel.APPLYING: "using their ideas in a new situation",
    BloomLevel.ANALYZING: "comparing or relating them to contemporaries",
    BloomLevel.EVALUATING: "judging the impact or merit of their choices",
    BloomLevel.CREATING: "proposing something new that builds on their legacy",
}


def build_generation_prompt(
    record: PersonRecord,
    names: Mapping[str, str] | None,
    summary: str,
    original_language: str | None,
) -> str:
    if not summary or not summary.strip():
        raise ValueError("summary is empty")
    if not original_language:
        raise MissingOriginalLanguage(record.qid)
    names = names if names is not None else record.names
    name_lines = "\n".join(f"- {lang}: {name}" for lang, name in sorted(names.items()))
    level_lines = "\n".join(f"{lvl.value}. {lvl.label}: {_LEVEL_HINTS[lvl]}" for lvl in BloomLevel)
    return (
        f"SUBJECT_QID: {record.qid}\n"
        f"ORIGINAL_LANGUAGE: {original_language}\n"
        f"NAMES:\n{name_lines}\n"
        f"BIRTH: {record.birth_date}, {record.birthplace} ({record.nationality})\n"
        f"SUMMARY:\n{summary.strip()}\n\n"
        "TASK 1: Write a concise biography of this person in at most five sentences.\n"
        "TASK 2: Write one multiple-choice question for each cognitive level below, "
        f"once in English and once in language '{original_language}'.\n"
        f"{level_lines}\n\n"
        "OUTPUT: after the biography, emit a single JSON array with 12 objects. Each object has the keys "
        '"bloom" (the level name exactly as listed), "variant" ("English" or "Original"), '
        f'"question" (string), "options" (array of {N_OPTIONS} distinct strings), '
        f'"answer_index" (integer 0-{N_OPTIONS - 1}) and "uses_image" (boolean). '
        "Do not write anything after the array.\n"
    )


@dataclass(frozen=True)
class ParseError:
    kind: str  # NoJsonFound | SchemaViolation | MissingLevelVariant
    detail: str
    index: int | None = None
    field: str | None = None

    def __str__(self) -> str:
        where = f" [{self.index}].{self.field}" if self.index is not None else ""
        return f"{self.kind}{where}: {self.detail}"


@dataclass
class ParseResult:
    items: list[BenchmarkItem] = field(default_factory=list)
    errors: list[ParseError] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors


def first_json_array(text: str) -> str | None:
    """Return the first balanced top-level ``[...]`` substring, honouring JSON strings."""
    start = text.find("[")
    while start != -1:
        depth = 0
        in_str = False
        esc = False
        for i in range(start, len(text)):
            ch = text[i]
            if in_str:
                if esc:
                    esc = False
                elif ch == "\\":
                    esc = True
                elif ch == '"':
                    in_str = False
            elif ch == '"':
                in_str = True
            elif ch in "[{":
                depth += 1
            elif ch in "]}":
                depth -= 1
                if depth == 0:
                    return text[start : i + 1]
        start = text.find("[", start + 1)
    return None


def _check_item(i: int, raw: Any, subject: str) -> tuple[BenchmarkItem | None, list[ParseError]]:
    def bad(fld: str, why: str) -> tuple[None, list[ParseError]]:
        return None, [ParseError("SchemaViolation", why, i, fld)]

    if not isinstance(raw, dict):
        return bad("*", "item is not an object")
    for fld in ITEM_FIELDS:
        if fld not in raw:
            return bad(fld, "missing")
    try:
        bloom = BloomLevel.from_label(str(raw["bloom"]))
    except KeyError:
        return bad("bloom", f"unknown level {raw['bloom']!r}")
    try:
        variant = LanguageVariant(raw["variant"])
    except ValueError:
        return bad("variant", f"unknown variant {raw['variant']!r}")
    q = raw["question"]
    if not isinstance(q, str) or not q.strip():
        return bad("question", "empty or not a string")
    opts = raw["options"]
    if not isinstance(opts, list) or len(opts) != N_OPTIONS:
        return bad("options", f"expected {N_OPTIONS} options")
    if not all(isinstance(o, str) and o.strip() for o in opts) or len(set(opts)) != N_OPTIONS:
        return bad("options", "options must be distinct non-empty strings")
    ans = raw["answer_index"]
    if isinstance(ans, bool) or not isinstance(ans, int) or not 0 <= ans < N_OPTIONS:
        return bad("answer_index", f"invalid answer_index {ans!r}")
    uses_image = raw.get("uses_image", False)
    if not isinstance(uses_image, bool):
        return bad("uses_image", "not a boolean")
    return BenchmarkItem(subject, bloom, variant, q.strip(), tuple(opts), ans, uses_image), []


def parse_items(text: str, subject: str) -> ParseResult:
    """Strict parse of a generation response; nothing is repaired."""
    result = ParseResult()
    blob = first_json_array(text)
    if blob is None:
        result.errors.append(ParseError("NoJsonFound", "no JSON array in response"))
        return result
    try:
        arr = json.loads(blob)
    except json.JSONDecodeError as exc:
        result.errors.append(ParseError("NoJsonFound", f"array is not valid JSON: {exc.msg}"))
        return result
    seen = set()
    for i, raw in enumerate(arr):
        item, errs = _check_item(i, raw, subject)
        if errs:
            result.errors.extend(errs)
            continue
        key = (item.bloom, item.variant)
        if key in seen:
            result.errors.append(ParseError("SchemaViolation", "duplicate level/variant", i, "bloom"))
            continue
        seen.add(key)
        result.items.append(item)
    for lvl in BloomLevel:
        for var in LanguageVariant:
            if (lvl, var) not in seen:
                result.errors.append(ParseError("MissingLevelVariant", f"{lvl.label}/{var.value}"))
    result.items.sort(key=lambda it: (it.bloom.value, it.variant.value))
    return result


def serialize_items(items: Iterable[BenchmarkItem]) -> str:
    """Canonical JSON array: items ordered by (level, variant), compact separators."""
    ordered = sorted(items, key=lambda it: (it.subject, it.bloom.value, it.variant.value))
    return json.dumps(
        [{k: v for k, v in it.to_dict().items() if k not in ("item_id", "subject")} for it in ordered],
        ensure_ascii=False,
        separators=(",", ":"),
    )


class StubLlm:
    """Deterministic generator that answers generation prompts with a valid 12-item array.

    The correct option index is derived from a hash of (qid, level, variant, seed).
    """

    def __init__(self, seed: int = 0):
        self.seed = seed

    def _pick(self, *parts: str) -> int:
        h = hashlib.sha256("|".join((str(self.seed),) + parts).encode("utf-8")).digest()
        return h[0] % N_OPTIONS

    def complete(self, prompt: str, **params: Any) -> str:
        qid = re.search(r"^SUBJECT_QID: (.+)$", prompt, re.M)
        lang = re.search(r"^ORIGINAL_LANGUAGE: (.+)$", prompt, re.M)
        birth = re.search(r"^BIRTH: (-?\d+)", prompt, re.M)
        if not qid:
            return "I can only help with generation prompts."
        qid_s = qid.group(1).strip()
        year = int(birth.group(1)) if birth else 1900
        items = []
        for lvl in BloomLevel:
            for var in LanguageVariant:
                ans = self._pick(qid_s, lvl.label, var.value)
                opts = [str(year + 10 * (i - ans)) for i in range(N_OPTIONS)]
                tag = "" if var is LanguageVariant.ENGLISH else f"[{lang.group(1).strip() if lang else 'xx'}] "
                items.append({
                    "bloom": lvl.label,
                    "variant": var.value,
                    "question": f"{tag}{lvl.label} question about {qid_s}: which year fits best?",
                    "options": opts,
                    "answer_index": ans,
                    "uses_image": False,
                })
        bio = f"Concise biography of {qid_s}."
        return bio + "\n" + json.dumps(items, ensure_ascii=False)


class RemoteLlm:
    """``POST {"prompt": ..., "max_tokens": ...} -> {"text": ...}``."""

    def __init__(self, endpoint: str | None = None, *, max_tokens: int = 2048, timeout: float = 120.0,
                 max_in_flight: int = 4, client: httpx.Client | None = None):
        endpoint = endpoint or os.environ.get("LLM_ENDPOINT")
        if not endpoint:
            raise ValueError("no LLM endpoint (pass one or set LLM_ENDPOINT)")
        self.endpoint = endpoint
        self.max_tokens = max_tokens
        self._client = client or httpx.Client(timeout=timeout)
        self._slots = threading.BoundedSemaphore(max_in_flight)

    def complete(self, prompt: str, **params: Any) -> str:
        body = {"prompt": prompt, "max_tokens": params.pop("max_tokens", self.max_tokens), **params}
        with self._slots:
            try:
                resp = self._client.post(self.endpoint, json=body)
                resp.raise_for_status()
            except httpx.HTTPError as exc:
                raise LlmError(f"LLM request failed: {exc}") from exc
        try:
            text = resp.json()["text"]
        except (ValueError, KeyError, TypeError) as exc:
            raise LlmError(f"malformed LLM response: {exc}") from exc
        if not isinstance(text, str):
            raise LlmError("LLM response text is not a string")
        return text


@dataclass
class GenerationReport:
    items: list[BenchmarkItem]
    failures: dict[str, list[str]]


def _apply_image_policy(items: Iterable[BenchmarkItem], has_image: bool,
                        image_levels: Sequence[BloomLevel]) -> list[BenchmarkItem]:
    out = []
    for it in items:
        flag = has_image and it.bloom in image_levels
        if flag != it.uses_image:
            it = BenchmarkItem(it.subject, it.bloom, it.variant, it.question, it.options, it.answer_index, flag)
        out.append(it)
    return out


def generate_benchmark(
    manifest: Sequence[ManifestEntry],
    records: Mapping[str, PersonRecord],
    llm: LlmClient,
    *,
    image_levels: Sequence[BloomLevel] = DEFAULT_IMAGE_LEVELS,
    max_workers: int = 4,
) -> GenerationReport:
    """One LLM call per subject; output ordered by (country, qid, level, variant)."""

    def one(entry: ManifestEntry) -> tuple[ManifestEntry, ParseResult]:
        rec = records[entry.qid]
        prompt = build_generation_prompt(rec, rec.names, rec.biography, entry.original_language)
        return entry, parse_items(llm.complete(prompt), rec.qid)

    with ThreadPoolExecutor(max_workers=max(1, max_workers)) as pool:
        results = list(pool.map(one, manifest))

    items: list[BenchmarkItem] = []
    failures: dict[str, list[str]] = {}
    for entry, parsed in sorted(results, key=lambda t: (t[0].country, t[0].qid)):
        if parsed.errors:
            failures[entry.qid] = [str(e) for e in parsed.errors]
            log.warning("generation for %s rejected: %s", entry.qid, parsed.errors[0])
            continue
        items.extend(_apply_image_policy(parsed.items, bool(records[entry.qid].image_urls), image_levels))
    return GenerationReport(items, failures)
