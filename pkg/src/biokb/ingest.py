"""Relational tables -> deduplicated person JSONL.

Stages: person-column detection (header patterns or NER dominance), row-wise
extraction, merge by canonical name, Q-ID alignment, modal consolidation,
name translations, page-view enrichment, validation and coverage reporting.
"""

from __future__ import annotations

import csv
import io
import logging
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Mapping, Protocol, Sequence

from .domain import (
    BirthDate,
    MalformedDate,
    NoQid,
    PersonRecord,
    RecordRejected,
    ZeroPopularity,
    canonical_name,
    iter_jsonl,
    normalize_nationality,
    parse_birth_date,
    validate_record,
)

log = logging.getLogger(__name__)

DEFAULT_PATTERNS = (
    "surname",
    "forename",
    "first_name",
    "last_name",
    "full_name",
    "person",
    "author",
    "player",
    "actor",
    "director",
)
DEFAULT_THRESHOLD = 0.5
NER_SAMPLE_SIZE = 100
MIN_PER_COUNTRY = 10

# header substrings -> record attribute, checked in order
ATTRIBUTE_PATTERNS: tuple[tuple[str, tuple[str, ...]], ...] = (
    ("birthplace", ("birthplace", "birth_place", "place_of_birth", "place of birth", "born_in")),
    ("birth_date", ("birth_date", "birthdate", "date_of_birth", "date of birth", "dob", "born")),
    ("nationality", ("nationality", "citizenship", "country")),
    ("biography", ("biography", "description", "summary", "bio")),
)


class EmptyTable(ValueError):
    pass


class NerTagger(Protocol):
    def tag(self, text: str) -> str:
        """Return "PERSON" or "OTHER"."""


_NAME_TOKEN = re.compile(r"^[^\W\d_][\w'’.\-]*$")
_ORG_WORDS = frozenset(
    """inc ltd llc corp company co university college school club fc city county
    river street hospital museum church party band records group bank
    association society institute republic kingdom""".split()
)


class HeuristicNerTagger:
    """Deterministic stand-in for a NER model.

    PERSON when the text is 2-5 alphabetic, capitalised tokens and contains no
    organisation/place keyword; an optional gazetteer overrides the heuristic.
    """

    def __init__(self, known_people: Iterable[str] = ()):
        self.known = {canonical_name(n) for n in known_people}

    def tag(self, text: str) -> str:
        text = text.strip()
        if not text:
            return "OTHER"
        if canonical_name(text) in self.known:
            return "PERSON"
        tokens = text.split()
        if not 2 <= len(tokens) <= 5:
            return "OTHER"
        for tok in tokens:
            if not _NAME_TOKEN.match(tok) or not tok[0].isupper():
                return "OTHER"
            if tok.strip(".").casefold() in _ORG_WORDS:
                return "OTHER"
        return "PERSON"


@dataclass(frozen=True)
class Column:
    header: str
    cells: tuple[str, ...]
    fk: bool = False


@dataclass(frozen=True)
class SourceTable:
    name: str
    columns: tuple[Column, ...]
    language: str = "en"

    def __post_init__(self):
        lengths = {len(c.cells) for c in self.columns}
        if len(lengths) > 1:
            raise ValueError(f"table {self.name!r} is not rectangular: column lengths {sorted(lengths)}")

    @property
    def n_rows(self) -> int:
        return len(self.columns[0].cells) if self.columns else 0

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "SourceTable":
        cols = tuple(
            Column(c["header"], tuple("" if v is None else str(v) for v in c["cells"]), bool(c.get("fk", False)))
            for c in d["columns"]
        )
        return cls(d["name"], cols, d.get("language", "en"))

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "language": self.language,
            "columns": [{"header": c.header, "cells": list(c.cells), "fk": c.fk} for c in self.columns],
        }


def read_tables(path) -> list[SourceTable]:
    return [SourceTable.from_dict(d) for d in iter_jsonl(path)]


def person_fraction(cells: Sequence[str], tagger: NerTagger, sample_size: int = NER_SAMPLE_SIZE) -> float:
    sample = [c for c in cells if c.strip()][:sample_size]
    if not sample:
        return 0.0
    return sum(tagger.tag(c) == "PERSON" for c in sample) / len(sample)


def detect_person_columns(
    table: SourceTable,
    patterns: Sequence[str] = DEFAULT_PATTERNS,
    tagger: NerTagger | None = None,
    threshold: float = DEFAULT_THRESHOLD,
    sample_size: int = NER_SAMPLE_SIZE,
) -> set[int]:
    if not 0 < threshold <= 1:
        raise ValueError(f"threshold must be in (0, 1], got {threshold}")
    if not patterns:
        raise ValueError("patterns must be non-empty")
    if not table.columns or table.n_rows == 0:
        raise EmptyTable(table.name)
    tagger = tagger or HeuristicNerTagger()
    pats = [p.lower() for p in patterns]
    selected = set()
    for i, col in enumerate(table.columns):
        header = col.header.lower()
        if any(p in header for p in pats):
            selected.add(i)
        elif person_fraction(col.cells, tagger, sample_size) > threshold:
            selected.add(i)
    return selected


@dataclass(frozen=True)
class RawRecord:
    name: str
    attributes: Mapping[str, str]
    table: str
    row: int
    column: int
    language: str = "en"

    @property
    def provenance(self) -> dict[str, Any]:
        return {"table": self.table, "row": self.row, "column": self.column}


def attribute_columns(table: SourceTable, person_columns: set[int]) -> dict[int, str]:
    """Map non-person column index -> record attribute by header pattern."""
    out: dict[int, str] = {}
    taken = set()
    for i, col in enumerate(table.columns):
        if i in person_columns:
            continue
        header = col.header.lower()
        for attr, pats in ATTRIBUTE_PATTERNS:
            if attr not in taken and any(p in header for p in pats):
                out[i] = attr
                taken.add(attr)
                break
    return out


def extract_raw_records(table: SourceTable, person_columns: set[int]) -> list[RawRecord]:
    """One raw record per non-empty (row, person column) cell.

    Row attributes (birth date, nationality, ...) are attached only when the
    table has a single person column; with several, the row cannot say whose
    attributes they are.
    """
    if not person_columns:
        return []
    bad = [i for i in person_columns if not 0 <= i < len(table.columns)]
    if bad:
        raise IndexError(f"person columns {bad} not in table {table.name!r}")
    attr_cols = attribute_columns(table, person_columns) if len(person_columns) == 1 else {}
    out = []
    for row in range(table.n_rows):
        attrs = {}
        for ci, attr in attr_cols.items():
            v = table.columns[ci].cells[row].strip()
            if v:
                attrs[attr] = v
        for ci in sorted(person_columns):
            cell = table.columns[ci].cells[row].strip()
            if cell:
                out.append(RawRecord(cell, attrs, table.name, row, ci, table.language))
    return out


def merge_by_name(records: Iterable[RawRecord]) -> dict[str, list[RawRecord]]:
    groups: dict[str, list[RawRecord]] = defaultdict(list)
    for r in records:
        groups[canonical_name(r.name)].append(r)
    return dict(groups)


def modal_value(values: Iterable[Any], key=None):
    """Most frequent value; ties go to the smallest by ``key`` (default: the value)."""
    counts = Counter(values)
    if not counts:
        return None
    top = max(counts.values())
    tied = [v for v, c in counts.items() if c == top]
    return min(tied, key=key) if key else min(tied)


@dataclass
class DuplicateGroup:
    qid: str | None
    names: list[tuple[str, str]] = field(default_factory=list)  # (language, surface form)
    biography: list[str] = field(default_factory=list)
    nationality: list[str] = field(default_factory=list)
    birth_date: list[BirthDate] = field(default_factory=list)
    birthplace: list[str] = field(default_factory=list)
    provenance: list[dict[str, Any]] = field(default_factory=list)

    def add(self, rec: RawRecord) -> None:
        self.names.append((rec.language, rec.name.strip()))
        self.provenance.append(rec.provenance)
        a = rec.attributes
        if a.get("biography"):
            self.biography.append(a["biography"])
        if a.get("birthplace"):
            self.birthplace.append(a["birthplace"])
        if a.get("nationality"):
            # unmappable strings are kept verbatim so validation can report them
            self.nationality.append(normalize_nationality(a["nationality"]) or a["nationality"])
        if a.get("birth_date"):
            try:
                self.birth_date.append(parse_birth_date(a["birth_date"]))
            except MalformedDate:
                log.debug("unparsable birth date %r at %s", a["birth_date"], rec.provenance)


def consolidate(group: DuplicateGroup) -> dict[str, Any]:
    """Modal values per field; returns a raw dict for validate_record."""
    if not group.qid:
        raise NoQid("duplicate group without qid")
    names: dict[str, str] = {}
    by_lang: dict[str, list[str]] = defaultdict(list)
    for lang, surface in group.names:
        by_lang[lang].append(surface)
    for lang, forms in by_lang.items():
        names[lang] = modal_value(forms)
    date = modal_value(group.birth_date, key=BirthDate.sort_key)
    return {
        "qid": group.qid,
        "names": names,
        "biography": modal_value(group.biography),
        "birth_date": date.to_dict() if date else None,
        "birthplace": modal_value(group.birthplace),
        "nationality": modal_value(group.nationality),
        "popularity": None,
        "image_urls": [],
    }


def attach_names(record: PersonRecord, translations: Mapping[str, str]) -> PersonRecord:
    if not translations:
        return record
    merged = dict(record.names)
    for lang, name in translations.items():
        if name and name.strip() and lang not in merged:
            merged[lang] = name.strip()
    return record.with_names(merged)


def enrich_popularity(record: PersonRecord, views: int) -> PersonRecord:
    if views < 0:
        raise ValueError(f"negative page views for {record.qid}")
    if views == 0:
        raise ZeroPopularity(f"{record.qid} has zero page views")
    return record.with_popularity(int(views))


@dataclass(frozen=True)
class CoverageRow:
    country: str
    count: int
    flagged: bool


def coverage_report(records: Iterable[PersonRecord], minimum: int = MIN_PER_COUNTRY) -> list[CoverageRow]:
    counts = Counter(r.nationality for r in records)
    return [CoverageRow(c, n, n < minimum) for c, n in sorted(counts.items())]


def eligible_countries(report: Iterable[CoverageRow]) -> set[str]:
    return {row.country for row in report if not row.flagged}


def coverage_csv(report: Iterable[CoverageRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["country", "count", "flagged"])
    for row in report:
        w.writerow([row.country, row.count, int(row.flagged)])
    return buf.getvalue()


def read_qid_map(path) -> dict[str, set[str]]:
    """name<TAB>qid lines -> canonical name -> qids."""
    out: dict[str, set[str]] = defaultdict(set)
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            name, qid = line.rstrip("\n").split("\t")[:2]
            out[canonical_name(name)].add(qid.strip())
    return dict(out)


def read_translations(path) -> dict[str, dict[str, str]]:
    """JSONL of {"qid":..., "names": {lang: name}}."""
    out: dict[str, dict[str, str]] = {}
    for d in iter_jsonl(path):
        out.setdefault(d["qid"], {}).update(d["names"])
    return out


def read_pageviews(path) -> dict[str, int]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if not line.strip() or line.startswith("#"):
                continue
            qid, views = line.rstrip("\n").split("\t")[:2]
            out[qid.strip()] = int(views)
    return out


@dataclass
class IngestResult:
    records: list[PersonRecord]
    rejections: list[dict[str, Any]]
    coverage: list[CoverageRow]
    ner_failures: list[str]

    @property
    def n_candidates(self) -> int:
        return len(self.records) + len(self.rejections)


def _reject(key: str, exc: RecordRejected, **extra) -> dict[str, Any]:
    return {"key": key, **exc.to_dict(), **extra}


def run_pipeline(
    tables: Sequence[SourceTable],
    qid_map: Mapping[str, set[str]],
    translations: Mapping[str, Mapping[str, str]] | None = None,
    pageviews: Mapping[str, int] | None = None,
    images: Mapping[str, Sequence[str]] | None = None,
    *,
    patterns: Sequence[str] = DEFAULT_PATTERNS,
    tagger: NerTagger | None = None,
    threshold: float = DEFAULT_THRESHOLD,
) -> IngestResult:
    """Full tables -> records pass.

    Every candidate entity (a qid group, or a name group that failed Q-ID
    alignment) ends up in exactly one of ``records`` or ``rejections``. The
    output is sorted by qid, so it does not depend on table order.
    """
    tagger = tagger or HeuristicNerTagger()
    translations = translations or {}
    pageviews = pageviews or {}
    images = images or {}

    raw: list[RawRecord] = []
    for table in tables:
        try:
            cols = detect_person_columns(table, patterns, tagger, threshold)
        except EmptyTable:
            log.info("skipping empty table %s", table.name)
            continue
        raw.extend(extract_raw_records(table, cols))

    rejections: list[dict[str, Any]] = []
    by_qid: dict[str, DuplicateGroup] = {}
    for key, members in sorted(merge_by_name(raw).items()):
        qids = qid_map.get(key, set())
        if len(qids) != 1:
            why = "no qid mapping" if not qids else f"ambiguous qid mapping {sorted(qids)}"
            rejections.append(_reject(key, NoQid(why), sources=len(members)))
            continue
        (qid,) = qids
        group = by_qid.setdefault(qid, DuplicateGroup(qid))
        # members sorted so that the name multiset is built in a fixed order
        for rec in sorted(members, key=lambda r: (r.table, r.row, r.column)):
            group.add(rec)

    records: list[PersonRecord] = []
    ner_failures: list[str] = []
    for qid in sorted(by_qid):
        merged = consolidate(by_qid[qid])
        merged["popularity"] = pageviews.get(qid, 0)
        merged["image_urls"] = list(images.get(qid, []))
        try:
            rec = validate_record(merged)
        except RecordRejected as exc:
            rejections.append(_reject(qid, exc))
            continue
        rec = attach_names(rec, translations.get(qid, {}))
        if tagger.tag(rec.display_name()) != "PERSON":
            ner_failures.append(qid)
            log.warning("canonical name of %s (%r) not tagged PERSON", qid, rec.display_name())
        records.append(rec)

    rejections.sort(key=lambda r: (r["key"], r["rule"]))
    return IngestResult(records, rejections, coverage_report(records), ner_failures)
