"""Shared record types, validation and the canonical person JSONL schema."""

from __future__ import annotations

import enum
import json
import re
import unicodedata
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from typing import Any, Iterable, Iterator, Mapping

import pycountry

PERSON_FIELDS = (
    "qid",
    "names",
    "biography",
    "birth_date",
    "birthplace",
    "nationality",
    "popularity",
    "image_urls",
)
MAX_IMAGES = 2

_WS = re.compile(r"\s+")
_DATE_RE = re.compile(r"^\s*(-?\d{1,4})(?:-(\d{1,2})(?:-(\d{1,2}))?)?\s*$")


class RecordRejected(ValueError):
    """Base class for typed rejections raised by validate_record."""

    rule = "Rejected"

    def to_dict(self) -> dict[str, Any]:
        return {"rule": self.rule, "detail": str(self)}


class MissingField(RecordRejected):
    rule = "MissingField"

    def __init__(self, field_name: str):
        super().__init__(field_name)
        self.field = field_name


class ZeroPopularity(RecordRejected):
    rule = "ZeroPopularity"


class MalformedDate(RecordRejected):
    rule = "MalformedDate"


class UnknownNationality(RecordRejected):
    rule = "UnknownNationality"


class NoQid(RecordRejected):
    rule = "NoQid"


def canonical_name(name: str) -> str:
    """NFKC, case-folded, whitespace-collapsed form used for every name key."""
    s = unicodedata.normalize("NFKC", name).casefold()
    return _WS.sub(" ", s).strip()


class PopularityTier(str, enum.Enum):
    HIGH = "High"
    MEDIUM = "Medium"
    LOW = "Low"


class BloomLevel(enum.IntEnum):
    REMEMBERING = 1
    UNDERSTANDING = 2
    APPLYING = 3
    ANALYZING = 4
    EVALUATING = 5
    CREATING = 6

    @property
    def label(self) -> str:
        return self.name.capitalize()

    @classmethod
    def from_label(cls, label: str) -> "BloomLevel":
        return cls[label.upper()]


class LanguageVariant(str, enum.Enum):
    ENGLISH = "English"
    ORIGINAL = "Original"


@dataclass(frozen=True, order=True)
class BirthDate:
    year: int
    month: int | None = None
    day: int | None = None

    def __post_init__(self):
        if isinstance(self.year, bool) or not isinstance(self.year, int):
            raise MalformedDate(f"year must be an int, got {self.year!r}")
        if self.month is not None and not 1 <= self.month <= 12:
            raise MalformedDate(f"month out of range: {self.month}")
        if self.day is not None:
            if self.month is None:
                raise MalformedDate("day given without month")
            if not 1 <= self.day <= 31:
                raise MalformedDate(f"day out of range: {self.day}")

    def sort_key(self) -> tuple[int, int, int]:
        return (self.year, self.month or 0, self.day or 0)

    def to_dict(self) -> dict[str, int]:
        out = {"year": self.year}
        if self.month is not None:
            out["month"] = self.month
        if self.day is not None:
            out["day"] = self.day
        return out

    def __str__(self) -> str:
        parts = [f"{self.year:04d}" if self.year >= 0 else str(self.year)]
        if self.month is not None:
            parts.append(f"{self.month:02d}")
        if self.day is not None:
            parts.append(f"{self.day:02d}")
        return "-".join(parts)


def parse_birth_date(value: Any) -> BirthDate:
    """Accepts a BirthDate, a {"year","month","day"} mapping or a Y[-M[-D]] string."""
    if isinstance(value, BirthDate):
        return value
    if isinstance(value, Mapping):
        if "year" not in value:
            raise MalformedDate(f"no year in {value!r}")
        try:
            return BirthDate(
                int(value["year"]),
                None if value.get("month") is None else int(value["month"]),
                None if value.get("day") is None else int(value["day"]),
            )
        except (TypeError, ValueError) as exc:
            if isinstance(exc, MalformedDate):
                raise
            raise MalformedDate(str(exc)) from None
    if isinstance(value, int) and not isinstance(value, bool):
        return BirthDate(value)
    if isinstance(value, str):
        m = _DATE_RE.match(value)
        if not m:
            raise MalformedDate(f"unparsable date {value!r}")
        y, mo, d = m.groups()
        return BirthDate(int(y), int(mo) if mo else None, int(d) if d else None)
    raise MalformedDate(f"unsupported date value {value!r}")


@lru_cache(maxsize=1)
def _nationality_tables() -> tuple[dict[str, str], dict[str, str]]:
    raw = json.loads(resources.files("biokb").joinpath("data/nationalities.json").read_text("utf-8"))
    hist = {canonical_name(k): v for k, v in raw["historical"].items()}
    dem = {canonical_name(k): v for k, v in raw["demonyms"].items()}
    return hist, dem


def normalize_nationality(value: str | None) -> str | None:
    """Map a country name, demonym, historical polity or code to ISO 3166-1 alpha-2.

    Returns None when nothing matches.
    """
    if value is None:
        return None
    s = unicodedata.normalize("NFKC", value).strip()
    if not s:
        return None
    if len(s) == 2 and s.isalpha():
        if s.upper() == "XK" or pycountry.countries.get(alpha_2=s.upper()) is not None:
            return s.upper()
    hist, dem = _nationality_tables()
    key = canonical_name(s)
    if key in hist:
        return hist[key]
    if key in dem:
        return dem[key]
    try:
        return pycountry.countries.lookup(s).alpha_2
    except LookupError:
        return None


@dataclass(frozen=True)
class PersonRecord:
    qid: str
    names: Mapping[str, str]
    biography: str
    birth_date: BirthDate
    birthplace: str
    nationality: str
    popularity: int
    image_urls: tuple[str, ...] = ()

    def __post_init__(self):
        # freeze the names map into a sorted plain dict copy
        object.__setattr__(self, "names", dict(sorted(self.names.items())))
        object.__setattr__(self, "image_urls", tuple(self.image_urls))

    @property
    def birth_year(self) -> int:
        return self.birth_date.year

    def display_name(self, language: str | None = None) -> str:
        if language and language in self.names:
            return self.names[language]
        if "en" in self.names:
            return self.names["en"]
        return next(iter(self.names.values()))

    def to_dict(self) -> dict[str, Any]:
        return {
            "qid": self.qid,
            "names": dict(self.names),
            "biography": self.biography,
            "birth_date": self.birth_date.to_dict(),
            "birthplace": self.birthplace,
            "nationality": self.nationality,
            "popularity": self.popularity,
            "image_urls": list(self.image_urls),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), ensure_ascii=False, separators=(",", ":"))

    def with_names(self, names: Mapping[str, str]) -> "PersonRecord":
        return replace(self, names=names)

    def with_popularity(self, views: int) -> "PersonRecord":
        return replace(self, popularity=views)


def _present(value: Any) -> bool:
    if value is None:
        return False
    if isinstance(value, str):
        return bool(value.strip())
    return True


def validate_record(raw: Mapping[str, Any] | PersonRecord) -> PersonRecord:
    """Return a PersonRecord or raise the RecordRejected for the first failed rule.

    Rule order: names, biography, birth_date, birthplace, nationality, popularity.
    """
    if isinstance(raw, PersonRecord):
        raw = raw.to_dict()
    qid = raw.get("qid")
    if not _present(qid):
        raise NoQid("record has no qid")
    names = {k: v.strip() for k, v in (raw.get("names") or {}).items() if _present(v)}
    if not names:
        raise MissingField("names")
    if not _present(raw.get("biography")):
        raise MissingField("biography")
    if raw.get("birth_date") in (None, "", {}):
        raise MissingField("birth_date")
    birth_date = parse_birth_date(raw["birth_date"])
    if not _present(raw.get("birthplace")):
        raise MissingField("birthplace")
    if not _present(raw.get("nationality")):
        raise MissingField("nationality")
    nationality = normalize_nationality(raw["nationality"])
    if nationality is None:
        raise UnknownNationality(str(raw["nationality"]))
    popularity = raw.get("popularity")
    if popularity is None:
        raise MissingField("popularity")
    if isinstance(popularity, bool) or int(popularity) != popularity:
        raise MissingField("popularity")
    if popularity < 1:
        raise ZeroPopularity(f"popularity={popularity}")
    urls = [u for u in (raw.get("image_urls") or []) if _present(u)][:MAX_IMAGES]
    return PersonRecord(
        qid=str(qid).strip(),
        names=names,
        biography=str(raw["biography"]).strip(),
        birth_date=birth_date,
        birthplace=str(raw["birthplace"]).strip(),
        nationality=nationality,
        popularity=int(popularity),
        image_urls=tuple(urls),
    )


def read_people(path) -> list[PersonRecord]:
    with open(path, encoding="utf-8") as fh:
        return [validate_record(json.loads(line)) for line in fh if line.strip()]


def iter_jsonl(path) -> Iterator[dict[str, Any]]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                yield json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{lineno}: invalid JSON ({exc.msg})") from None


def dumps_jsonl(rows: Iterable[Mapping[str, Any] | PersonRecord]) -> str:
    lines = []
    for row in rows:
        if isinstance(row, PersonRecord):
            lines.append(row.to_json())
        else:
            lines.append(json.dumps(row, ensure_ascii=False, separators=(",", ":")))
    return "".join(line + "\n" for line in lines)


@dataclass(frozen=True)
class ManifestEntry:
    qid: str
    country: str
    tier: PopularityTier
    cluster: int
    original_language: str = "en"

    def to_dict(self) -> dict[str, Any]:
        return {
            "qid": self.qid,
            "country": self.country,
            "tier": self.tier.value,
            "cluster": self.cluster,
            "original_language": self.original_language,
        }

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "ManifestEntry":
        return cls(d["qid"], d["country"], PopularityTier(d["tier"]), int(d["cluster"]),
                   d.get("original_language", "en"))


def read_manifest(path) -> list[ManifestEntry]:
    return [ManifestEntry.from_dict(d) for d in iter_jsonl(path)]
