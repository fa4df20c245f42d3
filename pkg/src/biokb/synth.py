"""Seeded synthetic worlds for tests, the self-test and demos."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .domain import BirthDate, PersonRecord, canonical_name
from .ingest import Column, SourceTable
from .sampler import original_language

COUNTRIES = (
    "AR", "BR", "CN", "DE", "EG", "ES", "FR", "GB", "IN", "IR",
    "IT", "JP", "KR", "MX", "NG", "PL", "RU", "TR", "US", "ZA",
)
DEMONYMS = {
    "AR": "Argentine", "BR": "Brazilian", "CN": "Chinese", "DE": "German", "EG": "Egyptian",
    "ES": "Spanish", "FR": "French", "GB": "British", "IN": "Indian", "IR": "Iranian",
    "IT": "Italian", "JP": "Japanese", "KR": "Korean", "MX": "Mexican", "NG": "Nigerian",
    "PL": "Polish", "RU": "Russian", "TR": "Turkish", "US": "American", "ZA": "South African",
}
COUNTRY_NAMES = {
    "AR": "Argentina", "BR": "Brazil", "CN": "China", "DE": "Germany", "EG": "Egypt",
    "ES": "Spain", "FR": "France", "GB": "United Kingdom", "IN": "India", "IR": "Iran",
    "IT": "Italy", "JP": "Japan", "KR": "South Korea", "MX": "Mexico", "NG": "Nigeria",
    "PL": "Poland", "RU": "Russia", "TR": "Turkey", "US": "United States", "ZA": "South Africa",
}
PROFESSIONS = (
    "physicist", "painter", "poet", "composer", "engineer", "physician", "novelist", "chemist",
    "architect", "philosopher", "mathematician", "footballer", "actor", "film director", "sculptor",
    "botanist", "economist", "historian", "astronomer", "singer", "politician", "explorer",
)
TOPICS = (
    "optics", "thermodynamics", "landscapes", "portraits", "sonnets", "symphonies", "bridges",
    "vaccines", "epic novels", "polymers", "cathedrals", "ethics", "number theory", "midfield play",
    "tragic roles", "silent cinema", "marble statues", "orchids", "trade policy", "medieval chronicles",
    "comets", "opera", "electoral reform", "polar expeditions", "railways", "radio waves",
)
_SYL = (
    "ka", "lo", "mi", "ra", "ne", "to", "sa", "vi", "de", "lu", "ma", "ri", "ko", "be", "an", "el",
    "or", "in", "ta", "no", "sel", "dor", "mar", "len", "gar", "wen", "bra", "sto", "fel", "kin",
)


def _word(rng: np.random.Generator, n_syl: int) -> str:
    return "".join(_SYL[i] for i in rng.integers(len(_SYL), size=n_syl)).capitalize()


def person_name(rng: np.random.Generator) -> str:
    return f"{_word(rng, 2)} {_word(rng, 3)}"


def _article(word: str) -> str:
    return "an" if word[0].lower() in "aeiou" else "a"


def biography(name: str, country: str, profession: str, year: int, city: str, topics: tuple[str, str]) -> str:
    return (
        f"{name} was {_article(DEMONYMS[country])} {DEMONYMS[country]} {profession} born in {year} in {city}, {COUNTRY_NAMES[country]}. "
        f"{name} is remembered for work on {topics[0]} and {topics[1]}."
    )


def make_person(rng: np.random.Generator, qid: str, name: str, country: str, year: int | None = None,
                with_images: bool = True) -> PersonRecord:
    year = int(rng.integers(1500, 2001)) if year is None else year
    prof = PROFESSIONS[int(rng.integers(len(PROFESSIONS)))]
    t = rng.choice(len(TOPICS), size=2, replace=False)
    city = _word(rng, 2) + "burg"
    pop = max(1, int(rng.lognormal(7.0, 2.0)))
    n_img = int(rng.integers(0, 3)) if with_images else 0
    lang = original_language(country)
    names = {"en": name}
    if lang != "en":
        names[lang] = name
    return PersonRecord(
        qid=qid,
        names=names,
        biography=biography(name, country, prof, year, city, (TOPICS[t[0]], TOPICS[t[1]])),
        birth_date=BirthDate(year, int(rng.integers(1, 13)), int(rng.integers(1, 29))),
        birthplace=city,
        nationality=country,
        popularity=pop,
        image_urls=tuple(f"https://img.example.org/{qid}/{i}.jpg" for i in range(n_img)),
    )


def population_table(seed: int = 0, countries=COUNTRIES) -> dict[str, float]:
    """Random shares summing to one (up to float rounding)."""
    rng = np.random.default_rng(seed)
    shares = rng.dirichlet(np.full(len(countries), 0.6))
    return {c: float(s) for c, s in zip(countries, shares)}


def make_world(n_people: int = 10_000, seed: int = 0, countries=COUNTRIES,
               min_per_country: int = 0) -> list[PersonRecord]:
    """People spread over countries with skewed weights; unique names."""
    rng = np.random.default_rng(seed)
    weights = rng.dirichlet(np.full(len(countries), 1.0))
    base = [ci for ci in range(len(countries)) for _ in range(min_per_country)]
    if len(base) > n_people:
        raise ValueError("n_people too small for min_per_country")
    assigned = base + list(rng.choice(len(countries), size=n_people - len(base), p=weights))
    seen: set[str] = set()
    people = []
    for i, ci in enumerate(assigned):
        name = person_name(rng)
        while name in seen:
            name = person_name(rng)
        seen.add(name)
        people.append(make_person(rng, f"Q{100000 + i}", name, countries[ci]))
    return people


def homonym_fixture(n: int = 200, n_collisions: int = 20, seed: int = 0) -> tuple[list[PersonRecord], list[tuple[str, ...]]]:
    """``n`` people where ``n_collisions`` names are each shared by two people.

    Members of a pair differ in nationality and in birth year by at least 60.
    Returns the records and the qid pairs.
    """
    rng = np.random.default_rng(seed)
    people: list[PersonRecord] = []
    pairs = []
    names: set[str] = set()

    def fresh():
        nm = person_name(rng)
        while nm in names:
            nm = person_name(rng)
        names.add(nm)
        return nm

    for i in range(n_collisions):
        nm = fresh()
        c1, c2 = rng.choice(len(COUNTRIES), size=2, replace=False)
        y1 = int(rng.integers(1500, 1900))
        y2 = y1 + int(rng.integers(60, 100))
        a = make_person(rng, f"Q{1000 + 2 * i}", nm, COUNTRIES[c1], y1)
        b = make_person(rng, f"Q{1001 + 2 * i}", nm, COUNTRIES[c2], y2)
        people += [a, b]
        pairs.append((a.qid, b.qid))
    for i in range(n - 2 * n_collisions):
        people.append(make_person(rng, f"Q{5000 + i}", fresh(), COUNTRIES[int(rng.integers(len(COUNTRIES)))]))
    return people, pairs


@dataclass
class IngestFixture:
    tables: list[SourceTable]
    qid_map: dict[str, set[str]]
    translations: dict[str, dict[str, str]]
    pageviews: dict[str, int]
    images: dict[str, list[str]]
    truth: list[PersonRecord]


_LAYOUTS = (
    ("full_name", "birth_date", "place_of_birth", "nationality", "description"),
    ("winner", "born", "birthplace", "country", "summary"),
    ("author", "date_of_birth", "birth_place", "citizenship", "biography"),
)


def _nationality_form(rng: np.random.Generator, country: str) -> str:
    forms = (country, COUNTRY_NAMES[country], DEMONYMS[country])
    return forms[int(rng.integers(len(forms)))]


def make_ingest_fixture(n_people: int = 1000, n_tables: int = 50, seed: int = 0) -> IngestFixture:
    """Person tables with duplicated, noisy appearances plus a few non-person tables.

    About 2% of people get zero page views and 2% lose their birthplace, so
    the pipeline has something to reject.
    """
    rng = np.random.default_rng(seed)
    truth = make_world(n_people, seed=seed, min_per_country=min(12, n_people // len(COUNTRIES)))
    n_noise = max(1, n_tables // 10)
    n_person_tables = n_tables - n_noise
    rows: list[list[list[str]]] = [[] for _ in range(n_person_tables)]
    for p in truth:
        drop_place = rng.random() < 0.02
        for t in rng.choice(n_person_tables, size=int(rng.integers(1, 4)), replace=False):
            nat = _nationality_form(rng, p.nationality)
            if rng.random() < 0.1:
                nat = _nationality_form(rng, COUNTRIES[int(rng.integers(len(COUNTRIES)))])
            rows[t].append([
                p.names["en"],
                str(p.birth_date),
                "" if drop_place else p.birthplace,
                nat,
                p.biography,
            ])
    tables = []
    for t, trows in enumerate(rows):
        headers = _LAYOUTS[t % len(_LAYOUTS)]
        cols = tuple(Column(h, tuple(r[i] for r in trows)) for i, h in enumerate(headers))
        tables.append(SourceTable(f"people_{t:02d}", cols))
    for t in range(n_noise):
        n = 30
        cols = (
            Column("company", tuple(f"{_word(rng, 2)} Holdings Inc" for _ in range(n))),
            Column("revenue", tuple(str(int(rng.integers(1000, 10**6))) for _ in range(n))),
            Column("city", tuple(_word(rng, 2) + "burg" for _ in range(n))),
        )
        tables.append(SourceTable(f"companies_{t:02d}", cols))

    qid_map = {canonical_name(p.names["en"]): {p.qid} for p in truth}
    translations = {p.qid: {k: v for k, v in p.names.items() if k != "en"} for p in truth}
    translations = {q: t for q, t in translations.items() if t}
    pageviews = {p.qid: (0 if rng.random() < 0.02 else p.popularity) for p in truth}
    images = {p.qid: list(p.image_urls) for p in truth if p.image_urls}
    return IngestFixture(tables, qid_map, translations, pageviews, images, truth)
