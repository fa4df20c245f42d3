"""Small record and vector builders shared by the tests."""

import numpy as np

from biokb.domain import BirthDate, PersonRecord


def person(qid, name="Someone", *, country="FR", year=1900, pop=100, bio=None, images=(), names=None):
    return PersonRecord(
        qid=qid,
        names=names or {"en": name},
        biography=bio or f"{name} was a person born in {year}.",
        birth_date=BirthDate(year, 1, 1),
        birthplace="Paris",
        nationality=country,
        popularity=pop,
        image_urls=tuple(images),
    )


def unit(v):
    v = np.asarray(v, dtype=float)
    return v / np.linalg.norm(v)
