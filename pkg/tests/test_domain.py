import json

import pytest
from hypothesis import given, strategies as st

from biokb.domain import (
    BirthDate,
    BloomLevel,
    LanguageVariant,
    MalformedDate,
    ManifestEntry,
    MissingField,
    NoQid,
    PersonRecord,
    PopularityTier,
    RecordRejected,
    UnknownNationality,
    ZeroPopularity,
    canonical_name,
    dumps_jsonl,
    normalize_nationality,
    parse_birth_date,
    validate_record,
)


def raw(**over):
    base = {
        "qid": "Q7186",
        "names": {"en": "Marie Curie"},
        "biography": "Physicist and chemist who pioneered research on radioactivity.",
        "birth_date": "1867-11-07",
        "birthplace": "Warsaw",
        "nationality": "PL",
        "popularity": 154,
        "image_urls": [],
    }
    base.update(over)
    return base


def test_complete_record_is_accepted():
    rec = validate_record(raw())
    assert rec.popularity == 154
    assert rec.birth_date == BirthDate(1867, 11, 7)
    assert rec.nationality == "PL"


def test_zero_popularity_is_rejected():
    with pytest.raises(ZeroPopularity):
        validate_record(raw(popularity=0))


def test_missing_birthplace_names_the_field():
    with pytest.raises(MissingField) as exc:
        validate_record(raw(birthplace=None))
    assert exc.value.field == "birthplace"
    assert exc.value.to_dict()["rule"] == "MissingField"


@pytest.mark.parametrize("field", ["biography", "birth_date", "birthplace", "nationality", "popularity"])
def test_each_missing_field_is_reported(field):
    with pytest.raises(MissingField) as exc:
        validate_record(raw(**{field: ""}) if field != "popularity" else raw(popularity=None))
    assert exc.value.field == field


def test_first_failed_rule_wins():
    # both biography and popularity are bad; biography is checked first
    with pytest.raises(MissingField) as exc:
        validate_record(raw(biography="  ", popularity=0))
    assert exc.value.field == "biography"


def test_malformed_date_and_unknown_nationality():
    with pytest.raises(MalformedDate):
        validate_record(raw(birth_date="seventh of November"))
    with pytest.raises(MalformedDate):
        validate_record(raw(birth_date="1867-13-01"))
    with pytest.raises(UnknownNationality):
        validate_record(raw(nationality="Atlantis"))
    with pytest.raises(NoQid):
        validate_record(raw(qid=""))


def test_images_truncated_to_two():
    rec = validate_record(raw(image_urls=["a.jpg", "b.jpg", "c.jpg"]))
    assert rec.image_urls == ("a.jpg", "b.jpg")


def test_validate_is_idempotent_on_accepted_records():
    rec = validate_record(raw(nationality="Polish", names={"pl": "Maria Skłodowska", "en": "Marie Curie"}))
    assert validate_record(rec) == rec
    assert validate_record(json.loads(rec.to_json())) == rec


@pytest.mark.parametrize(
    "text, want",
    [("PL", "PL"), ("pl", "PL"), ("Poland", "PL"), ("Polish", "PL"), ("Prussia", "DE"),
     ("Soviet Union", "RU"), ("German", "DE"), ("United States", "US"), ("Atlantis", None), ("", None)],
)
def test_normalize_nationality(text, want):
    assert normalize_nationality(text) == want


def test_canonical_name_rules():
    assert canonical_name("Marie Curie") == canonical_name("marie  curie") == "marie curie"
    assert canonical_name("MARIE\tcurie ") == "marie curie"
    # NFKC folds the full-width letters, casefold handles the sharp s
    assert canonical_name("ＭＡＲＩＥ Straße") == "marie strasse"


@given(st.text(max_size=40))
def test_canonical_name_is_idempotent(s):
    once = canonical_name(s)
    assert canonical_name(once) == once
    assert "  " not in once


@given(st.integers(-3000, 2100), st.one_of(st.none(), st.integers(1, 12)), st.integers(1, 28))
def test_birth_date_string_round_trip(y, m, d):
    bd = BirthDate(y, m, d if m else None)
    assert parse_birth_date(str(bd)) == bd
    assert parse_birth_date(bd.to_dict()) == bd


@given(
    st.fixed_dictionaries({
        "qid": st.one_of(st.none(), st.just(""), st.just("Q1")),
        "names": st.one_of(st.none(), st.just({}), st.just({"en": "A B"})),
        "biography": st.one_of(st.none(), st.just(""), st.just("text")),
        "birth_date": st.one_of(st.none(), st.just("x"), st.just("1900"), st.just({"year": 1900})),
        "birthplace": st.one_of(st.none(), st.just("Rome")),
        "nationality": st.one_of(st.none(), st.just("IT"), st.just("Narnia")),
        "popularity": st.one_of(st.none(), st.integers(-2, 5)),
    })
)
def test_validate_record_is_total(d):
    """Every input yields exactly one of: a record, or a typed rejection."""
    try:
        rec = validate_record(d)
    except RecordRejected as exc:
        assert exc.rule in {"MissingField", "ZeroPopularity", "MalformedDate", "UnknownNationality", "NoQid"}
    else:
        assert isinstance(rec, PersonRecord) and rec.popularity >= 1


def test_record_json_is_compact_and_sorted():
    rec = validate_record(raw(names={"pl": "Maria Skłodowska", "en": "Marie Curie"}))
    line = dumps_jsonl([rec])
    assert line.endswith("\n") and line.count("\n") == 1
    assert "Skłodowska" in line  # not ascii-escaped
    assert list(json.loads(line)["names"]) == ["en", "pl"]


def test_enums_and_manifest_round_trip():
    assert [lvl.label for lvl in BloomLevel] == [
        "Remembering", "Understanding", "Applying", "Analyzing", "Evaluating", "Creating"]
    assert BloomLevel.from_label("Creating") is BloomLevel.CREATING
    assert LanguageVariant("Original") is LanguageVariant.ORIGINAL
    m = ManifestEntry("Q1", "PL", PopularityTier.LOW, 2, "pl")
    assert ManifestEntry.from_dict(m.to_dict()) == m
