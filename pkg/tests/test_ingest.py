import pytest
from hypothesis import given, settings, strategies as st

from biokb import synth
from biokb.domain import MissingField, NoQid, ZeroPopularity, dumps_jsonl
from biokb.ingest import (
    Column,
    DuplicateGroup,
    EmptyTable,
    HeuristicNerTagger,
    RawRecord,
    SourceTable,
    attach_names,
    consolidate,
    coverage_csv,
    coverage_report,
    detect_person_columns,
    eligible_countries,
    enrich_popularity,
    extract_raw_records,
    merge_by_name,
    modal_value,
    run_pipeline,
)
from helpers import person
from oracles import mode_with_min_tie


class ListTagger:
    """Tags exactly the given strings as PERSON."""

    def __init__(self, people):
        self.people = set(people)

    def tag(self, text):
        return "PERSON" if text in self.people else "O"


def table(*cols, name="t"):
    return SourceTable(name, tuple(Column(h, tuple(cells)) for h, cells in cols))


# -- detect_person_columns -------------------------------------------------


def test_surname_header_is_selected_regardless_of_cells():
    t = table(("surname", ["1", "2", "3"]))
    assert detect_person_columns(t, tagger=ListTagger([])) == {0}


def test_revenue_with_no_person_cells_is_not_selected():
    t = table(("revenue", ["10", "20", "30"]))
    assert detect_person_columns(t, patterns=("surname",), tagger=ListTagger([])) == set()


def test_winner_column_selected_by_person_fraction():
    cells = [f"P{i}" for i in range(10)]
    tagger = ListTagger(cells[:8])
    t = table(("winner", cells))
    # the header matches no pattern here; 0.8 > 0.5 decides it
    assert detect_person_columns(t, patterns=("surname",), tagger=tagger, threshold=0.5) == {0}
    assert detect_person_columns(t, patterns=("surname",), tagger=tagger, threshold=0.8) == set()


def test_threshold_and_empty_table_errors():
    t = table(("name", ["A"]))
    with pytest.raises(ValueError):
        detect_person_columns(t, threshold=0)
    with pytest.raises(EmptyTable):
        detect_person_columns(table(("name", [])))


def test_heuristic_tagger():
    tagger = HeuristicNerTagger()
    assert tagger.tag("Ada Lovelace") == "PERSON"
    assert tagger.tag("Kalo Holdings Inc") != "PERSON"
    assert tagger.tag("12345") != "PERSON"


# -- extract_raw_records ---------------------------------------------------


def test_empty_cells_are_skipped():
    t = table(("name", ["Ada Lovelace", "", "Alan Turing"]))
    assert len(extract_raw_records(t, {0})) == 2


def test_no_person_columns_gives_nothing():
    assert extract_raw_records(table(("name", ["Ada Lovelace"])), set()) == []


def test_two_person_columns_give_one_record_per_cell():
    t = table(("winner", ["A B", "C D"]), ("runner_up", ["E F", "G H"]))
    recs = extract_raw_records(t, {0, 1})
    assert len(recs) == 4
    assert {(r.row, r.column) for r in recs} == {(0, 0), (0, 1), (1, 0), (1, 1)}
    # with two people per row the attributes cannot be attributed
    assert all(not r.attributes for r in recs)


def test_row_attributes_and_provenance():
    t = table(("name", ["Ada Lovelace"]), ("born", ["1815-12-10"]), ("country", ["British"]), name="mathematicians")
    (r,) = extract_raw_records(t, {0})
    assert r.attributes == {"birth_date": "1815-12-10", "nationality": "British"}
    assert r.provenance == {"table": "mathematicians", "row": 0, "column": 0}


# -- merge, consolidate, enrich --------------------------------------------


def raw_rec(name, row=0, **attrs):
    return RawRecord(name, attrs, "t", row, 0)


def test_merge_by_name():
    assert len(merge_by_name([raw_rec("Marie Curie"), raw_rec("marie  curie", 1)])) == 1
    assert len(merge_by_name([raw_rec("Marie Curie"), raw_rec("Pierre Curie")])) == 2
    assert merge_by_name([]) == {}


def group_with(nationalities, qid="Q1"):
    g = DuplicateGroup(qid)
    for i, n in enumerate(nationalities):
        g.add(raw_rec("Marie Curie", i, nationality=n))
    return g


def test_modal_nationality():
    assert consolidate(group_with(["FR", "FR", "DE"]))["nationality"] == "FR"
    assert consolidate(group_with(["FR", "DE"]))["nationality"] == "DE"


def test_singleton_group_keeps_its_values():
    g = DuplicateGroup("Q2")
    g.add(raw_rec("Ada Lovelace", biography="Wrote the first program.", birthplace="London",
                  birth_date="1815-12-10", nationality="GB"))
    out = consolidate(g)
    assert out["biography"] == "Wrote the first program."
    assert out["birthplace"] == "London"
    assert out["birth_date"] == {"year": 1815, "month": 12, "day": 10}
    assert out["names"] == {"en": "Ada Lovelace"}


def test_date_tie_goes_to_earliest():
    g = DuplicateGroup("Q3")
    for i, d in enumerate(["1900-05-01", "1899-12-31", "1900-05-01", "1899-12-31"]):
        g.add(raw_rec("X Y", i, birth_date=d))
    assert consolidate(g)["birth_date"] == {"year": 1899, "month": 12, "day": 31}


def test_group_without_qid():
    with pytest.raises(NoQid):
        consolidate(DuplicateGroup(None))


@given(st.lists(st.sampled_from(["ES", "FR", "DE", "IT", "PL"]), min_size=1, max_size=12))
def test_modal_value_matches_oracle(values):
    assert modal_value(values) == mode_with_min_tie(values)


def test_attach_names_is_left_biased():
    rec = person("Q1", "Marie Curie")
    out = attach_names(rec, {"fr": "Marie Curie", "pl": "Maria Skłodowska-Curie"})
    assert len(out.names) == 3
    assert attach_names(rec, {}) is rec
    assert attach_names(rec, {"en": "Madame Curie"}).names["en"] == "Marie Curie"


def test_enrich_popularity():
    rec = person("Q1")
    assert enrich_popularity(rec, 12034).popularity == 12034
    assert enrich_popularity(rec, 1).popularity == 1
    with pytest.raises(ZeroPopularity):
        enrich_popularity(rec, 0)


# -- coverage --------------------------------------------------------------


def test_coverage_flags_without_dropping():
    recs = [person(f"Q{i}", country="IS") for i in range(9)] + [person(f"R{i}", country="NO") for i in range(10)]
    rows = {r.country: r for r in coverage_report(recs)}
    assert rows["IS"].flagged and rows["IS"].count == 9
    assert not rows["NO"].flagged
    assert eligible_countries(rows.values()) == {"NO"}
    assert coverage_report([]) == []
    assert coverage_csv(rows.values()).splitlines()[0] == "country,count,flagged"


# -- whole pipeline --------------------------------------------------------


@pytest.fixture(scope="module")
def fixture():
    return synth.make_ingest_fixture(n_people=300, n_tables=20, seed=5)


@pytest.fixture(scope="module")
def result(fixture):
    return run_pipeline(fixture.tables, fixture.qid_map, fixture.translations, fixture.pageviews, fixture.images)


def test_pipeline_partitions_candidates(fixture, result):
    """Each entity lands in exactly one of records / rejections."""
    keys = [r.qid for r in result.records] + [r["key"] for r in result.rejections]
    assert len(keys) == len(set(keys))
    assert result.n_candidates == len(fixture.truth)
    assert [r.qid for r in result.records] == sorted(r.qid for r in result.records)


def test_pipeline_recovers_truth(fixture, result):
    truth = {p.qid: p for p in fixture.truth}
    for rec in result.records:
        t = truth[rec.qid]
        assert rec.birth_date == t.birth_date
        assert rec.biography == t.biography
        assert rec.popularity == t.popularity


def test_pipeline_rejections_are_typed(result):
    rules = {r["rule"] for r in result.rejections}
    assert rules <= {"MissingField", "ZeroPopularity", "MalformedDate", "UnknownNationality", "NoQid"}
    assert "ZeroPopularity" in rules


def test_unmapped_and_ambiguous_names_are_rejected():
    t = table(("name", ["Ada Lovelace", "John Smith", "Nobody Known"]), ("born", ["1815", "1900", "1901"]),
              ("birthplace", ["London"] * 3), ("nationality", ["GB"] * 3), ("biography", ["b"] * 3))
    qmap = {"ada lovelace": {"Q1"}, "john smith": {"Q2", "Q3"}}
    res = run_pipeline([t], qmap, pageviews={"Q1": 5})
    assert [r.qid for r in res.records] == ["Q1"]
    assert {r["key"]: r["rule"] for r in res.rejections} == {"john smith": "NoQid", "nobody known": "NoQid"}


@settings(max_examples=10, deadline=None)
@given(st.randoms(use_true_random=False))
def test_pipeline_is_invariant_under_shuffling(fixture, result, rnd):
    tables = list(fixture.tables)
    rnd.shuffle(tables)
    shuffled = []
    for t in tables:
        rows = list(range(t.n_rows))
        rnd.shuffle(rows)
        shuffled.append(SourceTable(t.name, tuple(Column(c.header, tuple(c.cells[i] for i in rows)) for c in t.columns)))
    again = run_pipeline(shuffled, fixture.qid_map, fixture.translations, fixture.pageviews, fixture.images)
    assert dumps_jsonl(again.records) == dumps_jsonl(result.records)
    assert again.rejections == result.rejections


def test_missing_birthplace_rejected_in_pipeline():
    t = table(("name", ["Ada Lovelace"]), ("born", ["1815"]), ("nationality", ["GB"]), ("biography", ["b"]))
    res = run_pipeline([t], {"ada lovelace": {"Q1"}}, pageviews={"Q1": 5})
    assert res.records == []
    assert res.rejections[0]["rule"] == MissingField.rule
