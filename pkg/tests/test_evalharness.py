from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from biokb.benchgen import BenchmarkItem
from biokb.domain import BloomLevel, LanguageVariant, ManifestEntry, PopularityTier
from biokb.embed import StubEmbedder
from biokb.evalharness import (
    REPORT_COLUMNS,
    EvalCondition,
    EvalOutcome,
    FixedAnswerModel,
    UnknownItem,
    aggregate,
    default_fewshot,
    evaluate,
    grade,
    make_answer_prompt,
    parse_choice,
    pooled_accuracy,
    render_report,
)
from biokb.index import BIOGRAPHY, StoreIndex
from helpers import person
from oracles import pooled

EN, ORG = LanguageVariant.ENGLISH, LanguageVariant.ORIGINAL
EMB = StubEmbedder(64)


def item(subject="Q1", bloom=BloomLevel.REMEMBERING, variant=EN, answer=0, question="In which year?"):
    return BenchmarkItem(subject, bloom, variant, question, ("1850", "1860", "1870", "1880"), answer)


CURIE = person("Q1", "Marie Curie", country="PL", year=1867, images=("https://img/curie.jpg",),
               bio="Marie Curie discovered polonium and radium.", names={"en": "Marie Curie", "pl": "Maria Curie"})
ENTRY = ManifestEntry("Q1", "PL", PopularityTier.HIGH, 0, "pl")


def test_prompt_without_rag_has_no_context():
    b = make_answer_prompt(item(), EvalCondition(), CURIE, ENTRY)
    assert "CONTEXT:" not in b.prompt
    assert "A. 1850\nB. 1860\nC. 1870\nD. 1880" in b.prompt
    assert "single letter" in b.prompt
    assert b.prompt.count("Answer:") == len(default_fewshot()) + 1


def test_prompt_with_rag_contains_the_biography():
    idx = StoreIndex.build([CURIE], {BIOGRAPHY: {"Q1": EMB.embed(CURIE.biography)}})
    b = make_answer_prompt(item(), EvalCondition(rag=True), CURIE, ENTRY, index=idx, embedder=EMB)
    assert "CONTEXT:" in b.prompt and CURIE.biography in b.prompt
    assert not b.rag_fallback


def test_rag_falls_back_when_filters_remove_everything():
    other = person("Q2", "John Smith", country="US")
    twin = person("Q3", "John Smith", country="GB")
    idx = StoreIndex.build([other, twin], {BIOGRAPHY: {r.qid: EMB.embed(r.biography) for r in (other, twin)}})
    entry = ManifestEntry("Q2", "FR", PopularityTier.LOW, 0, "fr")
    b = make_answer_prompt(item("Q2"), EvalCondition(rag=True), other, entry, index=idx, embedder=EMB)
    assert b.rag_fallback and "CONTEXT:" not in b.prompt


def test_image_condition_references_first_url():
    b = make_answer_prompt(item(), EvalCondition(image=True), CURIE, ENTRY)
    assert b.image_url == "https://img/curie.jpg"
    assert "IMAGE: https://img/curie.jpg" in b.prompt


@pytest.mark.parametrize("response, answer, ok", [("B", 1, True), ("The answer is (c)", 2, True),
                                                  ("I am not sure", 0, False), ("d.", 3, True)])
def test_grading(response, answer, ok):
    o = grade(response, item(answer=answer))
    assert o.correct is ok


def test_abstention_is_incorrect():
    o = grade("I am not sure", item(answer=0))
    assert o.choice is None and not o.correct
    assert parse_choice("Answer: A") == 0
    assert parse_choice("Absolutely") is None


@given(st.text(max_size=30), st.integers(0, 3))
def test_grading_is_pure(text, answer):
    it = item(answer=answer)
    assert grade(text, it) == grade(text, it)


# -- aggregation -----------------------------------------------------------


def outcome(it, correct, rag=False, image=False):
    return EvalOutcome(it.item_id, EvalCondition(rag, image, it.variant), 0 if correct else 1, correct)


def test_single_stratum_accuracy():
    items = [item(f"Q{i}") for i in range(4)]
    manifest = {f"Q{i}": ManifestEntry(f"Q{i}", "PL", PopularityTier.LOW, 0) for i in range(4)}
    outs = [outcome(it, c) for it, c in zip(items, [True, True, True, False])]
    (cell,) = aggregate(outs, {it.item_id: it for it in items}, manifest)
    assert cell.n == 4 and cell.accuracy == 0.75


def test_pooled_marginal_is_weighted():
    items, manifest, outs = {}, {}, []
    for i in range(100):
        tier = PopularityTier.HIGH if i < 10 else PopularityTier.LOW
        it = item(f"Q{i}")
        items[it.item_id] = it
        manifest[it.subject] = ManifestEntry(it.subject, "PL", tier, 0)
        correct = (i < 5) if i < 10 else (i < 10 + 72)
        outs.append(outcome(it, correct))
    cells = aggregate(outs, items, manifest)
    assert sorted((c.n, c.accuracy) for c in cells) == [(10, 0.5), (90, 0.8)]
    (pooled_cell,) = aggregate(outs, items, manifest, by=("bloom",))
    assert pooled_cell.tier is None
    assert pooled_cell.accuracy == pytest.approx(0.77)
    assert pooled_accuracy(outs) == float(pooled([(10, 5), (90, 72)]))


def test_worked_pooling_example():
    # two strata (n=10, acc 0.5) and (n=90, acc 0.9) pool to 0.86, not 0.7
    assert pooled([(10, 5), (90, 81)]) == Fraction(86, 100)


def test_empty_strata_emit_no_cells():
    it = item()
    cells = aggregate([outcome(it, True)], {it.item_id: it}, {"Q1": ENTRY})
    assert len(cells) == 1


def test_unknown_item():
    with pytest.raises(UnknownItem):
        aggregate([outcome(item("Q404"), True)], {}, {"Q1": ENTRY})


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(list(BloomLevel)), st.sampled_from([EN, ORG]),
                          st.sampled_from(list(PopularityTier)), st.booleans(), st.booleans()), min_size=1, max_size=60))
def test_cells_sum_to_outcomes(rows):
    items, manifest, outs = {}, {}, []
    for i, (bloom, var, tier, rag, ok) in enumerate(rows):
        it = item(f"Q{i}", bloom, var)
        items[it.item_id] = it
        manifest[it.subject] = ManifestEntry(it.subject, "PL", tier, 0)
        outs.append(outcome(it, ok, rag=rag))
    cells = aggregate(outs, items, manifest)
    assert sum(c.n for c in cells) == len(outs)
    assert sum(c.correct for c in cells) == sum(o.correct for o in outs)
    for by in [(), ("tier",), ("variant", "rag")]:
        marg = aggregate(outs, items, manifest, by=by)
        assert sum(c.correct for c in marg) / sum(c.n for c in marg) == pooled_accuracy(outs)
    # aggregation is an order-independent fold
    assert aggregate(outs[::-1], items, manifest) == cells


# -- rendering -------------------------------------------------------------


def test_render_rounding_and_header():
    it = item()
    outs = [outcome(it, True), outcome(it, True), outcome(it, False)]
    cells = aggregate(outs, {it.item_id: it}, {"Q1": ENTRY})
    csv_text, table = render_report(cells)
    assert csv_text.splitlines()[0] == "bloom,variant,tier,rag,image,n,accuracy"
    assert tuple(csv_text.splitlines()[0].split(",")) == REPORT_COLUMNS
    assert csv_text.splitlines()[1] == "Remembering,English,High,no,no,3,0.667"
    assert render_report(cells) == (csv_text, table)
    assert table.splitlines()[0].split() == list(REPORT_COLUMNS)


def test_render_full_grid_golden():
    items, manifest, outs = {}, {}, []
    for lvl in BloomLevel:
        for var in (EN, ORG):
            for t_i, tier in enumerate(PopularityTier):
                it = item(f"Q{lvl.value}{t_i}", lvl, var)
                items[it.item_id] = it
                manifest[it.subject] = ManifestEntry(it.subject, "PL", tier, 0)
                outs.append(outcome(it, True))
    csv_text, _ = render_report(aggregate(outs, items, manifest))
    lines = csv_text.splitlines()
    assert len(lines) == 1 + 6 * 2 * 3
    assert lines[1] == "Remembering,English,High,no,no,1,1.000"
    assert lines[-1] == "Creating,Original,Low,no,no,1,1.000"


def test_render_requires_cells():
    with pytest.raises(ValueError):
        render_report([])


# -- evaluate --------------------------------------------------------------


def test_evaluate_with_fixed_model():
    items = [item("Q1", answer=a, bloom=b) for a, b in zip([0, 1, 0, 3], list(BloomLevel)[:4])]
    run = evaluate(items, EvalCondition(), FixedAnswerModel("A"), {"Q1": CURIE}, {"Q1": ENTRY})
    assert [o.correct for o in run.outcomes] == [True, False, True, False]


def test_image_runs_skip_subjects_without_images():
    plain = person("Q2", "A B")
    items = [item("Q1"), item("Q2")]
    run = evaluate(items, EvalCondition(image=True), FixedAnswerModel("A"), {"Q1": CURIE, "Q2": plain},
                   {"Q1": ENTRY, "Q2": ManifestEntry("Q2", "FR", PopularityTier.LOW, 0)})
    assert [o.item_id for o in run.outcomes] == ["Q1:1:English"]
    assert run.skipped == ["Q2:1:English"]


def test_outcome_round_trip():
    o = EvalOutcome("Q1:1:English", EvalCondition(True, False, ORG, "m"), None, False, True)
    assert EvalOutcome.from_dict(o.to_dict()) == o
