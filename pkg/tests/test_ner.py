"""Gazetteers, the constrained span decoder, and the mention tagger."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tabsql.dataset import EntityLabel, LABEL_INDEX, LABELS, TableData, TypedSpan
from tabsql.errors import EmptyTrainingSet
from tabsql.ner import (
    SOURCE_CELL,
    SOURCE_SCHEMA,
    Gazetteer,
    GazetteerMatch,
    NerConfig,
    NerExample,
    NerModel,
    constrained_label_decode,
    enumerate_spans,
    gazetteer_matches,
    span_f1,
    train_ner,
)
from tabsql.optim import finite_difference_grads, relative_grad_error

SELECT = LABEL_INDEX[EntityLabel.SELECT_COLUMN]
WHERE = LABEL_INDEX[EntityLabel.WHERE_COLUMN]
AGG = LABEL_INDEX[EntityLabel.AGG_FUNCTION]
LITERAL = LABEL_INDEX[EntityLabel.LITERAL_VALUE]
NONE = LABEL_INDEX[EntityLabel.NONE]

TINY = NerConfig(dim=3, len_dim=2, feat_dim=64, max_span_len=3, seed=5)


def _row(**weights):
    row = np.full(len(LABELS), 0.01)
    for idx, w in weights.items():
        row[int(idx)] = w
    return row


# --------------------------------------------------------------------------
# span enumeration


def test_enumerate_span_counts():
    assert len(enumerate_spans(5, 3)) == 12
    assert len(enumerate_spans(1, 8)) == 1
    assert len(enumerate_spans(8, 8)) == 36
    assert enumerate_spans(0, 4) == []


def test_enumerate_spans_ordered_and_bounded():
    spans = enumerate_spans(4, 2)
    assert spans == sorted(spans)
    assert all(0 <= s < e <= 4 and e - s <= 2 for s, e in spans)


# --------------------------------------------------------------------------
# gazetteers


def test_build_separates_sources(toy_table):
    g = Gazetteer.build(toy_table)
    assert g.lookup("alice") == SOURCE_CELL
    assert g.lookup("points") == SOURCE_SCHEMA
    assert g.lookup("zzz") is None
    assert g.lookup("...") is None
    assert "points" in g.schema_tokens and "alice" in g.cell_tokens


def test_lookup_normalizes(toy_table):
    g = Gazetteer.build(toy_table)
    assert g.lookup("  Alice, ") == SOURCE_CELL
    assert g.lookup("TEAM") == SOURCE_SCHEMA


def test_schema_wins_collisions():
    t = TableData(
        table_id="t",
        table_name="t",
        column_ids=("c1",),
        column_display_names=("points",),
        column_types=("string",),
        rows=(("points",),),
    )
    assert Gazetteer.build(t).lookup("points") == SOURCE_SCHEMA
    assert Gazetteer.build(t, use_schema=False).lookup("points") == SOURCE_CELL


def test_build_switches(toy_table):
    no_schema = Gazetteer.build(toy_table, use_schema=False)
    assert no_schema.lookup("points") is None
    assert no_schema.schema_tokens == set()
    no_cell = Gazetteer.build(toy_table, use_cell=False)
    assert no_cell.lookup("alice") is None
    assert Gazetteer.empty().lookup("alice") is None


def test_gazetteer_matches_spans(toy_table):
    g = Gazetteer.build(toy_table)
    got = gazetteer_matches(["alice", "and", "bob"], g, max_span_len=3)
    assert got == [
        GazetteerMatch(0, 1, SOURCE_CELL),
        GazetteerMatch(2, 3, SOURCE_CELL),
    ]


def test_gazetteer_matches_multi_token():
    t = TableData(
        table_id="t",
        table_name="t",
        column_ids=("c1",),
        column_display_names=("team",),
        column_types=("string",),
        rows=(("red bull",),),
    )
    g = Gazetteer.build(t)
    got = gazetteer_matches(["red", "bull"], g, max_span_len=4)
    assert got == [GazetteerMatch(0, 2, SOURCE_CELL)]


# --------------------------------------------------------------------------
# constrained decode

SPANS3 = [(0, 1), (1, 2), (0, 2)]


def test_matched_span_relabeled_from_none():
    probs = np.stack(
        [
            _row(**{str(NONE): 0.9, str(WHERE): 0.05}),
            _row(**{str(LITERAL): 0.8}),
            _row(**{str(AGG): 0.9}),
        ]
    )
    got = constrained_label_decode(
        SPANS3, probs, [GazetteerMatch(0, 1, SOURCE_SCHEMA)]
    )
    assert [(m.start, m.end, m.label) for m in got] == [
        (0, 1, EntityLabel.WHERE_COLUMN),
        (1, 2, EntityLabel.LITERAL_VALUE),
    ]


def test_overlapping_unmatched_mention_suppressed():
    probs = np.stack(
        [
            _row(**{str(NONE): 0.9}),
            _row(**{str(NONE): 0.9}),
            _row(**{str(AGG): 0.95}),  # overlaps the match, not matched itself
        ]
    )
    got = constrained_label_decode(
        SPANS3, probs, [GazetteerMatch(0, 1, SOURCE_CELL)]
    )
    assert [(m.start, m.end, m.label) for m in got] == [
        (0, 1, EntityLabel.LITERAL_VALUE)
    ]


def test_cell_match_forced_to_literal():
    probs = np.stack([_row(**{str(AGG): 0.9, str(LITERAL): 0.02})] * 3)
    got = constrained_label_decode(
        [(0, 1)], probs[:1], [GazetteerMatch(0, 1, SOURCE_CELL)]
    )
    assert got[0].label is EntityLabel.LITERAL_VALUE
    assert got[0].score == pytest.approx(0.02)


def test_schema_tie_breaks_to_earliest_label():
    probs = np.full((1, len(LABELS)), 0.1)
    got = constrained_label_decode(
        [(0, 1)], probs, [GazetteerMatch(0, 1, SOURCE_SCHEMA)]
    )
    assert got[0].label is EntityLabel.SELECT_COLUMN


def test_nested_matches_both_surface():
    probs = np.stack([_row(**{str(NONE): 0.9})] * 3)
    got = constrained_label_decode(
        SPANS3,
        probs,
        [GazetteerMatch(0, 1, SOURCE_SCHEMA), GazetteerMatch(0, 2, SOURCE_CELL)],
    )
    assert {(m.start, m.end) for m in got} == {(0, 1), (0, 2)}
    labels = {(m.start, m.end): m.label for m in got}
    assert labels[(0, 2)] is EntityLabel.LITERAL_VALUE


def test_filter_off_ignores_matches():
    probs = np.stack(
        [
            _row(**{str(NONE): 0.9, str(WHERE): 0.05}),
            _row(**{str(LITERAL): 0.8}),
            _row(**{str(AGG): 0.9}),
        ]
    )
    got = constrained_label_decode(
        SPANS3, probs, [GazetteerMatch(0, 1, SOURCE_SCHEMA)], apply_filter=False
    )
    # pure greedy argmax: the (0, 2) span wins and blocks (1, 2)
    assert [(m.start, m.end, m.label) for m in got] == [
        (0, 2, EntityLabel.AGG_FUNCTION)
    ]


def test_unmatched_candidates_greedy_by_score():
    probs = np.stack(
        [
            _row(**{str(SELECT): 0.6}),
            _row(**{str(NONE): 0.9}),
            _row(**{str(WHERE): 0.7}),
        ]
    )
    got = constrained_label_decode(SPANS3, probs, [])
    assert [(m.start, m.end, m.label) for m in got] == [
        (0, 2, EntityLabel.WHERE_COLUMN)
    ]


@settings(max_examples=60)
@given(st.integers(0, 2**32 - 1))
def test_filter_contract_on_random_grids(seed):
    rng = np.random.default_rng(seed)
    spans = enumerate_spans(4, 3)
    probs = rng.random((len(spans), len(LABELS)))
    n_matches = int(rng.integers(0, 4))
    chosen = rng.choice(len(spans), size=n_matches, replace=False)
    matches = [
        GazetteerMatch(*spans[i], SOURCE_SCHEMA if rng.random() < 0.5 else SOURCE_CELL)
        for i in chosen
    ]
    got = constrained_label_decode(spans, probs, matches)

    matched_spans = {(m.start, m.end) for m in matches}
    by_span = {}
    for m in got:
        by_span.setdefault((m.start, m.end), []).append(m)
    for match in matches:
        (mention,) = by_span[(match.start, match.end)]
        if match.source == SOURCE_CELL:
            assert mention.label is EntityLabel.LITERAL_VALUE
        else:
            assert mention.label in (
                EntityLabel.SELECT_COLUMN,
                EntityLabel.WHERE_COLUMN,
                EntityLabel.GROUPBY_COLUMN,
                EntityLabel.ORDERBY_COLUMN,
            )
    for m in got:
        assert m.label is not EntityLabel.NONE
        if (m.start, m.end) not in matched_spans:
            # unmatched survivors overlap nothing else in the output
            others = [o for o in got if o is not m]
            assert all(
                m.end <= o.start or o.end <= m.start for o in others
            )
    assert got == sorted(got, key=lambda m: (m.start, m.end, LABEL_INDEX[m.label]))


# --------------------------------------------------------------------------
# examples and the model


def _examples(toy_table):
    g = Gazetteer.build(toy_table)
    return [
        NerExample(
            tokens=["show", "alice", "points"],
            gazetteer=g,
            gold_spans=[
                TypedSpan(1, 2, EntityLabel.LITERAL_VALUE, "alice"),
                TypedSpan(2, 3, EntityLabel.SELECT_COLUMN, "c2"),
            ],
        ),
        NerExample(
            tokens=["which", "team", "is", "red"],
            gazetteer=g,
            gold_spans=[
                TypedSpan(1, 2, EntityLabel.SELECT_COLUMN, "c3"),
                TypedSpan(3, 4, EntityLabel.LITERAL_VALUE, "red"),
            ],
        ),
    ]


def test_label_of(toy_table):
    ex = _examples(toy_table)[0]
    assert ex.label_of(1, 2) == LITERAL
    assert ex.label_of(0, 1) == NONE


def test_decode_is_deterministic(toy_table):
    g = Gazetteer.build(toy_table)
    a = NerModel(TINY).decode(["alice", "points"], g)
    b = NerModel(TINY).decode(["alice", "points"], g)
    assert a == b
    assert NerModel(TINY).decode([], g) == []


def test_decode_surfaces_gazetteer_matches(toy_table):
    g = Gazetteer.build(toy_table)
    got = NerModel(TINY).decode(["alice", "points"], g)
    labels = {(m.start, m.end): m.label for m in got}
    assert labels[(0, 1)] is EntityLabel.LITERAL_VALUE
    assert labels[(1, 2)] in (
        EntityLabel.SELECT_COLUMN,
        EntityLabel.WHERE_COLUMN,
        EntityLabel.GROUPBY_COLUMN,
        EntityLabel.ORDERBY_COLUMN,
    )


def test_training_reduces_loss(toy_table):
    model, curve = train_ner(_examples(toy_table), TINY, epochs=30, lr=0.05)
    assert curve[-1] < curve[0]
    assert len(curve) == 30


def test_empty_training_set_rejected():
    with pytest.raises(EmptyTrainingSet):
        NerModel(TINY).loss_and_grads([])


def test_gradients_match_finite_differences(toy_table):
    examples = _examples(toy_table)
    model = NerModel(TINY)
    _, analytic = model.loss_and_grads(examples)

    def fn(params):
        model.params = params
        return model.loss_and_grads(examples)[0]

    numeric = finite_difference_grads(fn, model.params)
    assert relative_grad_error(analytic, numeric) < 1e-4


def test_save_load_round_trip(tmp_path, toy_table):
    g = Gazetteer.build(toy_table)
    model = NerModel(TINY)
    path = str(tmp_path / "ner.npz")
    model.save(path)
    loaded = NerModel.load(path)
    assert loaded.config == model.config
    for key in model.params:
        np.testing.assert_array_equal(loaded.params[key], model.params[key])
    assert loaded.decode(["alice", "points"], g) == model.decode(
        ["alice", "points"], g
    )


def test_config_json_round_trip():
    assert NerConfig.from_json(TINY.to_json()) == TINY


# --------------------------------------------------------------------------
# span F1


def _mention(start, end, label):
    from tabsql.ner import PredictedMention

    return PredictedMention(start, end, label, 1.0)


def test_span_f1_exact_match():
    gold = [[TypedSpan(0, 1, EntityLabel.SELECT_COLUMN, "c1")]]
    pred = [[_mention(0, 1, EntityLabel.SELECT_COLUMN)]]
    assert span_f1(gold, pred)["f1"] == 1.0


def test_span_f1_counts():
    gold = [
        [
            TypedSpan(0, 1, EntityLabel.SELECT_COLUMN, "c1"),
            TypedSpan(2, 3, EntityLabel.LITERAL_VALUE, "x"),
        ]
    ]
    pred = [
        [
            _mention(0, 1, EntityLabel.SELECT_COLUMN),
            _mention(4, 5, EntityLabel.WHERE_COLUMN),
        ]
    ]
    got = span_f1(gold, pred)
    assert (got["tp"], got["fp"], got["fn"]) == (1, 1, 1)
    assert got["precision"] == 0.5 and got["recall"] == 0.5 and got["f1"] == 0.5


def test_span_f1_label_must_match():
    gold = [[TypedSpan(0, 1, EntityLabel.SELECT_COLUMN, "c1")]]
    pred = [[_mention(0, 1, EntityLabel.WHERE_COLUMN)]]
    assert span_f1(gold, pred)["f1"] == 0.0


def test_span_f1_empty_inputs():
    got = span_f1([[]], [[]])
    assert got["f1"] == 0.0 and got["tp"] == 0
