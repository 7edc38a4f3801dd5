"""Candidate generation and the linking scorer."""

import numpy as np
import pytest

from tabsql.dataset import EntityLabel
from tabsql.errors import EmptyTrainingSet
from tabsql.linker import (
    FEATURES,
    KIND_COLUMN,
    KIND_LITERAL,
    LinkCandidate,
    LinkGroup,
    LinkerConfig,
    LinkerModel,
    assemble_input,
    featurize,
    generate_candidates,
    group_features,
    split_trainable,
    train_nel,
)
from tabsql.optim import finite_difference_grads, relative_grad_error


def _group(gold="a", candidates=None, kind=KIND_LITERAL):
    if candidates is None:
        candidates = (
            LinkCandidate("a", kind, "alice", "string"),
            LinkCandidate("b", kind, "bob", "string"),
        )
    return LinkGroup(
        question="who is alice",
        mention_surface="alice",
        kind=kind,
        candidates=tuple(candidates),
        gold_id=gold,
    )


# --------------------------------------------------------------------------
# candidate generation


def test_column_candidates_cover_all_columns(toy_table):
    got = generate_candidates(
        EntityLabel.WHERE_COLUMN, toy_table, "points of alice"
    )
    assert [c.candidate_id for c in got] == ["c1", "c2", "c3"]
    assert all(c.kind == KIND_COLUMN for c in got)
    assert [c.surface for c in got] == ["name", "points", "team"]
    assert [c.meta_type for c in got] == ["string", "number", "string"]


def test_column_representative_cell_tracks_question(toy_table):
    got = generate_candidates(EntityLabel.SELECT_COLUMN, toy_table, "alice")
    by_id = {c.candidate_id: c for c in got}
    assert by_id["c1"].meta_value == "alice"


def test_literal_candidates_are_distinct_cells(toy_table):
    got = generate_candidates(EntityLabel.LITERAL_VALUE, toy_table, "anything")
    ids = [c.candidate_id for c in got]
    assert len(ids) == len(set(ids))
    assert set(ids) == set(toy_table.distinct_cells())
    assert all(c.kind == KIND_LITERAL and c.surface == c.candidate_id for c in got)


def test_literal_candidates_keep_column_type(toy_table):
    got = generate_candidates(EntityLabel.LITERAL_VALUE, toy_table, "q")
    by_id = {c.candidate_id: c for c in got}
    assert by_id["10"].meta_type == "number"
    assert by_id["red"].meta_type == "string"


def test_agg_label_takes_no_candidates(toy_table):
    with pytest.raises(ValueError):
        generate_candidates(EntityLabel.AGG_FUNCTION, toy_table, "q")


def test_assemble_input_segments(toy_table):
    col = generate_candidates(EntityLabel.SELECT_COLUMN, toy_table, "alice")[0]
    lit = generate_candidates(EntityLabel.LITERAL_VALUE, toy_table, "alice")[0]
    assert assemble_input("q", "m", col) == ("q", "m", "name", "string", "alice")
    assert assemble_input("q", "m", lit) == ("q", "m", lit.surface)


# --------------------------------------------------------------------------
# features


def test_exact_match_feature():
    cand = LinkCandidate("x", KIND_LITERAL, "Red Bull", "string")
    vec = featurize("red  bull", cand)
    assert vec[FEATURES.index("exact")] == 1.0
    vec2 = featurize("red", cand)
    assert vec2[FEATURES.index("exact")] == 0.0


def test_type_and_kind_indicators():
    cand = LinkCandidate("c1", KIND_COLUMN, "points", "number", "10")
    vec = featurize("points", cand)
    assert vec[FEATURES.index("type_number")] == 1.0
    assert vec[FEATURES.index("type_string")] == 0.0
    assert vec[FEATURES.index("kind_column")] == 1.0
    assert vec[FEATURES.index("bias")] == 1.0


def test_meta_fuzzy_only_with_meta_value():
    with_meta = LinkCandidate("c1", KIND_COLUMN, "points", "number", "alice")
    without = LinkCandidate("x", KIND_LITERAL, "points", "number")
    assert featurize("alice", with_meta)[FEATURES.index("meta_fuzzy")] == 1.0
    assert featurize("alice", without)[FEATURES.index("meta_fuzzy")] == 0.0


def test_group_features_shape():
    g = _group()
    assert group_features(g).shape == (2, len(FEATURES))


# --------------------------------------------------------------------------
# scoring and linking


def test_link_prefers_matching_surface():
    model = LinkerModel()
    model.params["w"] = np.zeros(len(FEATURES))
    model.params["w"][FEATURES.index("exact")] = 1.0
    got = model.link(_group())
    assert got.candidate_id == "a"
    assert got.kind == KIND_LITERAL


def test_tie_breaks_to_smaller_id():
    model = LinkerModel()
    model.params["w"] = np.zeros(len(FEATURES))  # every score is 0.0
    cands = (
        LinkCandidate("zeta", KIND_LITERAL, "x", "string"),
        LinkCandidate("beta", KIND_LITERAL, "y", "string"),
    )
    assert model.link(_group(gold="zeta", candidates=cands)).candidate_id == "beta"


def test_link_with_probability_consistent():
    model = LinkerModel()
    g = _group()
    result, prob = model.link_with_probability(g)
    assert result == model.link(g)
    probs = model.link_probabilities(g)
    assert prob == pytest.approx(float(probs.max()))
    assert probs.sum() == pytest.approx(1.0)


# --------------------------------------------------------------------------
# training


def test_split_trainable_reasons():
    good = _group()
    missing = _group(gold="nope")
    single = _group(candidates=(LinkCandidate("a", KIND_LITERAL, "x", "string"),))
    kept, skipped = split_trainable([good, missing, single])
    assert kept == [good]
    assert skipped == {"gold_missing": 1, "singleton": 1}


def test_train_reduces_loss_and_learns():
    groups = [
        _group(),
        _group(gold="b", candidates=(
            LinkCandidate("a", KIND_LITERAL, "alice", "string"),
            LinkCandidate("b", KIND_LITERAL, "bob", "string"),
        )),
    ]
    # second group repeats with a bob mention so the features separate
    groups[1] = LinkGroup(
        question="who is bob",
        mention_surface="bob",
        kind=KIND_LITERAL,
        candidates=groups[1].candidates,
        gold_id="b",
    )
    model, curve, skipped = train_nel(groups, epochs=60, lr=0.2)
    assert curve[-1] < curve[0]
    assert skipped == {"gold_missing": 0, "singleton": 0}
    assert model.link(groups[0]).candidate_id == "a"
    assert model.link(groups[1]).candidate_id == "b"


def test_train_requires_usable_groups():
    with pytest.raises(EmptyTrainingSet):
        train_nel([_group(gold="nope")])
    with pytest.raises(EmptyTrainingSet):
        LinkerModel().loss_and_grads([])


def test_precomputed_features_match_recomputation():
    groups = [_group()]
    model = LinkerModel()
    direct = model.loss_and_grads(groups)
    cached = model.loss_and_grads(groups, [group_features(groups[0])])
    assert direct[0] == cached[0]
    np.testing.assert_array_equal(direct[1]["w"], cached[1]["w"])


def test_gradients_match_finite_differences():
    groups = [
        _group(),
        _group(gold="b"),
    ]
    model = LinkerModel()
    _, analytic = model.loss_and_grads(groups)

    def fn(params):
        model.params = params
        return model.loss_and_grads(groups)[0]

    numeric = finite_difference_grads(fn, model.params)
    assert relative_grad_error(analytic, numeric) < 1e-4


def test_save_load_round_trip(tmp_path):
    model = LinkerModel(LinkerConfig(seed=7))
    path = str(tmp_path / "nel.npz")
    model.save(path)
    loaded = LinkerModel.load(path)
    assert loaded.config == model.config
    np.testing.assert_array_equal(loaded.params["w"], model.params["w"])
    assert loaded.link(_group()) == model.link(_group())
