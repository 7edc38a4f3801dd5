"""Configuration handling, supervision derivation, end-to-end prediction,
persistence, and scoring."""

import json
from dataclasses import replace

import pytest

from tabsql.dataset import DatasetRecord, EntityLabel, TypedSpan
from tabsql.decoder import MODE_BASELINE, MODE_CTF, MODE_ORACLE, MODES
from tabsql.errors import EmptyTrainingSet, MissingFile
from tabsql.grammar import induce_grammar, oracle_actions, save_grammar
from tabsql.ner import Gazetteer
from tabsql.pipeline import (
    Pipeline,
    PipelineConfig,
    PreparedRecord,
    build_link_groups,
    build_ner_examples,
    build_nsp_examples,
    evaluate,
    exact_link_fraction,
    format_grid_report,
    gold_literals,
    gold_mentions,
    prepare_records,
    run_experiment_grid,
)
from tabsql.sql.ast import typed_tokens
from tabsql.sql.parse import parse_sql


def rec(question, sql, table_id="toy", aligns=(), rid="q-00000"):
    return DatasetRecord(
        record_id=rid,
        table_id=table_id,
        query_tokens=tuple(question.split()),
        gold_sql_tokens=tuple(typed_tokens(parse_sql(sql))),
        alignments=tuple(aligns),
        gold_answer=(),
    )


def or_record(rid="q-00001"):
    pairs = typed_tokens(parse_sql("select c1 from w where c2 > 5"))
    pairs += [("Keyword", "or"), ("Column", "c3"), ("Keyword", "="),
              ("Literal", "red")]
    return DatasetRecord(rid, "toy", ("x",), tuple(pairs), (), ())


# --------------------------------------------------------------------------
# configuration


def test_config_file_round_trip(tmp_path):
    cfg = PipelineConfig(mode=MODE_BASELINE, seed=3, train_cap=5,
                         ner_lr=0.125, use_cell=False)
    cfg.to_file(tmp_path / "run.cfg")
    assert PipelineConfig.from_file(tmp_path / "run.cfg") == cfg


def test_config_file_ignores_comments_and_blanks(tmp_path):
    (tmp_path / "run.cfg").write_text(
        "# a run\n\nseed = 12  # trailing note\nuse_schema = false\n")
    cfg = PipelineConfig.from_file(tmp_path / "run.cfg")
    assert cfg.seed == 12
    assert cfg.use_schema is False
    assert cfg.mode == PipelineConfig().mode


def test_config_file_missing():
    with pytest.raises(MissingFile):
        PipelineConfig.from_file("/no/such/run.cfg")


def test_config_file_rejects_bare_line(tmp_path):
    (tmp_path / "run.cfg").write_text("seed 12\n")
    with pytest.raises(ValueError):
        PipelineConfig.from_file(tmp_path / "run.cfg")


def test_overrides_coerce_to_field_types():
    cfg = PipelineConfig().with_overrides(
        ["train_cap=5", "ner_lr=0.5", "use_schema=false", "use_cell=1",
         "mode=baseline"])
    assert cfg.train_cap == 5 and isinstance(cfg.train_cap, int)
    assert cfg.ner_lr == 0.5
    assert cfg.use_schema is False
    assert cfg.use_cell is True
    assert cfg.mode == MODE_BASELINE


@pytest.mark.parametrize("item", ["bogus=1", "use_schema=maybe", "seed"])
def test_overrides_reject_bad_input(item):
    with pytest.raises(ValueError):
        PipelineConfig().with_overrides([item])


def test_unknown_mode_rejected():
    with pytest.raises(ValueError):
        PipelineConfig(mode="nope")


def test_submodel_configs_derive_from_one_seed():
    cfg = PipelineConfig(seed=7, use_schema=False, mode=MODE_BASELINE)
    assert cfg.ner_config().seed == 7
    assert cfg.ner_config().use_schema is False
    assert cfg.nel_config().seed == 8
    assert cfg.nsp_config().seed == 9
    assert cfg.nsp_config().mode == MODE_BASELINE


# --------------------------------------------------------------------------
# supervision derivation


def test_prepare_missing_table(toy_table):
    record = rec("show name", "select c1 from w", table_id="zzz")
    with pytest.raises(MissingFile):
        prepare_records([record], {"toy": toy_table})


def test_prepare_keeps_unusable_records_with_reasons(toy_table):
    good = rec("largest points", "select max ( c2 ) from w")
    broken = DatasetRecord("q-00002", "toy", ("x",),
                           (("Keyword", "select"), ("Column", "c1"),
                            ("Keyword", "from")), (), ())
    prepared = prepare_records([good, or_record(), broken],
                               {"toy": toy_table})
    assert prepared[0].tree is not None
    assert prepared[0].reason is None
    assert prepared[1].tree is None
    assert prepared[1].reason == "out_of_subset: or"
    assert prepared[2].tree is None
    assert prepared[2].reason.startswith("gold_parse_error:")


def test_prepare_derives_spans(toy_table):
    # sql tokens: select c1 from w where c3 = red
    record = rec("show name for red players",
                 "select c1 from w where c3 = 'red'",
                 aligns=(((1, 2), 1), ((3, 4), 7)))
    prepared = prepare_records([record], {"toy": toy_table})[0]
    assert prepared.issues == ()
    assert prepared.spans == (
        TypedSpan(1, 2, EntityLabel.SELECT_COLUMN, "c1"),
        TypedSpan(3, 4, EntityLabel.LITERAL_VALUE, "red"),
    )


def test_gold_mentions_keep_linkable_labels_only():
    spans = [
        TypedSpan(0, 1, EntityLabel.SELECT_COLUMN, "c1"),
        TypedSpan(1, 2, EntityLabel.AGG_FUNCTION, "max"),
        TypedSpan(2, 3, EntityLabel.NONE),
        TypedSpan(3, 4, EntityLabel.LITERAL_VALUE, "red"),
    ]
    mentions = gold_mentions(spans)
    assert [(m.label, m.target, m.score) for m in mentions] == [
        (EntityLabel.SELECT_COLUMN, "c1", 1.0),
        (EntityLabel.LITERAL_VALUE, "red", 1.0),
    ]


def test_gold_literals_outermost_first():
    tree = parse_sql("select c1 from w where c1 = 'q' and c2 = "
                     "( select max ( c2 ) from w where c3 = 'z' )")
    assert gold_literals(tree) == ["q", "z"]
    tree = parse_sql("select c1 from w where c2 > 5 and c3 in ( 'a' , 'b' )")
    assert gold_literals(tree) == ["5", "a", "b"]


def test_exact_link_fraction_counts_normalized_matches(toy_table):
    first = PreparedRecord(
        rec("show Name for red players", "select c1 from w"), toy_table,
        None,
        (TypedSpan(1, 2, EntityLabel.SELECT_COLUMN, "c1"),
         TypedSpan(3, 4, EntityLabel.LITERAL_VALUE, "red")),
        (),
    )
    second = PreparedRecord(
        rec("pts for alice", "select c2 from w"), toy_table,
        None,
        (TypedSpan(0, 1, EntityLabel.WHERE_COLUMN, "c2"),
         TypedSpan(1, 2, EntityLabel.AGG_FUNCTION, "max"),
         TypedSpan(2, 3, EntityLabel.LITERAL_VALUE, "alice")),
        (),
    )
    fraction, n_exact, n = exact_link_fraction([first, second])
    assert (n_exact, n) == (3, 4)
    assert fraction == pytest.approx(0.75)
    assert exact_link_fraction([]) == (0.0, 0, 0)


# --------------------------------------------------------------------------
# training-set builders


def test_build_ner_examples(toy_table):
    record = rec("largest points", "select max ( c2 ) from w",
                 aligns=(((0, 1), 1), ((1, 2), 3)))
    prepared = prepare_records([record], {"toy": toy_table})
    examples = build_ner_examples(
        prepared, lambda table: Gazetteer.build(table))
    assert len(examples) == 1
    assert examples[0].tokens == ["largest", "points"]
    assert examples[0].gold_spans == list(prepared[0].spans)
    assert isinstance(examples[0].gazetteer, Gazetteer)


def test_build_link_groups(toy_table):
    record = rec("largest pts of alice", "select max ( c2 ) from w",
                 aligns=(((0, 1), 1), ((1, 2), 3)))
    prepared = prepare_records([record], {"toy": toy_table})[0]
    with_literal = PreparedRecord(
        prepared.record, toy_table, prepared.tree,
        prepared.spans + (TypedSpan(3, 4, EntityLabel.LITERAL_VALUE,
                                    "alice"),),
        (),
    )
    groups = build_link_groups([with_literal])
    assert [g.kind for g in groups] == ["column", "literal"]
    assert groups[0].question == "largest pts of alice"
    assert groups[0].mention_surface == "pts"
    assert groups[0].gold_id == "c2"
    assert groups[1].mention_surface == "alice"
    assert groups[1].gold_id == "alice"
    assert any(c.candidate_id == "c2" for c in groups[0].candidates)


def test_build_nsp_examples(toy_table):
    record = rec("largest points", "select max ( c2 ) from w")
    prepared = prepare_records([record], {"toy": toy_table})
    grammar = induce_grammar([prepared[0].tree])
    examples = build_nsp_examples(prepared, grammar, MODE_BASELINE)
    assert len(examples) == 1
    assert examples[0].actions == oracle_actions(prepared[0].tree, grammar)


# --------------------------------------------------------------------------
# trained pipeline behavior


def test_predict_is_deterministic_and_traceable(small_pipeline, small_corpus):
    record = small_corpus["dev"][0]
    table = small_corpus["tables"][record.table_id]
    first = small_pipeline.predict(record.query_tokens, table,
                                   record_id=record.record_id)
    second = small_pipeline.predict(record.query_tokens, table,
                                    record_id=record.record_id)
    assert first.record_id == record.record_id
    assert first.sql == second.sql
    assert first.log_prob == second.log_prob
    if first.sql is not None:
        parse_sql(first.sql)
        assert first.failure is None
    for row in first.mentions:
        assert set(row) == {"span", "label", "score"}
    for row in first.links:
        assert set(row) == {"span", "surface", "label", "target",
                            "probability"}
    obj = first.to_obj()
    assert set(obj) == {"id", "sql", "log_prob", "mentions", "links",
                        "failure"}


def test_save_load_round_trip(small_pipeline, small_corpus, tmp_path):
    small_pipeline.save(tmp_path / "model")
    loaded = Pipeline.load(tmp_path / "model")
    assert loaded.config == small_pipeline.config
    save_grammar(loaded.grammar, tmp_path / "a.txt")
    save_grammar(small_pipeline.grammar, tmp_path / "b.txt")
    assert (tmp_path / "a.txt").read_bytes() == (tmp_path / "b.txt").read_bytes()
    for record in small_corpus["dev"][:5]:
        table = small_corpus["tables"][record.table_id]
        before = small_pipeline.predict(record.query_tokens, table)
        after = loaded.predict(record.query_tokens, table)
        assert before.sql == after.sql
        if before.log_prob is not None:
            assert before.log_prob == pytest.approx(after.log_prob)


def test_load_requires_every_artifact(tmp_path):
    with pytest.raises(MissingFile):
        Pipeline.load(tmp_path)


def test_train_rejects_fully_unusable_data(toy_table):
    with pytest.raises(EmptyTrainingSet):
        Pipeline.train(PipelineConfig(),
                       [or_record("a-1"), or_record("a-2")],
                       {"toy": toy_table})


def test_train_report_shape(small_corpus):
    config = PipelineConfig(train_cap=8, ner_epochs=2, nel_epochs=2,
                            nsp_epochs=2, ner_feat_dim=1 << 12,
                            nsp_feat_dim=1 << 12)
    seen = []
    pipeline, report = Pipeline.train(config, small_corpus["train"][:12],
                                      small_corpus["tables"], log=seen.append)
    assert report.n_train <= 8
    assert report.ner_curve and report.nel_curve and report.nsp_curve
    assert "trained on" in report.summary()
    assert any("inducing grammar" in line for line in seen)
    assert pipeline.grammar.rules


# --------------------------------------------------------------------------
# evaluation


@pytest.fixture(scope="module")
def prepared_small_dev(small_corpus):
    return prepare_records(small_corpus["dev"], small_corpus["tables"])


def test_evaluate_report_shape(small_pipeline, prepared_small_dev):
    report = evaluate(small_pipeline, prepared_small_dev, cap=40)
    assert report.n_records == 40
    assert len(report.rows) == 40
    assert report.n_exe >= report.n_lf
    assert report.nested_lf <= report.nested_n <= report.n_records
    assert report.out_of_subset_gold == sum(
        1 for p in prepared_small_dev[:40] if p.tree is None)
    assert 0.0 <= report.exact_link_fraction <= 1.0
    for row in report.rows:
        assert set(row) == {"id", "question", "gold_sql", "pred_sql", "lf",
                            "exe", "failure", "mentions", "links", "log_prob"}
    obj = report.to_obj()
    assert obj["acc_lf"] == round(report.acc_lf, 4)
    assert len(obj["rows"]) == 40
    assert "records evaluated" in report.summary()


def test_evaluate_cap_limits_scoring(small_pipeline, prepared_small_dev):
    report = evaluate(small_pipeline, prepared_small_dev, cap=5)
    assert report.n_records == 5


def test_evaluate_oracle_mode_swaps_in_gold_mentions(small_pipeline,
                                                     prepared_small_dev):
    oracle = Pipeline(replace(small_pipeline.config, mode=MODE_ORACLE),
                      small_pipeline.grammar, small_pipeline.ner,
                      small_pipeline.nel, small_pipeline.nsp)
    report = evaluate(oracle, prepared_small_dev, cap=15)
    in_subset = [row for p, row in zip(prepared_small_dev[:15], report.rows)
                 if p.tree is not None and p.spans]
    assert in_subset
    for row in in_subset:
        assert all(link["span"] is None for link in row["links"])
        assert all(link["probability"] == 1.0 for link in row["links"])


# --------------------------------------------------------------------------
# ablation grid


def test_experiment_grid_report_shape(small_corpus, tmp_path):
    config = PipelineConfig(train_cap=40, eval_cap=25, ner_epochs=6,
                            nel_epochs=8, nsp_epochs=5,
                            ner_feat_dim=1 << 13, nsp_feat_dim=1 << 14)
    out = tmp_path / "grid.json"
    report = run_experiment_grid(small_corpus["train"], small_corpus["dev"],
                                 small_corpus["tables"], config=config,
                                 out_path=out)
    assert set(report["modes"]) == set(MODES)
    for row in report["modes"].values():
        assert 0.0 <= row["acc_lf"] <= row["acc_exe"] <= 1.0
    assert set(report["ner_f1"]) == {"full", "no_gazetteer_filter",
                                     "no_schema", "no_cell"}
    assert all(0.0 <= f1 <= 1.0 for f1 in report["ner_f1"].values())
    assert set(report["checks"]) == {"oracle_lf_not_below_predicted",
                                     "filter_off_f1_not_higher"}
    assert report["train_records"] == 40
    assert report["eval_records"] == 25
    assert json.loads(out.read_text())["seed"] == report["seed"]
    text = format_grid_report(report)
    assert MODE_CTF in text
    assert "check oracle_lf_not_below_predicted" in text
