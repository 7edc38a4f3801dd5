"""Command-line behavior: exit codes, reports, config persistence across
stages, and the JSON emission channel."""

import json
import shutil
import subprocess

import pytest

from tabsql.cli import main
from tabsql.pipeline import PipelineConfig

FAST = [
    "--set", "train_cap=30",
    "--set", "ner_epochs=4", "--set", "ner_feat_dim=8192",
    "--set", "nel_epochs=5",
    "--set", "nsp_epochs=4", "--set", "nsp_feat_dim=16384",
]


@pytest.fixture(scope="module")
def corpus_args(small_corpus):
    return ["--data", str(small_corpus["dir"])]


@pytest.fixture(scope="module")
def model_dir(small_corpus, corpus_args, tmp_path_factory):
    """One model directory trained stage by stage through the CLI."""
    d = tmp_path_factory.mktemp("cli-model")
    base = corpus_args + ["--split", "train", "--model", str(d)]
    assert main(["induce-grammar"] + base) == 0
    assert main(["train-ner"] + base + FAST) == 0
    assert main(["train-nel"] + base) == 0
    assert main(["train-nsp"] + base) == 0
    return d


# --------------------------------------------------------------------------
# data inspection commands


def test_ingest_reports_counts(corpus_args, capsys, tmp_path):
    out = tmp_path / "ingest.json"
    code = main(["ingest"] + corpus_args + ["--split", "dev",
                                            "--json", str(out)])
    assert code == 0
    text = capsys.readouterr().out
    assert "split dev: 80 records" in text
    report = json.loads(out.read_text())
    assert report["records"] == 80
    assert report["round_trip_failures"] == []
    covered = report["in_subset"] + sum(report["out_of_subset"].values())
    assert covered + report["syntax_errors"] == 80


def test_ingest_json_to_stdout(corpus_args, capsys):
    assert main(["ingest"] + corpus_args + ["--split", "test",
                                            "--json", "-"]) == 0
    text = capsys.readouterr().out
    payload = text[text.index("{"):]
    assert json.loads(payload)["split"] == "test"


def test_ingest_missing_tables_dir(corpus_args, capsys, tmp_path):
    code = main(["ingest"] + corpus_args +
                ["--split", "dev", "--tables", str(tmp_path / "nope")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


def test_derive_annotations_report(corpus_args, capsys, tmp_path):
    out = tmp_path / "spans.json"
    code = main(["derive-annotations"] + corpus_args +
                ["--split", "dev", "--json", str(out)])
    assert code == 0
    assert "derived spans for" in capsys.readouterr().out
    report = json.loads(out.read_text())
    assert report["annotated"] <= report["records"] == 80
    assert report["spans_by_label"]
    assert len(report["rows"]) == report["annotated"]


# --------------------------------------------------------------------------
# stage training


def test_induce_grammar_is_reproducible(corpus_args, capsys, tmp_path):
    args = ["induce-grammar"] + corpus_args + ["--split", "train"]
    assert main(args + ["--model", str(tmp_path / "a")]) == 0
    assert main(args + ["--model", str(tmp_path / "b")]) == 0
    assert "induced" in capsys.readouterr().out
    assert (tmp_path / "a" / "grammar.txt").read_bytes() == \
        (tmp_path / "b" / "grammar.txt").read_bytes()


def test_stage_training_leaves_artifacts(model_dir):
    for name in ("config.cfg", "grammar.txt", "ner.npz", "nel.npz",
                 "nsp.npz"):
        assert (model_dir / name).is_file(), name


def test_stage_config_persists_across_stages(model_dir):
    # set during train-ner, visible after the later stages ran with no --set
    config = PipelineConfig.from_file(model_dir / "config.cfg")
    assert config.train_cap == 30
    assert config.ner_epochs == 4
    assert config.nsp_epochs == 4


def test_no_schema_flag_is_config_sugar(corpus_args, small_corpus,
                                        tmp_path):
    d = tmp_path / "m"
    code = main(["train-ner"] + corpus_args +
                ["--split", "train", "--model", str(d), "--no-schema"]
                + FAST)
    assert code == 0
    config = PipelineConfig.from_file(d / "config.cfg")
    assert config.use_schema is False
    assert config.use_cell is True


def test_train_nsp_requires_grammar(corpus_args, capsys, tmp_path):
    code = main(["train-nsp"] + corpus_args +
                ["--split", "train", "--model", str(tmp_path / "empty")])
    assert code == 2
    assert "induce-grammar" in capsys.readouterr().err


def test_bad_override_is_reported(corpus_args, capsys, tmp_path):
    code = main(["train-ner"] + corpus_args +
                ["--split", "train", "--model", str(tmp_path / "m"),
                 "--set", "bogus=1"])
    assert code == 2
    assert "bogus" in capsys.readouterr().err


# --------------------------------------------------------------------------
# inference commands


def test_predict_prints_one_line_per_record(model_dir, corpus_args, capsys,
                                            tmp_path):
    out = tmp_path / "pred.json"
    code = main(["predict"] + corpus_args +
                ["--split", "dev", "--model", str(model_dir),
                 "--cap", "5", "--json", str(out)])
    assert code == 0
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 5
    assert all("\t" in line for line in lines)
    payload = json.loads(out.read_text())
    assert len(payload["predictions"]) == 5
    assert all(set(p) == {"id", "sql", "log_prob", "mentions", "links",
                          "failure"} for p in payload["predictions"])


def test_predict_accepts_overrides(model_dir, corpus_args, capsys):
    code = main(["predict"] + corpus_args +
                ["--split", "dev", "--model", str(model_dir),
                 "--cap", "2", "--set", "beam_size=1"])
    assert code == 0
    capsys.readouterr()


def test_evaluate_reports_accuracy(model_dir, corpus_args, capsys, tmp_path):
    out = tmp_path / "eval.json"
    code = main(["evaluate"] + corpus_args +
                ["--split", "dev", "--model", str(model_dir),
                 "--cap", "10", "--json", str(out)])
    assert code == 0
    assert "records evaluated" in capsys.readouterr().out
    report = json.loads(out.read_text())
    assert report["n_records"] == 10
    assert report["n_exe"] >= report["n_lf"]


def test_evaluate_no_gazetteer_flag(model_dir, corpus_args, capsys):
    code = main(["evaluate"] + corpus_args +
                ["--split", "dev", "--model", str(model_dir),
                 "--cap", "5", "--no-gazetteer"])
    assert code == 0
    capsys.readouterr()


def test_evaluate_missing_model(corpus_args, capsys, tmp_path):
    code = main(["evaluate"] + corpus_args +
                ["--split", "dev", "--model", str(tmp_path / "void")])
    assert code == 2
    assert capsys.readouterr().err.startswith("error:")


# --------------------------------------------------------------------------
# data generation and wiring


def test_make_data_passes_seed_through(monkeypatch, capsys, tmp_path):
    calls = {}

    def fake_corpus(out, seed):
        calls["out"], calls["seed"] = out, seed
        return {"counts": {"train": 3}, "tables": {"train": ["t0"]}}

    monkeypatch.setattr("tabsql.cli.make_corpus", fake_corpus)
    code = main(["make-data", "--out", str(tmp_path / "corpus"),
                 "--seed", "21"])
    assert code == 0
    assert calls["seed"] == 21
    text = capsys.readouterr().out
    assert "train: 3 records" in text
    assert "tables: 1" in text


def test_unknown_command_exits_via_argparse():
    with pytest.raises(SystemExit):
        main(["frobnicate"])


def test_console_script_is_installed():
    exe = shutil.which("tabsql")
    assert exe, "tabsql entry point not on PATH"
    proc = subprocess.run([exe, "ingest", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "--data" in proc.stdout
