"""Shared fixtures: generated corpora, trained models, criterion reporting.

The expensive fixtures are session-scoped on purpose; the full corpus and
the ablation grid each build once and every test that needs them shares
the result.
"""
import pytest

from tabsql.dataset import TableData, load_dataset, load_tables
from tabsql.pipeline import PipelineConfig, Pipeline, prepare_records
from tabsql.synth import make_corpus

# --------------------------------------------------------------------------
# acceptance criterion bookkeeping
#
# Tests in test_acceptance.py carry @pytest.mark.criterion(n, "name") and
# report a measured detail string through the `criterion_note` fixture.
# The terminal summary prints one line per criterion.

_criterion_results: dict = {}


def pytest_configure(config):
    config.addinivalue_line(
        "markers",
        "criterion(num, name): marks a test as one acceptance criterion",
    )


@pytest.fixture
def criterion_note():
    def note(num: int, detail: str) -> None:
        _criterion_results.setdefault(num, {})["detail"] = detail

    return note


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    num = marker.args[0]
    entry = _criterion_results.setdefault(num, {})
    entry["name"] = marker.args[1] if len(marker.args) > 1 else ""
    if report.when == "setup" and report.skipped:
        entry["outcome"] = "SKIP"
    elif report.when == "call":
        entry["outcome"] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _criterion_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for num in sorted(_criterion_results):
        entry = _criterion_results[num]
        terminalreporter.write_line(
            f"criterion {num:>2}  {entry.get('name', ''):<24} "
            f"{entry.get('outcome', '?'):<4}  {entry.get('detail', '')}"
        )


# --------------------------------------------------------------------------
# corpora


@pytest.fixture(scope="session")
def corpus_dir(tmp_path_factory):
    """The full benchmark-sized corpus at the default seed."""
    out = tmp_path_factory.mktemp("corpus")
    make_corpus(out)
    return out


@pytest.fixture(scope="session")
def tables(corpus_dir):
    return load_tables(corpus_dir / "tables")


@pytest.fixture(scope="session")
def train_records(corpus_dir):
    return load_dataset(corpus_dir, "train")


@pytest.fixture(scope="session")
def dev_records(corpus_dir):
    return load_dataset(corpus_dir, "dev")


@pytest.fixture(scope="session")
def test_records(corpus_dir):
    return load_dataset(corpus_dir, "test")


@pytest.fixture(scope="session")
def prepared_train(train_records, tables):
    return prepare_records(train_records, tables)


@pytest.fixture(scope="session")
def prepared_dev(dev_records, tables):
    return prepare_records(dev_records, tables)


@pytest.fixture(scope="session")
def small_corpus(tmp_path_factory):
    """A few hundred records over nine tables; enough to train on."""
    out = tmp_path_factory.mktemp("small")
    make_corpus(out, seed=11, train_size=300, dev_size=80, test_size=60,
                n_tables=(5, 2, 2))
    return {
        "dir": out,
        "tables": load_tables(out / "tables"),
        "train": load_dataset(out, "train"),
        "dev": load_dataset(out, "dev"),
    }


@pytest.fixture(scope="session")
def small_pipeline(small_corpus):
    """A pipeline trained quickly on the small corpus. Not accurate, but
    real: every stage is fit with the production code path."""
    config = PipelineConfig(train_cap=150, ner_epochs=25, nel_epochs=30,
                            nsp_epochs=20)
    pipeline, report = Pipeline.train(config, small_corpus["train"],
                                      small_corpus["tables"])
    return pipeline


# --------------------------------------------------------------------------
# hand-built table with hand-checked contents


@pytest.fixture
def toy_table():
    return TableData(
        table_id="toy",
        table_name="toy table",
        column_ids=("c1", "c2", "c3"),
        column_display_names=("name", "points", "team"),
        column_types=("string", "number", "string"),
        rows=(
            ("alice", "10", "red"),
            ("bob", "7", "blue"),
            ("cara", None, "red"),
            ("dan", "10", "green"),
            ("erin", "3", None),
        ),
    )
