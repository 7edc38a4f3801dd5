"""Record and table loading: round trips and strict validation."""

import json

import pytest

from tabsql.dataset import (
    COLUMN_LABELS,
    LABEL_INDEX,
    LABELS,
    DatasetRecord,
    EntityLabel,
    TableData,
    TypedSpan,
    gazetteer_surfaces,
    load_dataset,
    load_table,
    load_tables,
    normalized_entry_counts,
    write_split,
    write_table,
)
from tabsql.errors import (
    IndexOutOfRange,
    MissingFile,
    RaggedRow,
    SchemaViolation,
    TypeCoercionFailure,
    UnknownColumn,
)


def _record(**overrides) -> DatasetRecord:
    base = dict(
        record_id="r1",
        table_id="t1",
        query_tokens=("how", "many", "rows"),
        gold_sql_tokens=(
            ("Keyword", "select"),
            ("Keyword", "count"),
            ("Keyword", "("),
            ("Keyword", "*"),
            ("Keyword", ")"),
            ("Keyword", "from"),
            ("Keyword", "w"),
        ),
        alignments=(((0, 2), 1),),
        gold_answer=("3",),
    )
    base.update(overrides)
    return DatasetRecord(**base)


def _record_obj(**overrides) -> dict:
    obj = {
        "id": "r1",
        "tbl": "t1",
        "question": ["how", "many"],
        "sql": [["Keyword", "select"], ["Column", "c1"], ["Keyword", "from"], ["Keyword", "w"]],
        "align": [[[0, 1], 1]],
        "answer": ["x"],
    }
    obj.update(overrides)
    return obj


def _write_lines(path, objs):
    with open(path, "w", encoding="utf-8") as fh:
        for o in objs:
            fh.write(json.dumps(o) + "\n")


# --------------------------------------------------------------------------
# labels and spans


def test_label_order_is_fixed():
    assert [l.value for l in LABELS] == [
        "SELECT_COLUMN",
        "WHERE_COLUMN",
        "GROUPBY_COLUMN",
        "ORDERBY_COLUMN",
        "AGG_FUNCTION",
        "LITERAL_VALUE",
        "NONE",
    ]
    assert LABEL_INDEX[EntityLabel.NONE] == 6
    assert EntityLabel.AGG_FUNCTION not in COLUMN_LABELS
    assert len(COLUMN_LABELS) == 4


def test_typed_span_length():
    s = TypedSpan(2, 5, EntityLabel.LITERAL_VALUE, "red")
    assert s.length == 3


@pytest.mark.parametrize("start,end", [(-1, 2), (3, 3), (4, 2)])
def test_typed_span_rejects_bad_bounds(start, end):
    with pytest.raises(ValueError):
        TypedSpan(start, end, EntityLabel.NONE)


def test_none_span_carries_no_target():
    with pytest.raises(ValueError):
        TypedSpan(0, 1, EntityLabel.NONE, "c1")


# --------------------------------------------------------------------------
# record round trip and rejection


def test_split_round_trip(tmp_path):
    recs = [_record(), _record(record_id="r2", gold_answer=())]
    path = tmp_path / "train.jsonl"
    write_split(path, recs)
    assert load_dataset(path, "train") == recs
    # a directory plus split name resolves to the same file
    assert load_dataset(tmp_path, "train") == recs


def test_blank_lines_skipped(tmp_path):
    path = tmp_path / "dev.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_record_obj()) + "\n\n\n")
    assert len(load_dataset(path, "dev")) == 1


def test_missing_split_file(tmp_path):
    with pytest.raises(MissingFile):
        load_dataset(tmp_path, "test")


def test_invalid_json_names_line(tmp_path):
    path = tmp_path / "train.jsonl"
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(json.dumps(_record_obj()) + "\n")
        fh.write("{oops\n")
    with pytest.raises(SchemaViolation) as excinfo:
        load_dataset(path, "train")
    assert excinfo.value.line_no == 2


@pytest.mark.parametrize(
    "mutate,field",
    [
        (lambda o: o.pop("answer"), "answer"),
        (lambda o: o.update(id=""), "id"),
        (lambda o: o.update(question=[]), "question"),
        (lambda o: o.update(sql=[["Nonsense", "x"]]), "sql[0]"),
        (lambda o: o.update(sql=[["Keyword", ""]]), "sql[0]"),
        (lambda o: o.update(align=[[0, 1]]), "align[0]"),
        (lambda o: o.update(align=[[[True, 1], 0]]), "align[0]"),
        (lambda o: o.update(answer=[7]), "answer"),
    ],
)
def test_malformed_records_rejected(tmp_path, mutate, field):
    obj = _record_obj()
    mutate(obj)
    path = tmp_path / "train.jsonl"
    _write_lines(path, [obj])
    with pytest.raises(SchemaViolation) as excinfo:
        load_dataset(path, "train")
    assert excinfo.value.field == field


@pytest.mark.parametrize(
    "align",
    [
        [[[0, 3], 0]],  # end beyond the two query tokens
        [[[1, 1], 0]],  # empty range
        [[[0, 1], 9]],  # sql index out of range
    ],
)
def test_alignment_bounds_checked(tmp_path, align):
    path = tmp_path / "train.jsonl"
    _write_lines(path, [_record_obj(align=align)])
    with pytest.raises(IndexOutOfRange):
        load_dataset(path, "train")


# --------------------------------------------------------------------------
# tables


def _toy_obj():
    return {
        "name": "toy",
        "columns": [
            {"id": "c1", "display": "name", "type": "string"},
            {"id": "c2", "display": "points", "type": "number"},
        ],
        "rows": [["alice", "10"], ["bob", None]],
    }


def test_table_json_round_trip(tmp_path, toy_table):
    path = tmp_path / "toy.json"
    write_table(path, toy_table)
    assert load_table(path) == toy_table


def test_table_id_comes_from_stem(tmp_path):
    path = tmp_path / "zebra.json"
    path.write_text(json.dumps(_toy_obj()))
    assert load_table(path).table_id == "zebra"


def test_numeric_cells_canonicalized(tmp_path):
    obj = _toy_obj()
    obj["rows"] = [["alice", 10], ["bob", 2.50]]
    path = tmp_path / "t.json"
    path.write_text(json.dumps(obj))
    t = load_table(path)
    assert t.rows == (("alice", "10"), ("bob", "2.5"))
    assert t.typed_rows == (("alice", 10.0), ("bob", 2.5))


def test_empty_string_cell_becomes_null(tmp_path):
    obj = _toy_obj()
    obj["rows"] = [["", "1"]]
    path = tmp_path / "t.json"
    path.write_text(json.dumps(obj))
    assert load_table(path).rows == ((None, "1"),)


@pytest.mark.parametrize(
    "rows,err",
    [
        ([["alice"]], RaggedRow),
        ([["alice", "ten"]], TypeCoercionFailure),
        ([["alice", True]], TypeCoercionFailure),
    ],
)
def test_bad_rows_rejected(tmp_path, rows, err):
    obj = _toy_obj()
    obj["rows"] = rows
    path = tmp_path / "t.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(err):
        load_table(path)


def test_duplicate_column_ids_rejected(tmp_path):
    obj = _toy_obj()
    obj["columns"][1]["id"] = "c1"
    path = tmp_path / "t.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(SchemaViolation):
        load_table(path)


def test_unknown_column_type_rejected(tmp_path):
    obj = _toy_obj()
    obj["columns"][0]["type"] = "money"
    path = tmp_path / "t.json"
    path.write_text(json.dumps(obj))
    with pytest.raises(SchemaViolation):
        load_table(path)


def test_unsupported_table_suffix(tmp_path):
    path = tmp_path / "t.txt"
    path.write_text("hi")
    with pytest.raises(SchemaViolation):
        load_table(path)


# --------------------------------------------------------------------------
# CSV path


def _write_csv_table(tmp_path, csv_text: str, columns):
    csv_path = tmp_path / "t.csv"
    csv_path.write_text(csv_text)
    sidecar = tmp_path / "t.types.json"
    sidecar.write_text(json.dumps({"name": "t", "columns": columns}))
    return csv_path


def test_csv_with_sidecar(tmp_path):
    path = _write_csv_table(
        tmp_path,
        "name,points\nalice,10\nbob,\n",
        [{"id": "c1", "type": "string"}, {"id": "c2", "type": "number"}],
    )
    t = load_table(path)
    assert t.column_display_names == ("name", "points")
    assert t.rows == (("alice", "10"), ("bob", None))
    assert t.type_of("c2") == "number"


def test_csv_without_sidecar(tmp_path):
    path = tmp_path / "t.csv"
    path.write_text("a\n1\n")
    with pytest.raises(MissingFile):
        load_table(path)


def test_csv_sidecar_count_mismatch(tmp_path):
    path = _write_csv_table(tmp_path, "a,b\n1,2\n", [{"id": "c1", "type": "string"}])
    with pytest.raises(SchemaViolation):
        load_table(path)


def test_empty_csv_rejected(tmp_path):
    path = _write_csv_table(tmp_path, "", [])
    with pytest.raises(SchemaViolation):
        load_table(path)


def test_load_tables_directory(tmp_path, toy_table):
    write_table(tmp_path / "toy.json", toy_table)
    _write_csv_table(tmp_path, "a\nx\n", [{"id": "c1", "type": "string"}])
    tables = load_tables(tmp_path)
    assert set(tables) == {"toy", "t"}
    with pytest.raises(MissingFile):
        load_tables(tmp_path / "absent")


# --------------------------------------------------------------------------
# table accessors


def test_column_lookup(toy_table):
    assert toy_table.col_index("c2") == 1
    assert toy_table.display_of("c2") == "points"
    assert toy_table.type_of("c1") == "string"
    with pytest.raises(UnknownColumn):
        toy_table.col_index("c9")


def test_distinct_cells_first_appearance(toy_table):
    cells = toy_table.distinct_cells()
    assert cells[:4] == ["alice", "10", "red", "bob"]
    assert len(cells) == len(set(cells))
    assert None not in cells


def test_column_cells_skip_nulls(toy_table):
    assert toy_table.column_cells("c2") == ["10", "7", "10", "3"]


def test_gazetteer_surfaces(toy_table):
    schema, cells = gazetteer_surfaces(toy_table)
    assert schema == ["name", "points", "team"]
    assert set(cells) == set(toy_table.distinct_cells())


def test_normalized_entry_counts():
    t = TableData(
        table_id="t",
        table_name="t",
        column_ids=("c1", "c2"),
        column_display_names=("Team Name", "team  name"),
        column_types=("string", "string"),
        rows=(),
    )
    counts = normalized_entry_counts(t)
    assert counts["team name"] == 2
