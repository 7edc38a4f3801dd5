"""Dataset records, table data, and strict loaders.

Records live in JSON-lines files (one split per file) with fields::

    {"id": str, "tbl": str, "question": [str, ...],
     "sql": [[kind, text], ...],                  # kind in Keyword|Column|Literal
     "align": [[[start, end], sql_index], ...],   # [start, end) query token span
     "answer": [str, ...]}

Tables are either a single JSON object ({"name", "columns", "rows"}) or a
CSV file whose header carries display names, with a ``<stem>.types.json``
sidecar declaring column ids and types. Malformed input raises; nothing is
skipped silently.
"""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from pathlib import Path
from typing import Optional, Sequence, Union

from .errors import (
    IndexOutOfRange,
    MissingFile,
    RaggedRow,
    SchemaViolation,
    TypeCoercionFailure,
    UnknownColumn,
)
from .sql.ast import TOKEN_KINDS
from .text import canon_number, is_number_string, normalize_surface

COLUMN_TYPES = ("number", "string", "date")


class EntityLabel(Enum):
    """Span labels; enum order is the tie-break order for argmax decisions."""

    SELECT_COLUMN = "SELECT_COLUMN"
    WHERE_COLUMN = "WHERE_COLUMN"
    GROUPBY_COLUMN = "GROUPBY_COLUMN"
    ORDERBY_COLUMN = "ORDERBY_COLUMN"
    AGG_FUNCTION = "AGG_FUNCTION"
    LITERAL_VALUE = "LITERAL_VALUE"
    NONE = "NONE"


LABELS = tuple(EntityLabel)
LABEL_INDEX = {label: i for i, label in enumerate(LABELS)}
COLUMN_LABELS = (
    EntityLabel.SELECT_COLUMN,
    EntityLabel.WHERE_COLUMN,
    EntityLabel.GROUPBY_COLUMN,
    EntityLabel.ORDERBY_COLUMN,
)


@dataclass(frozen=True)
class TypedSpan:
    """A labeled query token span [start, end); linkable spans carry the
    canonical target (a column id, cell string, or aggregation name)."""

    start: int
    end: int
    label: EntityLabel
    link_target: Optional[str] = None

    def __post_init__(self):
        if not (0 <= self.start < self.end):
            raise ValueError(f"bad span bounds [{self.start}, {self.end})")
        if self.label is EntityLabel.NONE and self.link_target is not None:
            raise ValueError("NONE spans cannot carry a link target")

    @property
    def length(self) -> int:
        return self.end - self.start


@dataclass(frozen=True)
class DatasetRecord:
    record_id: str
    table_id: str
    query_tokens: tuple[str, ...]
    gold_sql_tokens: tuple[tuple[str, str], ...]
    alignments: tuple[tuple[tuple[int, int], int], ...]
    gold_answer: tuple[str, ...]

    @property
    def query_text(self) -> str:
        return " ".join(self.query_tokens)


@dataclass(frozen=True)
class TableData:
    table_id: str
    table_name: str
    column_ids: tuple[str, ...]
    column_display_names: tuple[str, ...]
    column_types: tuple[str, ...]
    rows: tuple[tuple[Optional[str], ...], ...]

    def col_index(self, column_id: str) -> int:
        try:
            return self.column_ids.index(column_id)
        except ValueError:
            raise UnknownColumn(column_id) from None

    def display_of(self, column_id: str) -> str:
        return self.column_display_names[self.col_index(column_id)]

    def type_of(self, column_id: str) -> str:
        return self.column_types[self.col_index(column_id)]

    @cached_property
    def typed_rows(self) -> tuple[tuple, ...]:
        """Rows with number cells parsed to float; nulls stay None."""
        out = []
        numeric = [t == "number" for t in self.column_types]
        for row in self.rows:
            out.append(
                tuple(
                    float(c) if (c is not None and numeric[i]) else c
                    for i, c in enumerate(row)
                )
            )
        return tuple(out)

    def distinct_cells(self) -> list[str]:
        """Distinct non-null raw cell strings in first-appearance order."""
        seen = dict()
        for row in self.rows:
            for c in row:
                if c is not None and c not in seen:
                    seen[c] = None
        return list(seen)

    def column_cells(self, column_id: str) -> list[str]:
        ci = self.col_index(column_id)
        return [row[ci] for row in self.rows if row[ci] is not None]


# --------------------------------------------------------------------------
# record loading


def _require(cond: bool, line_no: int, field: str, message: str):
    if not cond:
        raise SchemaViolation(line_no, field, message)


def _record_from_obj(obj, line_no: int) -> DatasetRecord:
    _require(isinstance(obj, dict), line_no, "<record>", "not a JSON object")
    for key in ("id", "tbl", "question", "sql", "align", "answer"):
        _require(key in obj, line_no, key, "missing field")
    _require(isinstance(obj["id"], str) and obj["id"], line_no, "id", "must be a non-empty string")
    _require(isinstance(obj["tbl"], str) and obj["tbl"], line_no, "tbl", "must be a non-empty string")

    q = obj["question"]
    _require(isinstance(q, list) and q and all(isinstance(t, str) for t in q),
             line_no, "question", "must be a non-empty array of strings")

    sql = obj["sql"]
    _require(isinstance(sql, list) and sql, line_no, "sql", "must be a non-empty array")
    sql_tokens = []
    for k, pair in enumerate(sql):
        _require(isinstance(pair, (list, tuple)) and len(pair) == 2,
                 line_no, f"sql[{k}]", "must be a [kind, text] pair")
        kind, text = pair
        _require(kind in TOKEN_KINDS, line_no, f"sql[{k}]", f"unknown kind {kind!r}")
        _require(isinstance(text, str) and text != "", line_no, f"sql[{k}]", "empty token text")
        sql_tokens.append((kind, text))

    align = obj["align"]
    _require(isinstance(align, list), line_no, "align", "must be an array")
    alignments = []
    for k, entry in enumerate(align):
        field = f"align[{k}]"
        _require(isinstance(entry, (list, tuple)) and len(entry) == 2, line_no, field,
                 "must be [[start, end], sql_index]")
        rng, j = entry
        _require(isinstance(rng, (list, tuple)) and len(rng) == 2, line_no, field,
                 "range must be [start, end]")
        s, e = rng
        _require(isinstance(s, int) and isinstance(e, int) and isinstance(j, int)
                 and not any(isinstance(v, bool) for v in (s, e, j)),
                 line_no, field, "indices must be integers")
        if not (0 <= s < e <= len(q)):
            raise IndexOutOfRange(line_no, field,
                                  f"token range [{s}, {e}) outside query of {len(q)} tokens")
        if not (0 <= j < len(sql_tokens)):
            raise IndexOutOfRange(line_no, field,
                                  f"sql index {j} outside {len(sql_tokens)} tokens")
        alignments.append(((s, e), j))

    ans = obj["answer"]
    _require(isinstance(ans, list) and all(isinstance(a, str) for a in ans),
             line_no, "answer", "must be an array of strings")

    return DatasetRecord(
        record_id=obj["id"],
        table_id=obj["tbl"],
        query_tokens=tuple(q),
        gold_sql_tokens=tuple(sql_tokens),
        alignments=tuple(alignments),
        gold_answer=tuple(ans),
    )


def load_dataset(path: Union[str, Path], split: str) -> list[DatasetRecord]:
    """Load one split. `path` is the split file or a directory holding
    ``<split>.jsonl``. Rejects malformed lines with position information."""
    p = Path(path)
    if p.is_dir():
        p = p / f"{split}.jsonl"
    if not p.is_file():
        raise MissingFile(p)
    records = []
    with open(p, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise SchemaViolation(line_no, "<json>", f"invalid JSON: {exc}") from None
            records.append(_record_from_obj(obj, line_no))
    return records


# --------------------------------------------------------------------------
# table loading


def _norm_cell(c, row_index: int, cid: str, col_type: str) -> Optional[str]:
    if c is None:
        return None
    if isinstance(c, bool):
        raise TypeCoercionFailure(row_index, cid, str(c))
    if isinstance(c, (int, float)):
        c = canon_number(c)
    if not isinstance(c, str):
        raise TypeCoercionFailure(row_index, cid, repr(c))
    if c == "":
        return None
    if col_type == "number" and not is_number_string(c):
        raise TypeCoercionFailure(row_index, cid, c)
    return c


def _validate_columns(cols: Sequence[tuple[str, str, str]], where: str):
    ids = [c[0] for c in cols]
    if len(set(ids)) != len(ids):
        raise SchemaViolation(0, where, "duplicate column ids")
    for cid, _, ctype in cols:
        if ctype not in COLUMN_TYPES:
            raise SchemaViolation(0, where, f"unknown column type {ctype!r} for {cid}")


def _table_from_obj(obj: dict, table_id: str) -> TableData:
    for key in ("name", "columns", "rows"):
        if key not in obj:
            raise SchemaViolation(0, key, "missing table field")
    cols = []
    for c in obj["columns"]:
        if not isinstance(c, dict) or not {"id", "display", "type"} <= set(c):
            raise SchemaViolation(0, "columns", "column needs id, display, type")
        cols.append((c["id"], c["display"], c["type"]))
    _validate_columns(cols, "columns")
    arity = len(cols)
    rows = []
    for i, raw in enumerate(obj["rows"]):
        if len(raw) != arity:
            raise RaggedRow(i, arity, len(raw))
        rows.append(
            tuple(
                _norm_cell(c, i, cols[k][0], cols[k][2]) for k, c in enumerate(raw)
            )
        )
    return TableData(
        table_id=table_id,
        table_name=obj["name"],
        column_ids=tuple(c[0] for c in cols),
        column_display_names=tuple(c[1] for c in cols),
        column_types=tuple(c[2] for c in cols),
        rows=tuple(rows),
    )


def load_table(path: Union[str, Path]) -> TableData:
    """Load a table from JSON, or from CSV plus a ``.types.json`` sidecar."""
    p = Path(path)
    if not p.is_file():
        raise MissingFile(p)
    if p.suffix == ".json":
        with open(p, encoding="utf-8") as fh:
            obj = json.load(fh)
        return _table_from_obj(obj, p.stem)
    if p.suffix == ".csv":
        sidecar = p.with_suffix(".types.json")
        if not sidecar.is_file():
            raise MissingFile(sidecar)
        with open(sidecar, encoding="utf-8") as fh:
            meta = json.load(fh)
        with open(p, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None:
                raise SchemaViolation(0, "<csv>", "empty CSV")
            raw_rows = list(reader)
        col_meta = meta.get("columns", [])
        if len(col_meta) != len(header):
            raise SchemaViolation(0, "columns", "sidecar column count differs from header")
        cols = [(c["id"], disp, c["type"]) for c, disp in zip(col_meta, header)]
        _validate_columns(cols, "columns")
        rows = []
        for i, raw in enumerate(raw_rows):
            if len(raw) != len(cols):
                raise RaggedRow(i, len(cols), len(raw))
            rows.append(
                tuple(
                    _norm_cell(c, i, cols[k][0], cols[k][2]) for k, c in enumerate(raw)
                )
            )
        return TableData(
            table_id=p.stem,
            table_name=meta.get("name", p.stem),
            column_ids=tuple(c[0] for c in cols),
            column_display_names=tuple(c[1] for c in cols),
            column_types=tuple(c[2] for c in cols),
            rows=tuple(rows),
        )
    raise SchemaViolation(0, "<table>", f"unsupported table file type: {p.suffix}")


def load_tables(directory: Union[str, Path]) -> dict[str, TableData]:
    d = Path(directory)
    if not d.is_dir():
        raise MissingFile(d)
    tables = {}
    for p in sorted(d.iterdir()):
        if p.suffix == ".json" and not p.name.endswith(".types.json"):
            t = load_table(p)
            tables[t.table_id] = t
        elif p.suffix == ".csv":
            t = load_table(p)
            tables[t.table_id] = t
    return tables


# --------------------------------------------------------------------------
# writers (used by corpus generation and tests)


def record_to_obj(rec: DatasetRecord) -> dict:
    return {
        "id": rec.record_id,
        "tbl": rec.table_id,
        "question": list(rec.query_tokens),
        "sql": [list(p) for p in rec.gold_sql_tokens],
        "align": [[[s, e], j] for (s, e), j in rec.alignments],
        "answer": list(rec.gold_answer),
    }


def table_to_obj(table: TableData) -> dict:
    return {
        "name": table.table_name,
        "columns": [
            {"id": cid, "display": disp, "type": ctype}
            for cid, disp, ctype in zip(
                table.column_ids, table.column_display_names, table.column_types
            )
        ],
        "rows": [list(r) for r in table.rows],
    }


def write_split(path: Union[str, Path], records: Sequence[DatasetRecord]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(record_to_obj(rec), sort_keys=True) + "\n")


def write_table(path: Union[str, Path], table: TableData) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(table_to_obj(table), fh, sort_keys=True)
        fh.write("\n")


def gazetteer_surfaces(table: TableData) -> tuple[list[str], list[str]]:
    """(schema strings, cell strings) backing gazetteers and encoders."""
    return list(table.column_display_names), table.distinct_cells()


def normalized_entry_counts(table: TableData):
    """Multiset of normalized gazetteer surfaces, for uniqueness checks."""
    from collections import Counter

    schema, cells = gazetteer_surfaces(table)
    return Counter(normalize_surface(s) for s in schema + cells if normalize_surface(s))
