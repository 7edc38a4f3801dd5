"""In-memory execution of subset trees over a single table.

Semantics, chosen to track the common relational reading (and checked
differentially against a reference engine in the test suite):

- WHERE filters rows; conditions are AND-joined.
- Any comparison against a null cell is false. NOT IN is false when the
  membership set contains a null.
- Number columns compare numerically, string and date columns compare as
  text (ISO dates order correctly this way).
- count(*) counts rows, count(col) counts non-null cells; sum/avg are
  numeric and skip nulls (empty input yields null); min/max use the column's
  ordering and skip nulls.
- GROUP BY partitions in first-appearance order. Without GROUP BY a query
  whose select items are all aggregated runs over the filtered table as one
  group; mixing aggregated and bare items without GROUP BY is an error.
- ORDER BY sorts stably (ties keep earlier context order), nulls sort
  smallest; LIMIT truncates after the sort.
- A scalar subquery must produce exactly one row and one column; membership
  subqueries must produce one column.
"""
from __future__ import annotations

from collections import Counter
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

from ..errors import NonScalarSubquery, TypeMismatch, UnknownColumn
from ..text import canon_cell, is_number_string
from .ast import (
    AggOp,
    ColRef,
    CompOp,
    Cond,
    SelectItem,
    Star,
    Stmt,
    Subquery,
    Value,
    ValueList,
    iter_column_ids,
)


@dataclass(frozen=True)
class Denotation:
    """Execution result: a tuple of value rows."""

    rows: tuple[tuple[object, ...], ...]

    @property
    def is_scalar(self) -> bool:
        return len(self.rows) == 1 and len(self.rows[0]) == 1

    @property
    def scalar(self):
        if not self.is_scalar:
            raise NonScalarSubquery(f"expected 1x1 result, got {len(self.rows)} rows")
        return self.rows[0][0]

    def flatten(self) -> list[object]:
        return [v for row in self.rows for v in row]


def execute(stmt: Stmt, table) -> Denotation:
    """Run a subset tree against a TableData and return its denotation."""
    for cid in iter_column_ids(stmt):
        if cid not in table.column_ids:
            raise UnknownColumn(cid)
    return Denotation(tuple(_exec(stmt, table)))


def _typed_literal(value: Value, col_type: str, cond: Cond):
    if col_type == "number":
        if not is_number_string(value.text):
            raise TypeMismatch(
                f"column {cond.col.column_id} is numeric, literal {value.text!r} is not"
            )
        return float(value.text)
    return value.text


def _scalar_rhs(cond: Cond, table, col_type: str):
    rhs = cond.rhs
    if isinstance(rhs, Value):
        return _typed_literal(rhs, col_type, cond)
    if isinstance(rhs, Subquery):
        sub = execute(rhs.stmt, table)
        val = sub.scalar
        if val is not None:
            _check_rhs_type(val, col_type, cond)
        return val
    raise TypeMismatch(f"operator {cond.op.value!r} does not take a value list")


def _check_rhs_type(val, col_type: str, cond: Cond):
    numeric = isinstance(val, (int, float))
    if col_type == "number" and not numeric:
        raise TypeMismatch(
            f"column {cond.col.column_id} is numeric, subquery produced {val!r}"
        )
    if col_type != "number" and numeric:
        raise TypeMismatch(
            f"column {cond.col.column_id} is text, subquery produced a number"
        )


def _members(cond: Cond, table, col_type: str) -> list:
    rhs = cond.rhs
    if isinstance(rhs, ValueList):
        return [_typed_literal(v, col_type, cond) for v in rhs.values]
    if isinstance(rhs, Subquery):
        sub = execute(rhs.stmt, table)
        if any(len(row) != 1 for row in sub.rows):
            raise NonScalarSubquery("membership subquery must select one column")
        vals = [row[0] for row in sub.rows]
        for v in vals:
            if v is not None:
                _check_rhs_type(v, col_type, cond)
        return vals
    raise TypeMismatch(f"operator {cond.op.value!r} needs a value list or subquery")


_CMP: dict[CompOp, Callable] = {
    CompOp.EQ: lambda a, b: a == b,
    CompOp.NE: lambda a, b: a != b,
    CompOp.LT: lambda a, b: a < b,
    CompOp.LE: lambda a, b: a <= b,
    CompOp.GT: lambda a, b: a > b,
    CompOp.GE: lambda a, b: a >= b,
}


def _cond_matcher(cond: Cond, table) -> Callable[[tuple], bool]:
    ci = table.col_index(cond.col.column_id)
    col_type = table.column_types[ci]
    if cond.op in (CompOp.IN, CompOp.NOT_IN):
        members = _members(cond, table, col_type)
        has_null = any(m is None for m in members)
        present = set(m for m in members if m is not None)
        if cond.op is CompOp.IN:
            return lambda row: row[ci] is not None and row[ci] in present
        return lambda row: (
            row[ci] is not None and not has_null and row[ci] not in present
        )
    rhs_val = _scalar_rhs(cond, table, col_type)
    if rhs_val is None:
        return lambda row: False
    op = _CMP[cond.op]
    return lambda row: row[ci] is not None and op(row[ci], rhs_val)


def _aggregate(agg: AggOp, item: SelectItem, rows: Sequence[tuple], table):
    if isinstance(item.col, Star):
        if agg is not AggOp.COUNT:
            raise TypeMismatch(f"{agg.value}(*) is not defined")
        return len(rows)
    ci = table.col_index(item.col.column_id)
    vals = [r[ci] for r in rows if r[ci] is not None]
    if agg is AggOp.COUNT:
        return len(vals)
    if agg in (AggOp.SUM, AggOp.AVG):
        if table.column_types[ci] != "number":
            raise TypeMismatch(f"{agg.value} needs a numeric column")
        if not vals:
            return None
        total = 0.0
        for v in vals:
            total += v
        return total if agg is AggOp.SUM else total / len(vals)
    if not vals:
        return None
    return min(vals) if agg is AggOp.MIN else max(vals)


def _eval_item(item: SelectItem, ctx_rows: Sequence[tuple], grouped: bool, table) -> list:
    """Evaluate one select item in a context; returns the produced cells."""
    if item.agg is not None:
        if not grouped:
            raise TypeMismatch("aggregate mixed with bare columns needs group by")
        return [_aggregate(item.agg, item, ctx_rows, table)]
    if isinstance(item.col, Star):
        return list(ctx_rows[0])
    ci = table.col_index(item.col.column_id)
    return [ctx_rows[0][ci]]


def _exec(stmt: Stmt, table) -> list[tuple]:
    typed = table.typed_rows
    kept = list(typed)
    if stmt.where is not None:
        matchers = [_cond_matcher(c, table) for c in stmt.where.conds]
        kept = [r for r in kept if all(m(r) for m in matchers)]

    has_agg_item = any(it.agg is not None for it in stmt.select.items)
    order_needs_agg = stmt.order is not None and stmt.order.key.agg is not None

    if stmt.group is not None:
        gi = table.col_index(stmt.group.col.column_id)
        buckets: dict = {}
        for r in kept:
            buckets.setdefault(r[gi], []).append(r)
        contexts = list(buckets.values())
        grouped = True
    elif has_agg_item or order_needs_agg:
        if not all(it.agg is not None for it in stmt.select.items):
            raise TypeMismatch("aggregate mixed with bare columns needs group by")
        contexts = [kept]
        grouped = True
    else:
        contexts = [[r] for r in kept]
        grouped = False

    out_rows = []
    for ctx in contexts:
        cells: list = []
        for it in stmt.select.items:
            cells.extend(_eval_item(it, ctx, grouped, table))
        out_rows.append(tuple(cells))

    if stmt.order is not None:
        if stmt.order.key.agg is not None and not grouped:
            raise TypeMismatch("aggregate order key needs group by")
        keys = [
            _eval_item(stmt.order.key, ctx, grouped, table)[0] for ctx in contexts
        ]
        # nulls sort smallest; stable under ties in both directions
        decorated = [((0, 0) if k is None else (1, k), row) for k, row in zip(keys, out_rows)]
        decorated.sort(key=lambda p: p[0], reverse=(stmt.order.direction == "desc"))
        out_rows = [row for _, row in decorated]
        if stmt.order.limit is not None:
            out_rows = out_rows[: stmt.order.limit]
    return out_rows


# --------------------------------------------------------------------------
# denotation comparison


def _canon_answer(s: str) -> str:
    return canon_cell(s)


def denotation_equal(
    result: Denotation, expected: Sequence[str], ordered: bool = False
) -> bool:
    """Compare a denotation against gold answer strings.

    Both sides are flattened row-major; values that read as numbers are
    normalized to trailing-zero-free decimal form, everything else compares
    exactly. Order matters only when `ordered` is set (queries with ORDER BY).
    """
    got = [canon_cell(v) for v in result.flatten()]
    want = [_canon_answer(s) for s in expected]
    if ordered:
        return got == want
    return Counter(got) == Counter(want)
