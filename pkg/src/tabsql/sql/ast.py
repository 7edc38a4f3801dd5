"""Typed AST for the single-table SQL subset, plus canonical serialization.

The subset covers SELECT items with optional aggregation, AND-joined WHERE
conditions (literal, scalar-subquery, or membership right-hand sides), a
single GROUP BY column, and ORDER BY with an optional LIMIT. All statements
read from one table named "w".

Canonical form: lowercase structural tokens, one space between tokens,
parenthesized subqueries and value lists, string literals single-quoted.
Literal lexemes are preserved verbatim so serialize/parse round-trips are
exact.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from enum import Enum
from typing import Iterator, Optional, Union

from ..text import is_number_string

COLUMN_ID_RE = re.compile(r"^c[0-9]+(_[a-z0-9]+)*$")

TABLE_TOKEN = "w"

KIND_KEYWORD = "Keyword"
KIND_COLUMN = "Column"
KIND_LITERAL = "Literal"
TOKEN_KINDS = (KIND_KEYWORD, KIND_COLUMN, KIND_LITERAL)


class AggOp(str, Enum):
    COUNT = "count"
    SUM = "sum"
    AVG = "avg"
    MIN = "min"
    MAX = "max"


class CompOp(str, Enum):
    EQ = "="
    NE = "!="
    LT = "<"
    LE = "<="
    GT = ">"
    GE = ">="
    IN = "in"
    NOT_IN = "not in"


COMPARISON_OPS = frozenset(
    {CompOp.EQ, CompOp.NE, CompOp.LT, CompOp.LE, CompOp.GT, CompOp.GE}
)
MEMBERSHIP_OPS = frozenset({CompOp.IN, CompOp.NOT_IN})


@dataclass(frozen=True)
class Star:
    pass


STAR = Star()


@dataclass(frozen=True)
class ColRef:
    column_id: str

    def __post_init__(self):
        if not COLUMN_ID_RE.match(self.column_id):
            raise ValueError(f"invalid column id: {self.column_id!r}")


@dataclass(frozen=True)
class Value:
    """A literal. `kind` is "number" iff the lexeme is a finite decimal,
    except that quoted input always yields a string."""

    kind: str
    text: str

    def __post_init__(self):
        if self.kind not in ("number", "string"):
            raise ValueError(f"invalid literal kind: {self.kind!r}")
        if self.kind == "number" and not is_number_string(self.text):
            raise ValueError(f"number literal does not parse: {self.text!r}")

    @classmethod
    def from_text(cls, text: str) -> "Value":
        return cls("number" if is_number_string(text) else "string", text)


@dataclass(frozen=True)
class ValueList:
    values: tuple[Value, ...]

    def __post_init__(self):
        if not self.values:
            raise ValueError("empty value list")


@dataclass(frozen=True)
class SelectItem:
    col: Union[ColRef, Star]
    agg: Optional[AggOp] = None


@dataclass(frozen=True)
class SelectClause:
    items: tuple[SelectItem, ...]

    def __post_init__(self):
        if not self.items:
            raise ValueError("empty select clause")


@dataclass(frozen=True)
class Subquery:
    stmt: "Stmt"


@dataclass(frozen=True)
class Cond:
    col: ColRef
    op: CompOp
    rhs: Union[Value, Subquery, ValueList]


@dataclass(frozen=True)
class WhereClause:
    conds: tuple[Cond, ...]

    def __post_init__(self):
        if not self.conds:
            raise ValueError("empty where clause")


@dataclass(frozen=True)
class GroupClause:
    col: ColRef


@dataclass(frozen=True)
class OrderClause:
    key: SelectItem
    direction: str
    limit: Optional[int] = None

    def __post_init__(self):
        if self.direction not in ("asc", "desc"):
            raise ValueError(f"invalid sort direction: {self.direction!r}")
        if self.limit is not None and self.limit < 1:
            raise ValueError(f"limit must be >= 1, got {self.limit}")


@dataclass(frozen=True)
class Stmt:
    select: SelectClause
    where: Optional[WhereClause] = None
    group: Optional[GroupClause] = None
    order: Optional[OrderClause] = None


# Root alias used in signatures where the whole tree is meant.
SqlTree = Stmt

AstNode = Union[
    Stmt, SelectClause, SelectItem, WhereClause, Cond, GroupClause,
    OrderClause, Subquery, ValueList, Value, ColRef, Star,
]


# --------------------------------------------------------------------------
# serialization


def _emit(stmt: Stmt, out: list[tuple[str, str, bool]]) -> None:
    kw = lambda t: out.append((KIND_KEYWORD, t, False))

    def emit_value(v: Value):
        out.append((KIND_LITERAL, v.text, v.kind == "string"))

    def emit_item(it: SelectItem):
        if it.agg is not None:
            kw(it.agg.value)
            kw("(")
        if isinstance(it.col, Star):
            kw("*")
        else:
            out.append((KIND_COLUMN, it.col.column_id, False))
        if it.agg is not None:
            kw(")")

    for i, it in enumerate(stmt.select.items):
        kw("select") if i == 0 else kw(",")
        emit_item(it)
    kw("from")
    kw(TABLE_TOKEN)
    if stmt.where is not None:
        for i, cond in enumerate(stmt.where.conds):
            kw("where") if i == 0 else kw("and")
            out.append((KIND_COLUMN, cond.col.column_id, False))
            for tok in cond.op.value.split():
                kw(tok)
            rhs = cond.rhs
            if isinstance(rhs, Value):
                emit_value(rhs)
            elif isinstance(rhs, Subquery):
                kw("(")
                _emit(rhs.stmt, out)
                kw(")")
            else:
                kw("(")
                for j, v in enumerate(rhs.values):
                    if j:
                        kw(",")
                    emit_value(v)
                kw(")")
    if stmt.group is not None:
        kw("group")
        kw("by")
        out.append((KIND_COLUMN, stmt.group.col.column_id, False))
    if stmt.order is not None:
        kw("order")
        kw("by")
        emit_item(stmt.order.key)
        kw(stmt.order.direction)
        if stmt.order.limit is not None:
            kw("limit")
            kw(str(stmt.order.limit))


def typed_tokens(stmt: Stmt) -> list[tuple[str, str]]:
    """Token sequence in (kind, text) form, matching the dataset encoding."""
    out: list[tuple[str, str, bool]] = []
    _emit(stmt, out)
    return [(k, t) for k, t, _ in out]


def quote_literal(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


def serialize(stmt: Stmt) -> str:
    """Canonical single-spaced text form; parse(serialize(t)) == t."""
    out: list[tuple[str, str, bool]] = []
    _emit(stmt, out)
    return " ".join(quote_literal(t) if quoted else t for _, t, quoted in out)


# --------------------------------------------------------------------------
# traversal helpers


def iter_statements(stmt: Stmt) -> Iterator[Stmt]:
    """The statement and every nested subquery statement, outermost first."""
    yield stmt
    if stmt.where is not None:
        for cond in stmt.where.conds:
            if isinstance(cond.rhs, Subquery):
                yield from iter_statements(cond.rhs.stmt)


def contains_subquery(stmt: Stmt) -> bool:
    return sum(1 for _ in iter_statements(stmt)) > 1


def iter_column_ids(stmt: Stmt) -> Iterator[str]:
    for s in iter_statements(stmt):
        for it in s.select.items:
            if isinstance(it.col, ColRef):
                yield it.col.column_id
        if s.where is not None:
            for cond in s.where.conds:
                yield cond.col.column_id
        if s.group is not None:
            yield s.group.col.column_id
        if s.order is not None and isinstance(s.order.key.col, ColRef):
            yield s.order.key.col.column_id
