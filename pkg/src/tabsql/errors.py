"""Exception types shared across the toolkit.

Loaders raise dataset errors with enough position information (line, row,
column) to locate the offending input; nothing is skipped silently.
"""
from __future__ import annotations


class TabsqlError(Exception):
    """Base class for every error raised by this package."""


# --------------------------------------------------------------------------
# dataset / table loading


class DatasetError(TabsqlError):
    pass


class MissingFile(DatasetError):
    def __init__(self, path):
        super().__init__(f"missing file: {path}")
        self.path = str(path)


class SchemaViolation(DatasetError):
    """A dataset line does not match the expected record schema."""

    def __init__(self, line_no: int, field: str, message: str):
        super().__init__(f"line {line_no}, field {field!r}: {message}")
        self.line_no = line_no
        self.field = field


class IndexOutOfRange(SchemaViolation):
    """An alignment index points outside the query or the SQL token sequence."""


class RaggedRow(DatasetError):
    def __init__(self, row_index: int, expected: int, got: int):
        super().__init__(f"row {row_index}: expected {expected} cells, got {got}")
        self.row_index = row_index


class TypeCoercionFailure(DatasetError):
    def __init__(self, row_index: int, column_id: str, cell: str):
        super().__init__(
            f"row {row_index}, column {column_id}: {cell!r} is not a finite decimal"
        )
        self.row_index = row_index
        self.column_id = column_id


# --------------------------------------------------------------------------
# SQL parsing / execution


class SqlError(TabsqlError):
    pass


class SqlSyntaxError(SqlError):
    """Input does not parse. `position` is a token index into the input."""

    def __init__(self, position: int, message: str, expected: set[str] | None = None):
        detail = f"token {position}: {message}"
        if expected:
            detail += f" (expected one of {sorted(expected)})"
        super().__init__(detail)
        self.position = position
        self.expected = frozenset(expected or ())


class UnsupportedConstruct(SqlError):
    """Recognized SQL that falls outside the supported subset."""

    def __init__(self, construct: str):
        super().__init__(f"unsupported construct: {construct}")
        self.construct = construct


class ExecutionError(SqlError):
    pass


class UnknownColumn(ExecutionError):
    def __init__(self, column_id: str):
        super().__init__(f"unknown column: {column_id}")
        self.column_id = column_id


class TypeMismatch(ExecutionError):
    pass


class NonScalarSubquery(ExecutionError):
    pass


# --------------------------------------------------------------------------
# grammar / decoding


class GrammarError(TabsqlError):
    pass


class LhsMismatch(GrammarError):
    def __init__(self, frontier: str, lhs: str):
        super().__init__(f"frontier is {frontier}, rule expands {lhs}")
        self.frontier = frontier
        self.lhs = lhs


class RuleNotInGrammar(GrammarError):
    def __init__(self, rule):
        super().__init__(f"rule not in grammar: {rule}")
        self.rule = rule


class IllegalAction(GrammarError):
    pass


class DecodeError(TabsqlError):
    pass


class DeadEnd(DecodeError):
    """A derivation state with no legal action."""


class NoCompleteDerivation(DecodeError):
    """Search exhausted its budget without finishing any derivation."""


# --------------------------------------------------------------------------
# training

class EmptyTrainingSet(TabsqlError):
    pass


class EmptyTable(TabsqlError):
    pass
