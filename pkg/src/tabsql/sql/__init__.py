"""SQL subset: AST, parser, canonical serializer, and executor."""

from .ast import (
    STAR,
    TABLE_TOKEN,
    AggOp,
    ColRef,
    CompOp,
    Cond,
    GroupClause,
    OrderClause,
    SelectClause,
    SelectItem,
    SqlTree,
    Star,
    Stmt,
    Subquery,
    Value,
    ValueList,
    WhereClause,
    contains_subquery,
    iter_column_ids,
    iter_statements,
    serialize,
    typed_tokens,
)
from .execute import Denotation, denotation_equal, execute
from .parse import (
    CLAUSE_GROUP,
    CLAUSE_ORDER,
    CLAUSE_SELECT,
    CLAUSE_WHERE,
    TokenRole,
    parse_sql,
    parse_with_roles,
    tokenize,
)

__all__ = [
    "STAR", "TABLE_TOKEN", "AggOp", "ColRef", "CompOp", "Cond", "GroupClause",
    "OrderClause",
    "SelectClause", "SelectItem", "SqlTree", "Star", "Stmt", "Subquery",
    "Value", "ValueList", "WhereClause", "contains_subquery",
    "iter_column_ids", "iter_statements", "serialize", "typed_tokens",
    "Denotation", "denotation_equal", "execute",
    "CLAUSE_GROUP", "CLAUSE_ORDER", "CLAUSE_SELECT", "CLAUSE_WHERE",
    "TokenRole", "parse_sql", "parse_with_roles", "tokenize",
]
