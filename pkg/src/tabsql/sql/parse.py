"""Tokenizer and recursive-descent parser for the SQL subset.

Input is either raw text in canonical form or a sequence of (kind, text)
typed tokens as stored in the dataset. Both paths produce the same AST.
`parse_with_roles` additionally reports, for every input token, the innermost
clause it was consumed under, which drives annotation derivation.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence, Union

from ..errors import SqlSyntaxError, UnsupportedConstruct
from .ast import (
    COLUMN_ID_RE,
    KIND_COLUMN,
    KIND_KEYWORD,
    KIND_LITERAL,
    TABLE_TOKEN,
    TOKEN_KINDS,
    AggOp,
    ColRef,
    CompOp,
    Cond,
    GroupClause,
    OrderClause,
    SelectClause,
    SelectItem,
    Star,
    Stmt,
    Subquery,
    Value,
    ValueList,
    WhereClause,
)

CLAUSE_SELECT = "SELECT"
CLAUSE_WHERE = "WHERE"
CLAUSE_GROUP = "GROUP"
CLAUSE_ORDER = "ORDER"

AGG_NAMES = frozenset(a.value for a in AggOp)
COMP_TOKENS = frozenset({"=", "!=", "<", "<=", ">", ">="})

_STRUCTURAL = frozenset(
    {"select", "from", "where", "and", "group", "by", "order", "asc", "desc",
     "limit", "in", "not", TABLE_TOKEN, "*", "(", ")", ","}
)
KEYWORD_TOKENS = _STRUCTURAL | AGG_NAMES | COMP_TOKENS

# recognized SQL that lies outside the subset; reported, never guessed at
UNSUPPORTED_KEYWORDS = frozenset(
    {"or", "join", "having", "union", "intersect", "except", "like",
     "between", "distinct", "inner", "outer", "left", "right", "on", "as",
     "case", "is", "null", "abs", "julianday", "length"}
)

_SYMBOL_CHARS = "()=<>!,*"


@dataclass(frozen=True)
class SqlToken:
    kind: str
    text: str
    pos: int
    quoted: bool = False


@dataclass(frozen=True)
class TokenRole:
    """What one SQL token contributed, and under which clause."""

    index: int
    kind: str  # "column" | "literal" | "agg" | "other"
    clause: Optional[str]
    canonical: Optional[str]


TokensLike = Union[str, Sequence]


def tokenize(text: str) -> list[SqlToken]:
    toks: list[SqlToken] = []
    i, n = 0, len(text)
    while i < n:
        ch = text[i]
        if ch.isspace():
            i += 1
            continue
        if ch == "'":
            j = i + 1
            buf: list[str] = []
            while True:
                if j >= n:
                    raise SqlSyntaxError(len(toks), "unterminated string literal")
                if text[j] == "'":
                    if j + 1 < n and text[j + 1] == "'":
                        buf.append("'")
                        j += 2
                        continue
                    j += 1
                    break
                buf.append(text[j])
                j += 1
            toks.append(SqlToken(KIND_LITERAL, "".join(buf), len(toks), quoted=True))
            i = j
            continue
        if text[i : i + 2] in ("<=", ">=", "!="):
            toks.append(SqlToken(KIND_KEYWORD, text[i : i + 2], len(toks)))
            i += 2
            continue
        if ch in _SYMBOL_CHARS:
            toks.append(SqlToken(KIND_KEYWORD, ch, len(toks)))
            i += 1
            continue
        j = i
        while j < n and not text[j].isspace() and text[j] not in _SYMBOL_CHARS and text[j] != "'":
            j += 1
        word = text[i:j]
        lowered = word.lower()
        from ..text import is_number_string

        if is_number_string(word):
            toks.append(SqlToken(KIND_LITERAL, word, len(toks)))
        elif lowered in KEYWORD_TOKENS or lowered in UNSUPPORTED_KEYWORDS:
            toks.append(SqlToken(KIND_KEYWORD, lowered, len(toks)))
        elif COLUMN_ID_RE.match(lowered):
            toks.append(SqlToken(KIND_COLUMN, lowered, len(toks)))
        else:
            raise SqlSyntaxError(len(toks), f"unrecognized token {word!r}")
        i = j
    return toks


def _coerce_tokens(src: TokensLike) -> list[SqlToken]:
    if isinstance(src, str):
        return tokenize(src)
    toks = []
    for i, t in enumerate(src):
        if isinstance(t, SqlToken):
            toks.append(SqlToken(t.kind, t.text, i, t.quoted))
            continue
        kind, text = t
        if kind not in TOKEN_KINDS:
            raise SqlSyntaxError(i, f"unknown token kind {kind!r}")
        if kind == KIND_KEYWORD:
            text = text.strip().lower()
        toks.append(SqlToken(kind, text, i))
    return toks


class _Parser:
    def __init__(self, toks: list[SqlToken]):
        self.toks = toks
        self.i = 0
        self.roles: dict[int, TokenRole] = {}

    @property
    def done(self) -> bool:
        return self.i >= len(self.toks)

    def peek(self, ahead: int = 0) -> Optional[SqlToken]:
        j = self.i + ahead
        return self.toks[j] if j < len(self.toks) else None

    def at_kw(self, *texts: str) -> bool:
        t = self.peek()
        return t is not None and t.kind == KIND_KEYWORD and t.text in texts

    def advance(self) -> SqlToken:
        if self.done:
            raise SqlSyntaxError(self.i, "unexpected end of input")
        t = self.toks[self.i]
        self.i += 1
        return t

    def expect_kw(self, text: str) -> SqlToken:
        t = self.peek()
        if t is None or t.kind != KIND_KEYWORD or t.text != text:
            got = "end of input" if t is None else repr(t.text)
            raise SqlSyntaxError(self.i, f"got {got}", expected={text})
        return self.advance()

    def note(self, tok: SqlToken, kind: str, clause: Optional[str], canonical: str):
        self.roles[tok.pos] = TokenRole(tok.pos, kind, clause, canonical)


def _parse_colref(p: _Parser, clause: str) -> ColRef:
    t = p.peek()
    if t is None or t.kind != KIND_COLUMN:
        got = "end of input" if t is None else repr(t.text)
        raise SqlSyntaxError(p.i, f"got {got}", expected={"<column>"})
    p.advance()
    p.note(t, "column", clause, t.text)
    return ColRef(t.text)


def _parse_item(p: _Parser, clause: str) -> SelectItem:
    t = p.peek()
    if t is not None and t.kind == KIND_KEYWORD and t.text in AGG_NAMES:
        p.advance()
        p.note(t, "agg", clause, t.text)
        p.expect_kw("(")
        if p.at_kw("*"):
            p.advance()
            col: Union[ColRef, Star] = Star()
        else:
            col = _parse_colref(p, clause)
        p.expect_kw(")")
        return SelectItem(col, AggOp(t.text))
    if p.at_kw("*"):
        p.advance()
        return SelectItem(Star())
    return SelectItem(_parse_colref(p, clause))


def _parse_value(p: _Parser, clause: str) -> Value:
    t = p.peek()
    if t is None or t.kind != KIND_LITERAL:
        got = "end of input" if t is None else repr(t.text)
        raise SqlSyntaxError(p.i, f"got {got}", expected={"<value>"})
    p.advance()
    p.note(t, "literal", clause, t.text)
    if t.quoted:
        return Value("string", t.text)
    return Value.from_text(t.text)


def _parse_cond(p: _Parser) -> Cond:
    col = _parse_colref(p, CLAUSE_WHERE)
    if p.at_kw("not"):
        p.advance()
        p.expect_kw("in")
        op = CompOp.NOT_IN
    elif p.at_kw("in"):
        p.advance()
        op = CompOp.IN
    else:
        t = p.peek()
        if t is None or t.kind != KIND_KEYWORD or t.text not in COMP_TOKENS:
            got = "end of input" if t is None else repr(t.text)
            raise SqlSyntaxError(p.i, f"got {got}", expected=set(COMP_TOKENS) | {"in", "not"})
        p.advance()
        op = CompOp(t.text)
    if p.at_kw("("):
        nxt = p.peek(1)
        if nxt is not None and nxt.kind == KIND_KEYWORD and nxt.text == "select":
            p.advance()
            sub = _parse_stmt(p)
            p.expect_kw(")")
            return Cond(col, op, Subquery(sub))
        p.advance()
        values = [_parse_value(p, CLAUSE_WHERE)]
        while p.at_kw(","):
            p.advance()
            values.append(_parse_value(p, CLAUSE_WHERE))
        p.expect_kw(")")
        return Cond(col, op, ValueList(tuple(values)))
    return Cond(col, op, _parse_value(p, CLAUSE_WHERE))


def _parse_stmt(p: _Parser) -> Stmt:
    p.expect_kw("select")
    items = [_parse_item(p, CLAUSE_SELECT)]
    while p.at_kw(","):
        p.advance()
        items.append(_parse_item(p, CLAUSE_SELECT))
    p.expect_kw("from")
    p.expect_kw(TABLE_TOKEN)

    where = group = order = None
    if p.at_kw("where"):
        p.advance()
        conds = [_parse_cond(p)]
        while p.at_kw("and"):
            p.advance()
            conds.append(_parse_cond(p))
        where = WhereClause(tuple(conds))
    if p.at_kw("group"):
        p.advance()
        p.expect_kw("by")
        group = GroupClause(_parse_colref(p, CLAUSE_GROUP))
    if p.at_kw("order"):
        p.advance()
        p.expect_kw("by")
        key = _parse_item(p, CLAUSE_ORDER)
        t = p.peek()
        if t is None or t.kind != KIND_KEYWORD or t.text not in ("asc", "desc"):
            got = "end of input" if t is None else repr(t.text)
            raise SqlSyntaxError(p.i, f"got {got}", expected={"asc", "desc"})
        p.advance()
        limit = None
        if p.at_kw("limit"):
            p.advance()
            lt = p.advance() if not p.done else None
            if lt is None or not lt.text.isdigit() or int(lt.text) < 1:
                raise SqlSyntaxError(p.i - (0 if lt is None else 1), "limit wants a positive integer",
                                     expected={"<positive int>"})
            limit = int(lt.text)
        order = OrderClause(key, t.text, limit)
    return Stmt(SelectClause(tuple(items)), where, group, order)


def parse_with_roles(src: TokensLike) -> tuple[Stmt, list[TokenRole]]:
    """Parse and report one TokenRole per input token."""
    toks = _coerce_tokens(src)
    for t in toks:
        if t.kind == KIND_KEYWORD and t.text in UNSUPPORTED_KEYWORDS:
            raise UnsupportedConstruct(t.text)
    p = _Parser(toks)
    stmt = _parse_stmt(p)
    if not p.done:
        raise SqlSyntaxError(p.i, f"trailing input {p.peek().text!r}")
    roles = [
        p.roles.get(i, TokenRole(i, "other", None, None)) for i in range(len(toks))
    ]
    return stmt, roles


def parse_sql(src: TokensLike) -> Stmt:
    """Parse raw text or typed (kind, text) tokens into an AST."""
    return parse_with_roles(src)[0]
