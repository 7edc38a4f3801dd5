"""Grammar induction from parsed trees and the derivation transition system.

Every internal AST node type maps to one production. Concrete column ids,
cell values, and the table name never enter a rule; they are filled by copy
actions at COPY_COLUMN / COPY_VALUE / COPY_TABLE slots. Rules carry fixed
terminals (keywords, operators, parens, aggregation names, sort direction,
limit constants) so a finished derivation rebuilds the exact tree.

Rule collection walks each tree breadth-first; a grammar is the first-seen
deduplicated union over trees. Oracle action sequences enumerate the same
rules depth-first leftmost, interleaved with the copy actions that fill each
slot.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

from .errors import IllegalAction, LhsMismatch, RuleNotInGrammar
from .sql.ast import (
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
    Star,
    Stmt,
    Subquery,
    Value,
    ValueList,
    WhereClause,
)

NT_STMT = "Stmt"
NT_SELECT = "SelectClause"
NT_ITEM = "SelectItem"
NT_WHERE = "WhereClause"
NT_COND = "Cond"
NT_GROUP = "GroupClause"
NT_ORDER = "OrderClause"
NT_SUBQUERY = "Subquery"
NT_VALUELIST = "ValueList"

NONTERMINALS = frozenset(
    {NT_STMT, NT_SELECT, NT_ITEM, NT_WHERE, NT_COND, NT_GROUP, NT_ORDER,
     NT_SUBQUERY, NT_VALUELIST}
)

COPY_COLUMN = "COPY_COLUMN"
COPY_VALUE = "COPY_VALUE"
COPY_TABLE = "COPY_TABLE"
COPY_SLOTS = frozenset({COPY_COLUMN, COPY_VALUE, COPY_TABLE})

# clause context a non-terminal passes to its children
_CLAUSE_OF = {
    NT_SELECT: "SELECT",
    NT_WHERE: "WHERE",
    NT_GROUP: "GROUP",
    NT_ORDER: "ORDER",
    NT_STMT: None,
    NT_SUBQUERY: None,
}


@dataclass(frozen=True)
class ProductionRule:
    lhs: str
    rhs: tuple[str, ...]

    def signature(self) -> str:
        return f"{self.lhs} -> {' '.join(self.rhs)}"

    def __str__(self) -> str:
        return self.signature()


@dataclass(frozen=True)
class Grammar:
    rules: tuple[ProductionRule, ...]
    start_symbol: str = NT_STMT

    def __post_init__(self):
        index: dict[str, list[ProductionRule]] = {}
        for r in self.rules:
            index.setdefault(r.lhs, []).append(r)
        with_lhs = set(index)
        for r in self.rules:
            for sym in r.rhs:
                if sym in NONTERMINALS and sym not in with_lhs:
                    raise ValueError(f"non-terminal {sym} has no rules (in {r})")
        object.__setattr__(self, "_index", {k: tuple(v) for k, v in index.items()})
        object.__setattr__(self, "_rule_set", frozenset(self.rules))

    def rules_for(self, lhs: str) -> tuple[ProductionRule, ...]:
        return self._index.get(lhs, ())

    def __contains__(self, rule: ProductionRule) -> bool:
        return rule in self._rule_set

    def __len__(self) -> int:
        return len(self.rules)


# --------------------------------------------------------------------------
# rule extraction


def _node_production(node) -> tuple[ProductionRule, list]:
    """The node's rule plus per-symbol parts: child node for a non-terminal,
    copy payload string for a slot, None for a fixed terminal."""
    if isinstance(node, Stmt):
        rhs = [NT_SELECT, "from", COPY_TABLE]
        parts: list = [node.select, None, TABLE_TOKEN]
        for clause, sym in ((node.where, NT_WHERE), (node.group, NT_GROUP),
                            (node.order, NT_ORDER)):
            if clause is not None:
                rhs.append(sym)
                parts.append(clause)
        return ProductionRule(NT_STMT, tuple(rhs)), parts
    if isinstance(node, SelectClause):
        rhs, parts = [], []
        for i, it in enumerate(node.items):
            if i:
                rhs.append(",")
                parts.append(None)
            rhs.append(NT_ITEM)
            parts.append(it)
        return ProductionRule(NT_SELECT, tuple(rhs)), parts
    if isinstance(node, SelectItem):
        col_sym = "*" if isinstance(node.col, Star) else COPY_COLUMN
        col_part = None if isinstance(node.col, Star) else node.col.column_id
        if node.agg is None:
            return ProductionRule(NT_ITEM, (col_sym,)), [col_part]
        return (
            ProductionRule(NT_ITEM, (node.agg.value, "(", col_sym, ")")),
            [None, None, col_part, None],
        )
    if isinstance(node, WhereClause):
        rhs, parts = ["where"], [None]
        for i, cond in enumerate(node.conds):
            if i:
                rhs.append("and")
                parts.append(None)
            rhs.append(NT_COND)
            parts.append(cond)
        return ProductionRule(NT_WHERE, tuple(rhs)), parts
    if isinstance(node, Cond):
        rhs = [COPY_COLUMN]
        parts = [node.col.column_id]
        for tok in node.op.value.split():
            rhs.append(tok)
            parts.append(None)
        if isinstance(node.rhs, Value):
            rhs.append(COPY_VALUE)
            parts.append(node.rhs.text)
        elif isinstance(node.rhs, Subquery):
            rhs.append(NT_SUBQUERY)
            parts.append(node.rhs)
        else:
            rhs.append(NT_VALUELIST)
            parts.append(node.rhs)
        return ProductionRule(NT_COND, tuple(rhs)), parts
    if isinstance(node, GroupClause):
        return ProductionRule(NT_GROUP, ("group", "by", COPY_COLUMN)), [
            None, None, node.col.column_id]
    if isinstance(node, OrderClause):
        rhs = ["order", "by", NT_ITEM, node.direction]
        parts: list = [None, None, node.key, None]
        if node.limit is not None:
            rhs += ["limit", str(node.limit)]
            parts += [None, None]
        return ProductionRule(NT_ORDER, tuple(rhs)), parts
    if isinstance(node, Subquery):
        return ProductionRule(NT_SUBQUERY, ("(", NT_STMT, ")")), [None, node.stmt, None]
    if isinstance(node, ValueList):
        rhs, parts = ["("], [None]
        for i, v in enumerate(node.values):
            if i:
                rhs.append(",")
                parts.append(None)
            rhs.append(COPY_VALUE)
            parts.append(v.text)
        rhs.append(")")
        parts.append(None)
        return ProductionRule(NT_VALUELIST, tuple(rhs)), parts
    raise TypeError(f"not an internal node: {node!r}")


def extract_rules(tree: Stmt) -> list[ProductionRule]:
    """One rule per internal node, collected breadth-first from the root."""
    rules = []
    queue = [tree]
    while queue:
        node = queue.pop(0)
        rule, parts = _node_production(node)
        rules.append(rule)
        for sym, part in zip(rule.rhs, parts):
            if sym in NONTERMINALS:
                queue.append(part)
    return rules


def induce_grammar(trees: Iterable[Stmt]) -> Grammar:
    """First-seen deduplicated union of every tree's rules."""
    seen: dict[ProductionRule, None] = {}
    for tree in trees:
        for rule in extract_rules(tree):
            if rule not in seen:
                seen[rule] = None
    return Grammar(tuple(seen))


def linked_rule_violations(grammar: Grammar) -> list[tuple[ProductionRule, str]]:
    """Rhs symbols that name a concrete column or the table; must be empty."""
    from .sql.ast import COLUMN_ID_RE

    bad = []
    for rule in grammar.rules:
        for sym in rule.rhs:
            if sym in NONTERMINALS or sym in COPY_SLOTS:
                continue
            if COLUMN_ID_RE.match(sym) or sym == TABLE_TOKEN:
                bad.append((rule, sym))
    return bad


# --------------------------------------------------------------------------
# grammar files


def grammar_to_text(grammar: Grammar) -> str:
    return "".join(r.signature() + "\n" for r in grammar.rules)


def grammar_from_text(text: str) -> Grammar:
    rules = []
    for line in text.splitlines():
        line = line.strip()
        if not line:
            continue
        lhs, _, rhs = line.partition(" -> ")
        rules.append(ProductionRule(lhs.strip(), tuple(rhs.split())))
    return Grammar(tuple(rules))


def save_grammar(grammar: Grammar, path: Union[str, Path]) -> None:
    Path(path).write_text(grammar_to_text(grammar), encoding="utf-8")


def load_grammar(path: Union[str, Path]) -> Grammar:
    return grammar_from_text(Path(path).read_text(encoding="utf-8"))


# --------------------------------------------------------------------------
# decoder actions


@dataclass(frozen=True)
class ApplyRule:
    rule: ProductionRule


@dataclass(frozen=True)
class CopyColumn:
    column_id: str


@dataclass(frozen=True)
class CopyValue:
    value: str


@dataclass(frozen=True)
class CopyTable:
    name: str


Action = Union[ApplyRule, CopyColumn, CopyValue, CopyTable]

_SLOT_FOR_ACTION = {CopyColumn: COPY_COLUMN, CopyValue: COPY_VALUE, CopyTable: COPY_TABLE}


def action_signature(action: Action) -> str:
    if isinstance(action, ApplyRule):
        return f"Rule[{action.rule.signature()}]"
    if isinstance(action, CopyColumn):
        return f"CopyColumn[{action.column_id}]"
    if isinstance(action, CopyValue):
        return f"CopyValue[{action.value}]"
    return f"CopyTable[{action.name}]"


def oracle_actions(tree: Stmt, grammar: Grammar) -> list[Action]:
    """Gold action sequence in depth-first leftmost expansion order."""
    out: list[Action] = []

    def walk(node):
        rule, parts = _node_production(node)
        if rule not in grammar:
            raise RuleNotInGrammar(rule)
        out.append(ApplyRule(rule))
        for sym, part in zip(rule.rhs, parts):
            if sym in NONTERMINALS:
                walk(part)
            elif sym == COPY_COLUMN:
                out.append(CopyColumn(part))
            elif sym == COPY_VALUE:
                out.append(CopyValue(part))
            elif sym == COPY_TABLE:
                out.append(CopyTable(part))

    walk(tree)
    return out


# --------------------------------------------------------------------------
# derivation state


@dataclass(frozen=True)
class PendingSymbol:
    symbol: str
    clause: Optional[str]
    depth: int
    subquery_depth: int
    parent_rule: Optional[ProductionRule]


class Derivation:
    """A partial leftmost derivation. The pending list is a stack (last
    element expands first); fixed terminals are consumed automatically, so
    the frontier is always a non-terminal or a copy slot."""

    __slots__ = ("grammar", "pending", "actions", "log_prob")

    def __init__(self, grammar: Grammar, _pending=None, _actions=None, _log_prob=0.0):
        self.grammar = grammar
        if _pending is None:
            _pending = [PendingSymbol(grammar.start_symbol, None, 0, 0, None)]
        self.pending: list[PendingSymbol] = _pending
        self.actions: list[Action] = _actions if _actions is not None else []
        self.log_prob = _log_prob
        self._advance()

    def _advance(self):
        while self.pending and self.pending[-1].symbol not in NONTERMINALS \
                and self.pending[-1].symbol not in COPY_SLOTS:
            self.pending.pop()

    @property
    def complete(self) -> bool:
        return not self.pending

    @property
    def frontier(self) -> Optional[PendingSymbol]:
        return self.pending[-1] if self.pending else None

    def pending_symbols(self) -> list[str]:
        return [p.symbol for p in reversed(self.pending)]

    def clone(self) -> "Derivation":
        d = Derivation.__new__(Derivation)
        d.grammar = self.grammar
        d.pending = list(self.pending)
        d.actions = list(self.actions)
        d.log_prob = self.log_prob
        return d

    def apply(self, action: Action, log_prob: float = 0.0) -> None:
        front = self.frontier
        if front is None:
            raise IllegalAction("derivation already complete")
        if isinstance(action, ApplyRule):
            rule = action.rule
            if front.symbol not in NONTERMINALS:
                raise IllegalAction(f"frontier {front.symbol} wants a copy action")
            if rule.lhs != front.symbol:
                raise LhsMismatch(front.symbol, rule.lhs)
            if rule not in self.grammar:
                raise RuleNotInGrammar(rule)
            self.pending.pop()
            child_clause = _CLAUSE_OF.get(rule.lhs, front.clause)
            sub_d = front.subquery_depth + (1 if rule.lhs == NT_SUBQUERY else 0)
            for sym in reversed(rule.rhs):
                self.pending.append(
                    PendingSymbol(sym, child_clause, front.depth + 1, sub_d, rule)
                )
        else:
            slot = _SLOT_FOR_ACTION[type(action)]
            if front.symbol != slot:
                raise IllegalAction(f"frontier {front.symbol}, action fills {slot}")
            self.pending.pop()
        self.actions.append(action)
        self._advance()

    def child(self, action: Action, log_prob: float = 0.0) -> "Derivation":
        d = self.clone()
        d.apply(action)
        d.log_prob += log_prob
        return d

    def to_tree(self) -> Stmt:
        if not self.complete:
            raise IllegalAction("derivation is not complete")
        return actions_to_tree(self.actions)


def replay(actions: Sequence[Action], grammar: Grammar) -> Derivation:
    """Validate an action sequence by replaying it from a fresh state."""
    d = Derivation(grammar)
    for a in actions:
        d.apply(a)
    return d


# --------------------------------------------------------------------------
# tree reconstruction


class _ActionCursor:
    def __init__(self, actions: Sequence[Action]):
        self.actions = list(actions)
        self.i = 0

    def take(self) -> Action:
        if self.i >= len(self.actions):
            raise IllegalAction("action sequence ended mid-derivation")
        a = self.actions[self.i]
        self.i += 1
        return a


def _build(cur: _ActionCursor):
    act = cur.take()
    if not isinstance(act, ApplyRule):
        raise IllegalAction(f"expected a rule application, got {action_signature(act)}")
    rule = act.rule
    parts = []
    for sym in rule.rhs:
        if sym in NONTERMINALS:
            parts.append(_build(cur))
        elif sym == COPY_COLUMN:
            a = cur.take()
            if not isinstance(a, CopyColumn):
                raise IllegalAction(f"slot {sym} got {action_signature(a)}")
            parts.append(a.column_id)
        elif sym == COPY_VALUE:
            a = cur.take()
            if not isinstance(a, CopyValue):
                raise IllegalAction(f"slot {sym} got {action_signature(a)}")
            parts.append(a.value)
        elif sym == COPY_TABLE:
            a = cur.take()
            if not isinstance(a, CopyTable):
                raise IllegalAction(f"slot {sym} got {action_signature(a)}")
            parts.append(a.name)
        else:
            parts.append(sym)
    return _assemble(rule, parts)


def _assemble(rule: ProductionRule, parts: list):
    lhs = rule.lhs
    if lhs == NT_STMT:
        select = parts[0]
        where = group = order = None
        for sym, part in zip(rule.rhs, parts):
            if sym == NT_WHERE:
                where = part
            elif sym == NT_GROUP:
                group = part
            elif sym == NT_ORDER:
                order = part
        return Stmt(select, where, group, order)
    if lhs == NT_SELECT:
        return SelectClause(
            tuple(p for sym, p in zip(rule.rhs, parts) if sym == NT_ITEM)
        )
    if lhs == NT_ITEM:
        if len(rule.rhs) == 1:
            col = STAR if rule.rhs[0] == "*" else ColRef(parts[0])
            return SelectItem(col)
        agg = AggOp(rule.rhs[0])
        col = STAR if rule.rhs[2] == "*" else ColRef(parts[2])
        return SelectItem(col, agg)
    if lhs == NT_WHERE:
        return WhereClause(
            tuple(p for sym, p in zip(rule.rhs, parts) if sym == NT_COND)
        )
    if lhs == NT_COND:
        col = ColRef(parts[0])
        op_tokens = [s for s in rule.rhs[1:-1] if s not in NONTERMINALS]
        op = CompOp(" ".join(op_tokens))
        last_sym = rule.rhs[-1]
        if last_sym == COPY_VALUE:
            rhs = Value.from_text(parts[-1])
        else:
            rhs = parts[-1]
        return Cond(col, op, rhs)
    if lhs == NT_GROUP:
        return GroupClause(ColRef(parts[2]))
    if lhs == NT_ORDER:
        key = parts[2]
        direction = rule.rhs[3]
        limit = int(rule.rhs[5]) if len(rule.rhs) > 4 else None
        return OrderClause(key, direction, limit)
    if lhs == NT_SUBQUERY:
        return Subquery(parts[1])
    if lhs == NT_VALUELIST:
        return ValueList(
            tuple(Value.from_text(p) for sym, p in zip(rule.rhs, parts)
                  if sym == COPY_VALUE)
        )
    raise IllegalAction(f"unknown non-terminal {lhs}")


def actions_to_tree(actions: Sequence[Action]) -> Stmt:
    """Rebuild the tree a complete action sequence derives."""
    cur = _ActionCursor(actions)
    tree = _build(cur)
    if cur.i != len(cur.actions):
        raise IllegalAction("trailing actions after the derivation finished")
    return tree
