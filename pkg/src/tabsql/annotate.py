"""Derives span and linking supervision from alignment annotations.

Each alignment pairs a query token range with one gold SQL token. The SQL
token's kind and its innermost clause decide the span label:

- Column under SELECT / WHERE / GROUP BY / ORDER BY -> the matching column label
- aggregation keyword -> AGG_FUNCTION
- Literal -> LITERAL_VALUE

Anything unmappable becomes a diagnostic, never a guess. Ranges that receive
conflicting labels are dropped (with a diagnostic); overlapping ranges are
all kept, since span-level tagging handles nesting.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional, Sequence

from .dataset import DatasetRecord, EntityLabel, LABEL_INDEX, TableData, TypedSpan
from .sql.ast import Stmt, serialize
from .sql.parse import (
    CLAUSE_GROUP,
    CLAUSE_ORDER,
    CLAUSE_SELECT,
    CLAUSE_WHERE,
    parse_sql,
    parse_with_roles,
)

_CLAUSE_TO_LABEL = {
    CLAUSE_SELECT: EntityLabel.SELECT_COLUMN,
    CLAUSE_WHERE: EntityLabel.WHERE_COLUMN,
    CLAUSE_GROUP: EntityLabel.GROUPBY_COLUMN,
    CLAUSE_ORDER: EntityLabel.ORDERBY_COLUMN,
}


@dataclass(frozen=True)
class AnnotationIssue:
    record_id: str
    span: tuple[int, int]
    sql_index: int
    reason: str


@dataclass(frozen=True)
class DerivedAnnotations:
    spans: tuple[TypedSpan, ...]
    issues: tuple[AnnotationIssue, ...]


def derive_annotations(
    record: DatasetRecord, table: TableData, gold_tree: Optional[Stmt] = None
) -> DerivedAnnotations:
    """Convert a record's alignments into TypedSpans plus diagnostics.

    `gold_tree`, when given, must be the parse of the record's gold SQL
    tokens; it is cross-checked. Every Column or Literal alignment yields
    exactly one span or one issue.
    """
    tree, roles = parse_with_roles(record.gold_sql_tokens)
    if gold_tree is not None and serialize(gold_tree) != serialize(tree):
        raise ValueError(f"gold_tree does not match record {record.record_id}")

    per_range: dict[tuple[int, int], list] = {}
    issues: list[AnnotationIssue] = []
    for (s, e), j in record.alignments:
        role = roles[j]
        if role.kind == "column":
            if role.clause is None:
                issues.append(AnnotationIssue(record.record_id, (s, e), j,
                                              "column token outside any clause"))
                continue
            label = _CLAUSE_TO_LABEL[role.clause]
            target = role.canonical
        elif role.kind == "agg":
            label = EntityLabel.AGG_FUNCTION
            target = role.canonical
        elif role.kind == "literal":
            label = EntityLabel.LITERAL_VALUE
            target = role.canonical
        else:
            issues.append(AnnotationIssue(record.record_id, (s, e), j,
                                          f"unalignable token kind {record.gold_sql_tokens[j][1]!r}"))
            continue
        per_range.setdefault((s, e), []).append((label, target, j))

    spans: list[TypedSpan] = []
    for rng in sorted(per_range):
        assignments = per_range[rng]
        distinct = {(lbl, tgt) for lbl, tgt, _ in assignments}
        if len(distinct) > 1:
            for lbl, tgt, j in assignments:
                issues.append(AnnotationIssue(record.record_id, rng, j,
                                              "conflicting labels for one span"))
            continue
        label, target, _ = assignments[0]
        spans.append(TypedSpan(rng[0], rng[1], label, target))

    spans.sort(key=lambda sp: (sp.start, sp.end, LABEL_INDEX[sp.label]))
    return DerivedAnnotations(tuple(spans), tuple(issues))


def extract_nested_subset(records: Sequence[DatasetRecord]) -> list[DatasetRecord]:
    """Records whose gold SQL contains a subquery. Parse errors propagate."""
    from .sql.ast import contains_subquery

    out = []
    for rec in records:
        if contains_subquery(parse_sql(rec.gold_sql_tokens)):
            out.append(rec)
    return out


def link_targets_valid(spans: Sequence[TypedSpan], table: TableData) -> list[TypedSpan]:
    """Spans whose link target does not exist in the table (columns checked
    against ids, literals against cell strings)."""
    cells = set(table.distinct_cells())
    bad = []
    for sp in spans:
        if sp.label is EntityLabel.LITERAL_VALUE and sp.link_target not in cells:
            bad.append(sp)
        elif sp.label.name.endswith("_COLUMN") and sp.link_target not in table.column_ids:
            bad.append(sp)
    return bad
