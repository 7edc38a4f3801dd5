"""Reference execution of subset SQL through sqlite3.

The canonical serialization is valid sqlite syntax, so the reference path
shares no code with the in-package executor: text goes straight to sqlite.
Used for differential testing and for computing answer strings when
generating corpora.
"""
from __future__ import annotations

import sqlite3
from typing import Optional, Union

from ..text import canon_cell
from .ast import Stmt, serialize


def table_connection(table) -> sqlite3.Connection:
    conn = sqlite3.connect(":memory:")
    decls = ", ".join(
        f'"{cid}" {"REAL" if ctype == "number" else "TEXT"}'
        for cid, ctype in zip(table.column_ids, table.column_types)
    )
    conn.execute(f"CREATE TABLE w ({decls})")
    placeholders = ", ".join("?" for _ in table.column_ids)
    conn.executemany(f"INSERT INTO w VALUES ({placeholders})", table.typed_rows)
    conn.commit()
    return conn


def reference_execute(
    query: Union[Stmt, str], table, conn: Optional[sqlite3.Connection] = None
) -> list[tuple]:
    sql_text = serialize(query) if isinstance(query, Stmt) else query
    own = conn is None
    if own:
        conn = table_connection(table)
    try:
        return list(conn.execute(sql_text))
    finally:
        if own:
            conn.close()


def reference_answer(
    query: Union[Stmt, str], table, conn: Optional[sqlite3.Connection] = None
) -> list[str]:
    """Row-major flattened canonical answer strings, reference-engine sourced."""
    rows = reference_execute(query, table, conn)
    return [canon_cell(v) for row in rows for v in row]
