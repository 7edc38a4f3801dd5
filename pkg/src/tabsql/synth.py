"""Deterministic generator for a benchmark-shaped tabular QA corpus.

Produces themed single tables plus train/dev/test record splits in the
package's on-disk format. Questions are rendered from templates with tracked
alignments, so annotation derivation downstream is exact. Gold answers come
from the sqlite reference engine; records whose gold answer the in-package
executor cannot reproduce (order ties, mostly) are re-rolled rather than
shipped ambiguous.

Design targets, all checked by the test suite rather than assumed:
- column mentions use a non-exact alias often enough that well under half of
  the records are pure string matches against the schema;
- a small share of records uses OR, which the modeled SQL subset excludes,
  so ingestion and evaluation must cope with unparseable gold;
- a high-single-digit share of records nests a subquery.

Aliases are screened per table with a fixed similarity rule: an alias that
scores as close to some other column as to its own is dropped, keeping the
linking task solvable from surface features alone.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from .dataset import (
    DatasetRecord,
    TableData,
    gazetteer_surfaces,
    write_split,
    write_table,
)
from .sql import TABLE_TOKEN, execute, denotation_equal, parse_sql, serialize
from .sql.ast import (
    STAR,
    AggOp,
    ColRef,
    CompOp,
    Cond,
    GroupClause,
    KIND_COLUMN,
    KIND_KEYWORD,
    KIND_LITERAL,
    OrderClause,
    SelectClause,
    SelectItem,
    Stmt,
    Subquery,
    Value,
    ValueList,
    WhereClause,
    typed_tokens,
)
from .sql.sqlite_ref import reference_answer, table_connection
from .text import (
    acronym_score,
    canon_number,
    fuzzy_score,
    length_ratio,
    normalize_surface,
    prefix_overlap,
    suffix_overlap,
    token_jaccard,
)

TRAIN_SIZE = 11276
DEV_SIZE = 1600
TEST_SIZE = 4344


# --------------------------------------------------------------------------
# vocab


_POOLS = {
    "people": [
        "lewis hamilton", "nico rosberg", "sebastian vettel",
        "fernando alonso", "jenson button", "felipe massa",
        "kimi raikkonen", "valtteri bottas", "daniel ricciardo",
        "nico hulkenberg", "sergio perez", "romain grosjean",
        "lando norris", "george russell", "carlos sainz",
        "charles leclerc", "esteban ocon", "pierre gasly",
        "lance stroll", "alexander albon", "yuki tsunoda",
        "guanyu zhou", "kevin magnussen", "oscar piastri",
    ],
    "teams": [
        "mercedes amg", "scuderia ferrari", "mclaren racing",
        "williams racing", "lotus f1", "sauber motorsport",
        "marussia f1", "caterham f1", "toro rosso", "force india",
        "red bull racing", "haas f1", "alpine f1", "renault sport",
        "jordan grand prix", "arrows grand prix", "brabham racing",
        "tyrrell racing",
    ],
    "cities": [
        "monaco", "melbourne", "shanghai", "montreal", "silverstone",
        "budapest", "monza", "singapore", "suzuka", "austin", "interlagos",
        "barcelona", "spielberg", "zandvoort", "jeddah", "baku",
        "new york", "los angeles", "cape town", "monterrey",
    ],
    "countries": [
        "france", "italy", "spain", "japan", "brazil", "canada", "austria",
        "hungary", "belgium", "germany", "britain", "australia", "mexico",
        "finland", "poland", "norway", "portugal", "denmark",
    ],
    "animals": [
        "lion", "tiger", "panda", "zebra", "giraffe", "kangaroo", "koala",
        "otter", "beaver", "lynx", "ibex", "bison", "moose", "puffin",
        "heron", "gecko", "wombat", "tapir",
    ],
    "habitats": [
        "savanna", "rainforest", "wetland", "tundra", "grassland", "desert",
        "woodland", "mangrove", "reef", "steppe",
    ],
    "products": [
        "lamp", "kettle", "blender", "toaster", "speaker", "monitor",
        "keyboard", "printer", "router", "camera", "drone", "scanner",
        "charger", "headset", "tripod", "projector",
    ],
    "regions": [
        "north", "south", "east", "west", "central", "coastal", "highland",
        "island",
    ],
    "authors": [
        "jane austen", "charles dickens", "leo tolstoy", "virginia woolf",
        "george orwell", "franz kafka", "jorge luis borges", "italo calvino",
        "toni morrison", "james baldwin", "doris lessing", "chinua achebe",
        "haruki murakami", "margaret atwood",
    ],
    "genres": [
        "mystery", "romance", "satire", "memoir", "fable", "essay", "drama",
        "poetry", "thriller", "history",
    ],
}


@dataclass(frozen=True)
class ColumnSpec:
    slug: str
    display: str
    ctype: str
    aliases: tuple[str, ...]
    source: str          # pool name, "int", "float", or "date"
    lo: int = 0
    hi: int = 0


def _spec(slug, display, ctype, aliases, source, lo=0, hi=0):
    return ColumnSpec(slug, display, ctype, tuple(aliases), source, lo, hi)


# Column aliases are morphological variants of the display name, never a
# phrase containing it: a question span that embedded the display name
# verbatim would collide with the schema gazetteer instead of exercising
# fuzzy linking.
_THEMES: dict[str, list[ColumnSpec]] = {
    "racing": [
        _spec("driver", "driver", "string",
              ("drivers", "racer"), "people"),
        _spec("team", "team", "string",
              ("teams",), "teams"),
        _spec("year", "year", "number",
              ("years",), "int", 1990, 2023),
        _spec("points", "points", "number",
              ("pts", "point tally"), "int", 10, 500),
        _spec("wins", "wins", "number",
              ("win total", "winnings"), "int", 0, 15),
        _spec("rank", "rank", "number",
              ("ranking", "ranks"), "int", 1, 24),
    ],
    "census": [
        _spec("city", "city", "string",
              ("cities",), "cities"),
        _spec("country", "country", "string",
              ("countries",), "countries"),
        _spec("population", "population", "number",
              ("populations", "pop"), "int", 20000, 900000),
        _spec("area", "area", "number",
              ("areas",), "float", 5, 900),
        _spec("founded", "founded", "date",
              ("founding",), "date"),
        _spec("density", "density", "number",
              ("densities",), "int", 50, 9000),
    ],
    "zoo": [
        _spec("animal", "animal", "string",
              ("animals",), "animals"),
        _spec("habitat", "habitat", "string",
              ("habitats",), "habitats"),
        _spec("weight", "weight", "number",
              ("weights",), "float", 2, 900),
        _spec("age", "age", "number",
              ("ages",), "int", 1, 40),
        _spec("arrived", "arrived", "date",
              ("arrival", "arrivals"), "date"),
        _spec("visits", "visits", "number",
              ("visit total", "visitor count"), "int", 10, 4000),
    ],
    "sales": [
        _spec("product", "product", "string",
              ("products",), "products"),
        _spec("region", "region", "string",
              ("regions",), "regions"),
        _spec("units", "units", "number",
              ("unit count", "unit sales"), "int", 5, 20000),
        _spec("revenue", "revenue", "number",
              ("revenues", "rev"), "int", 100, 90000),
        _spec("launched", "launched", "date",
              ("launch date", "launches"), "date"),
        _spec("returns", "returns", "number",
              ("return count", "return total"), "int", 0, 500),
    ],
    "library": [
        _spec("author", "author", "string",
              ("authors",), "authors"),
        _spec("genre", "genre", "string",
              ("genres",), "genres"),
        _spec("pages", "pages", "number",
              ("page count", "page total"), "int", 40, 1200),
        _spec("copies", "copies", "number",
              ("copy count", "copy total"), "int", 1, 60),
        _spec("published", "published", "date",
              ("publication date", "publication"), "date"),
        _spec("loans", "loans", "number",
              ("loan count", "loan total"), "int", 0, 900),
    ],
    "races": [
        _spec("circuit", "circuit", "string",
              ("circuits",), "cities"),
        _spec("winner", "winner", "string",
              ("winners",), "people"),
        _spec("laps", "laps", "number",
              ("lap count", "lap total"), "int", 40, 90),
        _spec("distance", "distance", "number",
              ("distances",), "float", 200, 320),
        _spec("held", "held", "date",
              (), "date"),
        _spec("crowd", "crowd", "number",
              ("crowds",), "int", 5000, 200000),
    ],
}

_SUP_MAX = ("highest", "greatest", "largest")
_SUP_MIN = ("lowest", "smallest")
_AGG_WORDS = {
    AggOp.MAX: ("maximum", "highest"),
    AggOp.MIN: ("minimum", "lowest"),
    AggOp.SUM: ("total", "combined"),
    AggOp.AVG: ("average", "mean"),
}
_GT_WORDS = (("more", "than"), ("over",), ("above",))
_LT_WORDS = (("less", "than"), ("under",), ("below",))


# --------------------------------------------------------------------------
# alias screening


_REF_WEIGHTS = {
    "exact": 4.0, "edit": 2.0, "jaccard": 1.0, "prefix": 0.5,
    "suffix": 0.25, "acronym": 1.5, "lenratio": 0.1,
}


def reference_similarity(mention: str, surface: str) -> float:
    """Fixed-weight surface similarity used only to screen generated aliases."""
    w = _REF_WEIGHTS
    exact = 1.0 if normalize_surface(mention) == normalize_surface(surface) else 0.0
    return (
        w["exact"] * exact
        + w["edit"] * fuzzy_score(mention, surface)
        + w["jaccard"] * token_jaccard(mention, surface)
        + w["prefix"] * prefix_overlap(mention, surface)
        + w["suffix"] * suffix_overlap(mention, surface)
        + w["acronym"] * acronym_score(mention, surface)
        + w["lenratio"] * length_ratio(mention, surface)
    )


def _gazetteer_entry_set(table: TableData) -> set[str]:
    names, cells = gazetteer_surfaces(table)
    return {normalize_surface(s) for s in names + cells}


def _embeds_entry(alias: str, norm_entries: set[str]) -> bool:
    """True when some contiguous token window of the alias is itself a
    gazetteer entry of the table. Such an alias is unusable: the entry
    window would outrank the full span at mention detection time."""
    toks = normalize_surface(alias).split()
    for i in range(len(toks)):
        for j in range(i + 1, len(toks) + 1):
            if " ".join(toks[i:j]) in norm_entries:
                return True
    return False


def separable_aliases(table: TableData) -> dict[str, list[str]]:
    """Aliases that point to their own column more strongly than to any
    other column of the same table. The rest are discarded."""
    spec_aliases = _ALIAS_LOOKUP
    entries = _gazetteer_entry_set(table)
    out: dict[str, list[str]] = {}
    for j, col_id in enumerate(table.column_ids):
        display = table.column_display_names[j]
        kept = []
        for alias in spec_aliases.get(display, ()):
            if _embeds_entry(alias, entries):
                continue
            own = reference_similarity(alias, display)
            rival = max(
                (reference_similarity(alias, other)
                 for k, other in enumerate(table.column_display_names) if k != j),
                default=-1.0,
            )
            if own > rival:
                kept.append(alias)
        out[col_id] = kept
    return out


_ALIAS_LOOKUP = {
    spec.display: spec.aliases
    for specs in _THEMES.values()
    for spec in specs
}

_SOURCE_LOOKUP = {
    spec.display: spec.source
    for specs in _THEMES.values()
    for spec in specs
}

# Question-side surfaces for cell values. The database keeps the canonical
# form; an aliased mention has to be resolved by the linker, which is the
# point of generating them. Aliases shorten or respell the cell; they never
# wrap it in extra tokens, since a surface containing the cell verbatim
# would pin the mention to the gazetteer instead of the linker.
_CELL_ALIAS_LOOKUP = {
    "lewis hamilton": ("hamilton",), "nico rosberg": ("rosberg",),
    "sebastian vettel": ("vettel",), "fernando alonso": ("alonso",),
    "jenson button": ("button",), "felipe massa": ("massa",),
    "kimi raikkonen": ("raikkonen",), "valtteri bottas": ("bottas",),
    "daniel ricciardo": ("ricciardo",), "nico hulkenberg": ("hulkenberg",),
    "sergio perez": ("perez",), "romain grosjean": ("grosjean",),
    "lando norris": ("norris",), "george russell": ("russell",),
    "carlos sainz": ("sainz",), "charles leclerc": ("leclerc",),
    "esteban ocon": ("ocon",), "pierre gasly": ("gasly",),
    "lance stroll": ("stroll",), "alexander albon": ("albon",),
    "yuki tsunoda": ("tsunoda",), "guanyu zhou": ("zhou",),
    "kevin magnussen": ("magnussen",), "oscar piastri": ("piastri",),
    "jane austen": ("austen",), "charles dickens": ("dickens",),
    "leo tolstoy": ("tolstoy",), "virginia woolf": ("woolf",),
    "george orwell": ("orwell",), "franz kafka": ("kafka",),
    "jorge luis borges": ("borges",), "italo calvino": ("calvino",),
    "toni morrison": ("morrison",), "james baldwin": ("baldwin",),
    "doris lessing": ("lessing",), "chinua achebe": ("achebe",),
    "haruki murakami": ("murakami",), "margaret atwood": ("atwood",),
    "mercedes amg": ("mercedes",), "scuderia ferrari": ("ferrari",),
    "mclaren racing": ("mclaren",), "williams racing": ("williams",),
    "lotus f1": ("lotus",), "sauber motorsport": ("sauber",),
    "marussia f1": ("marussia",), "caterham f1": ("caterham",),
    "red bull racing": ("red bull",), "haas f1": ("haas",),
    "alpine f1": ("alpine",), "renault sport": ("renault",),
    "jordan grand prix": ("jordan",), "arrows grand prix": ("arrows",),
    "brabham racing": ("brabham",), "tyrrell racing": ("tyrrell",),
    "new york": ("ny",), "los angeles": ("la",),
    "cape town": ("capetown",),
}

# pools whose members read naturally as plurals in a question
_PLURAL_SOURCES = ("animals", "habitats", "products")


def _plural(word: str) -> str:
    if word.endswith(("s", "x", "z", "sh", "ch")):
        return word + "es"
    if word.endswith("y") and word[-2] not in "aeiou":
        return word[:-1] + "ies"
    return word + "s"


def _cell_alias_candidates(cell: str, col_type: str,
                           source: Optional[str]) -> list[str]:
    out = list(_CELL_ALIAS_LOOKUP.get(cell, ()))
    if col_type == "date" and len(cell) == 10 and cell[4] == cell[7] == "-":
        out.append(cell.replace("-", " "))
        out.append(cell.replace("-", "/"))
    elif col_type == "number" and cell.isdigit() and int(cell) >= 1000:
        out.append(f"{int(cell):,}")
    elif col_type == "string" and source in _PLURAL_SOURCES and " " not in cell:
        out.append(_plural(cell))
    return out


def separable_cell_aliases(table: TableData) -> dict[tuple[str, str], list[str]]:
    """Cell surfaces that resolve to their own cell more strongly than to
    any other cell of the table, keyed by (column id, cell)."""
    all_cells = table.distinct_cells()
    entries = _gazetteer_entry_set(table)
    out: dict[tuple[str, str], list[str]] = {}
    for j, col_id in enumerate(table.column_ids):
        ctype = table.column_types[j]
        source = _SOURCE_LOOKUP.get(table.column_display_names[j])
        for cell in dict.fromkeys(table.column_cells(col_id)):
            kept = []
            for alias in _cell_alias_candidates(cell, ctype, source):
                if _embeds_entry(alias, entries):
                    continue
                own = reference_similarity(alias, cell)
                rival = max(
                    (reference_similarity(alias, other)
                     for other in all_cells if other != cell),
                    default=-1.0,
                )
                if own > rival:
                    kept.append(alias)
            if kept:
                out[(col_id, cell)] = kept
    return out


# --------------------------------------------------------------------------
# table generation


def _make_cells(spec: ColumnSpec, n: int, rng: np.random.Generator) -> list[str]:
    if spec.source == "int":
        vals = rng.choice(
            np.arange(spec.lo, spec.hi + 1), size=n, replace=False
        )
        return [canon_number(int(v)) for v in vals]
    if spec.source == "float":
        cells: list[str] = []
        seen: set[str] = set()
        while len(cells) < n:
            v = canon_number(round(float(rng.uniform(spec.lo, spec.hi)), 1))
            if v not in seen:
                seen.add(v)
                cells.append(v)
        return cells
    if spec.source == "date":
        cells = []
        seen = set()
        while len(cells) < n:
            y = int(rng.integers(1998, 2024))
            m = int(rng.integers(1, 13))
            d = int(rng.integers(1, 29))
            v = f"{y:04d}-{m:02d}-{d:02d}"
            if v not in seen:
                seen.add(v)
                cells.append(v)
        return cells
    pool = _POOLS[spec.source]
    k = int(rng.integers(min(4, len(pool)), min(n, len(pool)) + 1))
    distinct = list(rng.choice(len(pool), size=k, replace=False))
    return [pool[distinct[int(rng.integers(k))]] for _ in range(n)]


def build_table(theme: str, table_id: str,
                rng: np.random.Generator) -> TableData:
    specs = _THEMES[theme]
    while True:
        extra = [specs[i] for i in sorted(
            rng.choice(np.arange(1, len(specs)),
                       size=int(rng.integers(3, len(specs))), replace=False)
        )]
        chosen = [specs[0]] + extra
        n_num = sum(1 for s in chosen if s.ctype == "number")
        if n_num >= 2:
            break
    n_rows = int(rng.integers(9, 15))
    columns = []
    for k, spec in enumerate(chosen, start=1):
        cid = f"c{k}" if rng.random() < 0.5 else f"c{k}_{spec.slug}"
        columns.append((cid, spec))
    cells = {cid: _make_cells(spec, n_rows, rng) for cid, spec in columns}
    # sprinkle a few nulls outside the lead column
    for cid, spec in columns[1:]:
        for i in range(n_rows):
            if rng.random() < 0.04:
                cells[cid][i] = None
    rows = tuple(
        tuple(cells[cid][i] for cid, _ in columns) for i in range(n_rows)
    )
    return TableData(
        table_id=table_id,
        table_name=f"{theme} table {table_id}",
        column_ids=tuple(cid for cid, _ in columns),
        column_display_names=tuple(s.display for _, s in columns),
        column_types=tuple(s.ctype for _, s in columns),
        rows=rows,
    )


# --------------------------------------------------------------------------
# question rendering


@dataclass
class Draft:
    tokens: list[str]
    sql_pairs: list[tuple[str, str]]
    aligns: list[tuple[tuple[int, int], int]]
    sql_text: str
    tree: Optional[Stmt]
    template: str


class _QBuilder:
    def __init__(self):
        self.tokens: list[str] = []
        self.aligns: list[tuple[tuple[int, int], int]] = []

    def words(self, text: str) -> None:
        self.tokens.extend(text.split())

    def mention(self, surface: str, sql_index: int) -> None:
        start = len(self.tokens)
        self.tokens.extend(surface.split())
        self.aligns.append(((start, len(self.tokens)), sql_index))


def _pairs(tree: Stmt) -> list[tuple[str, str]]:
    return typed_tokens(tree)


def _tok_index(pairs: Sequence[tuple[str, str]], kind: str, text: str,
               occurrence: int = 0) -> int:
    seen = 0
    for i, (k, t) in enumerate(pairs):
        if k == kind and t == text:
            if seen == occurrence:
                return i
            seen += 1
    raise ValueError(f"token ({kind}, {text}) #{occurrence} not found")


class _TableView:
    """Per-table sampling helpers shared by the templates."""

    def __init__(self, table: TableData, aliases: dict[str, list[str]],
                 alias_rate: float,
                 cell_aliases: Optional[dict[tuple[str, str], list[str]]] = None,
                 cell_alias_rate: float = 0.0):
        self.table = table
        self.aliases = aliases
        self.alias_rate = alias_rate
        self.cell_aliases = cell_aliases or {}
        self.cell_alias_rate = cell_alias_rate
        self.string_cols = [c for c, t in zip(table.column_ids, table.column_types)
                            if t == "string"]
        self.number_cols = [c for c, t in zip(table.column_ids, table.column_types)
                            if t == "number"]
        self.value_cols = [c for c in table.column_ids]

    def surface(self, col_id: str, rng: np.random.Generator) -> str:
        opts = self.aliases.get(col_id, [])
        if opts and rng.random() < self.alias_rate:
            return opts[int(rng.integers(len(opts)))]
        return self.table.display_of(col_id)

    def pick(self, cols: Sequence[str], rng: np.random.Generator,
             exclude: Sequence[str] = ()) -> Optional[str]:
        avail = [c for c in cols if c not in exclude]
        if not avail:
            return None
        return avail[int(rng.integers(len(avail)))]

    def cell_of(self, col_id: str, rng: np.random.Generator) -> Optional[str]:
        cells = self.table.column_cells(col_id)
        if not cells:
            return None
        return cells[int(rng.integers(len(cells)))]

    def cell_surface(self, col_id: str, cell: str,
                     rng: np.random.Generator) -> str:
        opts = self.cell_aliases.get((col_id, cell), ())
        if opts and rng.random() < self.cell_alias_rate:
            return opts[int(rng.integers(len(opts)))]
        return cell

    def distinct_nonnull(self, col_id: str) -> bool:
        ci = self.table.col_index(col_id)
        vals = [r[ci] for r in self.table.rows]
        return None not in vals and len(set(vals)) == len(vals)


def _value(cell: str, col_type: str) -> Value:
    if col_type == "number":
        return Value("number", cell)
    return Value("string", cell)


def _lit_sql(cell: str, col_type: str) -> str:
    if col_type == "number":
        return cell
    return "'" + cell.replace("'", "''") + "'"


# Each template returns a Draft or None when the table cannot host it.

def _tpl_select_where_eq(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.value_cols, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    cell = v.cell_of(b, rng)
    if cell is None:
        return None
    btype = v.table.type_of(b)
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        where=WhereClause((Cond(ColRef(b), CompOp.EQ, _value(cell, btype)),)),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("has a" if btype == "number" else "has")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    if btype == "number":
        q.words("of")
    q.mention(v.cell_surface(b, cell, rng), _tok_index(pairs, KIND_LITERAL, cell))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree,
                 "select_where_eq")


def _tpl_count_where(v: _TableView, rng) -> Optional[Draft]:
    b = v.pick(v.value_cols, rng)
    if b is None:
        return None
    cell = v.cell_of(b, rng)
    if cell is None:
        return None
    btype = v.table.type_of(b)
    tree = Stmt(
        select=SelectClause((SelectItem(STAR, AggOp.COUNT),)),
        where=WhereClause((Cond(ColRef(b), CompOp.EQ, _value(cell, btype)),)),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.mention("how many", _tok_index(pairs, KIND_KEYWORD, "count"))
    q.words("rows have")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    q.words("equal to")
    q.mention(v.cell_surface(b, cell, rng), _tok_index(pairs, KIND_LITERAL, cell))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "count_where")


def _tpl_agg_col(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.number_cols, rng)
    if a is None:
        return None
    agg = (AggOp.MAX, AggOp.MIN, AggOp.SUM, AggOp.AVG)[int(rng.integers(4))]
    word = _AGG_WORDS[agg][int(rng.integers(len(_AGG_WORDS[agg])))]
    tree = Stmt(select=SelectClause((SelectItem(ColRef(a), agg),)))
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("what is the")
    q.mention(word, _tok_index(pairs, KIND_KEYWORD, agg.value))
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "agg_col")


def _tpl_order_limit(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    cands = [c for c in v.number_cols if v.distinct_nonnull(c)]
    b = v.pick(cands, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    hi = rng.random() < 0.5
    sup_pool = _SUP_MAX if hi else _SUP_MIN
    sup = sup_pool[int(rng.integers(len(sup_pool)))]
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        order=OrderClause(SelectItem(ColRef(b)), "desc" if hi else "asc", 1),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("show the")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words(f"with the {sup}")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "order_limit")


def _tpl_list_sorted(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.value_cols, rng)
    cands = [c for c in v.number_cols if v.distinct_nonnull(c)]
    b = v.pick(cands, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    asc = rng.random() < 0.5
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        order=OrderClause(SelectItem(ColRef(b)), "asc" if asc else "desc", None),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("list every")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("from" if asc else "starting from")
    q.words("smallest" if asc else "largest")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "list_sorted")


def _tpl_list_all(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.value_cols, rng)
    if a is None:
        return None
    tree = Stmt(select=SelectClause((SelectItem(ColRef(a)),)))
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("list every")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("in the table")
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "list_all")


def _tpl_groupby_count(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    if a is None:
        return None
    tree = Stmt(
        select=SelectClause(
            (SelectItem(ColRef(a)), SelectItem(STAR, AggOp.COUNT))
        ),
        group=GroupClause(ColRef(a)),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.mention("how many", _tok_index(pairs, KIND_KEYWORD, "count"))
    q.words("rows are there for each")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a, occurrence=1))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree,
                 "groupby_count")


def _tpl_nested_agg(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.number_cols, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    hi = rng.random() < 0.5
    agg = AggOp.MAX if hi else AggOp.MIN
    sup_pool = _SUP_MAX if hi else _SUP_MIN
    sup = sup_pool[int(rng.integers(len(sup_pool)))]
    inner = Stmt(select=SelectClause((SelectItem(ColRef(b), agg),)))
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        where=WhereClause((Cond(ColRef(b), CompOp.EQ, Subquery(inner)),)),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("has the")
    q.mention(sup, _tok_index(pairs, KIND_KEYWORD, agg.value))
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "nested_agg")


def _tpl_in_list(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.value_cols, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    cells = sorted(set(v.table.column_cells(b)))
    n = 3 if (len(cells) >= 3 and rng.random() < 0.3) else 2
    if len(cells) < n:
        return None
    chosen = [cells[i] for i in sorted(
        rng.choice(len(cells), size=n, replace=False))]
    btype = v.table.type_of(b)
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        where=WhereClause((
            Cond(ColRef(b), CompOp.IN,
                 ValueList(tuple(_value(c, btype) for c in chosen))),
        )),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("has")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    q.words("among")
    for k, c in enumerate(chosen):
        if k:
            q.words("or")
        q.mention(v.cell_surface(b, c, rng),
                  _tok_index(pairs, KIND_LITERAL, c, occurrence=0))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "in_list")


def _tpl_compare(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.number_cols, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    cell = v.cell_of(b, rng)
    if cell is None:
        return None
    gt = rng.random() < 0.5
    strict = rng.random() < 0.75
    op = (CompOp.GT if strict else CompOp.GE) if gt else \
        (CompOp.LT if strict else CompOp.LE)
    if strict:
        words = _GT_WORDS if gt else _LT_WORDS
        phrase = " ".join(words[int(rng.integers(len(words)))])
    else:
        phrase = "at least" if gt else "at most"
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        where=WhereClause((Cond(ColRef(b), op, Value("number", cell)),)),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("has")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    q.words(phrase)
    q.mention(v.cell_surface(b, cell, rng), _tok_index(pairs, KIND_LITERAL, cell))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "compare")


def _tpl_two_conds(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.value_cols, rng, exclude=[a] if a else ())
    c = v.pick(v.value_cols, rng, exclude=[x for x in (a, b) if x])
    if a is None or b is None or c is None:
        return None
    cell_b = v.cell_of(b, rng)
    cell_c = v.cell_of(c, rng)
    if cell_b is None or cell_c is None:
        return None
    btype, ctype = v.table.type_of(b), v.table.type_of(c)
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        where=WhereClause((
            Cond(ColRef(b), CompOp.EQ, _value(cell_b, btype)),
            Cond(ColRef(c), CompOp.EQ, _value(cell_c, ctype)),
        )),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("has")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    q.mention(v.cell_surface(b, cell_b, rng),
              _tok_index(pairs, KIND_LITERAL, cell_b))
    q.words("and")
    q.mention(v.surface(c, rng), _tok_index(pairs, KIND_COLUMN, c))
    q.mention(v.cell_surface(c, cell_c, rng),
              _tok_index(pairs, KIND_LITERAL, cell_c,
                         occurrence=1 if cell_c == cell_b else 0))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "two_conds")


def _tpl_neq(v: _TableView, rng) -> Optional[Draft]:
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.value_cols, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    cell = v.cell_of(b, rng)
    if cell is None:
        return None
    btype = v.table.type_of(b)
    tree = Stmt(
        select=SelectClause((SelectItem(ColRef(a)),)),
        where=WhereClause((Cond(ColRef(b), CompOp.NE, _value(cell, btype)),)),
    )
    pairs = _pairs(tree)
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), _tok_index(pairs, KIND_COLUMN, a))
    q.words("has")
    q.mention(v.surface(b, rng), _tok_index(pairs, KIND_COLUMN, b))
    q.words("different from")
    q.mention(v.cell_surface(b, cell, rng), _tok_index(pairs, KIND_LITERAL, cell))
    return Draft(q.tokens, pairs, q.aligns, serialize(tree), tree, "neq")


def _tpl_or_disjunction(v: _TableView, rng) -> Optional[Draft]:
    """Gold SQL with OR: deliberately outside the modeled subset."""
    a = v.pick(v.string_cols, rng)
    b = v.pick(v.value_cols, rng, exclude=[a] if a else ())
    if a is None or b is None:
        return None
    cells = sorted(set(v.table.column_cells(b)))
    if len(cells) < 2:
        return None
    i, j = sorted(rng.choice(len(cells), size=2, replace=False))
    v1, v2 = cells[int(i)], cells[int(j)]
    btype = v.table.type_of(b)
    pairs = [
        (KIND_KEYWORD, "select"), (KIND_COLUMN, a),
        (KIND_KEYWORD, "from"), (KIND_KEYWORD, TABLE_TOKEN),
        (KIND_KEYWORD, "where"),
        (KIND_COLUMN, b), (KIND_KEYWORD, "="), (KIND_LITERAL, v1),
        (KIND_KEYWORD, "or"),
        (KIND_COLUMN, b), (KIND_KEYWORD, "="), (KIND_LITERAL, v2),
    ]
    sql_text = (
        f"select {a} from {TABLE_TOKEN} where "
        f"{b} = {_lit_sql(v1, btype)} or {b} = {_lit_sql(v2, btype)}"
    )
    q = _QBuilder()
    q.words("which")
    q.mention(v.surface(a, rng), 1)
    q.words("has")
    q.mention(v.surface(b, rng), 5)
    q.mention(v.cell_surface(b, v1, rng), 7)
    q.words("or perhaps")
    q.mention(v.cell_surface(b, v2, rng), 11)
    return Draft(q.tokens, pairs, q.aligns, sql_text, None, "or_disjunction")


_TEMPLATES: list[tuple[Callable, float]] = [
    (_tpl_select_where_eq, 20.0),
    (_tpl_count_where, 10.0),
    (_tpl_agg_col, 12.0),
    (_tpl_order_limit, 8.0),
    (_tpl_list_sorted, 5.0),
    (_tpl_list_all, 8.0),
    (_tpl_groupby_count, 8.0),
    (_tpl_nested_agg, 9.5),
    (_tpl_in_list, 8.0),
    (_tpl_compare, 10.0),
    (_tpl_two_conds, 7.0),
    (_tpl_neq, 5.0),
    (_tpl_or_disjunction, 1.6),
]


# --------------------------------------------------------------------------
# corpus assembly


DEFAULT_SEED = 20214
ALIAS_RATE = 0.7
CELL_ALIAS_RATE = 0.8


def _generate_split(
    split: str,
    views: list[tuple[_TableView, object]],
    quota: int,
    rng: np.random.Generator,
    seen_questions: set[str],
    stats: dict,
) -> list[DatasetRecord]:
    weights = np.array([w for _, w in _TEMPLATES])
    weights = weights / weights.sum()
    records: list[DatasetRecord] = []
    counter = 0
    vi = 0
    while len(records) < quota:
        view, conn = views[vi % len(views)]
        vi += 1
        draft = None
        for _ in range(300):
            t = int(rng.choice(len(_TEMPLATES), p=weights))
            cand = _TEMPLATES[t][0](view, rng)
            if cand is None:
                continue
            qtext = " ".join(cand.tokens)
            if qtext in seen_questions:
                stats["dedup_rerolls"] += 1
                continue
            answer = reference_answer(cand.sql_text, view.table, conn)
            if cand.tree is not None:
                ours = execute(cand.tree, view.table)
                ordered = cand.tree.order is not None
                if not denotation_equal(ours, answer, ordered=ordered):
                    stats["engine_disagreement_rerolls"] += 1
                    continue
            draft = cand
            seen_questions.add(qtext)
            break
        if draft is None:
            raise RuntimeError(f"could not fill {split} quota for "
                               f"table {view.table.table_id}")
        rec = DatasetRecord(
            record_id=f"{split}-{counter:05d}",
            table_id=view.table.table_id,
            query_tokens=tuple(draft.tokens),
            gold_sql_tokens=tuple(draft.sql_pairs),
            alignments=tuple(draft.aligns),
            gold_answer=tuple(answer),
        )
        counter += 1
        stats["templates"][draft.template] = (
            stats["templates"].get(draft.template, 0) + 1
        )
        if not answer:
            stats["empty_answers"] += 1
        records.append(rec)
    return records


def make_corpus(
    out_dir: Union[str, Path],
    seed: int = DEFAULT_SEED,
    train_size: int = TRAIN_SIZE,
    dev_size: int = DEV_SIZE,
    test_size: int = TEST_SIZE,
    n_tables: tuple[int, int, int] = (28, 4, 10),
) -> dict:
    """Generate tables plus train/dev/test splits under out_dir.

    Layout: tables/<id>.json, train.jsonl, dev.jsonl, test.jsonl, and a
    manifest.json with generation statistics.
    """
    out = Path(out_dir)
    (out / "tables").mkdir(parents=True, exist_ok=True)
    root = np.random.SeedSequence(seed)
    table_rng, train_rng, dev_rng, test_rng = (
        np.random.default_rng(s) for s in root.spawn(4)
    )

    themes = list(_THEMES)
    total_tables = sum(n_tables)
    tables: list[TableData] = []
    for idx in range(total_tables):
        theme = themes[idx % len(themes)]
        table = build_table(theme, f"tbl{idx:03d}", table_rng)
        tables.append(table)
        write_table(out / "tables" / f"{table.table_id}.json", table)

    def make_views(subset: list[TableData]) -> list[tuple[_TableView, object]]:
        out_views = []
        for t in subset:
            view = _TableView(t, separable_aliases(t), ALIAS_RATE,
                              separable_cell_aliases(t), CELL_ALIAS_RATE)
            out_views.append((view, table_connection(t)))
        return out_views

    n_train, n_dev, n_test = n_tables
    split_tables = {
        "train": tables[:n_train],
        "dev": tables[n_train:n_train + n_dev],
        "test": tables[n_train + n_dev:],
    }
    quotas = {"train": train_size, "dev": dev_size, "test": test_size}
    rngs = {"train": train_rng, "dev": dev_rng, "test": test_rng}

    seen: set[str] = set()
    stats = {
        "seed": seed,
        "templates": {},
        "dedup_rerolls": 0,
        "engine_disagreement_rerolls": 0,
        "empty_answers": 0,
        "counts": {},
        "tables": {s: [t.table_id for t in ts] for s, ts in split_tables.items()},
    }
    for split in ("train", "dev", "test"):
        views = make_views(split_tables[split])
        records = _generate_split(split, views, quotas[split], rngs[split],
                                  seen, stats)
        write_split(out / f"{split}.jsonl", records)
        stats["counts"][split] = len(records)
        for _, conn in views:
            conn.close()

    with open(out / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(stats, fh, indent=2, sort_keys=True)
    return stats
