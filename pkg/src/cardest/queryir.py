"""Canonical query representation for the supported SQL subset.

Grammar: SELECT COUNT(*) FROM t1, t2, ... WHERE <conjunction>, where each
conjunct is either an equi-join between two declared columns or a filter
``t.attr OP literal`` with OP in {<, <=, >, >=, =}. All column references
are table-qualified. Joins must match edges declared in the catalog and
must connect the FROM tables.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Optional

from .catalog import CATEGORICAL, CONTINUOUS, Catalog
from .errors import QueryError

COMPARISON_OPS = ("<=", ">=", "<", ">", "=")


@dataclass(frozen=True)
class Predicate:
    table: str
    attribute: str
    op: str
    value: object  # float for continuous, str for categorical

    def sort_key(self):
        return (
            self.table,
            self.attribute,
            COMPARISON_OPS.index(self.op),
            str(self.value),
        )


@dataclass
class QuerySpec:
    tables: tuple[str, ...]             # sorted
    joins: tuple[int, ...]              # sorted indices into catalog.joins
    filters: tuple[Predicate, ...]      # canonically sorted
    source_text: str = ""

    @property
    def table_set(self) -> frozenset[str]:
        return frozenset(self.tables)


@dataclass
class Region:
    """Per-attribute constraint region after folding all predicates.

    Continuous attributes carry an interval (with open/closed endpoint
    flags); categorical attributes carry the set of still-admissible
    values, or None when unconstrained.
    """

    kind: str
    lo: Optional[float] = None
    hi: Optional[float] = None
    lo_open: bool = False
    hi_open: bool = False
    values: Optional[frozenset] = None  # categorical; None = full domain
    filtered: bool = False

    @property
    def is_empty(self) -> bool:
        if self.kind == CATEGORICAL:
            return self.values is not None and len(self.values) == 0
        if self.lo is None or self.hi is None:
            return False
        if self.lo > self.hi:
            return True
        return self.lo == self.hi and (self.lo_open or self.hi_open)


_TOKEN_RE = re.compile(
    r"""\s*(?:
        (?P<string>'(?:[^']|'')*')
      | (?P<number>-?\d+(?:\.\d+)?(?:[eE][+-]?\d+)?)
      | (?P<comparison><=|>=|<|>|=)
      | (?P<word>[A-Za-z_][A-Za-z_0-9]*)
      | (?P<punct>[(),.*])
    )""",
    re.VERBOSE,
)


def _tokenize(text: str) -> list[tuple[str, str]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            if text[pos:].strip() == "":
                break
            raise QueryError(f"syntax error near {text[pos:pos + 20]!r}")
        pos = m.end()
        for kind in ("string", "number", "comparison", "word", "punct"):
            val = m.group(kind)
            if val is not None:
                tokens.append((kind, val))
                break
    return tokens


class _TokenStream:
    def __init__(self, tokens):
        self.tokens = tokens
        self.pos = 0

    def peek(self):
        return self.tokens[self.pos] if self.pos < len(self.tokens) else (None, None)

    def next(self):
        tok = self.peek()
        self.pos += 1
        return tok

    def expect_word(self, word: str):
        kind, val = self.next()
        if kind != "word" or val.lower() != word.lower():
            raise QueryError(f"expected {word!r}, found {val!r}")

    def expect_punct(self, punct: str):
        kind, val = self.next()
        if kind != "punct" or val != punct:
            raise QueryError(f"expected {punct!r}, found {val!r}")

    @property
    def exhausted(self):
        return self.pos >= len(self.tokens)


def _unquote(text: str) -> str:
    return text[1:-1].replace("''", "'")


def _quote(text: str) -> str:
    return "'" + text.replace("'", "''") + "'"


def _column_ref(ts: _TokenStream) -> tuple[str, str]:
    kind, table = ts.next()
    if kind != "word":
        raise QueryError(f"expected table name, found {table!r}")
    ts.expect_punct(".")
    kind, attr = ts.next()
    if kind != "word":
        raise QueryError(f"expected attribute name, found {attr!r}")
    return table, attr


def parse_query(sql: str, catalog: Catalog) -> QuerySpec:
    """Parse SQL text into a canonical QuerySpec resolved against the catalog."""
    ts = _TokenStream(_tokenize(sql))
    ts.expect_word("SELECT")
    ts.expect_word("COUNT")
    ts.expect_punct("(")
    ts.expect_punct("*")
    ts.expect_punct(")")
    ts.expect_word("FROM")

    tables: list[str] = []
    while True:
        kind, name = ts.next()
        if kind != "word":
            raise QueryError(f"expected table name, found {name!r}")
        if not catalog.has_table(name):
            raise QueryError(f"unknown table {name!r}")
        if name in tables:
            raise QueryError(f"table {name!r} listed twice")
        tables.append(name)
        kind, val = ts.peek()
        if kind == "punct" and val == ",":
            ts.next()
            continue
        break

    joins: list[int] = []
    filters: list[Predicate] = []
    if not ts.exhausted:
        ts.expect_word("WHERE")
        while True:
            lhs = _column_ref(ts)
            kind, op = ts.next()
            if kind != "comparison":
                raise QueryError(f"expected comparison operator, found {op!r}")
            kind, val = ts.peek()
            if kind == "word":
                rhs = _column_ref(ts)
                if op != "=":
                    raise QueryError("join conditions must use =")
                joins.append(_resolve_join(catalog, lhs, rhs))
            elif kind in ("number", "string"):
                ts.next()
                filters.append(_resolve_filter(catalog, lhs, op, kind, val))
            else:
                raise QueryError(f"expected literal or column, found {val!r}")
            if ts.exhausted:
                break
            ts.expect_word("AND")

    for table, attr in [(p.table, p.attribute) for p in filters]:
        if table not in tables:
            raise QueryError(f"filter references table {table!r} not in FROM")
    for j in joins:
        edge = catalog.joins[j]
        for table, _ in (edge.left, edge.right):
            if table not in tables:
                raise QueryError(f"join references table {table!r} not in FROM")

    spec = QuerySpec(
        tables=tuple(sorted(tables)),
        joins=tuple(sorted(set(joins))),
        filters=tuple(sorted(filters, key=Predicate.sort_key)),
        source_text=sql,
    )
    if not _connected(spec, catalog):
        raise QueryError("disconnected join graph over FROM tables")
    return spec


def _resolve_join(catalog: Catalog, lhs, rhs) -> int:
    for table, attr in (lhs, rhs):
        if not catalog.has_table(table):
            raise QueryError(f"unknown table {table!r}")
        try:
            catalog.table(table).attr(attr)
        except Exception:
            raise QueryError(f"unknown attribute {table}.{attr}") from None
    for i, edge in enumerate(catalog.joins):
        if (edge.left, edge.right) in ((lhs, rhs), (rhs, lhs)):
            return i
    raise QueryError(f"join {lhs[0]}.{lhs[1]} = {rhs[0]}.{rhs[1]} not in schema")


def _resolve_filter(catalog: Catalog, ref, op, literal_kind, literal) -> Predicate:
    table, attr = ref
    if not catalog.has_table(table):
        raise QueryError(f"unknown table {table!r}")
    try:
        meta = catalog.table(table).attr(attr)
    except Exception:
        raise QueryError(f"unknown attribute {table}.{attr}") from None
    if meta.kind == CATEGORICAL:
        if op != "=":
            raise QueryError(f"{table}.{attr} is categorical, only = is supported")
        if literal_kind != "string":
            raise QueryError(f"{table}.{attr} needs a quoted value")
        return Predicate(table, attr, op, _unquote(literal))
    if literal_kind != "number":
        raise QueryError(f"{table}.{attr} is continuous, needs a numeric value")
    return Predicate(table, attr, op, float(literal))


def _connected(spec: QuerySpec, catalog: Catalog) -> bool:
    if len(spec.tables) <= 1:
        return True
    adjacency: dict[str, set[str]] = {t: set() for t in spec.tables}
    for j in spec.joins:
        edge = catalog.joins[j]
        adjacency[edge.left[0]].add(edge.right[0])
        adjacency[edge.right[0]].add(edge.left[0])
    seen = {spec.tables[0]}
    frontier = [spec.tables[0]]
    while frontier:
        node = frontier.pop()
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == len(spec.tables)


def print_query(spec: QuerySpec, catalog: Catalog) -> str:
    """Render the canonical SQL text; parse(print(parse(q))) is a fixed point."""
    parts = []
    for j in spec.joins:
        edge = catalog.joins[j]
        parts.append(
            f"{edge.left[0]}.{edge.left[1]} = {edge.right[0]}.{edge.right[1]}"
        )
    for p in spec.filters:
        value = _quote(p.value) if isinstance(p.value, str) else repr(p.value)
        parts.append(f"{p.table}.{p.attribute} {p.op} {value}")
    sql = "SELECT COUNT(*) FROM " + ", ".join(spec.tables)
    if parts:
        sql += " WHERE " + " AND ".join(parts)
    return sql


def canonicalize(spec: QuerySpec, catalog: Catalog) -> dict[tuple[str, str], Region]:
    """Fold all predicates into per-attribute constraint regions.

    Every attribute of every table in the query gets an entry;
    unfiltered attributes map to their full domain. Contradictory
    predicates produce an empty region (cardinality 0 downstream).
    """
    regions: dict[tuple[str, str], Region] = {}
    for table in spec.tables:
        for attr in catalog.table(table).attributes:
            if attr.kind == CONTINUOUS:
                lo, hi = attr.domain if attr.domain else (-float("inf"), float("inf"))
                regions[(table, attr.name)] = Region(CONTINUOUS, lo=lo, hi=hi)
            else:
                regions[(table, attr.name)] = Region(CATEGORICAL)
    for p in spec.filters:
        region = regions[(p.table, p.attribute)]
        region.filtered = True
        if region.kind == CATEGORICAL:
            incoming = frozenset([p.value])
            region.values = (
                incoming if region.values is None else region.values & incoming
            )
            continue
        v = float(p.value)
        if p.op == "=":
            _tighten_lo(region, v, False)
            _tighten_hi(region, v, False)
        elif p.op in (">", ">="):
            _tighten_lo(region, v, p.op == ">")
        else:
            _tighten_hi(region, v, p.op == "<")
    return regions


def _tighten_lo(region: Region, v: float, open_: bool) -> None:
    if region.lo is None or v > region.lo or (v == region.lo and open_):
        region.lo, region.lo_open = v, open_


def _tighten_hi(region: Region, v: float, open_: bool) -> None:
    if region.hi is None or v < region.hi or (v == region.hi and open_):
        region.hi, region.hi_open = v, open_


def sub_queries(spec: QuerySpec, catalog: Catalog) -> list[QuerySpec]:
    """All connected sub-queries (size >= 1) with induced joins and filters.

    Ordered by size then lexicographic table set, so output is stable.
    """
    subsets: list[tuple[str, ...]] = []
    tables = spec.tables
    n = len(tables)
    for mask in range(1, 1 << n):
        subset = tuple(tables[i] for i in range(n) if mask & (1 << i))
        if _subset_connected(subset, spec, catalog):
            subsets.append(subset)
    subsets.sort(key=lambda s: (len(s), s))
    out = []
    for subset in subsets:
        sset = set(subset)
        joins = tuple(
            j
            for j in spec.joins
            if catalog.joins[j].left[0] in sset and catalog.joins[j].right[0] in sset
        )
        filters = tuple(p for p in spec.filters if p.table in sset)
        sub = QuerySpec(tables=subset, joins=joins, filters=filters)
        sub.source_text = print_query(sub, catalog)
        out.append(sub)
    return out


def _subset_connected(subset: tuple[str, ...], spec: QuerySpec, catalog: Catalog) -> bool:
    if len(subset) == 1:
        return True
    sset = set(subset)
    adjacency: dict[str, set[str]] = {t: set() for t in subset}
    for j in spec.joins:
        edge = catalog.joins[j]
        lt, rt = edge.left[0], edge.right[0]
        if lt in sset and rt in sset:
            adjacency[lt].add(rt)
            adjacency[rt].add(lt)
    seen = {subset[0]}
    frontier = [subset[0]]
    while frontier:
        node = frontier.pop()
        for nxt in adjacency[node]:
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    return len(seen) == len(subset)
