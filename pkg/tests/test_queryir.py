import itertools

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cardest.catalog import schema_from_dict
from cardest.errors import QueryError
from cardest.queryir import (
    canonicalize,
    parse_query,
    print_query,
    sub_queries,
)


def test_parse_basic(chain3):
    q = parse_query(
        "SELECT COUNT(*) FROM a, b WHERE a.k = b.k AND a.v <= 5", chain3
    )
    assert q.tables == ("a", "b")
    assert len(q.joins) == 1
    assert len(q.filters) == 1
    assert q.filters[0].op == "<="


def test_parse_undeclared_join(chain3):
    # both columns exist, but no such edge is declared
    with pytest.raises(QueryError, match="not in schema"):
        parse_query("SELECT COUNT(*) FROM a, b WHERE a.v = b.v", chain3)


def test_parse_disconnected(chain3):
    with pytest.raises(QueryError, match="disconnected"):
        parse_query("SELECT COUNT(*) FROM a, b WHERE a.v = 1", chain3)


def test_parse_unknown_names(chain3):
    with pytest.raises(QueryError, match="unknown table"):
        parse_query("SELECT COUNT(*) FROM nope", chain3)
    with pytest.raises(QueryError, match="unknown attribute"):
        parse_query("SELECT COUNT(*) FROM a WHERE a.nope = 1", chain3)


def test_parse_categorical_needs_equality(chain3):
    with pytest.raises(QueryError, match="only ="):
        parse_query("SELECT COUNT(*) FROM a WHERE a.c < 'x'", chain3)


def test_parse_quoted_value_with_escape(chain3):
    q = parse_query("SELECT COUNT(*) FROM a WHERE a.c = 'it''s'", chain3)
    assert q.filters[0].value == "it's"
    assert parse_query(print_query(q, chain3), chain3) == q


def test_parse_print_fixed_point(chain3):
    sql = "select count(*) from b, a where a.k = b.k and b.v >= 10 and a.c = 'v1'"
    q1 = parse_query(sql, chain3)
    printed = print_query(q1, chain3)
    q2 = parse_query(printed, chain3)
    assert (q1.tables, q1.joins, q1.filters) == (q2.tables, q2.joins, q2.filters)
    assert print_query(q2, chain3) == printed


def test_canonicalize_intersection(chain3):
    q = parse_query(
        "SELECT COUNT(*) FROM a WHERE a.v <= 5 AND a.v > 2", chain3
    )
    region = canonicalize(q, chain3)[("a", "v")]
    assert region.lo == 2 and region.lo_open
    assert region.hi == 5 and not region.hi_open
    assert not region.is_empty


def test_canonicalize_unfiltered_full_domain(chain3):
    q = parse_query("SELECT COUNT(*) FROM a WHERE a.c = 'v1'", chain3)
    region = canonicalize(q, chain3)[("a", "v")]
    assert not region.filtered
    assert region.lo == chain3.table("a").attr("v").domain[0]
    assert region.hi == chain3.table("a").attr("v").domain[1]


def test_canonicalize_contradiction_empty(chain3):
    q = parse_query("SELECT COUNT(*) FROM a WHERE a.v = 3 AND a.v = 4", chain3)
    assert canonicalize(q, chain3)[("a", "v")].is_empty
    q2 = parse_query(
        "SELECT COUNT(*) FROM a WHERE a.c = 'v1' AND a.c = 'v2'", chain3
    )
    assert canonicalize(q2, chain3)[("a", "c")].is_empty


# --- sub-queries -------------------------------------------------------------


def brute_force_connected_subsets(tables, edges):
    """Independent enumeration: try every subset, check connectivity."""
    out = []
    for r in range(1, len(tables) + 1):
        for subset in itertools.combinations(tables, r):
            nodes = set(subset)
            adj = {t: set() for t in subset}
            for (u, v) in edges:
                if u in nodes and v in nodes:
                    adj[u].add(v)
                    adj[v].add(u)
            seen = {subset[0]}
            stack = [subset[0]]
            while stack:
                for nxt in adj[stack.pop()]:
                    if nxt not in seen:
                        seen.add(nxt)
                        stack.append(nxt)
            if len(seen) == len(nodes):
                out.append(frozenset(subset))
    return out


def test_sub_queries_chain(chain3):
    q = parse_query(
        "SELECT COUNT(*) FROM a, b, c WHERE a.k = b.k AND b.m = c.m AND a.v <= 5",
        chain3,
    )
    subs = sub_queries(q, chain3)
    names = [s.tables for s in subs]
    assert names == [("a",), ("b",), ("c",), ("a", "b"), ("b", "c"), ("a", "b", "c")]
    expected = brute_force_connected_subsets(
        ("a", "b", "c"), [("a", "b"), ("b", "c")]
    )
    assert {frozenset(s.tables) for s in subs} == set(expected)
    # filters carried onto the right sub-queries
    for s in subs:
        if "a" in s.tables:
            assert any(p.table == "a" for p in s.filters)
        else:
            assert not s.filters


def test_sub_queries_single_table(chain3):
    q = parse_query("SELECT COUNT(*) FROM a WHERE a.v <= 5", chain3)
    subs = sub_queries(q, chain3)
    assert len(subs) == 1 and subs[0].tables == ("a",)


def test_sub_queries_star(star4):
    q = parse_query(
        "SELECT COUNT(*) FROM h, x, y WHERE h.k1 = x.k1 AND h.k2 = y.k2", star4
    )
    subs = sub_queries(q, star4)
    assert [s.tables for s in subs] == [
        ("h",), ("x",), ("y",), ("h", "x"), ("h", "y"), ("h", "x", "y"),
    ]


@given(st.integers(2, 7), st.data())
@settings(max_examples=40, deadline=None)
def test_sub_queries_count_matches_brute_force(n, data):
    tables = [f"t{i}" for i in range(n)]
    possible = list(itertools.combinations(range(n), 2))
    chosen = data.draw(st.sets(st.sampled_from(possible), min_size=n - 1))
    # ensure connectivity by adding a spanning path
    edges = sorted(set(chosen) | {(i, i + 1) for i in range(n - 1)})
    doc = {
        "name": "g",
        "tables": [
            {"name": t, "columns": [{"name": f"j{i}", "kind": "continuous"}
                                     for i in range(len(edges))]}
            for t in tables
        ],
        "joins": [
            {"left": f"t{u}.j{k}", "right": f"t{v}.j{k}"}
            for k, (u, v) in enumerate(edges)
        ],
    }
    catalog = schema_from_dict(doc)
    sql = "SELECT COUNT(*) FROM " + ", ".join(tables) + " WHERE " + " AND ".join(
        f"t{u}.j{k} = t{v}.j{k}" for k, (u, v) in enumerate(edges)
    )
    q = parse_query(sql, catalog)
    subs = sub_queries(q, catalog)
    expected = brute_force_connected_subsets(
        tuple(tables), [(f"t{u}", f"t{v}") for u, v in edges]
    )
    assert len(subs) == len(expected)
    assert {frozenset(s.tables) for s in subs} == set(expected)
