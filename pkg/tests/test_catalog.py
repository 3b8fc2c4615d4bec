import io

import numpy as np
import pytest

from cardest.catalog import (
    ingest_table,
    join_graph,
    load_schema,
    schema_from_dict,
)
from cardest.errors import IngestError, SchemaError


def make_schema(joins=()):
    return {
        "name": "demo",
        "tables": [
            {"name": "a", "columns": [
                {"name": "x", "kind": "continuous"},
                {"name": "c", "kind": "categorical"},
            ]},
            {"name": "b", "columns": [{"name": "y", "kind": "continuous"}]},
            {"name": "c", "columns": [{"name": "z", "kind": "continuous"}]},
        ],
        "joins": list(joins),
    }


def test_load_schema_roundtrip(tmp_path):
    doc = make_schema([
        {"left": "a.x", "right": "b.y", "kind": "PK-FK"},
        {"left": "b.y", "right": "c.z", "kind": "FK-FK"},
    ])
    path = tmp_path / "schema.json"
    path.write_text(__import__("json").dumps(doc))
    catalog = load_schema(path)
    assert [t.name for t in catalog.tables] == ["a", "b", "c"]
    assert len(catalog.joins) == 2
    assert catalog.joins[0].kind == "PK-FK"


def test_schema_validation_errors():
    with pytest.raises(SchemaError, match="unknown attribute"):
        schema_from_dict(make_schema([{"left": "a.nope", "right": "b.y"}]))
    doc = make_schema()
    doc["tables"].append({"name": "a", "columns": []})
    with pytest.raises(SchemaError, match="duplicate table"):
        schema_from_dict(doc)
    with pytest.raises(SchemaError, match="self-loop"):
        schema_from_dict(make_schema([{"left": "a.x", "right": "a.c"}]))
    with pytest.raises(SchemaError, match="not found"):
        load_schema("/nonexistent/schema.json")


def test_ingest_continuous():
    catalog = schema_from_dict({
        "name": "t", "tables": [
            {"name": "t", "columns": [{"name": "a", "kind": "continuous"}]}
        ], "joins": [],
    })
    cols = ingest_table(catalog, "t", io.StringIO("a\n1\n2\n"))
    assert cols["a"].values.tolist() == [1.0, 2.0]
    assert catalog.table("t").row_count == 2


def test_ingest_categorical_first_appearance():
    catalog = schema_from_dict({
        "name": "t", "tables": [
            {"name": "t", "columns": [{"name": "c", "kind": "categorical"}]}
        ], "joins": [],
    })
    cols = ingest_table(catalog, "t", io.StringIO("c\nx\ny\nx\n"))
    assert cols["c"].values.tolist() == [0, 1, 0]
    assert cols["c"].distinct_count == 2


def test_ingest_empty_field_is_null():
    catalog = schema_from_dict({
        "name": "t", "tables": [
            {"name": "t", "columns": [{"name": "a", "kind": "continuous"}]}
        ], "joins": [],
    })
    cols = ingest_table(catalog, "t", io.StringIO("a\n1\n\n3\n"))
    col = cols["a"]
    assert col.null_mask.tolist() == [False, True, False]
    assert col.values[0] == 1.0 and col.values[2] == 3.0
    assert np.isnan(col.values[1])


def test_ingest_errors():
    catalog = schema_from_dict({
        "name": "t", "tables": [
            {"name": "t", "columns": [{"name": "a", "kind": "continuous"}]}
        ], "joins": [],
    })
    with pytest.raises(IngestError, match="header"):
        ingest_table(catalog, "t", io.StringIO("wrong\n1\n"))
    with pytest.raises(IngestError, match="unparsable"):
        ingest_table(catalog, "t", io.StringIO("a\nnot_a_number\n"))
    with pytest.raises(IngestError, match="fields"):
        ingest_table(catalog, "t", io.StringIO("a\n1,2\n"))


def test_ingest_reserialization_roundtrip(chain3):
    # Values survive ingestion modulo dictionary encoding.
    col = chain3.column("b", "m")
    rendered = [
        None if null else col.dictionary[i]
        for i, null in zip(col.values, col.null_mask)
    ]
    ids = []
    seen = {}
    for v in rendered:
        if v is None:
            ids.append(-1)
            continue
        seen.setdefault(v, len(seen))
        ids.append(seen[v])
    assert ids == col.values.tolist()


def test_join_graph_chain():
    doc = make_schema([
        {"left": "a.x", "right": "b.y"},
        {"left": "b.y", "right": "c.z"},
    ])
    g = join_graph(schema_from_dict(doc))
    assert g.degree("b") == 2
    assert g.nodes == ["a", "b", "c"]
    assert len(g.edges) == 2


def test_join_graph_edgeless():
    g = join_graph(schema_from_dict(make_schema()))
    assert g.edges == []
    assert all(g.degree(n) == 0 for n in g.nodes)


def test_join_graph_parallel_edges():
    # Two edges between the same pair of tables stay distinct.
    doc = {
        "name": "p",
        "tables": [
            {"name": "a", "columns": [
                {"name": "x", "kind": "continuous"},
                {"name": "y", "kind": "continuous"},
            ]},
            {"name": "b", "columns": [
                {"name": "x", "kind": "continuous"},
                {"name": "y", "kind": "continuous"},
            ]},
        ],
        "joins": [
            {"left": "a.x", "right": "b.x"},
            {"left": "a.y", "right": "b.y"},
        ],
    }
    g = join_graph(schema_from_dict(doc))
    assert len(g.edges_between("a", "b")) == 2
    assert g.degree("a") == 2


def test_join_graph_matches_catalog(star4):
    g = join_graph(star4)
    assert set(g.nodes) == {t.name for t in star4.tables}
    assert g.edges == star4.joins
