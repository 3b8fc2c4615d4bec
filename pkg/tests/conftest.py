import pytest

from cardest.catalog import schema_from_dict
from cardest.stats import build_stats
from cardest.synth import fixture_catalog, ingest_arrays


@pytest.fixture(scope="session")
def chain3():
    return fixture_catalog("chain3", seed=0, rows=120)


@pytest.fixture(scope="session")
def star4():
    return fixture_catalog("star4", seed=0, rows=90)


@pytest.fixture(scope="session")
def cyclic3():
    return fixture_catalog("cyclic3", seed=0, rows=100)


@pytest.fixture(scope="session")
def chain3_stats(chain3):
    return build_stats(chain3)


def two_table_catalog(left_keys, right_pairs):
    """T1(a) joined to T2(a, b) on a; values given explicitly."""
    catalog = schema_from_dict({
        "name": "tiny",
        "tables": [
            {"name": "t1", "columns": [{"name": "a", "kind": "continuous"}]},
            {"name": "t2", "columns": [
                {"name": "a", "kind": "continuous"},
                {"name": "b", "kind": "continuous"},
            ]},
        ],
        "joins": [{"left": "t1.a", "right": "t2.a", "kind": "PK-FK"}],
    })
    ingest_arrays(catalog, "t1", {"a": [float(v) for v in left_keys]})
    ingest_arrays(catalog, "t2", {
        "a": [float(a) for a, _ in right_pairs],
        "b": [float(b) for _, b in right_pairs],
    })
    return catalog


@pytest.fixture()
def tiny_join():
    return two_table_catalog([1, 2, 3], [(1, 10), (1, 20), (3, 30)])
