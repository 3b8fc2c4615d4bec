"""Synthetic catalogs: small fixtures and a correlated database family.

The database family stands in for a large multi-database training corpus
at desk scale. Every member shares one generative law with per-seed
parameters (sizes, domains, skew, correlation strength), so models
trained on a few members face a held-out member the way a pretrained
estimator faces an unseen database.
"""

from __future__ import annotations

from typing import Optional, Sequence

import numpy as np

from .catalog import (
    CATEGORICAL,
    CONTINUOUS,
    Catalog,
    ColumnData,
    schema_from_dict,
)


def ingest_arrays(catalog: Catalog, table: str, columns: dict[str, Sequence]) -> None:
    """Attach in-memory columns to a catalog table, bypassing CSV parsing.

    Continuous columns take float sequences (NaN or None for null);
    categorical columns take string sequences (None for null) and get
    first-appearance dictionary encoding.
    """
    meta = catalog.table(table)
    if set(columns) != {a.name for a in meta.attributes}:
        raise ValueError(f"columns {sorted(columns)} do not match schema of {table}")
    n = len(next(iter(columns.values())))
    for attr in meta.attributes:
        raw = columns[attr.name]
        if len(raw) != n:
            raise ValueError(f"{table}.{attr.name}: ragged column lengths")
        if attr.kind == CONTINUOUS:
            values = np.array(
                [np.nan if v is None else float(v) for v in raw], dtype=np.float64
            )
            null_mask = np.isnan(values)
            col = ColumnData(table, attr.name, CONTINUOUS, values, null_mask)
            nn = col.non_null_values()
            if attr.domain is None and nn.size:
                attr.domain = (float(nn.min()), float(nn.max()))
        else:
            ids = np.empty(n, dtype=np.int64)
            dictionary: list[str] = []
            index: dict[str, int] = {}
            null_mask = np.zeros(n, dtype=bool)
            for i, v in enumerate(raw):
                if v is None:
                    ids[i] = -1
                    null_mask[i] = True
                    continue
                v = str(v)
                code = index.get(v)
                if code is None:
                    code = len(dictionary)
                    index[v] = code
                    dictionary.append(v)
                ids[i] = code
            col = ColumnData(table, attr.name, CATEGORICAL, ids, null_mask, dictionary)
        catalog.data.setdefault(table, {})[attr.name] = col
    meta.row_count = n


def _random_column(rng: np.random.Generator, n: int, lo: float, hi: float, *,
                   distinct: Optional[int] = None, null_rate: float = 0.0):
    if distinct:
        pool = np.round(np.linspace(lo, hi, distinct), 3)
        values = rng.choice(pool, size=n)
    else:
        values = rng.uniform(lo, hi, size=n)
    values = values.astype(object)
    if null_rate > 0:
        nulls = rng.random(n) < null_rate
        values[nulls] = None
    return list(values)


def _random_labels(rng: np.random.Generator, n: int, alphabet: int,
                   null_rate: float = 0.0):
    labels = [f"v{int(i)}" for i in rng.integers(0, alphabet, size=n)]
    if null_rate > 0:
        nulls = rng.random(n) < null_rate
        labels = [None if isnull else v for v, isnull in zip(labels, nulls)]
    return labels


FIXTURE_SCHEMAS = {
    # a - b - c on mixed-kind keys
    "chain3": {
        "name": "chain3",
        "tables": [
            {"name": "a", "columns": [
                {"name": "k", "kind": "continuous"},
                {"name": "v", "kind": "continuous"},
                {"name": "c", "kind": "categorical"},
            ]},
            {"name": "b", "columns": [
                {"name": "k", "kind": "continuous"},
                {"name": "m", "kind": "categorical"},
                {"name": "v", "kind": "continuous"},
            ]},
            {"name": "c", "columns": [
                {"name": "m", "kind": "categorical"},
                {"name": "v", "kind": "continuous"},
            ]},
        ],
        "joins": [
            {"left": "a.k", "right": "b.k", "kind": "FK-FK"},
            {"left": "b.m", "right": "c.m", "kind": "FK-FK"},
        ],
    },
    # hub h with leaves x, y, z; one parallel edge h-x
    "star4": {
        "name": "star4",
        "tables": [
            {"name": "h", "columns": [
                {"name": "k1", "kind": "continuous"},
                {"name": "k2", "kind": "categorical"},
                {"name": "k3", "kind": "continuous"},
                {"name": "v", "kind": "continuous"},
            ]},
            {"name": "x", "columns": [
                {"name": "k1", "kind": "continuous"},
                {"name": "k3", "kind": "continuous"},
                {"name": "v", "kind": "continuous"},
            ]},
            {"name": "y", "columns": [
                {"name": "k2", "kind": "categorical"},
                {"name": "c", "kind": "categorical"},
            ]},
            {"name": "z", "columns": [
                {"name": "k3", "kind": "continuous"},
                {"name": "v", "kind": "continuous"},
            ]},
        ],
        "joins": [
            {"left": "h.k1", "right": "x.k1", "kind": "FK-FK"},
            {"left": "h.k2", "right": "y.k2", "kind": "PK-FK"},
            {"left": "h.k3", "right": "z.k3", "kind": "FK-FK"},
            {"left": "h.k3", "right": "x.k3", "kind": "FK-FK"},
        ],
    },
    # triangle a - b - c - a
    "cyclic3": {
        "name": "cyclic3",
        "tables": [
            {"name": "a", "columns": [
                {"name": "k", "kind": "continuous"},
                {"name": "m", "kind": "categorical"},
                {"name": "v", "kind": "continuous"},
            ]},
            {"name": "b", "columns": [
                {"name": "k", "kind": "continuous"},
                {"name": "m", "kind": "categorical"},
                {"name": "v", "kind": "continuous"},
            ]},
            {"name": "c", "columns": [
                {"name": "m", "kind": "categorical"},
                {"name": "k", "kind": "continuous"},
            ]},
        ],
        "joins": [
            {"left": "a.k", "right": "b.k", "kind": "FK-FK"},
            {"left": "b.m", "right": "c.m", "kind": "FK-FK"},
            {"left": "a.m", "right": "c.m", "kind": "FK-FK"},
        ],
    },
}


def fixture_catalog(kind: str, seed: int = 0, rows: int = 120) -> Catalog:
    """Small ingested catalog with duplicates, nulls, and mixed key kinds."""
    rng = np.random.default_rng([hash_seed(kind), seed])
    catalog = schema_from_dict(FIXTURE_SCHEMAS[kind])
    key_distinct = max(4, rows // 6)
    if kind == "chain3":
        ingest_arrays(catalog, "a", {
            "k": _random_column(rng, rows, 0, 50, distinct=key_distinct, null_rate=0.03),
            "v": _random_column(rng, rows, -10, 10),
            "c": _random_labels(rng, rows, 6, null_rate=0.05),
        })
        ingest_arrays(catalog, "b", {
            "k": _random_column(rng, rows, 0, 50, distinct=key_distinct),
            "m": _random_labels(rng, rows, 8, null_rate=0.02),
            "v": _random_column(rng, rows, 0, 100),
        })
        ingest_arrays(catalog, "c", {
            "m": _random_labels(rng, rows, 8),
            "v": _random_column(rng, rows, 0, 1),
        })
    elif kind == "star4":
        hub = max(20, rows // 2)
        leaf = max(12, rows // 3)
        ingest_arrays(catalog, "h", {
            "k1": _random_column(rng, hub, 0, 30, distinct=10),
            "k2": _random_labels(rng, hub, 12, null_rate=0.04),
            "k3": _random_column(rng, hub, 0, 20, distinct=8),
            "v": _random_column(rng, hub, 0, 5),
        })
        ingest_arrays(catalog, "x", {
            "k1": _random_column(rng, leaf, 0, 30, distinct=10, null_rate=0.04),
            "k3": _random_column(rng, leaf, 0, 20, distinct=8),
            "v": _random_column(rng, leaf, -1, 1),
        })
        ingest_arrays(catalog, "y", {
            "k2": _random_labels(rng, leaf, 12),
            "c": _random_labels(rng, leaf, 4),
        })
        ingest_arrays(catalog, "z", {
            "k3": _random_column(rng, leaf, 0, 20, distinct=8),
            "v": _random_column(rng, leaf, 0, 10, null_rate=0.05),
        })
    elif kind == "cyclic3":
        ingest_arrays(catalog, "a", {
            "k": _random_column(rng, rows, 0, 40, distinct=key_distinct),
            "m": _random_labels(rng, rows, 7, null_rate=0.03),
            "v": _random_column(rng, rows, 0, 9),
        })
        ingest_arrays(catalog, "b", {
            "k": _random_column(rng, rows, 0, 40, distinct=key_distinct, null_rate=0.02),
            "m": _random_labels(rng, rows, 7),
            "v": _random_column(rng, rows, -5, 5),
        })
        ingest_arrays(catalog, "c", {
            "m": _random_labels(rng, rows, 7),
            "k": _random_column(rng, rows, 0, 40, distinct=key_distinct),
        })
    else:
        raise ValueError(f"unknown fixture kind {kind!r}")
    return catalog


def hash_seed(text: str) -> int:
    # Stable string -> int for seeding, independent of PYTHONHASHSEED.
    h = 2166136261
    for ch in text.encode("utf-8"):
        h = ((h ^ ch) * 16777619) & 0xFFFFFFFF
    return h


# ---------------------------------------------------------------------------
# The correlated database family.

_FAMILY_SCHEMA = {
    "name": "family",
    "tables": [
        {"name": "d0", "columns": [
            {"name": "k", "kind": "continuous"},
            {"name": "a", "kind": "continuous"},
            {"name": "b", "kind": "continuous"},
        ]},
        {"name": "f", "columns": [
            {"name": "fk0", "kind": "continuous"},
            {"name": "fk1", "kind": "continuous"},
            {"name": "a", "kind": "continuous"},
            {"name": "c", "kind": "categorical"},
        ]},
        {"name": "d1", "columns": [
            {"name": "k", "kind": "continuous"},
            {"name": "a", "kind": "continuous"},
            {"name": "c", "kind": "categorical"},
        ]},
    ],
    "joins": [
        {"left": "d0.k", "right": "f.fk0", "kind": "PK-FK"},
        {"left": "d1.k", "right": "f.fk1", "kind": "PK-FK"},
    ],
}


def synthetic_database(
    name: str,
    seed: int,
    scale: float = 1.0,
    noise_range: tuple[float, float] = (0.02, 0.08),
    zipf_range: tuple[float, float] = (1.4, 2.2),
    cover_range: tuple[float, float] = (0.5, 0.9),
) -> Catalog:
    """One member of the correlated family: dim - fact - dim chain.

    Keys are numeric ids. Facts reference dimension keys with Zipf-like
    skew biased toward low ids, every non-key attribute is a noisy
    monotone function of its row's key position, and fact attributes
    follow the referenced d0 row. Filters therefore interact with join
    fan-out and with each other. Per-seed parameters vary sizes, domains,
    skew exponents, coverage, and correlation noise.
    """
    rng = np.random.default_rng([hash_seed("familyv2"), hash_seed(name), seed])
    n0 = max(4, int(rng.integers(40, 110) * scale))
    n1 = max(4, int(rng.integers(30, 90) * scale))
    nf = max(10, int(rng.integers(1500, 3200) * scale))

    catalog = schema_from_dict(_FAMILY_SCHEMA)
    catalog.name = name

    gamma0 = float(rng.uniform(0.6, 1.8))
    noise = float(rng.uniform(*noise_range))
    lo0, w0 = float(rng.uniform(-40, 40)), float(rng.uniform(15, 150))
    pos0 = np.arange(n0) / max(1, n0 - 1)
    a0 = lo0 + w0 * pos0 ** gamma0
    b0 = lo0 + w0 * np.clip(pos0 ** gamma0 + rng.normal(0, noise, n0), 0, 1.2)
    ingest_arrays(catalog, "d0", {
        "k": [float(i) for i in range(n0)], "a": list(a0), "b": list(b0),
    })

    gamma1 = float(rng.uniform(0.6, 1.8))
    cats1 = int(rng.integers(4, 10))
    lo1, w1 = float(rng.uniform(-40, 40)), float(rng.uniform(15, 150))
    pos1 = np.arange(n1) / max(1, n1 - 1)
    a1 = lo1 + w1 * pos1 ** gamma1
    c1 = [f"c{int(p * (cats1 - 1e-9))}" for p in pos1]
    ingest_arrays(catalog, "d1", {
        "k": [float(i) for i in range(n1)], "a": list(a1), "c": c1,
    })

    def skewed_indices(n_keys: int, zipf: float, cover: float, size: int):
        top = max(1, int(n_keys * cover))
        weights = 1.0 / (np.arange(1, top + 1) ** zipf)
        weights /= weights.sum()
        return rng.choice(top, size=size, p=weights)

    idx0 = skewed_indices(n0, float(rng.uniform(*zipf_range)), float(rng.uniform(*cover_range)), nf)
    idx1 = skewed_indices(n1, float(rng.uniform(*zipf_range)), float(rng.uniform(*cover_range)), nf)
    lof, wf = float(rng.uniform(-40, 40)), float(rng.uniform(15, 150))
    catsf = int(rng.integers(4, 10))
    posf = (idx0 / max(1, n0 - 1)) ** gamma0
    fa = lof + wf * np.clip(posf + rng.normal(0, noise, nf), 0, 1.2)
    fc = [f"c{int(min(q, 1.0) * (catsf - 1e-9))}" for q in posf]
    ingest_arrays(catalog, "f", {
        "fk0": [float(i) for i in idx0],
        "fk1": [float(i) for i in idx1],
        "a": list(fa),
        "c": fc,
    })
    return catalog


def family_corpus_records(catalog, stats, n: int, seed: int, oversample: int = 6):
    """Generate until n records with positive cardinality are collected.

    Mirrors real test workloads, whose queries all return rows; training
    targets need log(card) with card >= 1.
    """
    from .workload import generate_workload

    raw = generate_workload(catalog, stats, n=n * oversample, seed=seed)
    records = [r for r in raw if r.true_card >= 1]
    if len(records) < n:
        raise ValueError(f"only {len(records)} positive-card records out of {n * oversample}")
    return records[:n]
