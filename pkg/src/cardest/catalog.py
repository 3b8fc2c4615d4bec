"""Schema and data loading.

A Catalog describes tables, typed columns, and declared join edges, and
(after ingestion) holds the column data everything downstream reads.
Schemas come from a JSON file; data comes from one CSV per table with a
header row, where an empty field is null.
"""

from __future__ import annotations

import csv
import io
import json
import pickle
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Union

import numpy as np

from .errors import IngestError, SchemaError

CATEGORICAL = "categorical"
CONTINUOUS = "continuous"

CATALOG_PICKLE_MAGIC = "cardest-catalog-v1"


@dataclass
class AttrMeta:
    name: str
    kind: str  # CATEGORICAL or CONTINUOUS
    # Declared [min, max] for continuous attributes; filled with the
    # observed range at ingestion when absent. None for categorical.
    domain: Optional[tuple[float, float]] = None


@dataclass
class TableMeta:
    name: str
    attributes: list[AttrMeta]
    row_count: int = 0

    def attr(self, name: str) -> AttrMeta:
        for a in self.attributes:
            if a.name == name:
                return a
        raise SchemaError(f"unknown attribute {self.name}.{name}")


@dataclass(frozen=True)
class JoinEdge:
    left: tuple[str, str]   # (table, attribute)
    right: tuple[str, str]
    kind: str               # "PK-FK" or "FK-FK"


@dataclass
class ColumnData:
    """One ingested column.

    Continuous columns store float64 values (NaN at null positions).
    Categorical columns store dictionary ids assigned by first appearance
    (-1 at null positions) plus the id -> original string dictionary.
    null_mask is the source of truth for nulls.
    """

    table: str
    attribute: str
    kind: str
    values: np.ndarray
    null_mask: np.ndarray
    dictionary: Optional[list[str]] = None

    def __len__(self) -> int:
        return len(self.values)

    @property
    def distinct_count(self) -> int:
        if self.kind == CATEGORICAL:
            return len(self.dictionary)
        nn = self.values[~self.null_mask]
        return int(np.unique(nn).size)

    def non_null_values(self) -> np.ndarray:
        return self.values[~self.null_mask]

    def id_of(self, value: str) -> int:
        """Dictionary id of a categorical value, -1 if never observed."""
        if self.kind != CATEGORICAL:
            raise ValueError("id_of only applies to categorical columns")
        if self.dictionary is None:
            return -1
        try:
            return self._index()[value]
        except KeyError:
            return -1

    def _index(self) -> dict[str, int]:
        idx = getattr(self, "_dict_index", None)
        if idx is None:
            idx = {v: i for i, v in enumerate(self.dictionary or [])}
            object.__setattr__(self, "_dict_index", idx)
        return idx


@dataclass
class Catalog:
    name: str
    tables: list[TableMeta]
    joins: list[JoinEdge]
    # table -> attribute -> ColumnData, filled by ingest_table
    data: dict[str, dict[str, ColumnData]] = field(default_factory=dict)

    def table(self, name: str) -> TableMeta:
        for t in self.tables:
            if t.name == name:
                return t
        raise SchemaError(f"unknown table {name!r}")

    def has_table(self, name: str) -> bool:
        return any(t.name == name for t in self.tables)

    def column(self, table: str, attribute: str) -> ColumnData:
        try:
            return self.data[table][attribute]
        except KeyError:
            raise IngestError(f"no data ingested for {table}.{attribute}") from None


@dataclass
class JoinGraph:
    """Undirected multigraph over tables; edges are indices into catalog.joins."""

    nodes: list[str]
    edges: list[JoinEdge]
    # node -> list of (neighbor, edge index), in edge declaration order
    adjacency: dict[str, list[tuple[str, int]]]

    def degree(self, node: str) -> int:
        return len(self.adjacency[node])

    def edges_between(self, a: str, b: str) -> list[int]:
        return [i for (n, i) in self.adjacency[a] if n == b]


def load_schema(path: Union[str, Path]) -> Catalog:
    """Parse and validate a schema JSON file into a Catalog.

    Tables and joins keep file order so downstream iteration is
    deterministic.
    """
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"schema file not found: {path}")
    try:
        doc = json.loads(path.read_text(encoding="utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise SchemaError(f"malformed schema file {path}: {exc}") from exc
    return schema_from_dict(doc)


def schema_from_dict(doc: dict) -> Catalog:
    if not isinstance(doc, dict) or "tables" not in doc:
        raise SchemaError("schema document must be an object with a 'tables' list")
    name = doc.get("name", "unnamed")

    tables: list[TableMeta] = []
    seen_tables: set[str] = set()
    for tdoc in doc["tables"]:
        tname = tdoc["name"]
        if tname in seen_tables:
            raise SchemaError(f"duplicate table {tname!r}")
        seen_tables.add(tname)
        attrs: list[AttrMeta] = []
        seen_attrs: set[str] = set()
        for cdoc in tdoc.get("columns", []):
            cname = cdoc["name"]
            if cname in seen_attrs:
                raise SchemaError(f"duplicate attribute {tname}.{cname}")
            seen_attrs.add(cname)
            kind = cdoc["kind"]
            if kind not in (CATEGORICAL, CONTINUOUS):
                raise SchemaError(f"unknown kind {kind!r} for {tname}.{cname}")
            domain = None
            if kind == CONTINUOUS and "min" in cdoc and "max" in cdoc:
                domain = (float(cdoc["min"]), float(cdoc["max"]))
                if domain[0] > domain[1]:
                    raise SchemaError(f"empty domain for {tname}.{cname}")
            attrs.append(AttrMeta(cname, kind, domain))
        tables.append(TableMeta(tname, attrs))

    catalog = Catalog(name=name, tables=tables, joins=[])
    for jdoc in doc.get("joins", []):
        left = _parse_endpoint(jdoc["left"])
        right = _parse_endpoint(jdoc["right"])
        kind = jdoc.get("kind", "FK-FK")
        if kind not in ("PK-FK", "FK-FK"):
            raise SchemaError(f"unknown join kind {kind!r}")
        if left[0] == right[0]:
            raise SchemaError(f"self-loop join on table {left[0]!r}")
        for table, attr in (left, right):
            if not catalog.has_table(table):
                raise SchemaError(f"join references unknown table {table!r}")
            catalog.table(table).attr(attr)  # raises on unknown attribute
        lk = catalog.table(left[0]).attr(left[1]).kind
        rk = catalog.table(right[0]).attr(right[1]).kind
        if lk != rk:
            raise SchemaError(
                f"join {jdoc['left']} = {jdoc['right']} mixes {lk} with {rk}"
            )
        catalog.joins.append(JoinEdge(left, right, kind))
    return catalog


def _parse_endpoint(text: str) -> tuple[str, str]:
    parts = text.split(".")
    if len(parts) != 2 or not all(parts):
        raise SchemaError(f"join endpoint {text!r} is not of the form table.attr")
    return (parts[0], parts[1])


def ingest_table(
    catalog: Catalog,
    table: str,
    rows: Union[str, Path, io.TextIOBase, Iterable[str]],
) -> dict[str, ColumnData]:
    """Load one table's CSV into ColumnData per attribute.

    The header must match the declared attributes exactly (order included).
    Categorical ids are assigned by first appearance; an empty field is
    null. Updates the table's row_count and stores the columns on the
    catalog.
    """
    meta = catalog.table(table)
    if isinstance(rows, (str, Path)):
        with open(rows, newline="", encoding="utf-8") as fh:
            return ingest_table(catalog, table, fh)

    reader = csv.reader(rows)
    try:
        header = next(reader)
    except StopIteration:
        raise IngestError(f"{table}: empty CSV, missing header") from None
    expected = [a.name for a in meta.attributes]
    if header != expected:
        raise IngestError(f"{table}: header {header} does not match schema {expected}")

    raw_cols: list[list[str]] = [[] for _ in expected]
    for lineno, row in enumerate(reader, start=2):
        if not row:
            # A fully blank line is a row of empty fields, hence all null.
            row = [""] * len(expected)
        if len(row) != len(expected):
            raise IngestError(
                f"{table}: row {lineno} has {len(row)} fields, expected {len(expected)}"
            )
        for i, cell in enumerate(row):
            raw_cols[i].append(cell)

    n = len(raw_cols[0]) if raw_cols else 0
    columns: dict[str, ColumnData] = {}
    for attr, raw in zip(meta.attributes, raw_cols):
        null_mask = np.fromiter((cell == "" for cell in raw), dtype=bool, count=n)
        if attr.kind == CONTINUOUS:
            values = np.full(n, np.nan)
            for i, cell in enumerate(raw):
                if cell == "":
                    continue
                try:
                    values[i] = float(cell)
                except ValueError:
                    raise IngestError(
                        f"{table}.{attr.name}: unparsable continuous value {cell!r}"
                    ) from None
            col = ColumnData(table, attr.name, CONTINUOUS, values, null_mask)
            nn = col.non_null_values()
            if attr.domain is None and nn.size:
                attr.domain = (float(nn.min()), float(nn.max()))
        else:
            ids = np.empty(n, dtype=np.int64)
            dictionary: list[str] = []
            index: dict[str, int] = {}
            for i, cell in enumerate(raw):
                if cell == "":
                    ids[i] = -1
                    continue
                code = index.get(cell)
                if code is None:
                    code = len(dictionary)
                    index[cell] = code
                    dictionary.append(cell)
                ids[i] = code
            col = ColumnData(table, attr.name, CATEGORICAL, ids, null_mask, dictionary)
        columns[attr.name] = col

    meta.row_count = n
    catalog.data.setdefault(table, {}).update(columns)
    return columns


def join_graph(catalog: Catalog) -> JoinGraph:
    """Adjacency view over the declared joins (undirected multigraph)."""
    adjacency: dict[str, list[tuple[str, int]]] = {t.name: [] for t in catalog.tables}
    for i, edge in enumerate(catalog.joins):
        lt, rt = edge.left[0], edge.right[0]
        adjacency[lt].append((rt, i))
        adjacency[rt].append((lt, i))
    return JoinGraph(
        nodes=[t.name for t in catalog.tables],
        edges=list(catalog.joins),
        adjacency=adjacency,
    )


def save_catalog(catalog: Catalog, path: Union[str, Path]) -> None:
    """Persist an ingested catalog (pickle wrapped with a format tag)."""
    with open(path, "wb") as fh:
        pickle.dump({"magic": CATALOG_PICKLE_MAGIC, "catalog": catalog}, fh)


def load_catalog(path: Union[str, Path]) -> Catalog:
    path = Path(path)
    if not path.exists():
        raise SchemaError(f"catalog file not found: {path}")
    try:
        with open(path, "rb") as fh:
            doc = pickle.load(fh)
    except Exception as exc:
        raise SchemaError(f"corrupt catalog file {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("magic") != CATALOG_PICKLE_MAGIC:
        raise SchemaError(f"{path} is not a catalog file")
    return doc["catalog"]
