"""Transferable per-column statistics.

Everything the estimator consumes is derived from three fixed-length
(40-bin) distribution kinds:

* ``histogram``        - equal-width value histogram of a continuous column
* ``category_summary`` - top-40 frequencies kept by a SpaceSaving summary
* ``scaling_factor``   - log2-bucketed per-tuple join match counts

All bins are probability masses (non-empty distributions sum to 1), so the
same token layout is meaningful across databases with wildly different
sizes and domains. Building the full store is one pass per column.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .catalog import CATEGORICAL, CONTINUOUS, Catalog, ColumnData, JoinEdge
from .errors import StatsError

NUM_BINS = 40

HISTOGRAM = "histogram"
CATEGORY_SUMMARY = "category_summary"
SCALING_FACTOR = "scaling_factor"

STATS_MAGIC = b"CESTATS1"
STATS_VERSION = 1


class SpaceSavingSummary:
    """Fixed-capacity frequent-item counter.

    Tracks at most ``capacity`` items. A tracked item's count never
    underestimates its true count, overestimates it by at most the
    recorded per-item overestimation, and the error is bounded by
    total_seen / capacity.
    """

    def __init__(self, capacity: int = NUM_BINS):
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self.counts: dict[int, int] = {}
        self.overestimation: dict[int, int] = {}
        self.total_seen = 0

    def update(self, item: int) -> None:
        self.total_seen += 1
        counts = self.counts
        if item in counts:
            counts[item] += 1
            return
        if len(counts) < self.capacity:
            counts[item] = 1
            self.overestimation[item] = 0
            return
        # Replace the minimum-count item; first minimum in insertion
        # order keeps the structure deterministic.
        evict = None
        evict_count = None
        for key, cnt in counts.items():
            if evict_count is None or cnt < evict_count:
                evict, evict_count = key, cnt
        del counts[evict]
        del self.overestimation[evict]
        counts[item] = evict_count + 1
        self.overestimation[item] = evict_count

    def update_many(self, items: Iterable[int]) -> None:
        for item in items:
            self.update(item)

    def estimate(self, item: int) -> int:
        return self.counts.get(item, 0)

    @property
    def error_bound(self) -> float:
        return self.total_seen / self.capacity


@dataclass
class Distribution:
    """A 40-bin normalized frequency vector plus kind-specific metadata."""

    bins: np.ndarray
    kind: str
    empty: bool = False
    # histogram metadata
    lo: Optional[float] = None
    hi: Optional[float] = None
    count: int = 0  # non-null observations folded into the bins
    # category_summary metadata
    summary: Optional[SpaceSavingSummary] = None
    items: Optional[list[int]] = None  # retained ids, aligned with bins
    # scaling_factor metadata
    rule: Optional[str] = None


def _resolve_bounds(values: np.ndarray, bounds: Optional[tuple[float, float]]):
    if bounds is not None:
        lo, hi = float(bounds[0]), float(bounds[1])
        if lo > hi:
            raise StatsError(f"invalid histogram bounds ({lo}, {hi})")
        if lo == hi:
            return lo, lo + 1.0
        return lo, hi
    if values.size == 0:
        return None, None
    lo, hi = float(values.min()), float(values.max())
    if lo == hi:
        # Degenerate column: every value identical, park all mass in bin 0.
        return lo, lo + 1.0
    return lo, hi


def build_histogram(
    values: Union[np.ndarray, Sequence[float]],
    bounds: Optional[tuple[float, float]] = None,
    num_bins: int = NUM_BINS,
) -> Distribution:
    """Equal-width histogram over [lo, hi], normalized by non-null count.

    The upper bound is inclusive in the last bin; out-of-range values
    clamp to the edge bins. An empty or all-null column yields all-zero
    bins flagged empty.
    """
    values = np.asarray(values, dtype=np.float64)
    values = values[~np.isnan(values)]
    lo, hi = _resolve_bounds(values, bounds)
    if values.size == 0:
        return Distribution(
            bins=np.zeros(num_bins), kind=HISTOGRAM, empty=True, lo=lo, hi=hi
        )
    clipped = np.clip(values, lo, hi)
    counts, _ = np.histogram(clipped, bins=num_bins, range=(lo, hi))
    bins = counts / values.size
    return Distribution(
        bins=bins, kind=HISTOGRAM, lo=lo, hi=hi, count=int(values.size)
    )


def build_category_summary(
    ids: Union[np.ndarray, Sequence[int], ColumnData],
    num_bins: int = NUM_BINS,
) -> Distribution:
    """Top-frequency summary of a categorical column via SpaceSaving.

    Bins hold the retained items' frequencies sorted by descending count
    then ascending id. With at most ``num_bins`` distinct values the
    summary is exact; otherwise the dropped tail mass is renormalized
    away so the bins still sum to 1.
    """
    if isinstance(ids, ColumnData):
        ids = ids.values[~ids.null_mask]
    arr = np.asarray(ids, dtype=np.int64)
    arr = arr[arr >= 0]
    summary = SpaceSavingSummary(num_bins)
    summary.update_many(arr.tolist())
    return _category_distribution(summary, num_bins)


def _category_distribution(summary: SpaceSavingSummary, num_bins: int) -> Distribution:
    if summary.total_seen == 0:
        return Distribution(
            bins=np.zeros(num_bins),
            kind=CATEGORY_SUMMARY,
            empty=True,
            summary=summary,
            items=[],
        )
    ranked = sorted(summary.counts.items(), key=lambda kv: (-kv[1], kv[0]))
    items = [item for item, _ in ranked]
    counts = np.array([cnt for _, cnt in ranked], dtype=np.float64)
    bins = np.zeros(num_bins)
    bins[: len(counts)] = counts / counts.sum()
    return Distribution(
        bins=bins,
        kind=CATEGORY_SUMMARY,
        summary=summary,
        items=items,
        count=summary.total_seen,
    )


def edge_match_counts(side_col: ColumnData, opposite_col: ColumnData) -> np.ndarray:
    """Per-tuple join match counts for one side of an edge.

    For each tuple on ``side_col``'s table, the number of tuples in the
    opposite table whose join key equals it. Null keys match nothing.
    """
    n = len(side_col)
    out = np.zeros(n, dtype=np.int64)
    if len(opposite_col) == 0 or n == 0:
        return out

    if side_col.kind == CATEGORICAL:
        opp_ids = opposite_col.values[~opposite_col.null_mask]
        opp_counts = np.bincount(opp_ids, minlength=len(opposite_col.dictionary))
        # Dictionary ids are column-local; translate through the strings.
        per_side_id = np.zeros(len(side_col.dictionary), dtype=np.int64)
        for opp_id, text in enumerate(opposite_col.dictionary):
            side_id = side_col.id_of(text)
            if side_id >= 0:
                per_side_id[side_id] = opp_counts[opp_id]
        valid = ~side_col.null_mask
        out[valid] = per_side_id[side_col.values[valid]]
    else:
        counts: dict[float, int] = {}
        for v in opposite_col.non_null_values().tolist():
            counts[v] = counts.get(v, 0) + 1
        values = side_col.values
        mask = side_col.null_mask
        get = counts.get
        for i in range(n):
            if not mask[i]:
                out[i] = get(values[i], 0)
    return out


def scaling_factor_distribution(
    side_col: ColumnData,
    opposite_col: ColumnData,
    num_bins: int = NUM_BINS,
) -> Distribution:
    """Distribution of log2-bucketed join match counts for one edge side.

    Bucket 0 collects tuples with no match; count c >= 1 lands in bucket
    min(num_bins - 1, 1 + floor(log2 c)). Frequencies are normalized by
    the side table's full row count, so the bins always sum to 1 for a
    non-empty table.
    """
    counts = edge_match_counts(side_col, opposite_col)
    n = len(side_col)
    if n == 0:
        return Distribution(
            bins=np.zeros(num_bins), kind=SCALING_FACTOR, empty=True, rule="log2"
        )
    buckets = np.zeros(n, dtype=np.int64)
    nz = counts > 0
    buckets[nz] = np.minimum(
        num_bins - 1, 1 + np.floor(np.log2(counts[nz])).astype(np.int64)
    )
    bins = np.bincount(buckets, minlength=num_bins)[:num_bins] / n
    return Distribution(bins=bins, kind=SCALING_FACTOR, rule="log2", count=n)


def _histogram_cumulative(dist: Distribution, x: float) -> float:
    """Mass of [lo, x] under the piecewise-uniform bin model."""
    lo, hi = dist.lo, dist.hi
    if x <= lo:
        return 0.0
    if x >= hi:
        return 1.0 if not dist.empty else 0.0
    width = (hi - lo) / len(dist.bins)
    pos = (x - lo) / width
    full = int(pos)
    frac = pos - full
    mass = float(dist.bins[:full].sum())
    if full < len(dist.bins):
        mass += float(dist.bins[full]) * frac
    return mass


def predicate_selectivity(dist: Distribution, op: str, value) -> float:
    """Fraction of tuples satisfying a predicate, from the stored distribution.

    Histograms integrate the piecewise-uniform model; category summaries
    answer equality with the item's retained frequency (0 if the item is
    not tracked). ``value`` is the dictionary id for categorical
    equality, a scalar for continuous comparisons, or an (l, u) pair for
    op="between".
    """
    if dist.kind == CATEGORY_SUMMARY:
        if op != "=":
            raise StatsError(f"operator {op!r} not applicable to a categorical column")
        if dist.empty or dist.summary is None:
            return 0.0
        item = int(value)
        if item < 0:
            return 0.0
        return min(1.0, dist.summary.estimate(item) / dist.summary.total_seen)

    if dist.kind != HISTOGRAM:
        raise StatsError(f"predicates do not apply to {dist.kind} distributions")
    if dist.empty or dist.lo is None:
        return 0.0

    if op == "between":
        l, u = float(value[0]), float(value[1])
    elif op in ("<", "<="):
        l, u = -np.inf, float(value)
    elif op in (">", ">="):
        l, u = float(value), np.inf
    elif op == "=":
        l = u = float(value)
    else:
        raise StatsError(f"unknown operator {op!r}")
    if l >= u:
        # Point or empty interval has zero mass in the continuous model.
        return 0.0
    a = max(l, dist.lo)
    b = min(u, dist.hi)
    if a >= b:
        return 0.0
    sel = _histogram_cumulative(dist, b) - _histogram_cumulative(dist, a)
    return float(min(1.0, max(0.0, sel)))


def heuristic_estimates(selectivities: Sequence[float]) -> tuple[float, float, float]:
    """(AVI, MinSel, EBO) combinations of per-predicate selectivities.

    AVI multiplies everything (full independence), MinSel keeps only the
    most selective predicate, and EBO dampens the product by halving
    each successive exponent over the four smallest selectivities.
    An empty input yields (1, 1, 1).
    """
    sels = [float(s) for s in selectivities]
    for s in sels:
        if not (0.0 <= s <= 1.0):
            raise StatsError(f"selectivity {s} outside [0, 1]")
    if not sels:
        return (1.0, 1.0, 1.0)
    avi = float(np.prod(sels))
    min_sel = min(sels)
    ebo = 1.0
    for k, s in enumerate(sorted(sels)[:4]):
        ebo *= s ** (0.5 ** k)
    return (avi, min_sel, float(ebo))


def update_distribution(dist: Distribution, inserted) -> Distribution:
    """Fold newly inserted values into a distribution in place.

    Histogram values outside [lo, hi] clamp to the edge bins; category
    summaries apply the SpaceSaving replace-min rule. Scaling-factor
    distributions rebuild from the column pair instead.
    """
    if dist.kind == HISTOGRAM:
        values = np.asarray(inserted, dtype=np.float64)
        values = values[~np.isnan(values)]
        if values.size == 0:
            return dist
        if dist.lo is None:
            fresh = build_histogram(values, num_bins=len(dist.bins))
            dist.bins, dist.lo, dist.hi = fresh.bins, fresh.lo, fresh.hi
            dist.count, dist.empty = fresh.count, fresh.empty
            return dist
        clipped = np.clip(values, dist.lo, dist.hi)
        new_counts, _ = np.histogram(
            clipped, bins=len(dist.bins), range=(dist.lo, dist.hi)
        )
        total = dist.count + values.size
        dist.bins = (dist.bins * dist.count + new_counts) / total
        dist.count = int(total)
        dist.empty = False
        return dist

    if dist.kind == CATEGORY_SUMMARY:
        if dist.summary is None:
            dist.summary = SpaceSavingSummary(len(dist.bins))
        arr = np.asarray(inserted, dtype=np.int64)
        dist.summary.update_many(arr[arr >= 0].tolist())
        fresh = _category_distribution(dist.summary, len(dist.bins))
        dist.bins, dist.items = fresh.bins, fresh.items
        dist.count, dist.empty = fresh.count, fresh.empty
        return dist

    raise StatsError("scaling-factor distributions rebuild from the column pair")


@dataclass
class StatsStore:
    """All distributions and scalar statistics for one catalog.

    Immutable after build; shared read-only by featurization and the
    estimation service. ``scan_ops`` counts values touched during the
    build so the one-pass budget is checkable.
    """

    catalog_name: str
    columns: dict[tuple[str, str], Distribution] = field(default_factory=dict)
    edges: dict[tuple[int, str], Distribution] = field(default_factory=dict)
    row_counts: dict[str, int] = field(default_factory=dict)
    distincts: dict[tuple[str, str], int] = field(default_factory=dict)
    edge_list: list[JoinEdge] = field(default_factory=list)
    scan_ops: int = 0

    def col_dist(self, table: str, attribute: str) -> Distribution:
        try:
            return self.columns[(table, attribute)]
        except KeyError:
            raise StatsError(f"no statistics for {table}.{attribute}") from None

    def edge_dist(self, edge_index: int, side: str) -> Distribution:
        try:
            return self.edges[(edge_index, side)]
        except KeyError:
            raise StatsError(f"no statistics for edge {edge_index} {side}") from None

    def row_count(self, table: str) -> int:
        try:
            return self.row_counts[table]
        except KeyError:
            raise StatsError(f"no statistics for table {table!r}") from None

    def distinct(self, table: str, attribute: str) -> int:
        try:
            return self.distincts[(table, attribute)]
        except KeyError:
            raise StatsError(f"no statistics for {table}.{attribute}") from None


def build_stats(catalog: Catalog, num_bins: int = NUM_BINS) -> StatsStore:
    """One pass per column: value distributions, distinct counts, and a
    scaling-factor distribution per (join edge, side)."""
    store = StatsStore(catalog_name=catalog.name)
    for table in catalog.tables:
        store.row_counts[table.name] = table.row_count
        for attr in table.attributes:
            col = catalog.column(table.name, attr.name)
            if attr.kind == CONTINUOUS:
                dist = build_histogram(col.values, attr.domain, num_bins)
                distinct = int(np.unique(col.non_null_values()).size)
            else:
                dist = build_category_summary(col, num_bins)
                distinct = len(col.dictionary)
            store.columns[(table.name, attr.name)] = dist
            store.distincts[(table.name, attr.name)] = distinct
            store.scan_ops += 2 * len(col)
    for i, edge in enumerate(catalog.joins):
        left = catalog.column(*edge.left)
        right = catalog.column(*edge.right)
        store.edges[(i, "left")] = scaling_factor_distribution(left, right, num_bins)
        store.edges[(i, "right")] = scaling_factor_distribution(right, left, num_bins)
        store.scan_ops += 2 * (len(left) + len(right))
    store.edge_list = list(catalog.joins)
    return store


# ---------------------------------------------------------------------------
# Binary serialization: header, little-endian f64 bin arrays, JSON metadata.


def _dist_meta(dist: Distribution) -> dict:
    meta: dict = {"kind": dist.kind, "empty": dist.empty, "count": dist.count}
    if dist.kind == HISTOGRAM:
        meta["lo"], meta["hi"] = dist.lo, dist.hi
    elif dist.kind == CATEGORY_SUMMARY:
        s = dist.summary
        meta["items"] = dist.items or []
        meta["counter_items"] = list(s.counts.keys()) if s else []
        meta["counter_counts"] = list(s.counts.values()) if s else []
        meta["counter_overs"] = (
            [s.overestimation[k] for k in s.counts] if s else []
        )
        meta["total_seen"] = s.total_seen if s else 0
    else:
        meta["rule"] = dist.rule
    return meta


def _dist_from_meta(bins: np.ndarray, meta: dict) -> Distribution:
    kind = meta["kind"]
    dist = Distribution(bins=bins, kind=kind, empty=meta["empty"], count=meta["count"])
    if kind == HISTOGRAM:
        dist.lo, dist.hi = meta["lo"], meta["hi"]
    elif kind == CATEGORY_SUMMARY:
        summary = SpaceSavingSummary(len(bins))
        for item, cnt, over in zip(
            meta["counter_items"], meta["counter_counts"], meta["counter_overs"]
        ):
            summary.counts[int(item)] = int(cnt)
            summary.overestimation[int(item)] = int(over)
        summary.total_seen = int(meta["total_seen"])
        dist.summary = summary
        dist.items = [int(i) for i in meta["items"]]
    else:
        dist.rule = meta.get("rule")
    return dist


def save_stats(store: StatsStore, path: Union[str, Path]) -> None:
    col_keys = sorted(store.columns)
    edge_keys = sorted(store.edges)
    header = struct.pack(
        "<8sIIII",
        STATS_MAGIC,
        STATS_VERSION,
        len(col_keys),
        len(edge_keys),
        len(store.row_counts),
    )
    payload = bytearray(header)
    for key in col_keys:
        payload += store.columns[key].bins.astype("<f8").tobytes()
    for key in edge_keys:
        payload += store.edges[key].bins.astype("<f8").tobytes()
    meta = {
        "catalog": store.catalog_name,
        "num_bins": NUM_BINS,
        "columns": [
            {"table": t, "attr": a, **_dist_meta(store.columns[(t, a)])}
            for (t, a) in col_keys
        ],
        "edges": [
            {"edge": e, "side": s, **_dist_meta(store.edges[(e, s)])}
            for (e, s) in edge_keys
        ],
        "row_counts": store.row_counts,
        "distincts": [
            {"table": t, "attr": a, "n": n} for (t, a), n in sorted(store.distincts.items())
        ],
        "edge_list": [
            {"left": list(e.left), "right": list(e.right), "kind": e.kind}
            for e in store.edge_list
        ],
    }
    blob = json.dumps(meta).encode("utf-8")
    payload += struct.pack("<Q", len(blob))
    payload += blob
    Path(path).write_bytes(bytes(payload))


def load_stats(path: Union[str, Path]) -> StatsStore:
    raw = Path(path).read_bytes()
    head_size = struct.calcsize("<8sIIII")
    if len(raw) < head_size:
        raise StatsError(f"{path}: truncated statistics file")
    magic, version, n_cols, n_edges, _n_tables = struct.unpack(
        "<8sIIII", raw[:head_size]
    )
    if magic != STATS_MAGIC:
        raise StatsError(f"{path}: not a statistics file")
    if version != STATS_VERSION:
        raise StatsError(f"{path}: unsupported statistics version {version}")
    offset = head_size
    bin_bytes = NUM_BINS * 8

    def take_bins() -> np.ndarray:
        nonlocal offset
        chunk = raw[offset : offset + bin_bytes]
        if len(chunk) < bin_bytes:
            raise StatsError(f"{path}: truncated statistics file")
        offset += bin_bytes
        return np.frombuffer(chunk, dtype="<f8").astype(np.float64)

    col_bins = [take_bins() for _ in range(n_cols)]
    edge_bins = [take_bins() for _ in range(n_edges)]
    if len(raw) < offset + 8:
        raise StatsError(f"{path}: truncated statistics file")
    (blob_len,) = struct.unpack("<Q", raw[offset : offset + 8])
    offset += 8
    blob = raw[offset : offset + blob_len]
    if len(blob) < blob_len:
        raise StatsError(f"{path}: truncated statistics file")
    try:
        meta = json.loads(blob.decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise StatsError(f"{path}: corrupt metadata block: {exc}") from exc

    store = StatsStore(catalog_name=meta["catalog"])
    for bins, cmeta in zip(col_bins, meta["columns"]):
        store.columns[(cmeta["table"], cmeta["attr"])] = _dist_from_meta(bins, cmeta)
    for bins, emeta in zip(edge_bins, meta["edges"]):
        store.edges[(int(emeta["edge"]), emeta["side"])] = _dist_from_meta(bins, emeta)
    store.row_counts = {k: int(v) for k, v in meta["row_counts"].items()}
    store.distincts = {
        (d["table"], d["attr"]): int(d["n"]) for d in meta["distincts"]
    }
    store.edge_list = [
        JoinEdge(tuple(e["left"]), tuple(e["right"]), e["kind"])
        for e in meta["edge_list"]
    ]
    return store
