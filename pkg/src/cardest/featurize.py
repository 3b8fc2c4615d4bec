"""Query featurization: turn (QuerySpec, StatsStore) into model tokens.

Every token is built from precomputed statistics only, so featurizing a
query costs O(tokens) regardless of table sizes. Token kinds:

* join token   (80)  = join attribute's value distribution || its
                       scaling-factor distribution, one per (edge, side)
* filter token (43)  = value distribution || lower || upper || selectivity,
                       one per filtered attribute
* table token  (4)   = AVI, MinSel, EBO, log10(rows)/10, one per table
* query scalars (3)  = #tables/16, #joins/16, log10(baseline)/10
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .catalog import CATEGORICAL, Catalog
from .errors import StatsError
from .queryir import QuerySpec, Region, canonicalize
from .stats import (
    NUM_BINS,
    Distribution,
    StatsStore,
    heuristic_estimates,
    predicate_selectivity,
)

JOIN_TOKEN_DIM = 2 * NUM_BINS
FILTER_TOKEN_DIM = NUM_BINS + 3
TABLE_TOKEN_DIM = 4
QUERY_FEAT_DIM = 3

TABLE_NORM = 16.0
LOG_NORM = 10.0


@dataclass
class FeatureBundle:
    join_tokens: np.ndarray    # (n_joins*2, 80)
    filter_tokens: np.ndarray  # (n_filtered_attrs, 43)
    table_tokens: np.ndarray   # (n_tables, 4)
    query_feats: np.ndarray    # (3,)

    def to_json(self) -> str:
        return json.dumps(
            {
                "join_tokens": self.join_tokens.tolist(),
                "filter_tokens": self.filter_tokens.tolist(),
                "table_tokens": self.table_tokens.tolist(),
                "query_feats": self.query_feats.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "FeatureBundle":
        doc = json.loads(text)
        return cls(
            join_tokens=np.array(doc["join_tokens"], dtype=np.float64).reshape(-1, JOIN_TOKEN_DIM),
            filter_tokens=np.array(doc["filter_tokens"], dtype=np.float64).reshape(-1, FILTER_TOKEN_DIM),
            table_tokens=np.array(doc["table_tokens"], dtype=np.float64).reshape(-1, TABLE_TOKEN_DIM),
            query_feats=np.array(doc["query_feats"], dtype=np.float64),
        )


def _region_bounds_and_selectivity(
    region: Region, dist: Distribution, catalog: Catalog, table: str, attr: str
) -> tuple[float, float, float]:
    """Normalized [lower, upper] in [0, 1] plus the region's selectivity."""
    if region.kind == CATEGORICAL:
        values = region.values or frozenset()
        if len(values) != 1:
            # Contradictory equality predicates: empty region.
            return (0.0, 0.0, 0.0)
        value = next(iter(values))
        item = catalog.column(table, attr).id_of(value)
        if item < 0 or dist.items is None or item not in dist.items:
            # Untracked values sit past the last retained bin.
            pos = 1.0
        else:
            pos = dist.items.index(item) / len(dist.bins)
        if item < 0:
            return (pos, pos, 0.0)
        sel = (
            dist.summary.estimate(item) / dist.summary.total_seen
            if dist.summary and dist.summary.total_seen
            else 0.0
        )
        return (pos, pos, min(1.0, sel))

    lo, hi = dist.lo, dist.hi
    if lo is None or region.is_empty:
        return (0.0, 0.0, 0.0)
    width = hi - lo if hi > lo else 1.0
    l = min(max(region.lo, lo), hi)
    u = min(max(region.hi, lo), hi)
    if l > u:
        return (0.0, 0.0, 0.0)
    sel = predicate_selectivity(dist, "between", (l, u))
    return ((l - lo) / width, (u - lo) / width, sel)


def baseline_estimate(q: QuerySpec, stats: StatsStore, catalog: Catalog) -> float:
    """Textbook independence estimate from 1-D statistics.

    Product of table sizes, times 1/max(distinct) per join edge, times
    the per-attribute region selectivities; clamped to at least 1.
    """
    est = 1.0
    for table in q.tables:
        est *= max(1, stats.row_count(table))
    for j in q.joins:
        edge = catalog.joins[j]
        d = max(stats.distinct(*edge.left), stats.distinct(*edge.right), 1)
        est /= d
    regions = canonicalize(q, catalog)
    for (table, attr), region in sorted(regions.items()):
        if not region.filtered:
            continue
        dist = stats.col_dist(table, attr)
        _, _, sel = _region_bounds_and_selectivity(region, dist, catalog, table, attr)
        est *= sel
    return max(1.0, est)


def featurize(q: QuerySpec, stats: StatsStore, catalog: Catalog) -> FeatureBundle:
    """Build the token bundle for one query. Pure function of its inputs."""
    join_tokens = np.zeros((2 * len(q.joins), JOIN_TOKEN_DIM))
    for row, j in enumerate(q.joins):
        edge = catalog.joins[j]
        for k, (side, ref) in enumerate((("left", edge.left), ("right", edge.right))):
            value_dist = stats.col_dist(*ref)
            scale_dist = stats.edge_dist(j, side)
            token = np.concatenate([value_dist.bins, scale_dist.bins])
            join_tokens[2 * row + k] = token

    regions = canonicalize(q, catalog)
    filtered = sorted(
        (table, attr) for (table, attr), r in regions.items() if r.filtered
    )
    filter_tokens = np.zeros((len(filtered), FILTER_TOKEN_DIM))
    per_table_sels: dict[str, list[float]] = {t: [] for t in q.tables}
    for row, (table, attr) in enumerate(filtered):
        region = regions[(table, attr)]
        dist = stats.col_dist(table, attr)
        lower, upper, sel = _region_bounds_and_selectivity(
            region, dist, catalog, table, attr
        )
        filter_tokens[row, :NUM_BINS] = dist.bins
        filter_tokens[row, NUM_BINS] = lower
        filter_tokens[row, NUM_BINS + 1] = upper
        filter_tokens[row, NUM_BINS + 2] = sel
        per_table_sels[table].append(sel)

    table_tokens = np.zeros((len(q.tables), TABLE_TOKEN_DIM))
    for row, table in enumerate(q.tables):
        avi, min_sel, ebo = heuristic_estimates(per_table_sels[table])
        rows = max(1, stats.row_count(table))
        table_tokens[row] = (avi, min_sel, ebo, math.log10(rows) / LOG_NORM)

    baseline = baseline_estimate(q, stats, catalog)
    query_feats = np.array(
        [
            len(q.tables) / TABLE_NORM,
            len(q.joins) / TABLE_NORM,
            math.log10(baseline) / LOG_NORM,
        ]
    )
    bundle = FeatureBundle(join_tokens, filter_tokens, table_tokens, query_feats)
    for arr in (join_tokens, filter_tokens, table_tokens, query_feats):
        if not np.isfinite(arr).all():
            raise StatsError("non-finite feature encountered")
    return bundle
