"""Estimator quality metrics: Q-ERROR and P-ERROR with quantile reports.

P-ERROR costs the plan an optimizer would pick under estimated
cardinalities against the plan picked under true cardinalities, both
costed with the true values. The optimizer here is exact dynamic
programming over connected subsets with a symmetric hash-join cost
model, so P-ERROR >= 1 by construction.
"""

from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

log = logging.getLogger(__name__)

from .catalog import Catalog
from .errors import CardestError
from .queryir import QuerySpec, parse_query, sub_queries
from .workload import WorkloadRecord, read_workload

PLAN_TABLE_CAP = 12
QUANTILES = (50, 80, 90, 95, 99)

CardMap = dict[frozenset, float]


@dataclass(frozen=True)
class Plan:
    tables: frozenset
    left: Optional["Plan"] = None
    right: Optional["Plan"] = None

    @property
    def is_leaf(self) -> bool:
        return self.left is None

    def render(self) -> str:
        if self.is_leaf:
            return next(iter(self.tables))
        return f"({self.left.render()} >< {self.right.render()})"


def q_error(est: float, true: float) -> float:
    """max(est/true, true/est); 1 is a perfect estimate."""
    if est <= 0 or true <= 0:
        raise CardestError(f"q_error needs positive inputs, got ({est}, {true})")
    return max(est / true, true / est)


def _card(cards: CardMap, tables: frozenset) -> float:
    try:
        return cards[tables]
    except KeyError:
        raise CardestError(
            f"missing cardinality for sub-plan {sorted(tables)}"
        ) from None


def plan_cost(plan: Plan, cards: CardMap) -> float:
    """Symmetric hash-join cost: every join pays its inputs plus its
    output, every leaf pays its scan."""
    if plan.is_leaf:
        return _card(cards, plan.tables)
    return (
        plan_cost(plan.left, cards)
        + plan_cost(plan.right, cards)
        + _card(cards, plan.left.tables)
        + _card(cards, plan.right.tables)
        + _card(cards, plan.tables)
    )


def optimal_plan(q: QuerySpec, cards: CardMap, catalog: Catalog) -> Plan:
    """Exact minimum-cost plan by DP over connected subset splits.

    Bushy trees allowed. Ties resolve to the lexicographically smallest
    left subset; the left child is the side containing the query's
    alphabetically first table of the subset.
    """
    tables = list(q.tables)
    n = len(tables)
    if n > PLAN_TABLE_CAP:
        raise CardestError(f"query spans {n} tables, plan cap is {PLAN_TABLE_CAP}")
    index = {t: i for i, t in enumerate(tables)}
    adjacency = [0] * n
    for j in q.joins:
        edge = catalog.joins[j]
        li, ri = index[edge.left[0]], index[edge.right[0]]
        adjacency[li] |= 1 << ri
        adjacency[ri] |= 1 << li

    def connected(mask: int) -> bool:
        first = mask & -mask
        seen = first
        frontier = first
        while frontier:
            reach = 0
            m = frontier
            while m:
                bit = m & -m
                reach |= adjacency[bit.bit_length() - 1]
                m ^= bit
            frontier = reach & mask & ~seen
            seen |= frontier
        return seen == mask

    def names(mask: int) -> frozenset:
        return frozenset(tables[i] for i in range(n) if mask & (1 << i))

    full = (1 << n) - 1
    best_cost: dict[int, float] = {}
    best_plan: dict[int, Plan] = {}
    for i in range(n):
        mask = 1 << i
        best_plan[mask] = Plan(names(mask))
        best_cost[mask] = _card(cards, best_plan[mask].tables)

    masks_by_size: list[list[int]] = [[] for _ in range(n + 1)]
    for mask in range(1, full + 1):
        masks_by_size[bin(mask).count("1")].append(mask)

    for size in range(2, n + 1):
        for mask in masks_by_size[size]:
            if not connected(mask):
                continue
            out_card = _card(cards, names(mask))
            best = None
            lowest = mask & -mask
            # Enumerate splits once: the left side keeps the subset's
            # lowest-index table.
            sub = (mask - 1) & mask
            while sub:
                if sub & lowest:
                    rest = mask ^ sub
                    if (
                        rest
                        and sub in best_cost
                        and rest in best_cost
                        and any(
                            adjacency[i] & rest
                            for i in range(n)
                            if sub & (1 << i)
                        )
                    ):
                        l_names = best_plan[sub].tables
                        r_names = best_plan[rest].tables
                        cost = (
                            best_cost[sub]
                            + best_cost[rest]
                            + _card(cards, l_names)
                            + _card(cards, r_names)
                            + out_card
                        )
                        key = (cost, tuple(sorted(l_names)))
                        if best is None or key < best[0]:
                            best = (
                                key,
                                Plan(names(mask), best_plan[sub], best_plan[rest]),
                            )
                sub = (sub - 1) & mask
            if best is not None:
                best_cost[mask] = best[0][0]
                best_plan[mask] = best[1]

    if full not in best_plan:
        raise CardestError("query join graph is disconnected")
    return best_plan[full]


def p_error(q: QuerySpec, est: CardMap, true: CardMap, catalog: Catalog) -> float:
    """M(plan under estimates, true cards) / M(plan under truth, true cards)."""
    plan_est = optimal_plan(q, est, catalog)
    plan_true = optimal_plan(q, true, catalog)
    denom = plan_cost(plan_true, true)
    numer = plan_cost(plan_est, true)
    if denom == 0.0:
        return 1.0  # all-zero cardinalities: every plan is free
    return numer / denom


def nearest_rank(values: Sequence[float], percentile: float) -> float:
    ordered = sorted(values)
    if not ordered:
        raise CardestError("no values to take a quantile of")
    rank = max(1, math.ceil(percentile / 100.0 * len(ordered)))
    return ordered[rank - 1]


@dataclass
class ErrorReport:
    quantiles: dict[str, dict[str, float]]
    n: int
    skipped: int
    wall_time_ms: float
    rows: list[dict] = field(default_factory=list)

    def to_json(self) -> str:
        doc = dict(self.quantiles)
        doc.update(
            {"n": self.n, "skipped": self.skipped, "wall_time_ms": self.wall_time_ms}
        )
        return json.dumps(doc, sort_keys=True)

    def write_csv(self, path: Union[str, Path]) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["sql", "true", "est", "q_error", "p_error"]
            )
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)


def evaluate(
    workload: Union[str, Path, Sequence[WorkloadRecord]],
    catalog: Catalog,
    estimator: Callable[[QuerySpec], float],
    json_path: Optional[Union[str, Path]] = None,
    csv_path: Optional[Union[str, Path]] = None,
) -> ErrorReport:
    """Score an estimator on a workload with stored sub-query truths.

    The estimator runs on every connected sub-query to build the
    estimated cardinality map for P-ERROR. Estimator failures skip the
    query and are counted in the report.
    """
    if isinstance(workload, (str, Path)):
        records = read_workload(workload)
    else:
        records = list(workload)
    start = time.perf_counter()
    q_errors: list[float] = []
    p_errors: list[float] = []
    rows: list[dict] = []
    skipped = 0
    for record in records:
        spec = parse_query(record.sql, catalog)
        try:
            est_map: CardMap = {
                s.table_set: float(estimator(s)) for s in sub_queries(spec, catalog)
            }
        except Exception as exc:
            log.warning("estimator failed on %r: %s", record.sql, exc)
            skipped += 1
            continue
        true_map: CardMap = {k: float(v) for k, v in record.sub_cards.items()}
        qe = q_error(
            max(1.0, est_map[spec.table_set]), max(1.0, float(record.true_card))
        )
        pe = p_error(spec, est_map, true_map, catalog)
        q_errors.append(qe)
        p_errors.append(pe)
        rows.append(
            {
                "sql": record.sql,
                "true": record.true_card,
                "est": est_map[spec.table_set],
                "q_error": qe,
                "p_error": pe,
            }
        )
    wall_ms = (time.perf_counter() - start) * 1000.0
    quantiles = {}
    for metric, values in (("q_error", q_errors), ("p_error", p_errors)):
        quantiles[metric] = {
            f"p{p}": (nearest_rank(values, p) if values else None) for p in QUANTILES
        }
    report = ErrorReport(
        quantiles=quantiles,
        n=len(q_errors),
        skipped=skipped,
        wall_time_ms=wall_ms,
        rows=rows,
    )
    if json_path is not None:
        Path(json_path).write_text(report.to_json(), encoding="utf-8")
    if csv_path is not None:
        report.write_csv(csv_path)
    return report
