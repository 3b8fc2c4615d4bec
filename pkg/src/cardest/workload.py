"""Training/testing workload generation with exact cardinality oracles.

Queries are drawn per the generation procedure: pick a connected subgraph
of the join schema, sample 1..m filter predicates uniformly, then compute
the exact COUNT(*) of the query and of every connected sub-query with an
in-memory counting executor. Records serialize to JSON Lines.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

from .catalog import CATEGORICAL, Catalog, ColumnData, JoinGraph, join_graph
from .errors import CardestError, QueryError
from .queryir import Predicate, QuerySpec, print_query, sub_queries
from .stats import StatsStore

SUBGRAPH_NODE_CAP = 12


@dataclass
class WorkloadRecord:
    sql: str
    true_card: int
    sub_cards: dict[frozenset, int]

    def to_json(self) -> str:
        subs = {",".join(sorted(k)): v for k, v in self.sub_cards.items()}
        return json.dumps(
            {"sql": self.sql, "card": self.true_card, "subs": subs}, sort_keys=True
        )

    @classmethod
    def from_json(cls, line: str) -> "WorkloadRecord":
        doc = json.loads(line)
        subs = {frozenset(k.split(",")): int(v) for k, v in doc["subs"].items()}
        return cls(sql=doc["sql"], true_card=int(doc["card"]), sub_cards=subs)


def enumerate_connected_subgraphs(
    graph: JoinGraph, cap: int = SUBGRAPH_NODE_CAP
) -> list[tuple[tuple[str, ...], tuple[int, ...]]]:
    """All connected induced subgraphs with >= 2 nodes.

    Each result is (sorted table names, sorted indices of all induced
    edges). Enumeration grows subsets from each anchor node using only
    higher-indexed extensions, so every subgraph appears exactly once.
    """
    nodes = graph.nodes
    if len(nodes) > cap:
        raise CardestError(f"join graph has {len(nodes)} tables, cap is {cap}")
    index = {name: i for i, name in enumerate(nodes)}
    neighbors: list[set[int]] = [set() for _ in nodes]
    for edge in graph.edges:
        li, ri = index[edge.left[0]], index[edge.right[0]]
        neighbors[li].add(ri)
        neighbors[ri].add(li)

    found: list[frozenset[int]] = []

    def extend(sub: set[int], extension: set[int], anchor: int) -> None:
        if len(sub) >= 2:
            found.append(frozenset(sub))
        for w in sorted(extension):
            new_ext = {u for u in extension if u > w}
            new_ext |= {u for u in neighbors[w] if u > anchor and u not in sub}
            new_ext.discard(w)
            extend(sub | {w}, new_ext, anchor)

    for v in range(len(nodes)):
        extend({v}, {u for u in neighbors[v] if u > v}, v)

    results = []
    for sub in found:
        names = tuple(sorted(nodes[i] for i in sub))
        edges = tuple(
            i
            for i, e in enumerate(graph.edges)
            if index[e.left[0]] in sub and index[e.right[0]] in sub
        )
        results.append((names, edges))
    results.sort(key=lambda r: (len(r[0]), r[0]))
    return results


def generate_query(
    sub: tuple[tuple[str, ...], tuple[int, ...]],
    catalog: Catalog,
    stats: StatsStore,
    rng: np.random.Generator,
) -> QuerySpec:
    """Attach sampled filter predicates to a subgraph.

    Draws the predicate count n uniformly from 1..m over the subgraph's
    filterable attributes, then for each sampled attribute a uniform
    [l, u] range (continuous) or a uniform observed value (categorical).
    """
    tables, edge_indices = sub
    filterable: list[tuple[str, str]] = []
    for table in sorted(tables):
        for attr in catalog.table(table).attributes:
            col = catalog.column(table, attr.name)
            if attr.kind == CATEGORICAL:
                if col.dictionary:
                    filterable.append((table, attr.name))
            else:
                dist = stats.col_dist(table, attr.name)
                if not dist.empty and dist.lo is not None:
                    filterable.append((table, attr.name))

    filters: list[Predicate] = []
    if filterable:
        m = len(filterable)
        n = int(rng.integers(1, m + 1))
        chosen = sorted(rng.choice(m, size=n, replace=False).tolist())
        for idx in chosen:
            table, attr = filterable[idx]
            meta = catalog.table(table).attr(attr)
            if meta.kind == CATEGORICAL:
                dictionary = catalog.column(table, attr).dictionary
                value = dictionary[int(rng.integers(0, len(dictionary)))]
                filters.append(Predicate(table, attr, "=", value))
            else:
                dist = stats.col_dist(table, attr)
                a = float(rng.uniform(dist.lo, dist.hi))
                b = float(rng.uniform(dist.lo, dist.hi))
                l, u = (a, b) if a <= b else (b, a)
                filters.append(Predicate(table, attr, ">=", l))
                filters.append(Predicate(table, attr, "<=", u))

    spec = QuerySpec(
        tables=tuple(sorted(tables)),
        joins=tuple(sorted(edge_indices)),
        filters=tuple(sorted(filters, key=Predicate.sort_key)),
    )
    spec.source_text = print_query(spec, catalog)
    return spec


# ---------------------------------------------------------------------------
# Exact COUNT(*) execution.


def filter_mask(catalog: Catalog, table: str, filters: Sequence[Predicate]) -> np.ndarray:
    """Boolean row mask for a table under its filters; nulls never satisfy."""
    n = catalog.table(table).row_count
    mask = np.ones(n, dtype=bool)
    for p in filters:
        if p.table != table:
            continue
        col = catalog.column(table, p.attribute)
        if col.kind == CATEGORICAL:
            code = col.id_of(p.value)
            mask &= (col.values == code) if code >= 0 else np.zeros(n, dtype=bool)
        else:
            v = float(p.value)
            values = col.values
            if p.op == "<":
                cond = values < v
            elif p.op == "<=":
                cond = values <= v
            elif p.op == ">":
                cond = values > v
            elif p.op == ">=":
                cond = values >= v
            else:
                cond = values == v
            cond &= ~col.null_mask
            mask &= cond
    return mask


def _key_value_groups(
    catalog: Catalog,
    table: str,
    attrs: list[str],
    mask: np.ndarray,
) -> dict[tuple, int]:
    """Group filtered rows by the value tuples of the given attributes.

    Keys are comparable across tables: categorical attributes group by
    their dictionary string, continuous by the float value. Rows carrying
    a null in any key attribute are dropped (null never joins).
    """
    cols = [catalog.column(table, a) for a in attrs]
    valid = mask.copy()
    for col in cols:
        valid &= ~col.null_mask
    if not valid.any():
        return {}
    if not cols:
        return {(): int(valid.sum())}
    codes = []
    lookups = []
    for col in cols:
        vals = col.values[valid]
        if col.kind == CATEGORICAL:
            codes.append(vals)
            lookups.append(col.dictionary)
        else:
            uniq, inverse = np.unique(vals, return_inverse=True)
            codes.append(inverse)
            lookups.append(uniq)
    stacked = np.stack(codes)
    uniq_cols, counts = np.unique(stacked, axis=1, return_counts=True)
    groups: dict[tuple, int] = {}
    for g in range(uniq_cols.shape[1]):
        key = tuple(lookups[k][uniq_cols[k, g]] for k in range(len(cols)))
        groups[key] = int(counts[g])
    return groups


def true_cardinality(spec: QuerySpec, catalog: Catalog) -> int:
    """Exact COUNT(*) via filtered scans and left-deep hash joins.

    Tables join in a deterministic order (lexicographically smallest
    connected table next). Intermediate relations keep only join keys
    still needed, aggregated to (key tuple, multiplicity).
    """
    tables = list(spec.tables)
    masks = {t: filter_mask(catalog, t, spec.filters) for t in tables}
    if len(tables) == 1:
        return int(masks[tables[0]].sum())

    edges = [catalog.joins[j] for j in spec.joins]
    joined = [tables[0]]
    remaining = set(tables[1:])

    def needed_attrs(current: list[str]) -> list[tuple[str, str]]:
        cur = set(current)
        out = []
        for e in edges:
            lt, rt = e.left[0], e.right[0]
            if (lt in cur) != (rt in cur):
                out.append(e.left if lt in cur else e.right)
        return sorted(set(out))

    # At this point every needed attr belongs to the first table.
    schema = needed_attrs(joined)
    first = joined[0]
    rel = _key_value_groups(catalog, first, [a for (_t, a) in schema], masks[first])

    while remaining:
        adjacent = set()
        cur = set(joined)
        for e in edges:
            lt, rt = e.left[0], e.right[0]
            if lt in cur and rt in remaining:
                adjacent.add(rt)
            if rt in cur and lt in remaining:
                adjacent.add(lt)
        if not adjacent:
            raise QueryError("disconnected join graph during execution")
        nxt = min(adjacent)

        connecting = [
            e
            for e in edges
            if nxt in (e.left[0], e.right[0])
            and ({e.left[0], e.right[0]} - {nxt}) & cur
        ]
        probe_refs = [e.left if e.left[0] != nxt else e.right for e in connecting]
        build_refs = [e.left if e.left[0] == nxt else e.right for e in connecting]
        probe_pos = [schema.index(ref) for ref in probe_refs]

        next_joined = joined + [nxt]
        next_schema = needed_attrs(next_joined)
        keep_pos = [i for i, ref in enumerate(schema) if ref in next_schema]
        keep_next = [a for (t, a) in next_schema if t == nxt]

        groups = _key_value_groups(
            catalog, nxt, [a for (_, a) in build_refs] + keep_next, masks[nxt]
        )
        k_conn = len(build_refs)
        build: dict[tuple, list[tuple[tuple, int]]] = {}
        for key, cnt in groups.items():
            build.setdefault(key[:k_conn], []).append((key[k_conn:], cnt))

        new_rel: dict[tuple, int] = {}
        for key, cnt in rel.items():
            ck = tuple(key[i] for i in probe_pos)
            hits = build.get(ck)
            if not hits:
                continue
            base = tuple(key[i] for i in keep_pos)
            for tail, cnt2 in hits:
                nk = base + tail
                new_rel[nk] = new_rel.get(nk, 0) + cnt * cnt2

        # next_schema orders kept attrs (sorted); rebuild rel keys to match
        produced = [schema[i] for i in keep_pos] + [(nxt, a) for a in keep_next]
        order = [produced.index(ref) for ref in next_schema]
        rel = {}
        for key, cnt in new_rel.items():
            rk = tuple(key[i] for i in order)
            rel[rk] = rel.get(rk, 0) + cnt
        schema = next_schema
        joined = next_joined
        remaining.discard(nxt)

    return int(sum(rel.values()))


def brute_force_cardinality(
    spec: QuerySpec, catalog: Catalog, max_cells: float = 5e7
) -> int:
    """Independent oracle: evaluate every tuple combination directly.

    Materializes the boolean join condition over the cross product of the
    filtered tables with numpy broadcasting. Intentionally shares no code
    with the hash-join path. Refuses cross products above max_cells.
    """
    tables = list(spec.tables)
    idx = {
        t: np.nonzero(filter_mask(catalog, t, spec.filters))[0] for t in tables
    }
    sizes = [len(idx[t]) for t in tables]
    if any(s == 0 for s in sizes):
        return 0
    cells = float(np.prod([float(s) for s in sizes]))
    if cells > max_cells:
        raise CardestError(f"cross product too large for brute force: {cells:.3g}")
    if len(tables) == 1:
        return sizes[0]

    axis_of = {t: i for i, t in enumerate(tables)}
    k = len(tables)
    cond = None
    for j in spec.joins:
        edge = catalog.joins[j]
        lcol = catalog.column(*edge.left)
        rcol = catalog.column(*edge.right)
        lkeys, rkeys = _comparable_keys(lcol, rcol, idx[edge.left[0]], idx[edge.right[0]])
        lshape = [1] * k
        lshape[axis_of[edge.left[0]]] = len(lkeys)
        rshape = [1] * k
        rshape[axis_of[edge.right[0]]] = len(rkeys)
        eq = lkeys.reshape(lshape) == rkeys.reshape(rshape)
        cond = eq if cond is None else cond & eq
    if cond is None:
        return int(np.prod([int(s) for s in sizes]))
    # Broadcast to the full cross product before counting so unfilled
    # axes multiply in.
    full = np.broadcast_to(cond, tuple(sizes))
    return int(full.sum())


def _comparable_keys(
    lcol: ColumnData, rcol: ColumnData, lidx: np.ndarray, ridx: np.ndarray
):
    if lcol.kind == CATEGORICAL:
        translate = np.full(len(rcol.dictionary) + 1, -2, dtype=np.int64)
        for rid, text in enumerate(rcol.dictionary):
            translate[rid] = lcol.id_of(text) if lcol.id_of(text) >= 0 else -2
        lkeys = lcol.values[lidx].copy()
        lkeys[lcol.null_mask[lidx]] = -1
        rvals = rcol.values[ridx]
        rkeys = translate[np.where(rvals >= 0, rvals, len(rcol.dictionary))]
        rkeys[rcol.null_mask[ridx]] = -3
        return lkeys, rkeys
    lkeys = lcol.values[lidx]  # NaN never equals NaN, nulls drop out naturally
    rkeys = rcol.values[ridx]
    return lkeys, rkeys


def generate_workload(
    catalog: Catalog,
    stats: StatsStore,
    n: int,
    seed: int,
    path: Optional[Union[str, Path]] = None,
) -> list[WorkloadRecord]:
    """Generate n records with oracle cardinalities for every sub-query.

    Each record draws from its own child rng (seed, index), so output is
    byte-identical regardless of chunking or parallel generation order.
    """
    if n < 1:
        raise CardestError("workload size must be >= 1")
    graph = join_graph(catalog)
    subgraphs = enumerate_connected_subgraphs(graph)
    if not subgraphs:
        raise CardestError("catalog has no joins, nothing to generate")
    records = []
    for i in range(n):
        rng = np.random.default_rng([seed, i])
        sub = subgraphs[int(rng.integers(0, len(subgraphs)))]
        spec = generate_query(sub, catalog, stats, rng)
        sub_cards = {
            s.table_set: true_cardinality(s, catalog)
            for s in sub_queries(spec, catalog)
        }
        records.append(
            WorkloadRecord(
                sql=spec.source_text,
                true_card=sub_cards[spec.table_set],
                sub_cards=sub_cards,
            )
        )
    if path is not None:
        write_workload(records, path)
    return records


def write_workload(records: Sequence[WorkloadRecord], path: Union[str, Path]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for record in records:
            fh.write(record.to_json())
            fh.write("\n")


def read_workload(path: Union[str, Path]) -> list[WorkloadRecord]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                records.append(WorkloadRecord.from_json(line))
    return records
