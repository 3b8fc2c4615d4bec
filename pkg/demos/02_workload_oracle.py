"""Generate a training workload with exact cardinality oracles.

Every record carries the true COUNT(*) for the query and every connected
sub-query, computed by the counting hash-join executor and cross-checked
here against the brute-force evaluator.
"""

import tempfile
from pathlib import Path

from cardest import (
    brute_force_cardinality,
    build_stats,
    enumerate_connected_subgraphs,
    generate_workload,
    join_graph,
    parse_query,
)
from cardest.synth import fixture_catalog

catalog = fixture_catalog("star4", seed=3, rows=80)
stats = build_stats(catalog)

print("join graph:", [f"{e.left[0]}.{e.left[1]}={e.right[0]}.{e.right[1]}"
                      for e in catalog.joins])
subgraphs = enumerate_connected_subgraphs(join_graph(catalog))
print(f"{len(subgraphs)} connected subgraphs with >= 2 tables:")
for tables, edges in subgraphs:
    print(f"  {','.join(tables)}  (edges {list(edges)})")

path = Path(tempfile.mkdtemp(prefix="cardest-demo-")) / "workload.jsonl"
records = generate_workload(catalog, stats, n=12, seed=9, path=path)

print(f"\n12 generated records (written to {path}):")
for record in records[:5]:
    print(f"  card={record.true_card:<6} {record.sql[:90]}")

print("\ncross-checking the executor against brute force:")
for record in records:
    spec = parse_query(record.sql, catalog)
    brute = brute_force_cardinality(spec, catalog)
    status = "ok" if brute == record.true_card else "MISMATCH"
    print(f"  {record.true_card:>6} == {brute:<6} {status}")

record = next(r for r in records if r.true_card > 0)
print("\nsub-query cardinalities of one non-empty record:")
for tables in sorted(record.sub_cards, key=lambda s: (len(s), sorted(s))):
    print(f"  {','.join(sorted(tables)):<12} {record.sub_cards[tables]}")
