"""From SQL text to model tokens.

Shows the canonical query form, the per-attribute constraint regions,
the token bundle shapes, and the traditional baseline estimate that is
fed to the model as guidance.
"""

from cardest import (
    baseline_estimate,
    build_stats,
    canonicalize,
    featurize,
    parse_query,
    print_query,
    sub_queries,
    true_cardinality,
)
from cardest.synth import fixture_catalog

catalog = fixture_catalog("chain3", seed=2, rows=200)
stats = build_stats(catalog)

sql = ("select count(*) from b, a, c where a.k = b.k and b.m = c.m "
       "and b.v >= 20 and b.v <= 70 and a.c = 'v1'")
spec = parse_query(sql, catalog)
print("canonical form:", print_query(spec, catalog))

print("\nconstraint regions:")
for (table, attr), region in sorted(canonicalize(spec, catalog).items()):
    if region.filtered:
        if region.kind == "categorical":
            print(f"  {table}.{attr}: values {set(region.values)}")
        else:
            lo = "(" if region.lo_open else "["
            hi = ")" if region.hi_open else "]"
            print(f"  {table}.{attr}: {lo}{region.lo}, {region.hi}{hi}")

bundle = featurize(spec, stats, catalog)
print(f"\njoin tokens:   {bundle.join_tokens.shape}  (one per edge side, "
      "value dist || scaling dist)")
print(f"filter tokens: {bundle.filter_tokens.shape}  (value dist || lo || hi || sel)")
print(f"table tokens:  {bundle.table_tokens.shape}  (AVI, MinSel, EBO, log size)")
print(f"query scalars: {bundle.query_feats.round(4)}")

filter_row = bundle.filter_tokens[0]
print(f"\nfirst filter token tail: lower={filter_row[40]:.3f} "
      f"upper={filter_row[41]:.3f} selectivity={filter_row[42]:.3f}")

est = baseline_estimate(spec, stats, catalog)
truth = true_cardinality(spec, catalog)
print(f"\nbaseline estimate: {est:.1f}   true cardinality: {truth}")

print("\nsub-queries needing estimates for plan-quality scoring:")
for sub in sub_queries(spec, catalog):
    print(f"  {','.join(sub.tables):<8} {sub.source_text[:70]}")
