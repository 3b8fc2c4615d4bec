"""Pretrain on synthetic databases, then estimate on an unseen one.

A scaled-down version of the cross-database experiment: the model never
sees the held-out database's data or queries, only its freshly built
statistics. Takes a couple of minutes on one core.
"""

import time

from cardest import Corpus, ModelConfig, TrainConfig, build_stats, evaluate, train
from cardest.featurize import baseline_estimate
from cardest.model import estimator_fn
from cardest.synth import family_corpus_records, synthetic_database

corpora = []
for i, name in enumerate(["alpha", "beta", "gamma"]):
    catalog = synthetic_database(name, seed=10 + i, scale=0.5)
    stats = build_stats(catalog)
    records = family_corpus_records(catalog, stats, n=400, seed=20 + i, oversample=8)
    corpora.append(Corpus(records, stats, catalog))
    print(f"{name}: {[t.row_count for t in catalog.tables]} rows, "
          f"{len(records)} training queries")

config = ModelConfig(embed_dim=32, heads=4, mlp_hidden=(32, 32), dropout=0.1, seed=1)
hyper = TrainConfig(batch=128, lr=8e-4, weight_decay=5e-5,
                    step_size=17, gamma=0.5, epochs=35)
t0 = time.perf_counter()
params, history = train(corpora, config, hyper)
print(f"\npretrained in {time.perf_counter() - t0:.0f}s; "
      f"loss {history[0]:.2f} -> {history[-1]:.2f}")

held = synthetic_database("delta", seed=99, scale=0.5)
held_stats = build_stats(held)
eval_records = family_corpus_records(held, held_stats, n=120, seed=77, oversample=8)

model_report = evaluate(eval_records, held, estimator_fn(params, held_stats, held))
base_report = evaluate(
    eval_records, held, lambda spec: baseline_estimate(spec, held_stats, held)
)

print("\nzero-shot Q-ERROR quantiles on the unseen database:")
print(f"{'':>10} {'50%':>8} {'80%':>8} {'90%':>8} {'95%':>8} {'99%':>8}")
for label, report in (("model", model_report), ("baseline", base_report)):
    q = report.quantiles["q_error"]
    print(f"{label:>10} " + " ".join(f"{q[f'p{p}']:8.2f}" for p in (50, 80, 90, 95, 99)))

print("\nP-ERROR quantiles:")
for label, report in (("model", model_report), ("baseline", base_report)):
    q = report.quantiles["p_error"]
    print(f"{label:>10} " + " ".join(f"{q[f'p{p}']:8.3f}" for p in (50, 80, 90, 95, 99)))
