"""Finetune a pretrained checkpoint and answer queries over the wire.

Finetuning needs only a small database-specific workload. The service
speaks newline-delimited JSON, one response per request, so an external
optimizer can stream estimation calls.
"""

import json
import socket
import tempfile
import time
from pathlib import Path

from cardest import Corpus, ModelConfig, TrainConfig, build_stats, evaluate, train
from cardest.cli import EstimationServer, EstimationService
from cardest.model import estimator_fn, finetune, load_checkpoint, save_checkpoint
from cardest.synth import family_corpus_records, synthetic_database

corpora = []
for i, name in enumerate(["src0", "src1"]):
    source = synthetic_database(name, seed=70 + i, scale=0.4)
    source_stats = build_stats(source)
    records = family_corpus_records(source, source_stats, n=400, seed=71 + i, oversample=8)
    corpora.append(Corpus(records, source_stats, source))

config = ModelConfig(embed_dim=32, heads=4, mlp_hidden=(32, 32), seed=3)
params, _ = train(
    corpora, config, TrainConfig(batch=128, lr=8e-4, epochs=20, step_size=8, gamma=0.5)
)

# An unseen target database: specialize with just 100 of its queries.
catalog = synthetic_database("target", seed=55, scale=0.4)
stats = build_stats(catalog)
tune_records = family_corpus_records(catalog, stats, n=100, seed=1, oversample=8)
eval_records = family_corpus_records(catalog, stats, n=100, seed=2, oversample=8)

tuned, _ = finetune(
    params,
    Corpus(tune_records, stats, catalog),
    TrainConfig(batch=32, lr=8e-4, epochs=60, step_size=30, gamma=0.5),
)

before = evaluate(eval_records, catalog, estimator_fn(params, stats, catalog))
after = evaluate(eval_records, catalog, estimator_fn(tuned, stats, catalog))
print(f"median Q-ERROR before finetune: {before.quantiles['q_error']['p50']:.2f}")
print(f"median Q-ERROR after finetune:  {after.quantiles['q_error']['p50']:.2f}")

ckpt = Path(tempfile.mkdtemp(prefix="cardest-demo-")) / "tuned.ckpt"
save_checkpoint(tuned, ckpt, metadata={"finetuned": True})
loaded, meta = load_checkpoint(ckpt)
print(f"\ncheckpoint round trip: {ckpt.stat().st_size} bytes, metadata {meta}")

service = EstimationService(loaded, stats, catalog)
server = EstimationServer(("127.0.0.1", 0), service)
server.serve_background()
host, port = server.server_address
print(f"\nestimation service on {host}:{port}")

with socket.create_connection((host, port)) as conn:
    fh = conn.makefile("rw", encoding="utf-8")
    requests = [
        {"id": 1, "sql": "SELECT COUNT(*) FROM d0, f WHERE d0.k = f.fk0"},
        {"id": 2, "sql": eval_records[0].sql},
        {"id": 3, "sql": "SELECT COUNT(*) FROM nowhere"},
        {"id": 4, "sql": train_records[0].sql},
    ]
    t0 = time.perf_counter()
    for request in requests:
        fh.write(json.dumps(request) + "\n")
        fh.flush()
        response = json.loads(fh.readline())
        shown = {k: (round(v, 2) if isinstance(v, float) else v)
                 for k, v in response.items()}
        print(f"  -> {shown}")
    print(f"round-trip mean: {(time.perf_counter() - t0) / len(requests) * 1000:.1f} ms")

server.shutdown()
server.server_close()
