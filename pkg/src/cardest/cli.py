"""Command-line pipeline and the line-protocol estimation service.

Subcommands: ingest, stats, genwork, train, finetune, estimate, eval,
serve. Exit codes: 1 usage, 2 data error, 3 model error. The PRICE_LOG
environment variable (error | info | debug) sets log verbosity.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import socketserver
import sys
import threading
from pathlib import Path
from typing import Optional, Sequence

from .catalog import Catalog, ingest_table, load_catalog, load_schema, save_catalog
from .errors import CardestError, ModelError
from .evaluate import evaluate
from .featurize import baseline_estimate, featurize
from .model import (
    Corpus,
    ModelConfig,
    Parameters,
    TrainConfig,
    estimator_fn,
    finetune,
    load_checkpoint,
    predict_log_card,
    save_checkpoint,
    train,
)
from .queryir import parse_query
from .stats import StatsStore, build_stats, load_stats, save_stats
from .workload import generate_workload, read_workload

log = logging.getLogger("cardest")

EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_MODEL = 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def _setup_logging() -> None:
    level = os.environ.get("PRICE_LOG", "error").lower()
    chosen = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}.get(
        level, logging.ERROR
    )
    logging.basicConfig(level=chosen, format="%(levelname)s %(name)s: %(message)s")


def _add_hyper_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=256)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--weight-decay", type=float, default=5e-5)
    p.add_argument("--step-size", type=int, default=30)
    p.add_argument("--gamma", type=float, default=0.5)


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--embed-dim", type=int, default=256)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--blocks", type=int, default=1)
    p.add_argument("--mlp-hidden", type=int, nargs="+", default=[256, 256])
    p.add_argument("--dropout", type=float, default=0.1)


def build_parser() -> _Parser:
    parser = _Parser(prog="cardest", description=__doc__)
    sub = parser.add_subparsers(dest="cmd", required=True)

    p = sub.add_parser("ingest", help="load schema + CSVs into a catalog file")
    p.add_argument("--schema", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("stats", help="build the statistics store")
    p.add_argument("--catalog", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("genwork", help="generate a workload with oracle cardinalities")
    p.add_argument("--catalog", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="pretrain on one or more corpora")
    p.add_argument(
        "--corpus",
        nargs=3,
        action="append",
        metavar=("WORKLOAD", "STATS", "CATALOG"),
        required=True,
    )
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    _add_model_flags(p)
    _add_hyper_flags(p)

    p = sub.add_parser("finetune", help="tune a checkpoint on one corpus")
    p.add_argument("--from", dest="source", required=True)
    p.add_argument(
        "--corpus",
        nargs=3,
        action="append",
        metavar=("WORKLOAD", "STATS", "CATALOG"),
        required=True,
    )
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, default=42)
    _add_hyper_flags(p)

    p = sub.add_parser("estimate", help="estimate one query's cardinality")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--query", required=True)

    p = sub.add_parser("eval", help="Q-ERROR / P-ERROR report for an estimator")
    p.add_argument("--checkpoint")
    p.add_argument("--stats", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--workload", required=True)
    p.add_argument("--estimator", choices=["model", "baseline"], default="model")
    p.add_argument("--report-json", required=True)
    p.add_argument("--report-csv")

    p = sub.add_parser("serve", help="line-protocol estimation service")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--stats", required=True)
    p.add_argument("--catalog", required=True)
    p.add_argument("--addr", help="host:port to listen on; omit for stdio")

    return parser


def _train_config(args, default_lr: float) -> TrainConfig:
    return TrainConfig(
        batch=args.batch,
        lr=args.lr if args.lr is not None else default_lr,
        weight_decay=args.weight_decay,
        step_size=args.step_size,
        gamma=args.gamma,
        epochs=args.epochs,
        seed=args.seed,
    )


def _load_corpora(triples) -> list[Corpus]:
    corpora = []
    for workload_path, stats_path, catalog_path in triples:
        records = read_workload(workload_path)
        # Training targets are log cardinalities; empty-result queries
        # carry no target and are dropped here.
        usable = [r for r in records if r.true_card >= 1]
        if len(usable) < len(records):
            log.info(
                "%s: dropped %d zero-cardinality records",
                workload_path,
                len(records) - len(usable),
            )
        if not usable:
            raise CardestError(f"{workload_path}: no records with cardinality >= 1")
        corpora.append(
            Corpus(
                records=usable,
                stats=load_stats(stats_path),
                catalog=load_catalog(catalog_path),
            )
        )
    return corpora


def cmd_ingest(args) -> int:
    catalog = load_schema(args.schema)
    data_dir = Path(args.data_dir)
    for table in catalog.tables:
        csv_path = data_dir / f"{table.name}.csv"
        if not csv_path.exists():
            raise CardestError(f"no data file for table {table.name!r}: {csv_path}")
        ingest_table(catalog, table.name, csv_path)
        log.info("ingested %s: %d rows", table.name, table.row_count)
    save_catalog(catalog, args.out)
    return 0


def cmd_stats(args) -> int:
    catalog = load_catalog(args.catalog)
    store = build_stats(catalog)
    save_stats(store, args.out)
    log.info("built statistics for %d columns", len(store.columns))
    return 0


def cmd_genwork(args) -> int:
    catalog = load_catalog(args.catalog)
    stats = load_stats(args.stats)
    generate_workload(catalog, stats, n=args.n, seed=args.seed, path=args.out)
    return 0


def cmd_train(args) -> int:
    corpora = _load_corpora(args.corpus)
    config = ModelConfig(
        embed_dim=args.embed_dim,
        heads=args.heads,
        blocks_per_stage=args.blocks,
        mlp_hidden=tuple(args.mlp_hidden),
        dropout=args.dropout,
        seed=args.seed,
    )
    hyper = _train_config(args, default_lr=TrainConfig.lr)
    params, history = train(corpora, config, hyper)
    save_checkpoint(
        params,
        args.out,
        metadata={
            "epochs": hyper.epochs,
            "final_loss": history[-1] if history else None,
            "corpus_fingerprint": [len(c.records) for c in corpora],
        },
    )
    return 0


def cmd_finetune(args) -> int:
    params, meta = load_checkpoint(args.source)
    corpora = _load_corpora(args.corpus)
    if len(corpora) != 1:
        raise CardestError("finetune takes exactly one corpus")
    hyper = _train_config(args, default_lr=TrainConfig.lr * 0.5)
    tuned, history = finetune(params, corpora[0], hyper)
    save_checkpoint(
        tuned,
        args.out,
        metadata={
            "epochs": meta.get("epochs", 0),
            "finetune_epochs": hyper.epochs,
            "final_loss": history[-1] if history else None,
        },
    )
    return 0


def cmd_estimate(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    stats = load_stats(args.stats)
    catalog = load_catalog(args.catalog)
    spec = parse_query(args.query, catalog)
    bundle = featurize(spec, stats, catalog)
    log_card = predict_log_card(bundle, params, mode="eval")
    print(
        json.dumps(
            {
                "log_card": log_card,
                "card": math.exp(log_card),
                "baseline": baseline_estimate(spec, stats, catalog),
            }
        )
    )
    return 0


def cmd_eval(args) -> int:
    stats = load_stats(args.stats)
    catalog = load_catalog(args.catalog)
    if args.estimator == "model":
        if not args.checkpoint:
            raise CardestError("--checkpoint required for the model estimator")
        params, _ = load_checkpoint(args.checkpoint)
        estimator = estimator_fn(params, stats, catalog)
    else:
        estimator = lambda spec: baseline_estimate(spec, stats, catalog)  # noqa: E731
    report = evaluate(
        args.workload,
        catalog,
        estimator,
        json_path=args.report_json,
        csv_path=args.report_csv,
    )
    log.info("evaluated %d queries (%d skipped)", report.n, report.skipped)
    return 0


# ---------------------------------------------------------------------------
# Service.


class EstimationService:
    """Shared immutable state answering one request line at a time."""

    def __init__(self, params: Parameters, stats: StatsStore, catalog: Catalog):
        self.params = params
        self.stats = stats
        self.catalog = catalog

    def handle_line(self, line: str) -> str:
        try:
            doc = json.loads(line)
            request_id = doc.get("id") if isinstance(doc, dict) else None
        except json.JSONDecodeError:
            return json.dumps({"id": None, "error": "parse"})
        try:
            if not isinstance(doc, dict) or "sql" not in doc:
                raise CardestError("request needs a 'sql' field")
            spec = parse_query(doc["sql"], self.catalog)
            bundle = featurize(spec, self.stats, self.catalog)
            log_card = predict_log_card(bundle, self.params, mode="eval")
            return json.dumps(
                {"id": request_id, "card": math.exp(log_card), "log_card": log_card}
            )
        except Exception as exc:  # one error response per bad request
            return json.dumps({"id": request_id, "error": str(exc)})

    def serve_stream(self, lines, write) -> None:
        for line in lines:
            line = line.strip()
            if not line:
                continue
            write(self.handle_line(line) + "\n")


MAX_LINE_BYTES = 1_000_000


class _Handler(socketserver.StreamRequestHandler):
    def handle(self):
        service: EstimationService = self.server.service  # type: ignore[attr-defined]
        while True:
            raw = self.rfile.readline(MAX_LINE_BYTES)
            if not raw:
                return
            if len(raw) >= MAX_LINE_BYTES and not raw.endswith(b"\n"):
                # Oversized request: drain the rest of the line, answer
                # once, keep the connection usable.
                while True:
                    chunk = self.rfile.readline(MAX_LINE_BYTES)
                    if not chunk or chunk.endswith(b"\n"):
                        break
                response = json.dumps({"id": None, "error": "parse"}) + "\n"
            else:
                line = raw.decode("utf-8", errors="replace").strip()
                if not line:
                    continue
                response = service.handle_line(line) + "\n"
            self.wfile.write(response.encode("utf-8"))
            self.wfile.flush()


class EstimationServer(socketserver.ThreadingTCPServer):
    allow_reuse_address = True
    daemon_threads = True

    def __init__(self, addr: tuple[str, int], service: EstimationService):
        super().__init__(addr, _Handler)
        self.service = service

    def serve_background(self) -> threading.Thread:
        thread = threading.Thread(target=self.serve_forever, daemon=True)
        thread.start()
        return thread


def cmd_serve(args) -> int:
    params, _ = load_checkpoint(args.checkpoint)
    stats = load_stats(args.stats)
    catalog = load_catalog(args.catalog)
    service = EstimationService(params, stats, catalog)
    if not args.addr:
        service.serve_stream(sys.stdin, sys.stdout.write)
        return 0
    host, _, port = args.addr.rpartition(":")
    server = EstimationServer((host or "127.0.0.1", int(port)), service)
    log.info("serving on %s", args.addr)
    with server:
        server.serve_forever()
    return 0


_COMMANDS = {
    "ingest": cmd_ingest,
    "stats": cmd_stats,
    "genwork": cmd_genwork,
    "train": cmd_train,
    "finetune": cmd_finetune,
    "estimate": cmd_estimate,
    "eval": cmd_eval,
    "serve": cmd_serve,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.cmd](args)
    except ModelError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (CardestError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
