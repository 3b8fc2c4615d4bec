"""Two-stage self-attention estimator over query token sets.

Shared linear embeddings map join/filter/table tokens and a learned
summary token s into a common 256-dim space. A joining stage attends
over {s} + join tokens; a filtering stage attends over the joining
outputs + filter tokens + table tokens; an MLP head reads the refined
summary token plus query-level scalars and regresses log cardinality
(natural log). Attention is order-free, so any number of joins and
filters fits the same parameters.
"""

from __future__ import annotations

import copy
import json
import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Optional, Sequence, Union

import numpy as np

from . import autodiff as ad
from .autodiff import AdamState, Tensor, adam_step, backward, step_lr
from .catalog import Catalog
from .errors import ModelError
from .featurize import (
    QUERY_FEAT_DIM,
    TABLE_TOKEN_DIM,
    FeatureBundle,
    featurize,
)
from .queryir import QuerySpec, parse_query
from .stats import StatsStore
from .workload import WorkloadRecord

CHECKPOINT_MAGIC = b"CEMODEL1"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class ModelConfig:
    feature_dim: int = 40
    embed_dim: int = 256
    heads: int = 8
    blocks_per_stage: int = 1
    mlp_hidden: tuple[int, ...] = (256, 256)
    dropout: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.embed_dim % self.heads != 0:
            raise ModelError("embed_dim must be divisible by heads")
        if min(self.embed_dim, self.heads, self.blocks_per_stage, self.feature_dim) < 1:
            raise ModelError("all model dimensions must be >= 1")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.heads

    def to_dict(self) -> dict:
        return {
            "feature_dim": self.feature_dim,
            "embed_dim": self.embed_dim,
            "heads": self.heads,
            "blocks_per_stage": self.blocks_per_stage,
            "mlp_hidden": list(self.mlp_hidden),
            "dropout": self.dropout,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "ModelConfig":
        doc = dict(doc)
        doc["mlp_hidden"] = tuple(doc["mlp_hidden"])
        return cls(**doc)


@dataclass
class Linear:
    w: Tensor
    b: Tensor


@dataclass
class Block:
    wq: list[Tensor]
    wk: list[Tensor]
    wv: list[Tensor]
    wy: Tensor
    ln1_g: Tensor
    ln1_b: Tensor
    ffn1: Linear
    ffn2: Linear
    ln2_g: Tensor
    ln2_b: Tensor


@dataclass
class Parameters:
    config: ModelConfig
    e_join: Linear
    e_filter: Linear
    e_table: Linear
    s0: Tensor
    join_stage: list[Block]
    filter_stage: list[Block]
    head: list[Linear]

    def named(self) -> list[tuple[str, Tensor]]:
        """All tensors in declared order; also the checkpoint layout."""
        out: list[tuple[str, Tensor]] = []
        for name, lin in (("e_join", self.e_join), ("e_filter", self.e_filter),
                          ("e_table", self.e_table)):
            out.append((f"{name}.w", lin.w))
            out.append((f"{name}.b", lin.b))
        out.append(("s0", self.s0))
        for stage_name, stage in (("join", self.join_stage), ("filter", self.filter_stage)):
            for bi, blk in enumerate(stage):
                prefix = f"{stage_name}.{bi}"
                for hi in range(len(blk.wq)):
                    out.append((f"{prefix}.wq{hi}", blk.wq[hi]))
                    out.append((f"{prefix}.wk{hi}", blk.wk[hi]))
                    out.append((f"{prefix}.wv{hi}", blk.wv[hi]))
                out.append((f"{prefix}.wy", blk.wy))
                out.append((f"{prefix}.ln1_g", blk.ln1_g))
                out.append((f"{prefix}.ln1_b", blk.ln1_b))
                out.append((f"{prefix}.ffn1.w", blk.ffn1.w))
                out.append((f"{prefix}.ffn1.b", blk.ffn1.b))
                out.append((f"{prefix}.ffn2.w", blk.ffn2.w))
                out.append((f"{prefix}.ffn2.b", blk.ffn2.b))
                out.append((f"{prefix}.ln2_g", blk.ln2_g))
                out.append((f"{prefix}.ln2_b", blk.ln2_b))
        for li, lin in enumerate(self.head):
            out.append((f"head.{li}.w", lin.w))
            out.append((f"head.{li}.b", lin.b))
        return out

    def copy(self) -> "Parameters":
        return copy.deepcopy(self)

    def parameter_count(self) -> int:
        return sum(t.data.size for _, t in self.named())


def init_model(config: ModelConfig) -> Parameters:
    """Xavier-uniform weights, zero biases, unit layer-norm gains; all
    drawn from a single seeded stream in declared order."""
    rng = np.random.default_rng(config.seed)
    d = config.embed_dim

    def xavier(rows: int, cols: int) -> Tensor:
        limit = math.sqrt(6.0 / (rows + cols))
        return Tensor(rng.uniform(-limit, limit, size=(rows, cols)), requires_grad=True)

    def linear(in_dim: int, out_dim: int) -> Linear:
        return Linear(xavier(in_dim, out_dim), Tensor(np.zeros((1, out_dim)), requires_grad=True))

    def block() -> Block:
        dk = config.head_dim
        return Block(
            wq=[xavier(d, dk) for _ in range(config.heads)],
            wk=[xavier(d, dk) for _ in range(config.heads)],
            wv=[xavier(d, dk) for _ in range(config.heads)],
            wy=xavier(config.heads * dk, d),
            ln1_g=Tensor(np.ones((1, d)), requires_grad=True),
            ln1_b=Tensor(np.zeros((1, d)), requires_grad=True),
            ffn1=linear(d, d),
            ffn2=linear(d, d),
            ln2_g=Tensor(np.ones((1, d)), requires_grad=True),
            ln2_b=Tensor(np.zeros((1, d)), requires_grad=True),
        )

    join_dim = 2 * config.feature_dim
    filter_dim = config.feature_dim + 3
    params = Parameters(
        config=config,
        e_join=linear(join_dim, d),
        e_filter=linear(filter_dim, d),
        e_table=linear(TABLE_TOKEN_DIM, d),
        s0=xavier(1, d),
        join_stage=[block() for _ in range(config.blocks_per_stage)],
        filter_stage=[block() for _ in range(config.blocks_per_stage)],
        head=[],
    )
    widths = [d + QUERY_FEAT_DIM, *config.mlp_hidden, 1]
    params.head = [linear(a, b) for a, b in zip(widths[:-1], widths[1:])]
    return params


def _apply_linear(x: Tensor, lin: Linear) -> Tensor:
    return ad.add(ad.matmul(x, lin.w), lin.b)


def attention_block(
    x: Tensor,
    blk: Block,
    config: ModelConfig,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Multi-head self-attention, output projection, then the residual +
    layer-norm + feed-forward transformer encoder pattern."""
    inv_sqrt_dk = 1.0 / math.sqrt(config.head_dim)
    heads = []
    for wq, wk, wv in zip(blk.wq, blk.wk, blk.wv):
        q = ad.matmul(x, wq)
        k = ad.matmul(x, wk)
        v = ad.matmul(x, wv)
        att = ad.row_softmax(ad.scale(ad.matmul(q, ad.transpose(k)), inv_sqrt_dk))
        heads.append(ad.matmul(att, v))
    y = ad.matmul(ad.concat_cols(heads), blk.wy)
    if training:
        y = ad.dropout(y, config.dropout, rng, training)
    x = ad.layer_norm(ad.add(x, y), blk.ln1_g, blk.ln1_b)
    f = ad.relu(_apply_linear(x, blk.ffn1))
    if training:
        f = ad.dropout(f, config.dropout, rng, training)
    f = _apply_linear(f, blk.ffn2)
    return ad.layer_norm(ad.add(x, f), blk.ln2_g, blk.ln2_b)


def embed(bundle: FeatureBundle, params: Parameters):
    """Shared linear maps from raw tokens to embeddings (h, d, t, s)."""
    h = d = None
    if len(bundle.join_tokens):
        h = _apply_linear(Tensor(bundle.join_tokens), params.e_join)
    if len(bundle.filter_tokens):
        d = _apply_linear(Tensor(bundle.filter_tokens), params.e_filter)
    t = _apply_linear(Tensor(bundle.table_tokens), params.e_table)
    return h, d, t, params.s0


def _select_rows(x: Tensor, start: int, stop: int) -> Tensor:
    selector = np.zeros((stop - start, x.shape[0]))
    selector[np.arange(stop - start), np.arange(start, stop)] = 1.0
    return ad.matmul(Tensor(selector), x)


def forward_log_card(
    bundle: FeatureBundle,
    params: Parameters,
    rng: Optional[np.random.Generator] = None,
    training: bool = False,
) -> Tensor:
    """Differentiable forward pass; returns the (1, 1) log-card tensor."""
    config = params.config
    h, d, t, s = embed(bundle, params)

    stack = [s] if h is None else [s, h]
    x = ad.concat_rows(stack) if len(stack) > 1 else s
    for blk in params.join_stage:
        x = attention_block(x, blk, config, rng, training)
    s1 = _select_rows(x, 0, 1)
    h1 = _select_rows(x, 1, x.shape[0]) if h is not None else None

    stack = [s1]
    if h1 is not None:
        stack.append(h1)
    if d is not None:
        stack.append(d)
    stack.append(t)
    u = ad.concat_rows(stack)
    for blk in params.filter_stage:
        u = attention_block(u, blk, config, rng, training)
    s2 = _select_rows(u, 0, 1)

    z = ad.concat_cols([s2, Tensor(bundle.query_feats.reshape(1, -1))])
    for lin in params.head[:-1]:
        z = ad.relu(_apply_linear(z, lin))
        if training:
            z = ad.dropout(z, config.dropout, rng, training)
    return _apply_linear(z, params.head[-1])


def predict_log_card(
    bundle: FeatureBundle, params: Parameters, mode: str = "eval"
) -> float:
    """Estimated natural-log cardinality; eval mode clamps to >= 0."""
    y = forward_log_card(bundle, params, training=False).item()
    if mode == "eval":
        return max(0.0, y)
    return y


def mse_loss(predictions: Sequence[Tensor], targets: Sequence[float]) -> Tensor:
    """Mean squared error between predicted and true log cardinalities."""
    if len(predictions) == 0 or len(predictions) != len(targets):
        raise ModelError("mse_loss needs equal-length non-empty batches")
    preds = ad.concat_rows(list(predictions))
    t = Tensor(np.asarray(targets, dtype=np.float64).reshape(-1, 1))
    return ad.mean(ad.square(ad.add(preds, ad.scale(t, -1.0))))


# ---------------------------------------------------------------------------
# Training.


@dataclass
class TrainConfig:
    batch: int = 256
    lr: float = 2.85e-5
    weight_decay: float = 5e-5
    step_size: int = 30
    gamma: float = 0.5
    epochs: int = 30
    seed: Optional[int] = None  # falls back to the model seed


@dataclass
class Corpus:
    """One database's training material: records plus its stats/catalog."""

    records: list[WorkloadRecord]
    stats: StatsStore
    catalog: Catalog


def _prepare(corpora: Sequence[Corpus]) -> tuple[list[FeatureBundle], np.ndarray]:
    bundles: list[FeatureBundle] = []
    targets: list[float] = []
    for ci, corpus in enumerate(corpora):
        for ri, record in enumerate(corpus.records):
            if record.true_card < 1:
                raise ModelError(
                    f"corpus {ci} record {ri}: true cardinality must be >= 1"
                )
            spec = parse_query(record.sql, corpus.catalog)
            bundles.append(featurize(spec, corpus.stats, corpus.catalog))
            targets.append(math.log(record.true_card))
    return bundles, np.asarray(targets)


def _run_training(
    params: Parameters,
    bundles: list[FeatureBundle],
    targets: np.ndarray,
    hyper: TrainConfig,
) -> list[float]:
    seed = hyper.seed if hyper.seed is not None else params.config.seed
    shuffle_rng = np.random.default_rng([seed, 1])
    dropout_rng = np.random.default_rng([seed, 2])
    named = params.named()
    state = AdamState()
    history: list[float] = []
    n = len(bundles)
    for epoch in range(hyper.epochs):
        lr = hyper.lr * step_lr(hyper.step_size, hyper.gamma, epoch)
        order = shuffle_rng.permutation(n)
        epoch_sq_sum = 0.0
        for start in range(0, n, hyper.batch):
            chunk = order[start : start + hyper.batch]
            k = len(chunk)
            for _, tensor in named:
                tensor.zero_grad()
            batch_sq = 0.0
            for idx in chunk:
                pred = forward_log_card(
                    bundles[idx], params, dropout_rng, training=True
                )
                err = ad.add(pred, Tensor([[-targets[idx]]]))
                # Per-query backward of (err^2)/k accumulates the exact
                # batch-mean gradient without one giant tape.
                loss_i = ad.scale(ad.square(err), 1.0 / k)
                backward(loss_i)
                batch_sq += float(err.item() ** 2)
            if not np.isfinite(batch_sq):
                raise ModelError(
                    f"non-finite loss in batch starting at index {start}"
                )
            adam_step(
                named, state, lr, weight_decay=hyper.weight_decay
            )
            epoch_sq_sum += batch_sq
        history.append(epoch_sq_sum / n)
    return history


def train(
    corpora: Sequence[Corpus],
    config: ModelConfig,
    hyper: Optional[TrainConfig] = None,
) -> tuple[Parameters, list[float]]:
    """Pretrain on pooled corpora; returns parameters and per-epoch loss."""
    if not corpora:
        raise ModelError("need at least one corpus")
    hyper = hyper or TrainConfig()
    params = init_model(config)
    bundles, targets = _prepare(corpora)
    history = _run_training(params, bundles, targets, hyper)
    return params, history


def finetune(
    params: Parameters,
    corpus: Corpus,
    hyper: Optional[TrainConfig] = None,
) -> tuple[Parameters, list[float]]:
    """Continue training on one database; the input parameters are
    untouched. Default learning rate is half the pretraining default."""
    hyper = hyper or TrainConfig(lr=TrainConfig.lr * 0.5)
    tuned = params.copy()
    bundles, targets = _prepare([corpus])
    history = _run_training(tuned, bundles, targets, hyper)
    return tuned, history


def estimator_fn(
    params: Parameters, stats: StatsStore, catalog: Catalog
) -> Callable[[QuerySpec], float]:
    """Estimator closure for evaluation: QuerySpec -> cardinality."""

    def estimate(spec: QuerySpec) -> float:
        bundle = featurize(spec, stats, catalog)
        return math.exp(predict_log_card(bundle, params, mode="eval"))

    return estimate


# ---------------------------------------------------------------------------
# Checkpoints: magic, version, JSON config block, little-endian f32 payload.


def save_checkpoint(
    params: Parameters, path: Union[str, Path], metadata: Optional[dict] = None
) -> None:
    named = params.named()
    manifest = [{"name": name, "shape": list(t.shape)} for name, t in named]
    payload = b"".join(t.data.astype("<f4").tobytes() for _, t in named)
    block = json.dumps(
        {
            "config": params.config.to_dict(),
            "tensors": manifest,
            "metadata": dict(metadata or {}),
            "payload_bytes": len(payload),
        }
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(CHECKPOINT_MAGIC)
        fh.write(struct.pack("<I", CHECKPOINT_VERSION))
        fh.write(struct.pack("<I", len(block)))
        fh.write(block)
        fh.write(payload)


def load_checkpoint(path: Union[str, Path]) -> tuple[Parameters, dict]:
    raw = Path(path).read_bytes()
    head = len(CHECKPOINT_MAGIC) + 8
    if len(raw) < head:
        raise ModelError(f"{path}: corrupt checkpoint (truncated header)")
    if raw[: len(CHECKPOINT_MAGIC)] != CHECKPOINT_MAGIC:
        raise ModelError(f"{path}: not a checkpoint file")
    version, block_len = struct.unpack(
        "<II", raw[len(CHECKPOINT_MAGIC) : head]
    )
    if version != CHECKPOINT_VERSION:
        raise ModelError(f"{path}: unsupported checkpoint version {version}")
    block_end = head + block_len
    if len(raw) < block_end:
        raise ModelError(f"{path}: corrupt checkpoint (truncated config)")
    try:
        doc = json.loads(raw[head:block_end].decode("utf-8"))
    except (json.JSONDecodeError, UnicodeDecodeError) as exc:
        raise ModelError(f"{path}: corrupt checkpoint ({exc})") from exc

    config = ModelConfig.from_dict(doc["config"])
    params = init_model(config)
    named = params.named()
    if [n for n, _ in named] != [t["name"] for t in doc["tensors"]]:
        raise ModelError(f"{path}: checkpoint layout does not match config")
    offset = block_end
    for (name, tensor), spec in zip(named, doc["tensors"]):
        shape = tuple(spec["shape"])
        if tensor.shape != shape:
            raise ModelError(f"{path}: shape mismatch for {name}")
        nbytes = int(np.prod(shape)) * 4
        chunk = raw[offset : offset + nbytes]
        if len(chunk) < nbytes:
            raise ModelError(f"{path}: corrupt checkpoint (truncated payload)")
        tensor.data = (
            np.frombuffer(chunk, dtype="<f4").astype(np.float64).reshape(shape)
        )
        offset += nbytes
    if offset != len(raw):
        raise ModelError(f"{path}: corrupt checkpoint (trailing bytes)")
    return params, doc.get("metadata", {})
