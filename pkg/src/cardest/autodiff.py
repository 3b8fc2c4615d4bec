"""Minimal reverse-mode autodiff over dense 2-D float64 matrices.

Each op records its inputs and a backward closure on the produced
Tensor; backward() walks the topologically ordered tape once and
accumulates gradients. Only what the estimator needs: no broadcasting
beyond a row-wise bias, no tensors above rank 2.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import ModelError


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "parents", "backward_fn", "op")

    def __init__(self, data, requires_grad: bool = False, parents=(), backward_fn=None, op="leaf"):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim == 1:
            arr = arr.reshape(1, -1)
        if arr.ndim != 2:
            raise ModelError(f"tensors are 2-D, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: Optional[np.ndarray] = None
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self.backward_fn: Optional[Callable[[np.ndarray], None]] = backward_fn
        self.op = op

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, grad: np.ndarray) -> None:
        if self.grad is None:
            self.grad = grad.copy()
        else:
            self.grad += grad

    def zero_grad(self) -> None:
        self.grad = None

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op})"


def _result(data, parents, backward_fn, op) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, needs, parents if needs else (), backward_fn if needs else None, op)


def _check(cond: bool, op: str, *shapes) -> None:
    if not cond:
        raise ModelError(f"{op}: incompatible shapes {' and '.join(map(str, shapes))}")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _check(a.shape[1] == b.shape[0], "matmul", a.shape, b.shape)
    out_data = a.data @ b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ g)

    return _result(out_data, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(g.T)

    return _result(x.data.T, (x,), backward, "transpose")


def add(a: Tensor, b: Tensor) -> Tensor:
    # Equal shapes, or b a (1, m) bias row broadcast over a's rows.
    bias = b.shape[0] == 1 and a.shape[0] != 1 and a.shape[1] == b.shape[1]
    _check(a.shape == b.shape or bias, "add", a.shape, b.shape)
    out_data = a.data + b.data

    def backward(g):
        if a.requires_grad:
            a.accumulate(g)
        if b.requires_grad:
            b.accumulate(g.sum(axis=0, keepdims=True) if bias else g)

    return _result(out_data, (a, b), backward, "add")


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * c)

    return _result(x.data * c, (x,), backward, "scale")


def concat_rows(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    _check(len(tensors) >= 1, "concat_rows")
    cols = tensors[0].shape[1]
    _check(all(t.shape[1] == cols for t in tensors), "concat_rows",
           *[t.shape for t in tensors])
    out_data = np.concatenate([t.data for t in tensors], axis=0)
    offsets = np.cumsum([0] + [t.shape[0] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate(g[lo:hi])

    return _result(out_data, tuple(tensors), backward, "concat_rows")


def concat_cols(tensors: Sequence[Tensor]) -> Tensor:
    tensors = list(tensors)
    _check(len(tensors) >= 1, "concat_cols")
    rows = tensors[0].shape[0]
    _check(all(t.shape[0] == rows for t in tensors), "concat_cols",
           *[t.shape for t in tensors])
    out_data = np.concatenate([t.data for t in tensors], axis=1)
    offsets = np.cumsum([0] + [t.shape[1] for t in tensors])

    def backward(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                t.accumulate(g[:, lo:hi])

    return _result(out_data, tuple(tensors), backward, "concat_cols")


def row_softmax(x: Tensor) -> Tensor:
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            dot = (g * y).sum(axis=1, keepdims=True)
            x.accumulate((g - dot) * y)

    return _result(y, (x,), backward, "row_softmax")


def layer_norm(x: Tensor, gain: Tensor, bias: Tensor, eps: float = 1e-12) -> Tensor:
    m = x.shape[1]
    _check(gain.shape == (1, m) and bias.shape == (1, m), "layer_norm",
           x.shape, gain.shape, bias.shape)
    mu = x.data.mean(axis=1, keepdims=True)
    centered = x.data - mu
    var = (centered ** 2).mean(axis=1, keepdims=True)
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = centered * inv_std
    y = xhat * gain.data + bias.data

    def backward(g):
        if gain.requires_grad:
            gain.accumulate((g * xhat).sum(axis=0, keepdims=True))
        if bias.requires_grad:
            bias.accumulate(g.sum(axis=0, keepdims=True))
        if x.requires_grad:
            gx = g * gain.data
            term = gx - gx.mean(axis=1, keepdims=True) \
                - xhat * (gx * xhat).mean(axis=1, keepdims=True)
            x.accumulate(term * inv_std)

    return _result(y, (x, gain, bias), backward, "layer_norm")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * mask)

    return _result(x.data * mask, (x,), backward, "relu")


def dropout(x: Tensor, p: float, rng: np.random.Generator, training: bool) -> Tensor:
    if not training or p <= 0.0:
        return x
    keep = (rng.random(x.shape) >= p) / (1.0 - p)

    def backward(g):
        if x.requires_grad:
            x.accumulate(g * keep)

    return _result(x.data * keep, (x,), backward, "dropout")


def row_mean(x: Tensor) -> Tensor:
    m = x.shape[1]
    out_data = x.data.mean(axis=1, keepdims=True)

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.repeat(g, m, axis=1) / m)

    return _result(out_data, (x,), backward, "row_mean")


def square(x: Tensor) -> Tensor:
    def backward(g):
        if x.requires_grad:
            x.accumulate(2.0 * x.data * g)

    return _result(x.data ** 2, (x,), backward, "square")


def mean(x: Tensor) -> Tensor:
    size = x.data.size
    out_data = np.array([[x.data.mean()]])

    def backward(g):
        if x.requires_grad:
            x.accumulate(np.full(x.shape, g[0, 0] / size))

    return _result(out_data, (x,), backward, "mean")


@dataclass
class Tape:
    """Topologically ordered record of one computation, leaves first."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def trace(cls, root: Tensor) -> "Tape":
        order: list[Tensor] = []
        seen: set[int] = set()
        add_seen = seen.add
        append = order.append

        def visit(node: Tensor) -> None:
            for parent in node.parents:
                if id(parent) not in seen:
                    add_seen(id(parent))
                    visit(parent)
            append(node)

        add_seen(id(root))
        visit(root)
        return cls(order)


def backward(loss: Tensor) -> Tape:
    """Reverse-mode sweep from a scalar loss; gradients accumulate on
    every requires_grad tensor in the graph."""
    if loss.shape != (1, 1):
        raise ModelError(f"backward needs a scalar loss, got shape {loss.shape}")
    tape = Tape.trace(loss)
    loss.accumulate(np.ones((1, 1)))
    for node in reversed(tape.nodes):
        if node.backward_fn is not None and node.grad is not None:
            node.backward_fn(node.grad)
    return tape


# ---------------------------------------------------------------------------
# Optimization.


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(
    params: Sequence[tuple[str, Tensor]],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One Adam update with bias correction and decoupled weight decay.

    Weight decay shrinks parameters by lr * wd before the moment update.
    Missing gradients are treated as zero; non-finite ones are an error.
    """
    state.step += 1
    t = state.step
    for name, p in params:
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if not np.isfinite(g).all():
            raise ModelError(f"non-finite gradient for parameter {name!r}")
        if weight_decay:
            p.data -= lr * weight_decay * p.data
        m = state.m.setdefault(name, np.zeros_like(p.data))
        v = state.v.setdefault(name, np.zeros_like(p.data))
        m *= beta1
        m += (1 - beta1) * g
        v *= beta2
        v += (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)


def step_lr(step_size: int, gamma: float, epoch: int) -> float:
    """Learning-rate multiplier gamma ** floor(epoch / step_size)."""
    if step_size < 1:
        raise ModelError("step_size must be >= 1")
    if not (0.0 < gamma <= 1.0):
        raise ModelError("gamma must be in (0, 1]")
    return gamma ** (epoch // step_size)
