"""Finite-difference gradient checking helpers shared by the test suite.

The oracle side is plain central differences re-evaluating the forward
pass at perturbed leaf values; it never inspects the reverse-mode code.
"""

import numpy as np

from cardest import autodiff as ad


def relative_errors(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-4):
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def fd_check(build_loss, leaves, h: float = 1e-5, sample: int | None = None,
             rng: np.random.Generator | None = None) -> float:
    """Max relative error between reverse-mode and central differences.

    build_loss() must rebuild the loss Tensor from the leaves' current
    .data (re-seeding any dropout identically on every call). When
    ``sample`` is given, only that many coordinates per leaf are checked.
    """
    for leaf in leaves:
        leaf.zero_grad()
    loss = build_loss()
    ad.backward(loss)
    worst = 0.0
    for leaf in leaves:
        grad = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        flat = leaf.data.reshape(-1)
        coords = range(flat.size)
        if sample is not None and flat.size > sample:
            assert rng is not None
            coords = rng.choice(flat.size, size=sample, replace=False)
        for idx in coords:
            original = flat[idx]
            flat[idx] = original + h
            up = build_loss().item()
            flat[idx] = original - h
            down = build_loss().item()
            flat[idx] = original
            numeric = (up - down) / (2 * h)
            analytic = grad.reshape(-1)[idx]
            err = relative_errors(np.array(analytic), np.array(numeric))
            worst = max(worst, float(err))
    return worst


_UNARY = ("transpose", "scale", "relu", "square", "row_softmax", "row_mean")


def random_graph(rng: np.random.Generator, max_depth: int = 6, max_dim: int = 8):
    """A random composed computation; returns (build_loss, leaves).

    Leaves are drawn away from zero so relu kinks stay clear of the
    finite-difference step. The recipe references operands by pool index;
    layer-norm affine parameters live in a separate aux leaf list.
    """
    def draw(shape):
        signs = rng.choice([-1.0, 1.0], size=shape)
        return signs * rng.uniform(0.2, 1.5, size=shape)

    n_leaves = int(rng.integers(2, 5))
    base_leaves = [
        ad.Tensor(
            draw((int(rng.integers(1, max_dim + 1)), int(rng.integers(1, max_dim + 1)))),
            requires_grad=True,
        )
        for _ in range(n_leaves)
    ]
    aux_leaves: list[ad.Tensor] = []
    shapes = [leaf.shape for leaf in base_leaves]
    recipe: list[tuple] = []
    depth = int(rng.integers(2, max_depth + 1))
    dropout_seed = int(rng.integers(0, 2 ** 31))

    for _ in range(depth):
        ops = list(_UNARY) + ["matmul", "add", "concat_rows", "dropout", "layer_norm"]
        rng.shuffle(ops)
        for op in ops:
            pool = list(range(len(shapes)))
            if op in _UNARY or op == "dropout":
                i = int(rng.choice(pool))
                r, c = shapes[i]
                recipe.append((op, (i,)))
                shapes.append((c, r) if op == "transpose" else
                              (r, 1) if op == "row_mean" else (r, c))
                break
            if op == "matmul":
                pairs = [(i, j) for i in pool for j in pool
                         if shapes[i][1] == shapes[j][0]]
                if not pairs:
                    continue
                i, j = pairs[int(rng.integers(len(pairs)))]
                recipe.append((op, (i, j)))
                shapes.append((shapes[i][0], shapes[j][1]))
                break
            if op == "add":
                pairs = [(i, j) for i in pool for j in pool if shapes[i] == shapes[j]]
                if not pairs:
                    continue
                i, j = pairs[int(rng.integers(len(pairs)))]
                recipe.append((op, (i, j)))
                shapes.append(shapes[i])
                break
            if op == "concat_rows":
                by_cols: dict[int, list[int]] = {}
                for i in pool:
                    by_cols.setdefault(shapes[i][1], []).append(i)
                groups = [g for g in by_cols.values() if len(g) >= 2]
                if not groups:
                    continue
                g = tuple(groups[int(rng.integers(len(groups)))][:2])
                recipe.append((op, g))
                shapes.append((shapes[g[0]][0] + shapes[g[1]][0], shapes[g[0]][1]))
                break
            if op == "layer_norm":
                i = int(rng.choice(pool))
                m = shapes[i][1]
                aux_leaves.append(ad.Tensor(draw((1, m)), requires_grad=True))
                aux_leaves.append(ad.Tensor(draw((1, m)), requires_grad=True))
                recipe.append((op, (i, len(aux_leaves) - 2, len(aux_leaves) - 1)))
                shapes.append(shapes[i])
                break

    def build_loss():
        drop_rng = np.random.default_rng(dropout_seed)
        values: list[ad.Tensor] = list(base_leaves)
        for op, args in recipe:
            if op == "layer_norm":
                values.append(
                    ad.layer_norm(values[args[0]], aux_leaves[args[1]], aux_leaves[args[2]])
                )
            elif op == "dropout":
                values.append(ad.dropout(values[args[0]], 0.2, drop_rng, True))
            elif op == "matmul":
                values.append(ad.matmul(values[args[0]], values[args[1]]))
            elif op == "add":
                values.append(ad.add(values[args[0]], values[args[1]]))
            elif op == "concat_rows":
                values.append(ad.concat_rows([values[i] for i in args]))
            elif op == "scale":
                values.append(ad.scale(values[args[0]], 1.7))
            else:
                values.append(getattr(ad, op)(values[args[0]]))
        return ad.mean(values[-1])

    return build_loss, base_leaves + aux_leaves
