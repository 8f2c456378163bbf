"""Reverse-mode automatic differentiation over small dense tensors.

Provides exactly the operations the drug-response model needs: matrix
products, bias addition, elementwise nonlinearities, row concatenation and
stacking, masked max-pooling, batch normalization, inverted dropout, and
mse/bce losses, plus an Adam optimizer and a central-finite-difference
gradient checker. Everything is float64 and at most rank 2, recorded on an
explicit :class:`Tape` so independent runs share no mutable state.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np


class Tensor:
    """A dense float64 array of rank <= 2 with an optional gradient buffer.

    Gradients accumulate across backward passes; callers zero them between
    optimizer steps (see :meth:`zero_grad`).
    """

    __slots__ = ("data", "requires_grad", "grad")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ValueError(f"tensors are at most rank 2, got shape {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = np.zeros_like(arr) if requires_grad else None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def zero_grad(self) -> None:
        if self.grad is not None:
            self.grad.fill(0.0)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


@dataclass
class TapeNode:
    """One recorded operation: inputs, output, and its local backward rule."""

    inputs: tuple[Tensor, ...]
    output: Tensor
    backward_fn: Callable[[np.ndarray], tuple]


class Tape:
    """Forward-order record of differentiable operations.

    An operation can only consume tensors that already exist, so recording
    order is a topological order: the reverse sweep in :func:`backward`
    visits every node exactly once with its output gradient complete.
    """

    def __init__(self):
        self.nodes: list[TapeNode] = []


def _result(tape: Tape | None, inputs: tuple[Tensor, ...], data: np.ndarray,
            backward_fn) -> Tensor:
    out = Tensor(data, requires_grad=any(t.requires_grad for t in inputs))
    if out.requires_grad:
        if tape is None:
            raise ValueError("operation on tensors requiring grad needs a tape")
        tape.nodes.append(TapeNode(inputs, out, backward_fn))
    return out


# ---------------------------------------------------------------------------
# forward operations
# ---------------------------------------------------------------------------

def matmul(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Matrix product a @ b for 2-D tensors with matching inner dimension."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ValueError(f"matmul shape mismatch: {a.data.shape} @ {b.data.shape}")

    def backward_fn(g):
        ga = g @ b.data.T if a.requires_grad else None
        gb = a.data.T @ g if b.requires_grad else None
        return ga, gb

    return _result(tape, (a, b), a.data @ b.data, backward_fn)


def add(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """a + b; b may be a single row broadcast over a's rows (bias add)."""
    broadcast = False
    if a.data.shape != b.data.shape:
        row = b.data.reshape(1, -1) if b.data.ndim == 1 else b.data
        if a.data.ndim == 2 and row.shape == (1, a.data.shape[1]):
            broadcast = True
        else:
            raise ValueError(f"add shape mismatch: {a.data.shape} + {b.data.shape}")

    def backward_fn(g):
        ga = g if a.requires_grad else None
        gb = None
        if b.requires_grad:
            gb = g.sum(axis=0).reshape(b.data.shape) if broadcast else g
        return ga, gb

    return _result(tape, (a, b), a.data + b.data, backward_fn)


_ELEMENTWISE: dict[str, tuple[Callable, Callable]] = {
    # name -> (forward, derivative as fn of (x, y=f(x)))
    "relu": (lambda x: np.maximum(x, 0.0), lambda x, y: (x > 0.0).astype(np.float64)),
    "tanh": (np.tanh, lambda x, y: 1.0 - y * y),
    "sigmoid": (lambda x: 1.0 / (1.0 + np.exp(-x)), lambda x, y: y * (1.0 - y)),
    "log1p": (np.log1p, lambda x, y: 1.0 / (1.0 + x)),
}


def elementwise(tape: Tape | None, op: str, x: Tensor) -> Tensor:
    """Apply one of {relu, tanh, sigmoid, log1p} per element."""
    try:
        fwd, deriv = _ELEMENTWISE[op]
    except KeyError:
        raise ValueError(f"unknown elementwise op {op!r}") from None
    y = fwd(x.data)

    def backward_fn(g):
        return (g * deriv(x.data, y),)

    return _result(tape, (x,), y, backward_fn)


def relu(tape: Tape | None, x: Tensor) -> Tensor:
    return elementwise(tape, "relu", x)


def tanh(tape: Tape | None, x: Tensor) -> Tensor:
    return elementwise(tape, "tanh", x)


def sigmoid(tape: Tape | None, x: Tensor) -> Tensor:
    return elementwise(tape, "sigmoid", x)


def log1p(tape: Tape | None, x: Tensor) -> Tensor:
    return elementwise(tape, "log1p", x)


def _as_row(t: Tensor) -> np.ndarray:
    if t.data.ndim == 1:
        return t.data.reshape(1, -1)
    if t.data.ndim == 2 and t.data.shape[0] == 1:
        return t.data
    raise ValueError(f"expected a single-row vector, got shape {t.data.shape}")


def concat_rows(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two row vectors into one 1 x (p+q) row."""
    ra, rb = _as_row(a), _as_row(b)
    p = ra.shape[1]

    def backward_fn(g):
        ga = g[:, :p].reshape(a.data.shape) if a.requires_grad else None
        gb = g[:, p:].reshape(b.data.shape) if b.requires_grad else None
        return ga, gb

    return _result(tape, (a, b), np.concatenate([ra, rb], axis=1), backward_fn)


def concat_cols(tape: Tape | None, a: Tensor, b: Tensor) -> Tensor:
    """Concatenate two matrices with equal row counts along columns."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[0] != b.data.shape[0]:
        raise ValueError(f"concat_cols shape mismatch: {a.data.shape} vs {b.data.shape}")
    p = a.data.shape[1]

    def backward_fn(g):
        ga = g[:, :p] if a.requires_grad else None
        gb = g[:, p:] if b.requires_grad else None
        return ga, gb

    return _result(tape, (a, b), np.concatenate([a.data, b.data], axis=1), backward_fn)


def stack_rows(tape: Tape | None, rows: Sequence[Tensor]) -> Tensor:
    """Stack single-row tensors into a B x d matrix."""
    if not rows:
        raise ValueError("stack_rows needs at least one row")
    mats = [_as_row(t) for t in rows]
    width = mats[0].shape[1]
    if any(m.shape[1] != width for m in mats):
        raise ValueError("stack_rows: rows have differing widths")
    rows = tuple(rows)

    def backward_fn(g):
        return tuple(
            g[i : i + 1].reshape(t.data.shape) if t.requires_grad else None
            for i, t in enumerate(rows)
        )

    return _result(tape, rows, np.concatenate(mats, axis=0), backward_fn)


def max_pool_rows(tape: Tape | None, x: Tensor, mask) -> Tensor:
    """Column-wise maximum over unmasked rows of an n x d tensor.

    Each column's gradient is routed to its argmax row; ties break toward
    the lowest row index.
    """
    mask = np.asarray(mask, dtype=bool)
    if x.data.ndim != 2 or mask.shape != (x.data.shape[0],):
        raise ValueError(f"mask of shape {mask.shape} does not fit tensor {x.data.shape}")
    if not mask.any():
        raise ValueError("max_pool_rows: every row is masked out")
    masked = np.where(mask[:, None], x.data, -np.inf)
    winners = np.argmax(masked, axis=0)  # first maximal row per column
    cols = np.arange(x.data.shape[1])
    out = masked[winners, cols].reshape(1, -1)

    def backward_fn(g):
        gx = np.zeros_like(x.data)
        gx[winners, cols] = g[0]
        return (gx,)

    return _result(tape, (x,), out, backward_fn)


class BatchNormState:
    """Learnable scale/shift plus running statistics for one feature axis."""

    def __init__(self, dim: int, momentum: float = 0.99, eps: float = 1e-5):
        self.gamma = Tensor(np.ones((1, dim)), requires_grad=True)
        self.beta = Tensor(np.zeros((1, dim)), requires_grad=True)
        self.running_mean = np.zeros(dim)
        self.running_var = np.ones(dim)
        self.momentum = momentum
        self.eps = eps


def batch_norm(tape: Tape | None, x: Tensor, state: BatchNormState, mode: str) -> Tensor:
    """Normalize a B x d batch by batch (train) or running (eval) statistics."""
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if x.data.ndim != 2 or x.data.shape[1] != state.running_mean.shape[0]:
        raise ValueError(f"batch_norm expects B x {state.running_mean.shape[0]}, got {x.data.shape}")
    n = x.data.shape[0]
    if mode == "train":
        if n < 2:
            raise ValueError(f"batch_norm in train mode needs a batch of >= 2 rows, got {n}")
        mean = x.data.mean(axis=0)
        var = x.data.var(axis=0)  # biased, matching the normalization below
        m = state.momentum
        state.running_mean = m * state.running_mean + (1.0 - m) * mean
        state.running_var = m * state.running_var + (1.0 - m) * var
    else:
        mean = state.running_mean
        var = state.running_var
    inv_std = 1.0 / np.sqrt(var + state.eps)
    xhat = (x.data - mean) * inv_std
    out = state.gamma.data * xhat + state.beta.data
    gamma, beta = state.gamma, state.beta

    def backward_fn(g):
        g_gamma = (g * xhat).sum(axis=0, keepdims=True) if gamma.requires_grad else None
        g_beta = g.sum(axis=0, keepdims=True) if beta.requires_grad else None
        gx = None
        if x.requires_grad:
            gh = g * gamma.data
            if mode == "train":
                gx = inv_std / n * (
                    n * gh - gh.sum(axis=0) - xhat * (gh * xhat).sum(axis=0)
                )
            else:
                gx = gh * inv_std
        return gx, g_gamma, g_beta

    return _result(tape, (x, gamma, beta), out, backward_fn)


def dropout(tape: Tape | None, x: Tensor, rate: float, mode: str,
            rng: np.random.Generator | None = None) -> Tensor:
    """Inverted dropout: zero with probability `rate`, scale survivors by 1/(1-rate)."""
    if not 0.0 <= rate < 1.0:
        raise ValueError(f"dropout rate must lie in [0, 1), got {rate}")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "eval" or rate == 0.0:
        return x
    if rng is None:
        raise ValueError("dropout in train mode needs a seeded generator")
    scale = 1.0 / (1.0 - rate)
    keep = (rng.random(x.data.shape) >= rate) * scale

    def backward_fn(g):
        return (g * keep,)

    return _result(tape, (x,), x.data * keep, backward_fn)


def sum_all(tape: Tape | None, x: Tensor) -> Tensor:
    """Sum of all elements as a 1 x 1 tensor."""

    def backward_fn(g):
        return (np.full_like(x.data, g.reshape(-1)[0]),)

    return _result(tape, (x,), np.array([[x.data.sum()]]), backward_fn)


def loss(tape: Tape | None, pred: Tensor, target: Tensor, kind: str) -> Tensor:
    """Mean squared error or mean binary cross-entropy as a 1 x 1 tensor."""
    if pred.data.shape != target.data.shape:
        raise ValueError(f"loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    n = pred.data.size
    if kind == "mse":
        diff = pred.data - target.data
        value = np.array([[np.mean(diff * diff)]])

        def backward_fn(g):
            scale = g.reshape(-1)[0] * 2.0 / n
            gp = scale * diff if pred.requires_grad else None
            gt = -scale * diff if target.requires_grad else None
            return gp, gt

    elif kind == "bce":
        p, t = pred.data, target.data
        if np.any(p <= 0.0) or np.any(p >= 1.0):
            raise ValueError("bce predictions must lie strictly inside (0, 1)")
        if not np.all((t == 0.0) | (t == 1.0)):
            raise ValueError("bce targets must be exactly 0 or 1")
        value = np.array([[-np.mean(t * np.log(p) + (1.0 - t) * np.log1p(-p))]])

        def backward_fn(g):
            scale = g.reshape(-1)[0] / n
            gp = scale * (p - t) / (p * (1.0 - p)) if pred.requires_grad else None
            gt = scale * (np.log1p(-p) - np.log(p)) if target.requires_grad else None
            return gp, gt

    else:
        raise ValueError(f"unknown loss kind {kind!r}")
    return _result(tape, (pred, target), value, backward_fn)


# ---------------------------------------------------------------------------
# backward sweep
# ---------------------------------------------------------------------------

def backward(tape: Tape, loss_node: Tensor) -> None:
    """Accumulate d(loss)/d(t) into t.grad for every requires_grad tensor
    reachable from the scalar loss_node."""
    if loss_node.data.size != 1:
        raise ValueError(f"backward needs a scalar loss, got shape {loss_node.data.shape}")
    flows: dict[int, np.ndarray] = {id(loss_node): np.ones_like(loss_node.data)}
    owners: dict[int, Tensor] = {id(loss_node): loss_node}
    for node in reversed(tape.nodes):
        g_out = flows.get(id(node.output))
        if g_out is None:
            continue  # not on a path to the loss
        for tensor, g in zip(node.inputs, node.backward_fn(g_out)):
            if g is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in flows:
                flows[key] = flows[key] + g
            else:
                flows[key] = g
                owners[key] = tensor
    for key, tensor in owners.items():
        if tensor.grad is None:
            tensor.grad = np.zeros_like(tensor.data)
        tensor.grad += flows[key]


# ---------------------------------------------------------------------------
# Adam optimizer
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Adam moment buffers and hyperparameters for a fixed parameter list."""

    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step: int = 0
    m: list[np.ndarray] = field(default_factory=list)
    v: list[np.ndarray] = field(default_factory=list)


def adam_init(params: Sequence[Tensor], lr: float = 1e-4, beta1: float = 0.9,
              beta2: float = 0.999, epsilon: float = 1e-8) -> AdamState:
    return AdamState(
        lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon,
        m=[np.zeros_like(p.data) for p in params],
        v=[np.zeros_like(p.data) for p in params],
    )


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray],
              state: AdamState) -> None:
    """One bias-corrected Adam update, in place.

    A parameter whose gradient is exactly all-zero is left untouched for
    that step (no moment decay), so zero gradients are a strict no-op.
    """
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ValueError("parameter, gradient, and state lists must align")
    state.step += 1
    t = state.step
    bc1 = 1.0 - state.beta1 ** t
    bc2 = 1.0 - state.beta2 ** t
    for i, (p, g) in enumerate(zip(params, grads)):
        if g.shape != p.data.shape:
            raise ValueError(f"gradient shape {g.shape} does not match parameter {p.data.shape}")
        if not g.any():
            continue
        state.m[i] = state.beta1 * state.m[i] + (1.0 - state.beta1) * g
        state.v[i] = state.beta2 * state.v[i] + (1.0 - state.beta2) * (g * g)
        m_hat = state.m[i] / bc1
        v_hat = state.v[i] / bc2
        p.data -= state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

def finite_diff_check(f, x: Tensor, epsilon: float = 1e-5) -> float:
    """Max relative error between the autodiff gradient of f at x and
    central finite differences.

    `f(tape, t)` must build a scalar Tensor from `t`. Relative error per
    coordinate uses the denominator max(|autodiff|, |numeric|, 1e-8). Only
    meaningful where f is differentiable (keep inputs away from relu kinks).
    """
    x_ad = Tensor(x.data.copy(), requires_grad=True)
    tape = Tape()
    out = f(tape, x_ad)
    if out.data.size != 1:
        raise ValueError("finite_diff_check needs a scalar-valued function")
    backward(tape, out)
    auto = x_ad.grad.copy()

    work = Tensor(x.data.copy())
    numeric = np.zeros_like(work.data)
    flat = work.data.reshape(-1)
    num_flat = numeric.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + epsilon
        f_plus = float(f(Tape(), work).data.reshape(-1)[0])
        flat[i] = orig - epsilon
        f_minus = float(f(Tape(), work).data.reshape(-1)[0])
        flat[i] = orig
        num_flat[i] = (f_plus - f_minus) / (2.0 * epsilon)

    denom = np.maximum(np.maximum(np.abs(auto), np.abs(numeric)), 1e-8)
    return float(np.max(np.abs(auto - numeric) / denom))
