"""Reverse-mode autodiff over dense float64 matrices, plus Adam.

Every value is a 2-D ``numpy.ndarray`` of dtype float64. A :class:`Tensor`
wraps one such array together with the record of how it was produced; calling
:func:`backward` on a scalar tensor walks the recorded graph in reverse
topological order and fills ``.grad`` on every tensor that requires it.

Only the handful of operations the localization network needs are provided.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64


class DimensionError(ValueError):
    """Raised when operand shapes do not conform."""


def as_matrix(x) -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a.reshape(-1, 1)
    elif a.ndim != 2:
        raise DimensionError(f"expected a matrix, got {a.ndim}-d array")
    return a


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("value", "grad", "requires_grad", "parents", "_backward", "op")

    def __init__(self, value, requires_grad: bool = False, parents=(), op: str = "leaf"):
        self.value = as_matrix(value)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = tuple(parents)
        self._backward: Callable[[np.ndarray], None] | None = None
        self.op = op

    @property
    def shape(self) -> tuple[int, int]:
        return self.value.shape

    def __repr__(self) -> str:
        return f"Tensor(op={self.op}, shape={self.shape})"

    def _accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = g.copy()
        else:
            self.grad += g


def param(value) -> Tensor:
    return Tensor(value, requires_grad=True)


def const(value) -> Tensor:
    return Tensor(value, requires_grad=False)


def _node(value: np.ndarray, parents: Sequence[Tensor], op: str) -> Tensor:
    return Tensor(value, requires_grad=any(p.requires_grad for p in parents), parents=parents, op=op)


# ---------------------------------------------------------------------------
# operations


def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {b.shape}")
    out = _node(a.value @ b.value, (a, b), "matmul")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g @ b.value.T)
        if b.requires_grad:
            b._accumulate(a.value.T @ g)

    out._backward = bw
    return out


def pointwise_affine(W: Tensor, b: Tensor, X: Tensor) -> Tensor:
    """``W @ X + b`` column by column; a kernel-1, stride-1 temporal convolution.

    W is D_out x D_in, b is D_out x 1, X is D_in x N.
    """
    if W.shape[1] != X.shape[0]:
        raise DimensionError(f"affine: W {W.shape} vs X {X.shape}")
    if b.shape != (W.shape[0], 1):
        raise DimensionError(f"affine: bias {b.shape} vs W {W.shape}")
    out = _node(W.value @ X.value + b.value, (W, b, X), "affine")

    def bw(g):
        if W.requires_grad:
            W._accumulate(g @ X.value.T)
        if b.requires_grad:
            b._accumulate(g.sum(axis=1, keepdims=True))
        if X.requires_grad:
            X._accumulate(W.value.T @ g)

    out._backward = bw
    return out


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"add: {a.shape} vs {b.shape}")
    out = _node(a.value + b.value, (a, b), "add")

    def bw(g):
        if a.requires_grad:
            a._accumulate(g)
        if b.requires_grad:
            b._accumulate(g)

    out._backward = bw
    return out


def scale(a: Tensor, k: float) -> Tensor:
    out = _node(a.value * k, (a,), "scale")
    out._backward = lambda g: a._accumulate(g * k)
    return out


def neg(a: Tensor) -> Tensor:
    out = _node(-a.value, (a,), "neg")
    out._backward = lambda g: a._accumulate(-g)
    return out


def relu(a: Tensor) -> Tensor:
    # subgradient at exactly 0 is 0
    mask = a.value > 0
    out = _node(np.maximum(a.value, 0.0), (a,), "relu")
    out._backward = lambda g: a._accumulate(g * mask)
    return out


def mask_columns(a: Tensor, keep: np.ndarray) -> Tensor:
    """Zero the columns where ``keep`` is False; the mask itself is constant."""
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (a.shape[1],):
        raise DimensionError(f"mask_columns: mask {keep.shape} vs {a.shape}")
    m = keep.astype(DTYPE)[None, :]
    out = _node(a.value * m, (a,), "mask_columns")
    out._backward = lambda g: a._accumulate(g * m)
    return out


def vstack(parts: Sequence[Tensor]) -> Tensor:
    ncols = {p.shape[1] for p in parts}
    if len(ncols) != 1:
        raise DimensionError(f"vstack: column counts {sorted(ncols)}")
    out = _node(np.vstack([p.value for p in parts]), tuple(parts), "vstack")
    bounds = np.cumsum([0] + [p.shape[0] for p in parts])

    def bw(g):
        for p, lo, hi in zip(parts, bounds[:-1], bounds[1:]):
            if p.requires_grad:
                p._accumulate(g[lo:hi])

    out._backward = bw
    return out


def transpose(a: Tensor) -> Tensor:
    out = _node(a.value.T.copy(), (a,), "transpose")
    out._backward = lambda g: a._accumulate(g.T)
    return out


def sum_all(a: Tensor) -> Tensor:
    out = _node(np.array([[a.value.sum()]]), (a,), "sum")
    out._backward = lambda g: a._accumulate(np.full(a.shape, g[0, 0]))
    return out


def sum_rows(a: Tensor) -> Tensor:
    """Sum over rows (the channel axis): D x N -> 1 x N."""
    out = _node(a.value.sum(axis=0, keepdims=True), (a,), "sum_rows")
    out._backward = lambda g: a._accumulate(np.broadcast_to(g, a.shape))
    return out


def mean_cols(a: Tensor) -> Tensor:
    """Mean over columns (time): D x N -> D x 1."""
    n = a.shape[1]
    out = _node(a.value.mean(axis=1, keepdims=True), (a,), "mean_cols")
    out._backward = lambda g: a._accumulate(np.broadcast_to(g / n, a.shape))
    return out


def max_cols(a: Tensor) -> Tensor:
    """Max over columns (time): D x N -> D x 1; gradient routed to the first argmax."""
    idx = a.value.argmax(axis=1)
    rows = np.arange(a.shape[0])
    out = _node(a.value[rows, idx][:, None], (a,), "max_cols")

    def bw(g):
        full = np.zeros(a.shape)
        full[rows, idx] = g[:, 0]
        a._accumulate(full)

    out._backward = bw
    return out


def _log_softmax_values(x: np.ndarray, axis: int) -> np.ndarray:
    m = x.max(axis=axis, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=axis, keepdims=True))


def log_softmax(a: Tensor, axis: int = 0) -> Tensor:
    ls = _log_softmax_values(a.value, axis)
    p = np.exp(ls)
    out = _node(ls, (a,), "log_softmax")
    out._backward = lambda g: a._accumulate(g - p * g.sum(axis=axis, keepdims=True))
    return out


def softmax(a: Tensor, axis: int = 0) -> Tensor:
    p = np.exp(_log_softmax_values(a.value, axis))
    out = _node(p, (a,), "softmax")
    out._backward = lambda g: a._accumulate(p * (g - (g * p).sum(axis=axis, keepdims=True)))
    return out


def softmax_columns(a: Tensor) -> Tensor:
    """Softmax down each column, stabilized by max subtraction."""
    return softmax(a, axis=0)


def pick(a: Tensor, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Gather ``a[rows[i], cols[i]]`` into a 1 x n row."""
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = _node(a.value[rows, cols][None, :], (a,), "pick")

    def bw(g):
        full = np.zeros(a.shape)
        np.add.at(full, (rows, cols), g[0])
        a._accumulate(full)

    out._backward = bw
    return out


def dot_const(a: Tensor, w: np.ndarray) -> Tensor:
    """Scalar ``sum(a * w)`` for a constant weight array of the same shape."""
    w = as_matrix(w)
    if w.shape != a.shape:
        raise DimensionError(f"dot_const: {a.shape} vs {w.shape}")
    out = _node(np.array([[float((a.value * w).sum())]]), (a,), "dot_const")
    out._backward = lambda g: a._accumulate(g[0, 0] * w)
    return out


# ---------------------------------------------------------------------------
# backward


def _topo_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor] = ()) -> list[np.ndarray]:
    """Backpropagate from a scalar ``loss``.

    Gradients accumulate into ``.grad`` of every reachable tensor that requires
    them. Returns the gradients of ``params`` in order; parameters the loss
    does not reach get zeros.
    """
    if loss.shape != (1, 1):
        raise DimensionError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.requires_grad:
        loss.grad = np.ones((1, 1))
        for node in reversed(_topo_order(loss)):
            if node._backward is not None and node.grad is not None:
                node._backward(node.grad)
    return [p.grad if p.grad is not None else np.zeros(p.shape) for p in params]


def finite_diff_check(f: Callable[[list[Tensor]], Tensor], x: Sequence[np.ndarray], h: float = 1e-3) -> float:
    """Max relative error between autodiff and central differences.

    ``f`` builds a scalar graph from a list of parameter tensors. The error per
    coordinate is ``|g_analytic - g_fd| / max(1, |g_fd|)``.
    """
    base = [as_matrix(v).copy() for v in x]
    leaves = [param(v) for v in base]
    analytic = backward(f(leaves), leaves)

    worst = 0.0
    for k, v in enumerate(base):
        for idx in np.ndindex(v.shape):
            orig = v[idx]
            v[idx] = orig + h
            up = f([const(u) for u in base]).value[0, 0]
            v[idx] = orig - h
            down = f([const(u) for u in base]).value[0, 0]
            v[idx] = orig
            fd = (up - down) / (2 * h)
            err = abs(analytic[k][idx] - fd) / max(1.0, abs(fd))
            worst = max(worst, err)
    return worst


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: Sequence[np.ndarray], lr: float = 1e-4, **kw) -> "AdamState":
        return cls(m=[np.zeros_like(p) for p in params], v=[np.zeros_like(p) for p in params], lr=lr, **kw)


def adam_update(
    params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState
) -> tuple[list[np.ndarray], AdamState]:
    """One bias-corrected Adam step. Inputs are left untouched."""
    new_params = [np.array(p, dtype=DTYPE) for p in params]
    new_state = AdamState([m.copy() for m in state.m], [v.copy() for v in state.v],
                          state.t, state.lr, state.beta1, state.beta2, state.eps)
    adam_update_inplace(new_params, grads, new_state)
    return new_params, new_state


def adam_update_inplace(params: Sequence[np.ndarray], grads: Sequence[np.ndarray], state: AdamState) -> None:
    """Same arithmetic as :func:`adam_update`, mutating ``params`` and ``state``."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise DimensionError("adam_update: parameter/gradient/state counts differ")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise DimensionError(f"adam_update: shapes {p.shape}, {g.shape}, {m.shape}")

    state.t += 1
    b1, b2 = state.beta1, state.beta2
    step_size = state.lr / (1.0 - b1**state.t)
    c2 = 1.0 - b2**state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        denom = v / c2
        np.sqrt(denom, out=denom)
        denom += state.eps
        np.divide(m, denom, out=denom)
        denom *= step_size
        p -= denom
