"""Dense reverse-mode differentiation over float64 numpy arrays.

Every primitive returns a new :class:`Tensor` holding its value together with
the parents it was computed from and a closure that maps the output gradient
to parent gradients. :func:`backward` walks that record in reverse
topological order.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy import sparse

PROB_FLOOR = 1e-12

_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable recording inside the block (key encoders, evaluation)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable[[np.ndarray], Sequence[np.ndarray | None]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"

    __hash__ = object.__hash__
    # keep numpy from broadcasting over Tensor objects; use our reflected ops instead
    __array_ufunc__ = None

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return div(other, self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, index):
        return take(self, index)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return tmean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(value: np.ndarray, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    out = Tensor(value)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if grad.shape == shape:
        return grad
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (
            _unbroadcast(g / b.data, a.shape),
            _unbroadcast(-g * out / b.data, b.shape),
        ),
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,))


def power(a, exponent: float) -> Tensor:
    a = as_tensor(a)
    return _make(
        a.data**exponent,
        (a,),
        lambda g: (g * exponent * a.data ** (exponent - 1),),
    )


def exp(a) -> Tensor:
    a = as_tensor(a)
    out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,))


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    out = np.sqrt(a.data)
    return _make(out, (a,), lambda g: (g * 0.5 / out,))


def relu(a) -> Tensor:
    a = as_tensor(a)
    on = a.data > 0
    return _make(np.where(on, a.data, 0.0), (a,), lambda g: (g * on,))


def sigmoid(a) -> Tensor:
    a = as_tensor(a)
    out = 0.5 * (1.0 + np.tanh(0.5 * a.data))
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def gated_sigmoid(a, allowed: np.ndarray, threshold: float) -> Tensor:
    """sigmoid(a) kept where ``allowed`` and sigmoid(a) > threshold, zero elsewhere.

    Equal to ``sigmoid(a) * (sigmoid(a) > threshold) * allowed`` but only
    evaluates the allowed entries.
    """
    a = as_tensor(a)
    allowed = np.broadcast_to(allowed, a.shape)
    sig = np.zeros(a.shape)
    np.exp(np.negative(a.data, where=allowed, out=np.zeros(a.shape)), where=allowed, out=sig)
    np.add(sig, 1.0, where=allowed, out=sig)
    np.reciprocal(sig, where=allowed, out=sig)
    keep = allowed & (sig > threshold)
    out = np.where(keep, sig, 0.0)
    return _make(out, (a,), lambda g: (g * out * (1.0 - out),))


def clamp_min(a, floor: float) -> Tensor:
    a = as_tensor(a)
    keep = a.data >= floor
    return _make(np.maximum(a.data, floor), (a,), lambda g: (g * keep,))


# ---------------------------------------------------------------- shape / linear algebra


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ValueError("matmul expects operands with at least 2 dimensions")

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _make(a.data @ b.data, (a, b), backward)


def edge_dot(z, rows: np.ndarray, cols: np.ndarray) -> Tensor:
    """Per-edge inner products z[rows[e]] . z[cols[e]] for a 2-D ``z``."""
    z = as_tensor(z)
    zr, zc = z.data[rows], z.data[cols]

    def backward(g):
        n = z.shape[0]
        G = sparse.csr_matrix((g, (rows, cols)), shape=(n, n))
        return (G @ z.data + G.T @ z.data,)

    return _make(np.einsum("ed,ed->e", zr, zc), (z,), backward)


def edge_spmm(w, rows: np.ndarray, cols: np.ndarray, h) -> Tensor:
    """out[i] = sum over edges (i, j) of w_e * h[j]; ``h`` is 2-D."""
    w, h = as_tensor(w), as_tensor(h)
    n = h.shape[0]
    M = sparse.csr_matrix((w.data, (rows, cols)), shape=(n, n))

    def backward(g):
        gw = np.einsum("ed,ed->e", g[rows], h.data[cols])
        return gw, M.T @ g

    return _make(M @ h.data, (w, h), backward)


def transpose(a, axes: tuple[int, ...] | None = None) -> Tensor:
    a = as_tensor(a)
    if axes is None:
        axes = tuple(range(a.ndim - 2)) + (a.ndim - 1, a.ndim - 2)
    inverse = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), (a,), lambda g: (np.transpose(g, inverse),))


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    return _make(a.data.reshape(shape), (a,), lambda g: (g.reshape(a.shape),))


def tsum(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape),)

    return _make(np.sum(a.data, axis=axis, keepdims=keepdims), (a,), backward)


def tmean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    return tsum(a, axis, keepdims) * (1.0 / count)


def take(a, index) -> Tensor:
    a = as_tensor(a)

    def backward(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(a.data[index], (a,), backward)


def concat(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return _make(
        np.concatenate([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.split(g, splits, axis=axis)),
    )


def stack(tensors: Sequence, axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    return _make(
        np.stack([t.data for t in tensors], axis=axis),
        tensors,
        lambda g: tuple(np.moveaxis(g, axis, 0)),
    )


# ---------------------------------------------------------------- reductions with stable forms


def softmax(a, axis: int = -1, bias: np.ndarray | None = None) -> Tensor:
    """Softmax along ``axis``; ``bias`` is an additive constant (e.g. -inf mask)."""
    a = as_tensor(a)
    z = a.data if bias is None else a.data + bias
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / np.sum(e, axis=axis, keepdims=True)

    def backward(g):
        return (out * (g - np.sum(g * out, axis=axis, keepdims=True)),)

    return _make(out, (a,), backward)


def logsumexp(a, axis: int = -1, mask: np.ndarray | None = None) -> Tensor:
    """log(sum(exp(a))) along ``axis`` restricted to entries where ``mask`` is True."""
    a = as_tensor(a)
    z = a.data if mask is None else np.where(mask, a.data, -np.inf)
    top = np.max(z, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    e = np.exp(z - top)
    s = np.sum(e, axis=axis, keepdims=True)
    out = np.log(s) + top
    weights = np.divide(e, s, out=np.zeros_like(e), where=s > 0)

    def backward(g):
        return (np.expand_dims(g, axis) * weights,)

    return _make(np.squeeze(out, axis=axis), (a,), backward)


def logaddexp(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    out = np.logaddexp(a.data, b.data)
    wa = np.exp(a.data - out)
    wb = np.exp(b.data - out)
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g * wa, a.shape), _unbroadcast(g * wb, b.shape)),
    )


def l2_normalize(a, axis: int = -1, eps: float = 1e-30) -> Tensor:
    a = as_tensor(a)
    norm = sqrt(tsum(a * a, axis=axis, keepdims=True) + eps)
    return a / norm


def layer_norm(a, gain, shift, axis: int = -1, eps: float = 1e-5) -> Tensor:
    mu = tmean(a, axis=axis, keepdims=True)
    centered = a - mu
    var = tmean(centered * centered, axis=axis, keepdims=True)
    return centered / sqrt(var + eps) * gain + shift


def kl_div(p, q, axis: int = -1) -> Tensor:
    """KL(p || q) along ``axis`` with both sides floored before the log."""
    p, q = as_tensor(p), as_tensor(q)
    return tsum(p * (log(clamp_min(p, PROB_FLOOR)) - log(clamp_min(q, PROB_FLOOR))), axis=axis)


# ---------------------------------------------------------------- backward


def _topological_order(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    state: dict[int, int] = {}
    stack_: list[tuple[Tensor, bool]] = [(root, False)]
    while stack_:
        node, expanded = stack_.pop()
        key = id(node)
        if expanded:
            state[key] = 2
            order.append(node)
            continue
        mark = state.get(key)
        if mark == 2:
            continue
        if mark == 1:
            raise RuntimeError("cycle in computation record")
        state[key] = 1
        stack_.append((node, True))
        for parent in node._parents:
            pmark = state.get(id(parent))
            if pmark == 1:
                raise RuntimeError("cycle in computation record")
            if pmark is None:
                stack_.append((parent, False))
    return order


def backward(loss: Tensor, params: Iterable[Tensor] | None = None) -> dict[Tensor, np.ndarray]:
    """Accumulate dLoss/dT into ``T.grad`` for every reachable tensor.

    Returns a map keyed by tensor identity. Tensors listed in ``params`` but
    not reachable from ``loss`` map to zeros.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward() needs a scalar loss, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    leaves: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological_order(loss)):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g if node.grad is None else node.grad + g
                leaves[node] = node.grad
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(id(parent))
            grads[id(parent)] = pg if prev is None else prev + pg
    if params is not None:
        for p in params:
            if p not in leaves:
                leaves[p] = np.zeros_like(p.data)
    return leaves
