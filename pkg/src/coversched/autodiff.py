"""Reverse-mode automatic differentiation on dense numpy arrays.

A ``Tensor`` wraps a float64 ndarray and, when any operand requires
gradients, records a backward closure. ``backward`` walks the graph once in
reverse topological order and accumulates ``grad`` arrays on every node that
requires them. Operations on constants skip graph construction entirely, so
inference-only forward passes carry no autodiff overhead.

Also provides the Adam optimizer and a central-finite-difference gradient
checker used throughout the test suite.
"""

from __future__ import annotations

from contextlib import contextmanager
from dataclasses import dataclass, field

import numpy as np

from .errors import GraphConsumed, NonScalarLoss, ShapeMismatch

Array = np.ndarray

_grad_enabled = True


@contextmanager
def no_grad():
    """Disable graph recording inside the block; values still compute."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x) -> Array:
    return np.asarray(x, dtype=np.float64)


class Tensor:
    """Node in the computation graph: value, optional grad, backward rule."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward", "_consumed")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: Array | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None
        self._consumed = False

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def detach(self) -> "Tensor":
        """Same data, no graph, no gradient tracking."""
        return Tensor(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        backward(self)

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"

    # operator sugar; non-Tensor operands are treated as constants
    def __add__(self, other):
        return add(self, _wrap(other))

    def __radd__(self, other):
        return add(_wrap(other), self)

    def __sub__(self, other):
        return sub(self, _wrap(other))

    def __rsub__(self, other):
        return sub(_wrap(other), self)

    def __mul__(self, other):
        return mul(self, _wrap(other))

    def __rmul__(self, other):
        return mul(_wrap(other), self)

    def __truediv__(self, other):
        return div(self, _wrap(other))

    def __rtruediv__(self, other):
        return div(_wrap(other), self)

    def __matmul__(self, other):
        return matmul(self, _wrap(other))

    def __neg__(self):
        return neg(self)


def _wrap(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data: Array, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    """Build a result node; skip graph bookkeeping if no parent needs grads."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._backward = backward_fn
    return out


def _unbroadcast(grad: Array, shape: tuple[int, ...]) -> Array:
    """Sum `grad` down to `shape`, undoing numpy broadcasting."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


def _accum(t: Tensor, g: Array) -> None:
    if not t.requires_grad:
        return
    g = _unbroadcast(np.asarray(g, dtype=np.float64), t.data.shape)
    if t.grad is None:
        t.grad = g.copy()
    else:
        t.grad += g


def _check_broadcast(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.data.shape, b.data.shape)
    except ValueError:
        raise ShapeMismatch(op, a.data.shape, b.data.shape) from None


# ---------------------------------------------------------------------------
# elementwise primitives


def add(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("add", a, b)
    out_data = a.data + b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, g)

    return _make(out_data, (a, b), bwd)


def sub(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("sub", a, b)
    out_data = a.data - b.data

    def bwd(g):
        _accum(a, g)
        _accum(b, -g)

    return _make(out_data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard (elementwise, broadcasting) product."""
    _check_broadcast("mul", a, b)
    out_data = a.data * b.data

    def bwd(g):
        _accum(a, g * b.data)
        _accum(b, g * a.data)

    return _make(out_data, (a, b), bwd)


hadamard = mul


def div(a: Tensor, b: Tensor) -> Tensor:
    _check_broadcast("div", a, b)
    out_data = a.data / b.data

    def bwd(g):
        _accum(a, g / b.data)
        _accum(b, -g * a.data / (b.data * b.data))

    return _make(out_data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        _accum(a, -g)

    return _make(-a.data, (a,), bwd)


def pow_(a: Tensor, exponent: float) -> Tensor:
    out_data = a.data**exponent

    def bwd(g):
        _accum(a, g * exponent * a.data ** (exponent - 1.0))

    return _make(out_data, (a,), bwd)


def sqrt(a: Tensor) -> Tensor:
    out_data = np.sqrt(a.data)

    def bwd(g):
        _accum(a, g * 0.5 / out_data)

    return _make(out_data, (a,), bwd)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def bwd(g):
        _accum(a, g * out_data)

    return _make(out_data, (a,), bwd)


def log(a: Tensor) -> Tensor:
    out_data = np.log(a.data)

    def bwd(g):
        _accum(a, g / a.data)

    return _make(out_data, (a,), bwd)


def relu(a: Tensor) -> Tensor:
    out_data = np.maximum(a.data, 0.0)

    def bwd(g):
        _accum(a, g * (a.data > 0.0))

    return _make(out_data, (a,), bwd)


def sigmoid(a: Tensor) -> Tensor:
    out_data = 1.0 / (1.0 + np.exp(-a.data))

    def bwd(g):
        _accum(a, g * out_data * (1.0 - out_data))

    return _make(out_data, (a,), bwd)


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def bwd(g):
        _accum(a, g * (1.0 - out_data * out_data))

    return _make(out_data, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Numerically stable softmax along `axis`."""
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        # dL/dx = y * (g - sum(g * y))
        inner = (g * out_data).sum(axis=axis, keepdims=True)
        _accum(a, out_data * (g - inner))

    return _make(out_data, (a,), bwd)


# ---------------------------------------------------------------------------
# structural primitives


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product for 2-D or stacked 3-D+ operands (numpy ``@`` rules)."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeMismatch("matmul", a.data.shape, b.data.shape)
    try:
        out_data = a.data @ b.data
    except ValueError:
        raise ShapeMismatch("matmul", a.data.shape, b.data.shape) from None

    def bwd(g):
        if a.requires_grad:
            ga = g @ np.swapaxes(b.data, -1, -2)
            _accum(a, _unbroadcast(ga, a.data.shape))
        if b.requires_grad:
            gb = np.swapaxes(a.data, -1, -2) @ g
            _accum(b, _unbroadcast(gb, b.data.shape))

    return _make(out_data, (a, b), bwd)


def transpose(a: Tensor, axes: tuple[int, ...] | None = None) -> Tensor:
    out_data = a.data.transpose(axes)
    if axes is None:
        inv = None
    else:
        inv = tuple(int(i) for i in np.argsort(axes))

    def bwd(g):
        _accum(a, g.transpose(inv))

    return _make(out_data, (a,), bwd)


def reshape(a: Tensor, shape: tuple[int, ...]) -> Tensor:
    out_data = a.data.reshape(shape)

    def bwd(g):
        _accum(a, g.reshape(a.data.shape))

    return _make(out_data, (a,), bwd)


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    datas = [t.data for t in tensors]
    out_data = np.concatenate(datas, axis=axis)
    sizes = [d.shape[axis] for d in datas]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(out_data, tuple(tensors), bwd)


def take(a: Tensor, index: int, axis: int = 0) -> Tensor:
    """Select one slice along `axis` (the axis is dropped)."""
    out_data = np.take(a.data, index, axis=axis)

    def bwd(g):
        full = np.zeros_like(a.data)
        idx = [slice(None)] * a.data.ndim
        idx[axis] = index
        full[tuple(idx)] = g
        _accum(a, full)

    return _make(out_data, (a,), bwd)


def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.data.shape))
            return
        if not keepdims:
            g = np.expand_dims(g, axis)
        _accum(a, np.broadcast_to(g, a.data.shape))

    return _make(out_data, (a,), bwd)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    elif isinstance(axis, tuple):
        count = int(np.prod([a.data.shape[ax] for ax in axis]))
    else:
        count = a.data.shape[axis]
    return mul(sum_(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


# ---------------------------------------------------------------------------
# composite layers


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Affine map ``x @ w.T (+ b)`` with ``w`` stored as (out, in).

    Fused into a single graph node: the transpose and bias add stay out of
    the tape, which matters because this is the hottest op in training.
    """
    if x.data.shape[-1] != w.data.shape[-1]:
        raise ShapeMismatch("linear", x.data.shape, w.data.shape)
    out_data = x.data @ w.data.T
    if b is not None:
        out_data = out_data + b.data
    parents = (x, w) if b is None else (x, w, b)

    def bwd(g):
        if x.requires_grad:
            _accum(x, g @ w.data)
        if w.requires_grad:
            go = g.reshape(-1, g.shape[-1])
            xo = x.data.reshape(-1, x.data.shape[-1])
            _accum(w, go.T @ xo)
        if b is not None and b.requires_grad:
            _accum(b, g)

    return _make(out_data, parents, bwd)


def scaled_dot_attention(q: Tensor, k: Tensor, v: Tensor) -> Tensor:
    """softmax(q kᵀ / √d) v for q (..., m, d), k (..., n, d), v (..., n, dv)."""
    d = q.data.shape[-1]
    if k.data.shape[-1] != d:
        raise ShapeMismatch("scaled_dot_attention", q.data.shape, k.data.shape)
    scores = mul(matmul(q, transpose(k, _swap_last(k))), Tensor(1.0 / np.sqrt(d)))
    return matmul(softmax(scores, axis=-1), v)


def _swap_last(t: Tensor) -> tuple[int, ...]:
    axes = list(range(t.data.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return tuple(axes)


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, heads: int) -> Tensor:
    """Split the model dimension into `heads`, attend per head, re-concatenate.

    Operands are 2-D: q (m, d), k (n, d), v (n, d) with d divisible by
    `heads`. With heads=1 this reduces exactly to scaled_dot_attention.
    """
    m, d = q.data.shape
    n = k.data.shape[0]
    if d % heads:
        raise ShapeMismatch("multi_head_attention", q.data.shape, (heads,))
    if heads == 1:
        return scaled_dot_attention(q, k, v)
    dh = d // heads
    qh = transpose(reshape(q, (m, heads, dh)), (1, 0, 2))  # (h, m, dh)
    kh = transpose(reshape(k, (n, heads, dh)), (1, 0, 2))
    vh = transpose(reshape(v, (n, heads, dh)), (1, 0, 2))
    out = scaled_dot_attention(qh, kh, vh)  # (h, m, dh)
    return reshape(transpose(out, (1, 0, 2)), (m, d))


def batch_norm(
    x: Tensor,
    gamma: Tensor,
    beta: Tensor,
    running: "RunningStats | None" = None,
    training: bool = True,
    momentum: float = 0.1,
    eps: float = 1e-5,
) -> Tensor:
    """Normalize over all axes except the last (feature) axis.

    Training mode standardizes with the current batch/graph statistics and
    updates `running` in place; eval mode standardizes with the stored
    running statistics (constants for the backward pass).
    """
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mu = mean(x, axis=axes, keepdims=True)
        centered = sub(x, mu)
        var = mean(mul(centered, centered), axis=axes, keepdims=True)
        if running is not None:
            running.update(np.squeeze(mu.data), np.squeeze(var.data), momentum)
        inv = pow_(add(var, Tensor(eps)), -0.5)
        norm = mul(centered, inv)
    else:
        if running is None:
            raise ValueError("eval-mode batch_norm requires running statistics")
        norm = mul(sub(x, Tensor(running.mean)), Tensor(1.0 / np.sqrt(running.var + eps)))
    return add(mul(norm, gamma), beta)


@dataclass
class RunningStats:
    """Exponential-moving-average statistics for eval-mode batch norm."""

    mean: Array
    var: Array

    @classmethod
    def zeros(cls, dim: int) -> "RunningStats":
        return cls(mean=np.zeros(dim), var=np.ones(dim))

    def update(self, mu: Array, var: Array, momentum: float) -> None:
        self.mean = (1.0 - momentum) * self.mean + momentum * np.atleast_1d(mu)
        self.var = (1.0 - momentum) * self.var + momentum * np.atleast_1d(var)

    def copy(self) -> "RunningStats":
        return RunningStats(self.mean.copy(), self.var.copy())


# ---------------------------------------------------------------------------
# backward pass


def backward(loss: Tensor, params: list[Tensor] | None = None) -> None:
    """Populate grads of everything reachable from `loss`.

    `loss` must be scalar. Calling backward twice through the same sink is
    an error (no silent re-accumulation). Parameters passed in `params`
    that the graph never touched get an explicit zero gradient.
    """
    if loss.data.size != 1:
        raise NonScalarLoss(f"loss has shape {loss.data.shape}, expected a scalar")
    if loss._consumed:
        raise GraphConsumed("backward was already called through this graph sink")
    loss._consumed = True

    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen and p.requires_grad:
                stack.append((p, False))

    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)

    if params is not None:
        for p in params:
            if p.grad is None:
                p.grad = np.zeros_like(p.data)


def zero_grads(params: list[Tensor]) -> None:
    for p in params:
        p.grad = None


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    """Per-parameter first/second moments plus step counter."""

    m: list[Array]
    v: list[Array]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr: float = 1e-4

    @classmethod
    def for_params(cls, params: list[Tensor], lr: float = 1e-4, **kw) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
            lr=lr,
            **kw,
        )


def adam_step(params: list[Tensor], grads: list[Array], state: AdamState) -> None:
    """One Adam update with bias correction, in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("adam_step", (len(params),), (len(grads),))
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**state.step
    c2 = 1.0 - b2**state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g.shape != p.data.shape:
            raise ShapeMismatch("adam_step", p.data.shape, g.shape)
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def global_grad_norm(grads: list[Array]) -> float:
    return float(np.sqrt(sum(float((g * g).sum()) for g in grads)))


def clip_grads(grads: list[Array], max_norm: float) -> float:
    """Scale grads in place to global norm <= max_norm; returns pre-clip norm."""
    norm = global_grad_norm(grads)
    if max_norm > 0.0 and norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


# ---------------------------------------------------------------------------
# finite-difference verification


def grad_check(f, tensors: list[Tensor], h: float = 1e-5, noise_floor: float | str = 0.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    `f` must rebuild its graph from `tensors` on every call and return a
    scalar Tensor. Relative error per coordinate is
    |analytic - numeric| / max(1e-8, |analytic| + |numeric|).

    A central difference cannot resolve below ulp(|f|)/h: each evaluation
    of `f` is quantized to its unit in the last place, so for deep graphs
    with near-zero sensitivities the numeric estimate carries that much
    noise. `noise_floor="auto"` subtracts the provable quantization bound
    2*ulp(max(1,|f|))/h from each absolute deviation before the relative
    test; a float subtracts that value; the default 0.0 is the strict
    formula.
    """
    for t in tensors:
        t.zero_grad()
    out = f()
    backward(out, params=tensors)
    analytic = [t.grad.copy() for t in tensors]
    if noise_floor == "auto":
        noise = 2.0 * np.spacing(max(1.0, abs(float(out.data)))) / h
    else:
        noise = float(noise_floor)

    worst = 0.0
    with no_grad():  # the difference quotient only needs values
        for t, ga in zip(tensors, analytic):
            flat = t.data.reshape(-1)
            gflat = ga.reshape(-1)
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + h
                hi = float(f().data)
                flat[i] = orig - h
                lo = float(f().data)
                flat[i] = orig
                numeric = (hi - lo) / (2.0 * h)
                gap = max(0.0, abs(gflat[i] - numeric) - noise)
                err = gap / max(1e-8, abs(gflat[i]) + abs(numeric))
                worst = max(worst, err)
    return worst
