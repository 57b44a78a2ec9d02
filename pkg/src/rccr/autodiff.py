"""Eager reverse-mode automatic differentiation over dense float64 arrays.

Every operation computes its value immediately and, when any input requires
a gradient, records its parents and a backward rule mapping the upstream
gradient to one gradient per parent. :func:`backward` walks the recorded
graph in reverse topological order with a fixed accumulation order, so
gradients are bitwise reproducible.

Elementwise binary ops follow numpy broadcasting; gradients are summed back
to each operand's shape.
"""

from __future__ import annotations

import contextvars
from contextlib import contextmanager
from typing import Callable, Sequence

import numpy as np

from rccr import kernels

LOG_FLOOR = 1e-12

_grad_enabled = contextvars.ContextVar("rccr_grad_enabled", default=True)


class DimensionError(ValueError):
    """Operand shapes do not conform for an operation."""


@contextmanager
def no_grad():
    """Evaluate without recording a graph."""
    token = _grad_enabled.set(False)
    try:
        yield
    finally:
        _grad_enabled.reset(token)


class Tensor:
    """A value node in the computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "parents", "backward_rule", "op")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.parents: tuple[Tensor, ...] = ()
        self.backward_rule: Callable | None = None
        self.op = "leaf"

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, op={self.op}{flag})"

    def backward(self):
        """Populate ``.grad`` on every requires-grad leaf reachable from here."""
        grads = _run_backward(self)
        for node, g in grads:
            node.grad = g if node.grad is None else node.grad + g

    # operator sugar
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

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return getitem(self, index)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def tensor(data, requires_grad=False) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _make(data, parents, rule, op) -> Tensor:
    data = np.asarray(data, dtype=np.float64)
    if not np.all(np.isfinite(data)):
        raise FloatingPointError(f"{op}: produced non-finite values")
    out = Tensor(data)
    out.op = op
    if _grad_enabled.get() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_rule = rule
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise DimensionError(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# -- engine ----------------------------------------------------------------


def _topo_order(root: Tensor) -> list[Tensor]:
    order, seen = [], set()
    stack = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in reversed(node.parents):
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def _run_backward(root: Tensor) -> list[tuple[Tensor, np.ndarray]]:
    if root.data.size != 1:
        raise ValueError(f"backward needs a scalar root, got shape {root.shape}")
    if not root.requires_grad:
        return []
    order = _topo_order(root)
    acc: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    leaves = []
    for node in reversed(order):
        g = acc.pop(id(node), None)
        if g is None:
            g = np.zeros_like(node.data)
        if node.backward_rule is None:
            leaves.append((node, g))
            continue
        for parent, pg in zip(node.parents, node.backward_rule(g)):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            acc[key] = pg if key not in acc else acc[key] + pg
    return leaves


def backward(root: Tensor) -> dict[int, np.ndarray]:
    """Gradient of a scalar ``root`` for every requires-grad leaf.

    Returns a map from ``id(leaf)`` to its gradient array, and also adds the
    gradients into each leaf's ``.grad``. Leaves unreachable from ``root``
    are absent (their gradient is zero).
    """
    out = {}
    for node, g in _run_backward(root):
        out[id(node)] = g
        node.grad = g if node.grad is None else node.grad + g
    return out


def grad(root: Tensor, leaves: Sequence[Tensor]) -> list[np.ndarray]:
    """Gradients of ``root`` with respect to ``leaves`` without touching ``.grad``."""
    found = {id(n): g for n, g in _run_backward(root)}
    return [found.get(id(x), np.zeros_like(x.data)) for x in leaves]


def grad_check(f: Callable, x, eps: float = 1e-5) -> float:
    """Max relative error between reverse-mode and central-difference gradients.

    ``f`` builds a scalar graph from ``x`` (a Tensor or a list of Tensors).
    The denominator of each component's error is
    ``max(|analytic|, |numeric|, 1e-8)``.
    """
    if not 0 < eps <= 1e-2:
        raise ValueError(f"eps must lie in (0, 1e-2], got {eps}")
    xs = [x] if isinstance(x, Tensor) else list(x)
    for t in xs:
        t.requires_grad = True
    root = f(x)
    analytic = grad(root, xs)
    worst = 0.0
    for t, a in zip(xs, analytic):
        flat = t.data.reshape(-1)
        num = np.empty(flat.size)
        with no_grad():
            for i in range(flat.size):
                orig = flat[i]
                flat[i] = orig + eps
                fp = f(x).item()
                flat[i] = orig - eps
                fm = f(x).item()
                flat[i] = orig
                num[i] = (fp - fm) / (2 * eps)
        if not (np.all(np.isfinite(num)) and np.all(np.isfinite(a))):
            raise FloatingPointError("grad_check: non-finite gradient")
        a = a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(a), np.abs(num)), 1e-8)
        worst = max(worst, float(np.max(np.abs(a - num) / denom)))
    return worst


# -- elementwise -----------------------------------------------------------


def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)
    return _make(
        a.data + b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        "add",
    )


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)
    return _make(
        a.data - b.data,
        (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)),
        "sub",
    )


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)
    return _make(
        a.data * b.data,
        (a, b),
        lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)),
        "mul",
    )


def div(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data
    return _make(
        out,
        (a, b),
        lambda g: (_unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)),
        "div",
    )


def neg(a) -> Tensor:
    a = as_tensor(a)
    return _make(-a.data, (a,), lambda g: (-g,), "neg")


def power(a, p: float) -> Tensor:
    a = as_tensor(a)
    return _make(a.data**p, (a,), lambda g: (g * p * a.data ** (p - 1),), "power")


def square(a) -> Tensor:
    a = as_tensor(a)
    return _make(a.data * a.data, (a,), lambda g: (2.0 * g * a.data,), "square")


def exp(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(over="ignore"):  # overflow is reported by _make
        out = np.exp(a.data)
    return _make(out, (a,), lambda g: (g * out,), "exp")


def log(a, floor: float | None = None) -> Tensor:
    """Natural log. With ``floor``, evaluates ``log(max(a, floor))``."""
    a = as_tensor(a)
    if floor is None:
        if np.any(a.data <= 0):
            raise FloatingPointError("log: non-positive input")
        return _make(np.log(a.data), (a,), lambda g: (g / a.data,), "log")
    clipped = np.maximum(a.data, floor)
    live = a.data > floor
    return _make(np.log(clipped), (a,), lambda g: (np.where(live, g / clipped, 0.0),), "log")


def log1p(a) -> Tensor:
    a = as_tensor(a)
    if np.any(a.data < 0):
        raise ValueError("log1p: negative input")
    return _make(np.log1p(a.data), (a,), lambda g: (g / (1.0 + a.data),), "log1p")


def relu(a) -> Tensor:
    a = as_tensor(a)
    mask = a.data > 0
    return _make(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,), "relu")


_GELU_C = np.sqrt(2.0 / np.pi)


def gelu(a) -> Tensor:
    """GELU, tanh approximation."""
    a = as_tensor(a)
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x**3)
    th = np.tanh(inner)
    out = 0.5 * x * (1.0 + th)

    def rule(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x**2)
        return (g * (0.5 * (1.0 + th) + 0.5 * x * (1.0 - th**2) * dinner),)

    return _make(out, (a,), rule, "gelu")


def abs_(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),), "abs")


def huber(a, delta: float = 1.0) -> Tensor:
    """Elementwise Huber function of residuals ``a``."""
    a = as_tensor(a)
    r = np.abs(a.data)
    quad = r <= delta
    out = np.where(quad, 0.5 * a.data**2, delta * (r - 0.5 * delta))
    return _make(
        out, (a,), lambda g: (g * np.where(quad, a.data, delta * np.sign(a.data)),), "huber"
    )


ACTIVATIONS = {"relu": relu, "gelu": gelu}


# -- reductions and shape --------------------------------------------------


def _norm_axis(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(ax % ndim for ax in axis)


def sum_(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    out = a.data.sum(axis=axes, keepdims=keepdims)

    def rule(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _make(out, (a,), rule, "sum")


def mean(a, axis=None, keepdims=False) -> Tensor:
    a = as_tensor(a)
    axes = _norm_axis(axis, a.ndim)
    count = int(np.prod([a.shape[ax] for ax in axes]))
    return sum_(a, axis, keepdims) * (1.0 / count)


def reshape(a, shape) -> Tensor:
    a = as_tensor(a)
    try:
        out = a.data.reshape(shape)
    except ValueError:
        raise DimensionError(f"reshape: cannot reshape {a.shape} to {tuple(shape)}") from None
    return _make(out, (a,), lambda g: (g.reshape(a.shape),), "reshape")


def transpose(a, axes) -> Tensor:
    a = as_tensor(a)
    inv = np.argsort(axes)
    return _make(a.data.transpose(axes), (a,), lambda g: (g.transpose(inv),), "transpose")


def reverse(a, axis: int) -> Tensor:
    """Reverse the order of entries along ``axis``."""
    a = as_tensor(a)
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(None, None, -1)
    sl = tuple(sl)
    return _make(a.data[sl], (a,), lambda g: (g[sl],), "reverse")


def permute(a, perm, axis: int = -1) -> Tensor:
    """Reorder entries along ``axis``: ``out[..., k] = a[..., perm[k]]``."""
    a = as_tensor(a)
    perm = np.asarray(perm)
    if sorted(perm.tolist()) != list(range(a.shape[axis])):
        raise DimensionError(f"permute: {perm.tolist()} is not a permutation of axis extent {a.shape[axis]}")
    inv = np.argsort(perm)
    return _make(
        np.take(a.data, perm, axis=axis), (a,), lambda g: (np.take(g, inv, axis=axis),), "permute"
    )


def getitem(a, index) -> Tensor:
    a = as_tensor(a)
    out = a.data[index]

    def rule(g):
        full = np.zeros_like(a.data)
        np.add.at(full, index, g)
        return (full,)

    return _make(out, (a,), rule, "slice")


def concat(items: Sequence, axis: int = 0) -> Tensor:
    items = [as_tensor(t) for t in items]
    try:
        out = np.concatenate([t.data for t in items], axis=axis)
    except ValueError:
        raise DimensionError(f"concat: shapes {[t.shape for t in items]} along axis {axis}") from None
    bounds = np.cumsum([t.shape[axis] for t in items])[:-1]
    return _make(out, items, lambda g: tuple(np.split(g, bounds, axis=axis)), "concat")


# -- linear algebra --------------------------------------------------------


def matmul(a, w) -> Tensor:
    """``(..., H) @ (H, K) -> (..., K)``; leading axes of ``a`` are batch axes."""
    a, w = as_tensor(a), as_tensor(w)
    if w.ndim != 2 or a.shape[-1] != w.shape[0]:
        raise DimensionError(f"matmul: {a.shape} @ {w.shape}")
    a2 = a.data.reshape(-1, a.shape[-1])
    out = (a2 @ w.data).reshape(a.shape[:-1] + (w.shape[1],))

    def rule(g):
        g2 = g.reshape(-1, w.shape[1])
        return (g2 @ w.data.T).reshape(a.shape), a2.T @ g2

    return _make(out, (a, w), rule, "matmul")


def affine(a, w, b) -> Tensor:
    return add(matmul(a, w), b)


# -- softmax ---------------------------------------------------------------


def softmax(a, temperature: float = 1.0, axis: int = -1) -> Tensor:
    """``softmax(a / T)`` along ``axis`` with max-subtraction."""
    a = as_tensor(a)
    z = a.data / temperature
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    p = e / e.sum(axis=axis, keepdims=True)

    def rule(g):
        return ((p * (g - (g * p).sum(axis=axis, keepdims=True))) / temperature,)

    return _make(p, (a,), rule, "softmax")


def log_softmax(a, temperature: float = 1.0, axis: int = -1) -> Tensor:
    a = as_tensor(a)
    z = a.data / temperature
    m = z.max(axis=axis, keepdims=True)
    lse = m + np.log(np.exp(z - m).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)

    def rule(g):
        return ((g - p * g.sum(axis=axis, keepdims=True)) / temperature,)

    return _make(out, (a,), rule, "log_softmax")


# -- convolution and pooling -----------------------------------------------


def conv1d(x, w, b=None, stride: int = 1, pad: int | None = None) -> Tensor:
    """1-D convolution (cross-correlation) on ``(N, L, Cin)`` inputs.

    ``w`` has shape ``(k, Cin, Cout)``. Default padding is ``(k - 1) // 2``,
    which preserves length at stride 1 for odd ``k``.
    """
    x, w = as_tensor(x), as_tensor(w)
    if x.ndim != 3 or w.ndim != 3 or x.shape[2] != w.shape[1]:
        raise DimensionError(f"conv1d: input {x.shape} vs kernel {w.shape}")
    k, cin, cout = w.shape
    if pad is None:
        pad = (k - 1) // 2
    n, length, _ = x.shape
    if length + 2 * pad < k:
        raise DimensionError(f"conv1d: input length {length} shorter than kernel {k}")
    cols = kernels.im2col(np.ascontiguousarray(x.data), k, stride, pad)
    lout = cols.shape[1]
    cols2 = cols.reshape(n * lout, k * cin)
    w2 = w.data.reshape(k * cin, cout)
    out = (cols2 @ w2).reshape(n, lout, cout)

    def rule(g):
        g2 = g.reshape(n * lout, cout)
        gw = (cols2.T @ g2).reshape(w.shape)
        gcols = np.ascontiguousarray((g2 @ w2.T).reshape(n, lout, k, cin))
        gx = kernels.col2im(gcols, length, stride, pad)
        return gx, gw

    y = _make(out, (x, w), rule, "conv1d")
    return y if b is None else add(y, b)


def maxpool1d(x, size: int) -> Tensor:
    """Non-overlapping max pool along the length axis of ``(N, L, C)``."""
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] < size:
        raise DimensionError(f"maxpool1d: input {x.shape} with window {size}")
    out, idx = kernels.maxpool_forward(np.ascontiguousarray(x.data), size)
    length = x.shape[1]
    return _make(
        out,
        (x,),
        lambda g: (kernels.maxpool_backward(np.ascontiguousarray(g), idx, length),),
        "maxpool1d",
    )


def meanpool1d(x, size: int) -> Tensor:
    x = as_tensor(x)
    if x.ndim != 3 or x.shape[1] < size:
        raise DimensionError(f"meanpool1d: input {x.shape} with window {size}")
    n, length, c = x.shape
    lo = length // size
    out = x.data[:, : lo * size].reshape(n, lo, size, c).mean(axis=2)

    def rule(g):
        full = np.zeros_like(x.data)
        full[:, : lo * size] = np.repeat(g / size, size, axis=1)
        return (full,)

    return _make(out, (x,), rule, "meanpool1d")


def adaptive_bins(length: int, bins: int) -> list[tuple[int, int]]:
    """Bin ``b`` covers ``[floor(b*L/B), ceil((b+1)*L/B))``; mirror-symmetric."""
    return [((b * length) // bins, -((-(b + 1) * length) // bins)) for b in range(bins)]


def adaptive_meanpool1d(x, bins: int) -> Tensor:
    """Mean-pool the length axis of ``(N, L, C)`` down to exactly ``bins`` positions."""
    x = as_tensor(x)
    n, length, c = x.shape
    if length < bins:
        raise DimensionError(f"adaptive_meanpool1d: length {length} < bins {bins}")
    spans = adaptive_bins(length, bins)
    if length % bins == 0:
        size = length // bins
        return meanpool1d(x, size)
    out = np.stack([x.data[:, s:e].mean(axis=1) for s, e in spans], axis=1)

    def rule(g):
        full = np.zeros_like(x.data)
        for b, (s, e) in enumerate(spans):
            full[:, s:e] += g[:, b : b + 1] / (e - s)
        return (full,)

    return _make(out, (x,), rule, "adaptive_meanpool1d")
