"""Minimal dense tensor library with reverse-mode automatic differentiation.

Every op returns a :class:`Tensor` that remembers its parents and a closure
mapping the output gradient to parent gradients.  Node ids grow monotonically,
so creation order is a topological order and :func:`backward` simply walks the
reachable nodes by decreasing id.

Arrays are float32 by default; :func:`float64_mode` switches new graphs and
constants to float64 for gradient checking.
"""

from __future__ import annotations

import contextlib
import itertools
from typing import Callable, Iterable, Sequence

import numpy as np

__all__ = [
    "Tensor", "Graph", "SplitMix64", "ShapeError", "NonFiniteError",
    "constant", "matmul", "add", "sub", "mul", "scale", "sigmoid", "tanh",
    "relu", "softmax", "log_softmax", "activations", "concat", "stack",
    "reshape", "gather_rows", "tensor_sum", "tensor_mean", "lstm_cell",
    "masked_update", "dropout", "cross_entropy", "make_op", "backward",
    "grad_check", "no_grad", "float64_mode", "default_dtype",
]

_ids = itertools.count()
_DTYPE = np.float32
_GRAD_ENABLED = True
CHECK_FINITE = True


class ShapeError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def default_dtype():
    return _DTYPE


@contextlib.contextmanager
def float64_mode():
    """Create graphs, parameters and constants in 64-bit inside the block."""
    global _DTYPE
    old = _DTYPE
    _DTYPE = np.float64
    try:
        yield
    finally:
        _DTYPE = old


@contextlib.contextmanager
def no_grad():
    global _GRAD_ENABLED
    old = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = old


class Tensor:
    __slots__ = ("data", "grad", "parents", "backward_fn", "id", "name", "requires_grad")

    def __init__(self, data, parents: Sequence["Tensor"] = (), backward_fn=None,
                 name: str | None = None, requires_grad: bool = False):
        self.data = data
        self.grad = None
        self.parents = tuple(parents)
        self.backward_fn = backward_fn
        self.id = next(_ids)
        self.name = name
        self.requires_grad = requires_grad or bool(self.parents)

    @property
    def dims(self) -> list[int]:
        return list(self.data.shape)

    @property
    def shape(self):
        return self.data.shape

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(dims={self.dims}, dtype={self.data.dtype})"

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, index):
        return _getitem(self, index)


def constant(value, dtype=None) -> Tensor:
    """Wrap an array as a non-differentiable tensor."""
    return Tensor(np.asarray(value, dtype=dtype or _DTYPE))


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.data.dtype if like is not None else _DTYPE
    return Tensor(np.asarray(x, dtype=dtype))


def make_op(data: np.ndarray, parents: Sequence[Tensor], backward_fn: Callable) -> Tensor:
    """Register a new node.

    ``backward_fn(grad)`` must return one gradient (or ``None``) per parent.
    Exposed so callers can define custom ops; the grad-check fault-injection
    tests use it.
    """
    if CHECK_FINITE and data.dtype.kind == "f" and not np.isfinite(data).all():
        raise NonFiniteError("op produced NaN or Inf")
    if not _GRAD_ENABLED or not any(p.requires_grad for p in parents):
        return Tensor(data)
    return Tensor(data, parents, backward_fn)


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# ---------------------------------------------------------------------------
# elementwise arithmetic


def add(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data + b.data
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data - b.data
    return make_op(out, (a, b), lambda g: (_unbroadcast(g, a.shape), -_unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a = _as_tensor(a, b if isinstance(b, Tensor) else None)
    b = _as_tensor(b, a)
    out = a.data * b.data

    def back(g):
        ga = _unbroadcast(g * b.data, a.shape) if a.requires_grad else None
        gb = _unbroadcast(g * a.data, b.shape) if b.requires_grad else None
        return ga, gb

    return make_op(out, (a, b), back)


def scale(a: Tensor, c: float) -> Tensor:
    c = a.data.dtype.type(c)
    return make_op(a.data * c, (a,), lambda g: (g * c,))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product over the last two axes; leading axes broadcast."""
    if a.data.ndim < 2 or b.data.ndim < 2:
        raise ShapeError(f"matmul needs rank >= 2, got {a.dims} and {b.dims}")
    if a.shape[-1] != b.shape[-2]:
        raise ShapeError(f"matmul inner dims disagree: {a.dims} x {b.dims}")
    out = np.matmul(a.data, b.data)

    def back(g):
        ga = gb = None
        if a.requires_grad:
            ga = _unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape)
        if b.requires_grad:
            if a.data.ndim > 2 and b.data.ndim == 2:
                k = a.shape[-1]
                gb = a.data.reshape(-1, k).T @ g.reshape(-1, g.shape[-1])
            else:
                gb = _unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape)
        return ga, gb

    return make_op(out, (a, b), back)


# ---------------------------------------------------------------------------
# activations


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return make_op(y, (x,), lambda g: (g * y * (1 - y),))


def _sigmoid(z):
    # tanh form is overflow-free for any finite z
    return 0.5 * (1 + np.tanh(0.5 * z))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_op(y, (x,), lambda g: (g * (1 - y * y),))


def relu(x: Tensor) -> Tensor:
    keep = x.data > 0
    return make_op(np.where(keep, x.data, 0).astype(x.data.dtype), (x,), lambda g: (g * keep,))


def _masked_logits(x: np.ndarray, mask) -> np.ndarray:
    if mask is None:
        return x
    mask = np.asarray(mask, dtype=bool)
    if not mask.any(axis=-1).all():
        raise ValueError("softmax mask hides every position of a row")
    return np.where(mask, x, -np.inf)


def softmax(x: Tensor, mask=None) -> Tensor:
    """Softmax over the last axis.  Positions where ``mask`` is False get exactly 0."""
    z = _masked_logits(x.data, mask)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def back(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return make_op(y, (x,), back)


def log_softmax(x: Tensor) -> Tensor:
    z = x.data - x.data.max(axis=-1, keepdims=True)
    y = z - np.log(np.exp(z).sum(axis=-1, keepdims=True))
    p = np.exp(y)
    return make_op(y, (x,), lambda g: (g - p * g.sum(axis=-1, keepdims=True),))


def activations(x: Tensor, kind: str) -> Tensor:
    if kind == "sigmoid":
        return sigmoid(x)
    if kind == "tanh":
        return tanh(x)
    if kind == "relu":
        return relu(x)
    if kind == "softmax_rows":
        if x.data.ndim != 2:
            raise ShapeError("softmax_rows needs a rank-2 tensor")
        return softmax(x)
    raise ValueError(f"unknown activation {kind!r}")


# ---------------------------------------------------------------------------
# structural ops


def _getitem(x: Tensor, index) -> Tensor:
    out = x.data[index]

    def back(g):
        full = np.zeros_like(x.data)
        full[index] += g
        return (full,)

    return make_op(np.ascontiguousarray(out), (x,), back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = list(tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, bounds, axis=axis))

    return make_op(out, tensors, back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    out = np.stack([t.data for t in tensors], axis=axis)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return make_op(out, tensors, back)


def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_op(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def gather_rows(table: Tensor, ids) -> Tensor:
    """Embedding lookup: rows of ``table`` at integer ``ids`` (any shape)."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        raise IndexError(f"row id out of range for table with {table.shape[0]} rows")
    out = table.data[ids]

    def back(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return make_op(out, (table,), back)


def tensor_sum(x: Tensor) -> Tensor:
    return make_op(np.asarray(x.data.sum(), dtype=x.data.dtype), (x,),
                   lambda g: (np.broadcast_to(g, x.shape).copy(),))


def tensor_mean(x: Tensor) -> Tensor:
    n = x.data.size
    return make_op(np.asarray(x.data.mean(), dtype=x.data.dtype), (x,),
                   lambda g: (np.broadcast_to(g / n, x.shape).copy(),))


# ---------------------------------------------------------------------------
# fused model ops


def lstm_cell(gates: Tensor, c_prev: Tensor) -> tuple[Tensor, Tensor]:
    """LSTM pointwise stage.  ``gates`` holds pre-activations [i | f | o | g].

    Returns ``(h, c)``.  Both come from one packed node [h | c] so the
    backward rule sees the two output gradients together.
    """
    H = c_prev.shape[-1]
    z = gates.data
    i = _sigmoid(z[..., :H])
    f = _sigmoid(z[..., H:2 * H])
    o = _sigmoid(z[..., 2 * H:3 * H])
    u = np.tanh(z[..., 3 * H:])
    c = f * c_prev.data + i * u
    tc = np.tanh(c)
    h = o * tc
    packed = np.concatenate([h, c], axis=-1)

    def back(g):
        gh, gc = g[..., :H], g[..., H:]
        gc = gc + gh * o * (1 - tc * tc)
        dz = np.concatenate([
            gc * u * i * (1 - i),
            gc * c_prev.data * f * (1 - f),
            gh * tc * o * (1 - o),
            gc * i * (1 - u * u),
        ], axis=-1)
        return dz, gc * f

    hc = make_op(packed, (gates, c_prev), back)
    return hc[..., :H], hc[..., H:]


def masked_update(new: Tensor, old: Tensor, keep) -> Tensor:
    """``keep * new + (1 - keep) * old`` with a constant 0/1 ``keep`` of shape [B, 1]."""
    keep = np.asarray(keep, dtype=new.data.dtype)
    out = np.where(keep > 0, new.data, old.data)
    return make_op(out, (new, old), lambda g: (g * keep, g * (1 - keep)))


def dropout(x: Tensor, rate: float, rng: "SplitMix64", training: bool = True) -> Tensor:
    """Inverted dropout."""
    if not training or rate <= 0:
        return x
    keep = rng.uniform(0.0, 1.0, x.shape) >= rate
    m = keep.astype(x.data.dtype) / x.data.dtype.type(1 - rate)
    return make_op(x.data * m, (x,), lambda g: (g * m,))


def cross_entropy(logits: Tensor, targets, weights=None, mask=None) -> Tensor:
    """Weighted mean negative log-likelihood of integer ``targets`` under
    softmax(``logits``) over the last axis.  ``mask`` (broadcastable, bool)
    removes vocabulary entries from the softmax."""
    z = _masked_logits(logits.data, mask)
    V = z.shape[-1]
    z2 = z.reshape(-1, V)
    t = np.asarray(targets, dtype=np.int64).reshape(-1)
    w = (np.ones(t.shape, dtype=z.dtype) if weights is None
         else np.asarray(weights, dtype=z.dtype).reshape(-1))
    total = w.sum()
    if total <= 0:
        raise ValueError("cross_entropy over an empty reference")
    zmax = z2.max(axis=1, keepdims=True)
    e = np.exp(z2 - zmax)
    se = e.sum(axis=1, keepdims=True)
    logp = (z2 - zmax - np.log(se))[np.arange(len(t)), t]
    loss = np.asarray(-(w * logp).sum() / total, dtype=z.dtype)
    p = e / se

    def back(g):
        d = p * (w / total)[:, None]
        d[np.arange(len(t)), t] -= w / total
        return ((g * d).reshape(logits.shape),)

    return make_op(loss, (logits,), back)


# ---------------------------------------------------------------------------
# random numbers


class SplitMix64:
    """SplitMix64 generator; the only randomness source in the package."""

    GAMMA = 0x9E3779B97F4A7C15
    MASK = (1 << 64) - 1

    def __init__(self, seed: int = 0):
        self.state = seed & self.MASK

    def next_u64(self) -> int:
        self.state = (self.state + self.GAMMA) & self.MASK
        z = self.state
        z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & self.MASK
        z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & self.MASK
        return z ^ (z >> 31)

    def next_array(self, n: int) -> np.ndarray:
        if n == 0:
            return np.zeros(0, dtype=np.uint64)
        steps = np.arange(1, n + 1, dtype=np.uint64)
        with np.errstate(over="ignore"):
            z = np.uint64(self.state) + steps * np.uint64(self.GAMMA)
            z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
            z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
            z = z ^ (z >> np.uint64(31))
        self.state = (self.state + n * self.GAMMA) & self.MASK
        return z

    def random(self, shape) -> np.ndarray:
        """Float64 uniforms in [0, 1) from the top 53 bits."""
        n = int(np.prod(shape, dtype=np.int64))
        bits = self.next_array(n) >> np.uint64(11)
        return (bits.astype(np.float64) * (1.0 / (1 << 53))).reshape(shape)

    def uniform(self, low: float, high: float, shape) -> np.ndarray:
        return low + (high - low) * self.random(shape)

    def randint(self, n: int) -> int:
        return self.next_u64() % n

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.next_array(n), kind="stable")

    def choice(self, seq):
        return seq[self.randint(len(seq))]


# ---------------------------------------------------------------------------
# graph, backward, gradient check


class Graph:
    """Parameter registry plus the seeded generator that feeds init and dropout."""

    def __init__(self, seed: int = 0, dtype=None):
        self.params: dict[str, Tensor] = {}
        self.rng = SplitMix64(seed)
        self.dtype = dtype or _DTYPE

    def param(self, name: str, shape, init: str = "uniform", scale: float = 0.1) -> Tensor:
        if name in self.params:
            raise KeyError(f"duplicate parameter name {name!r}")
        if init == "uniform":
            data = self.rng.uniform(-scale, scale, tuple(shape))
        elif init == "zeros":
            data = np.zeros(tuple(shape))
        else:
            raise ValueError(f"unknown init {init!r}")
        t = Tensor(data.astype(self.dtype), name=name, requires_grad=True)
        self.params[name] = t
        return t

    def __getitem__(self, name: str) -> Tensor:
        return self.params[name]

    def __contains__(self, name: str) -> bool:
        return name in self.params

    def __iter__(self):
        return iter(self.params.items())

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None


def backward(graph: Graph | None, loss: Tensor) -> None:
    """Populate ``.grad`` on every parameter of ``graph``.

    Parameters the loss does not reach get an all-zero gradient.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward needs a scalar loss, got dims {loss.dims}")
    if graph is not None:
        for p in graph.params.values():
            p.grad = np.zeros_like(p.data)
    nodes: dict[int, Tensor] = {}
    todo = [loss]
    while todo:
        t = todo.pop()
        if t.id in nodes or not t.requires_grad:
            continue
        nodes[t.id] = t
        todo.extend(t.parents)
    grads: dict[int, np.ndarray] = {loss.id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        t = nodes[nid]
        g = grads.pop(nid, None)
        if not t.parents:
            if g is not None:
                t.grad = g if t.grad is None else t.grad + g
            continue
        if g is None:
            continue
        for parent, pg in zip(t.parents, t.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg


def grad_check(graph: Graph, loss_fn: Callable[[], Tensor], eps: float = 1e-4,
               max_coords: int | None = None, seed: int = 0) -> dict[str, float]:
    """Compare analytic gradients with five-point central finite differences.

    Returns the max relative error per parameter, where
    ``rel = |a - n| / max(|a|, |n|, 1e-12)``.  With ``max_coords`` only that many
    coordinates per parameter are sampled.
    """
    if graph.dtype != np.float64:
        raise TypeError("grad_check requires a float64 graph")
    report: dict[str, float] = {}
    if not graph.params:
        return report
    graph.zero_grad()
    backward(graph, loss_fn())
    analytic = {name: p.grad.copy() for name, p in graph.params.items()}
    rng = SplitMix64(seed)
    for name, p in graph.params.items():
        flat = p.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = np.sort(rng.permutation(flat.size)[:max_coords])
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        for k in coords:
            orig = flat[k]
            vals = []
            for step in (eps, -eps, 2 * eps, -2 * eps):
                flat[k] = orig + step
                vals.append(float(loss_fn().data))
            flat[k] = orig
            # fourth-order central difference
            num = (8 * (vals[0] - vals[1]) - (vals[2] - vals[3])) / (12 * eps)
            a = float(a_flat[k])
            rel = abs(a - num) / max(abs(a), abs(num), 1e-12)
            worst = max(worst, rel)
        report[name] = worst
    return report


def parameters_norm(grads: Iterable[np.ndarray]) -> float:
    return float(np.sqrt(sum(float((g.astype(np.float64) ** 2).sum()) for g in grads)))
