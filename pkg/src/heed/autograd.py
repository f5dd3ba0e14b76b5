"""A small reverse-mode differentiation engine over numpy arrays.

Only the operations the tagger needs are provided. Broadcasting is
one-sided: in ``add``/``mul`` the second operand may broadcast into the
first operand's shape, and ``matmul`` follows numpy's batch broadcasting.
Gradients are always reduced back to each operand's own shape.

Precision follows the input arrays; tests run in float64, training in
float32.
"""
from __future__ import annotations

import contextlib
import math
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np

LOG_CLAMP = 1e-12
NORM_EPS = 1e-12
FROB_EPS = 1e-20

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Build no graph inside the block (inference)."""
    global _grad_enabled
    prev, _grad_enabled = _grad_enabled, False
    try:
        yield
    finally:
        _grad_enabled = prev


class ShapeError(ValueError):
    def __init__(self, op: str, *shapes):
        super().__init__(f"{op}: incompatible shapes {', '.join(str(tuple(s)) for s in shapes)}")
        self.op = op
        self.shapes = shapes


class Tensor:
    """Dense array node of a computation graph."""

    __slots__ = ("data", "grad", "requires_grad", "op", "_parents", "_backward", "name")

    def __init__(self, data, requires_grad: bool = False, dtype=None, name: str | None = None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype.kind != "f":
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self.op = "leaf"
        self._parents: tuple[Tensor, ...] = ()
        self._backward: Callable | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, op={self.op}, requires_grad={self.requires_grad})"

    __add__ = lambda self, other: add(self, other)  # noqa: E731
    __matmul__ = lambda self, other: matmul(self, other)  # noqa: E731
    __getitem__ = lambda self, index: getitem(self, index)  # noqa: E731

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return mul_scalar(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return mul_scalar(self, -1.0)

    def __sub__(self, other):
        return add(self, mul_scalar(other, -1.0))


def _const(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.dtype))


def _make(data: np.ndarray, op: str, parents: Sequence[Tensor], backward_fn) -> Tensor:
    out = Tensor(data)
    out.op = op
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` (inverse of numpy broadcasting)."""
    if grad.shape == shape:
        return grad
    lead = grad.ndim - len(shape)
    if lead:
        grad = grad.sum(axis=tuple(range(lead)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _check_into(op: str, a: Tensor, b: Tensor):
    if b.ndim > a.ndim:
        raise ShapeError(op, a.shape, b.shape)
    for sa, sb in zip(a.shape[::-1], b.shape[::-1]):
        if sb != sa and sb != 1:
            raise ShapeError(op, a.shape, b.shape)


# -- elementwise -------------------------------------------------------------

def add(a: Tensor, b) -> Tensor:
    """``a + b`` where ``b`` broadcasts into ``a``'s shape."""
    b = _const(b, a)
    _check_into("add", a, b)

    def bw(g):
        return g, _unbroadcast(g, b.shape)

    return _make(a.data + b.data, "add", (a, b), bw)


def mul(a: Tensor, b) -> Tensor:
    """Elementwise ``a * b`` where ``b`` broadcasts into ``a``'s shape."""
    b = _const(b, a)
    _check_into("mul", a, b)

    def bw(g):
        return g * b.data, _unbroadcast(g * a.data, b.shape)

    return _make(a.data * b.data, "mul", (a, b), bw)


def mul_scalar(a: Tensor, s: float) -> Tensor:
    s = float(s)
    return _make(a.data * s, "mul_scalar", (a,), lambda g: (g * s,))


def tanh(a: Tensor) -> Tensor:
    y = np.tanh(a.data)
    return _make(y, "tanh", (a,), lambda g: (g * (1.0 - y * y),))


_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    """GELU, tanh approximation."""
    x = a.data
    inner = _GELU_C * (x + 0.044715 * x * x * x)
    t = np.tanh(inner)
    y = 0.5 * x * (1.0 + t)

    def bw(g):
        dinner = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
        return (g * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner),)

    return _make(y, "gelu", (a,), bw)


# -- shape ops ---------------------------------------------------------------

def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    try:
        y = a.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", a.shape, shape) from None
    return _make(y, "reshape", (a,), lambda g: (g.reshape(a.shape),))


def transpose_last_two(a: Tensor) -> Tensor:
    if a.ndim < 2:
        raise ShapeError("transpose_last_two", a.shape)
    return _make(np.swapaxes(a.data, -1, -2), "transpose_last_two", (a,),
                 lambda g: (np.swapaxes(g, -1, -2),))


def permute(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    if sorted(axes) != list(range(a.ndim)):
        raise ShapeError("permute", a.shape, axes)
    inv = tuple(np.argsort(axes))
    return _make(np.transpose(a.data, axes), "permute", (a,), lambda g: (np.transpose(g, inv),))


def concat_last_dim(parts: Sequence[Tensor]) -> Tensor:
    parts = list(parts)
    lead = parts[0].shape[:-1]
    if any(p.shape[:-1] != lead for p in parts):
        raise ShapeError("concat_last_dim", *(p.shape for p in parts))
    sizes = [p.shape[-1] for p in parts]
    cuts = np.cumsum(sizes)[:-1]

    def bw(g):
        return tuple(np.split(g, cuts, axis=-1))

    return _make(np.concatenate([p.data for p in parts], axis=-1), "concat_last_dim", parts, bw)


def stack(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = list(parts)
    if any(p.shape != parts[0].shape for p in parts):
        raise ShapeError("stack", *(p.shape for p in parts))

    def bw(g):
        return tuple(np.moveaxis(g, axis, 0))

    return _make(np.stack([p.data for p in parts], axis=axis), "stack", parts, bw)


def getitem(a: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    y = a.data[index]

    def bw(g):
        full = np.zeros_like(a.data)
        full[index] += g
        return (full,)

    return _make(np.array(y), "getitem", (a,), bw)


# -- reductions --------------------------------------------------------------

def sum(a: Tensor, axis=None) -> Tensor:  # noqa: A001
    y = a.data.sum(axis=axis)

    def bw(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), a.shape).copy(),)

    return _make(np.asarray(y), "sum", (a,), bw)


def mean(a: Tensor, axis=None) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = int(np.prod([a.shape[ax] for ax in axes]))
    y = a.data.mean(axis=axis)

    def bw(g):
        if axis is None:
            return (np.full(a.shape, g / count, dtype=a.dtype),)
        return (np.broadcast_to(np.expand_dims(g, axis) / count, a.shape).copy(),)

    return _make(np.asarray(y), "mean", (a,), bw)


# -- linear algebra ----------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Batched matrix product with numpy batch broadcasting."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2]:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        y = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def bw(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2)) if a.requires_grad else None
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g) if b.requires_grad else None
        return (None if ga is None else _unbroadcast(ga, a.shape),
                None if gb is None else _unbroadcast(gb, b.shape))

    return _make(y, "matmul", (a, b), bw)


def frobenius_norm(a: Tensor) -> Tensor:
    """``sqrt(sum(x**2) + eps)`` over the last two axes.

    The eps is tiny (1e-20) so a zero matrix scores 1e-10, yet the gradient
    stays finite there.
    """
    if a.ndim < 2:
        raise ShapeError("frobenius_norm", a.shape)
    root = np.sqrt((a.data ** 2).sum(axis=(-2, -1)) + FROB_EPS)

    def bw(g):
        return ((g / root)[..., None, None] * a.data,)

    return _make(root, "frobenius_norm", (a,), bw)


def l2_normalize_last_dim(a: Tensor) -> Tensor:
    """Rows divided by ``sqrt(sum(x**2) + eps)``."""
    norm = np.sqrt((a.data ** 2).sum(axis=-1, keepdims=True) + NORM_EPS)
    y = a.data / norm

    def bw(g):
        return ((g - y * (g * y).sum(axis=-1, keepdims=True)) / norm,)

    return _make(y, "l2_normalize", (a,), bw)


# -- neural ops --------------------------------------------------------------

def embedding_lookup(table: Tensor, ids) -> Tensor:
    ids = np.asarray(ids, dtype=np.int64)
    if table.ndim != 2:
        raise ShapeError("embedding_lookup", table.shape, ids.shape)
    if ids.size and (ids.min() < 0 or ids.max() >= table.shape[0]):
        bad = np.argwhere((ids < 0) | (ids >= table.shape[0]))[0]
        raise IndexError(f"embedding_lookup: id {int(ids[tuple(bad)])} at position {tuple(int(i) for i in bad)} "
                         f"outside table of {table.shape[0]} rows")

    def bw(g):
        full = np.zeros_like(table.data)
        np.add.at(full, ids.reshape(-1), g.reshape(-1, table.shape[1]))
        return (full,)

    return _make(table.data[ids], "embedding_lookup", (table,), bw)


def softmax_last_dim(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (y * (g - (g * y).sum(axis=-1, keepdims=True)),)

    return _make(y, "softmax_last_dim", (a,), bw)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    d = a.shape[-1]
    if gamma.shape != (d,) or beta.shape != (d,):
        raise ShapeError("layer_norm", a.shape, gamma.shape, beta.shape)
    mu = a.data.mean(axis=-1, keepdims=True)
    xc = a.data - mu
    var = (xc * xc).mean(axis=-1, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = xc * inv
    y = xhat * gamma.data + beta.data

    def bw(g):
        gx = g * gamma.data
        ga = inv * (gx - gx.mean(axis=-1, keepdims=True)
                    - xhat * (gx * xhat).mean(axis=-1, keepdims=True))
        lead = tuple(range(a.ndim - 1))
        return ga, (g * xhat).sum(axis=lead), g.sum(axis=lead)

    return _make(y, "layer_norm", (a, gamma, beta), bw)


def cross_entropy_rows(target, probs: Tensor) -> Tensor:
    """``-sum_c target_c * log(max(p_c, 1e-12))`` over the last axis.

    ``target`` is a constant array broadcastable into ``probs``.
    """
    target = np.asarray(target.data if isinstance(target, Tensor) else target, dtype=probs.dtype)
    try:
        target = np.broadcast_to(target, probs.shape)
    except ValueError:
        raise ShapeError("cross_entropy_rows", target.shape, probs.shape) from None
    p = probs.data
    clamped = p < LOG_CLAMP
    logp = np.log(np.where(clamped, LOG_CLAMP, p))
    y = -(target * logp).sum(axis=-1)

    def bw(g):
        safe = np.where(clamped, 1.0, p)
        return (np.where(clamped, 0.0, -target / safe) * g[..., None],)

    return _make(y, "cross_entropy_rows", (probs,), bw)


# -- graph -------------------------------------------------------------------

@dataclass
class Graph:
    """Topologically ordered nodes reachable from an output."""

    nodes: list[Tensor] = field(default_factory=list)

    @classmethod
    def from_output(cls, out: Tensor) -> "Graph":
        order: list[Tensor] = []
        seen: set[int] = set()
        stack_: list[tuple[Tensor, bool]] = [(out, False)]
        while stack_:
            node, expanded = stack_.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack_.append((node, True))
            for p in node._parents:
                if id(p) not in seen and p.requires_grad:
                    stack_.append((p, False))
        return cls(order)

    def parameters(self) -> list[Tensor]:
        return [n for n in self.nodes if n._backward is None and n.requires_grad]


def backward(loss: Tensor, graph: Graph | None = None) -> Graph:
    """Populate ``.grad`` on every leaf that requires grad.

    Gradients accumulate into existing ``.grad`` arrays, so repeated calls
    sum over uses; call :func:`zero_grads` between steps.
    """
    if loss.data.size != 1:
        raise ValueError(f"backward: loss must be scalar, got shape {loss.shape}")
    graph = graph or Graph.from_output(loss)
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(graph.nodes):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node._backward is None:
            if node.requires_grad:
                node.grad = g.copy() if node.grad is None else node.grad + g
            continue
        parent_grads = node._backward(g)
        for parent, pg in zip(node._parents, parent_grads):
            if pg is None or not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] = grads[key] + pg
            else:
                grads[key] = pg
    return graph


def zero_grads(params: Iterable[Tensor]):
    for p in params:
        p.grad = None


# -- finite differences ------------------------------------------------------

@dataclass
class GradCheckReport:
    max_rel_error: dict[str, float]
    checked: dict[str, int]
    tol: float

    @property
    def passed(self) -> bool:
        return all(e <= self.tol for e in self.max_rel_error.values())

    @property
    def worst(self) -> tuple[str, float]:
        name = max(self.max_rel_error, key=self.max_rel_error.get)
        return name, self.max_rel_error[name]


def relative_error(analytic, numeric):
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), 1e-8)
    return np.abs(analytic - numeric) / denom


def finite_diff_check(f: Callable[[], Tensor], params: dict[str, Tensor], h: float = 1e-5,
                      tol: float = 1e-4, max_checks: int | None = None, seed: int = 0,
                      analytic: dict[str, np.ndarray] | None = None) -> GradCheckReport:
    """Compare analytic gradients with central differences.

    ``f`` rebuilds the graph from the current parameter values and returns a
    scalar. With ``max_checks`` only that many coordinates per parameter are
    probed, half of them drawn from coordinates with nonzero analytic grad.
    ``analytic`` overrides the computed gradients (used for negative
    controls).
    """
    if analytic is None:
        zero_grads(params.values())
        backward(f())
        analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy()
                    for k, p in params.items()}
    rng = np.random.default_rng(seed)
    errors, counts = {}, {}
    for name, p in params.items():
        flat = p.data.reshape(-1)
        ga = analytic[name].reshape(-1)
        if max_checks is None or flat.size <= max_checks:
            idx = np.arange(flat.size)
        else:
            nz = np.flatnonzero(ga)
            k = min(len(nz), max_checks // 2)
            chosen = rng.choice(nz, size=k, replace=False) if k else np.array([], dtype=np.int64)
            rest = rng.choice(flat.size, size=max_checks - k, replace=False)
            idx = np.unique(np.concatenate([chosen, rest]))
        worst = 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + h
            fp = float(f().data)
            flat[i] = orig - h
            fm = float(f().data)
            flat[i] = orig
            num = (fp - fm) / (2 * h)
            worst = max(worst, float(relative_error(ga[i], num)))
        errors[name] = worst
        counts[name] = len(idx)
    return GradCheckReport(errors, counts, tol)
