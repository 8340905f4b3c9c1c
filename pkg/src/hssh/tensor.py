"""Dense float64 tensors with reverse-mode automatic differentiation.

Every trainable quantity in this package is a :class:`Tensor`: a numpy
array plus an optional gradient buffer and a link into the recorded
computation graph.  Operations always allocate fresh buffers (no views of
mutable data), broadcast over trailing dimensions, and register a backward
rule when any input participates in gradient tracking.  Calling
``backward()`` on a scalar root walks the graph once in reverse
topological order, accumulates ``grad`` on every tracked node, and then
releases the graph.
"""

from __future__ import annotations

import contextlib

import numpy as np

# Guard added inside div denominators and sqrt/ln arguments.  Feature
# standard deviations can be exactly zero on constant channels.
EPS_GUARD = 1e-12
# Backward-only guard for euclidean norms; the forward stays exact so that
# norm(0) == 0 bit-for-bit.
NORM_EPS = 1e-15
ADAM_EPS = 1e-8


class TensorError(Exception):
    """Base class for tensor-level failures."""


class ShapeMismatch(TensorError):
    pass


class NonFinite(TensorError):
    pass


class InvalidAxis(TensorError):
    pass


class NonScalarRoot(TensorError):
    pass


class MissingGradient(TensorError):
    pass


_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def _as_array(x) -> np.ndarray:
    return np.array(x, dtype=np.float64)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFinite(f"{op} produced non-finite values")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_parents", "_grad_fn")

    def __init__(self, data, requires_grad: bool = False):
        self.data = _as_array(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._grad_fn = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data.reshape(-1)[0])

    def detach(self) -> "Tensor":
        return Tensor(self.data.copy())

    def zero_grad(self) -> None:
        self.grad = None

    def backward(self) -> None:
        """Populate ``grad`` on every tracked ancestor of a scalar root.

        The graph is released as it is consumed: each node is visited
        exactly once, in reverse insertion order of a topological sort.
        """
        if self.data.size != 1:
            raise NonScalarRoot(f"backward root must be scalar, got shape {self.shape}")
        order = _toposort(self)
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            fn = node._grad_fn
            if fn is None:
                continue
            grads = fn(node.grad)
            for parent, g in zip(node._parents, grads):
                if g is None or not parent.requires_grad:
                    continue
                if parent.grad is None:
                    parent.grad = np.zeros_like(parent.data)
                parent.grad += g
            node._parents = ()
            node._grad_fn = None

    # Operator sugar; non-Tensor operands are lifted to constants.
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, requires_grad={self.requires_grad})"


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _toposort(root: Tensor) -> list[Tensor]:
    order: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    return order


def from_op(data: np.ndarray, parents: tuple[Tensor, ...], grad_fn, op: str) -> Tensor:
    """Build a graph node from an op result.

    ``grad_fn(upstream)`` must return one gradient array (or None) per
    parent.  Extension point for custom ops such as the scan kernel.
    """
    _check_finite(data, op)
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out._parents = ()
    out._grad_fn = None
    out.requires_grad = False
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = parents
        out._grad_fn = grad_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum a broadcast gradient back down to ``shape``."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def _broadcast_check(a: Tensor, b: Tensor, op: str) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeMismatch(f"{op}: shapes {a.shape} and {b.shape} do not broadcast") from None


# ---------------------------------------------------------------------------
# elementwise operations


def add(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "add")
    data = a.data + b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return from_op(data, (a, b), grad_fn, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "sub")
    data = a.data - b.data

    def grad_fn(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return from_op(data, (a, b), grad_fn, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    _broadcast_check(a, b, "mul")
    data = a.data * b.data
    ad, bd = a.data, b.data

    def grad_fn(g):
        return _unbroadcast(g * bd, a.shape), _unbroadcast(g * ad, b.shape)

    return from_op(data, (a, b), grad_fn, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    """Division with the denominator magnitude floored at the guard;
    exact wherever |b| >= EPS_GUARD."""
    _broadcast_check(a, b, "div")
    small = np.abs(b.data) < EPS_GUARD
    denom = np.where(small, np.where(b.data >= 0, EPS_GUARD, -EPS_GUARD), b.data)
    data = a.data / denom
    ad = a.data

    def grad_fn(g):
        return (
            _unbroadcast(g / denom, a.shape),
            _unbroadcast(np.where(small, 0.0, -g * ad / (denom * denom)), b.shape),
        )

    return from_op(data, (a, b), grad_fn, "div")


def neg(a: Tensor) -> Tensor:
    def grad_fn(g):
        return (-g,)

    return from_op(-a.data, (a,), grad_fn, "neg")


def tanh(a: Tensor) -> Tensor:
    data = np.tanh(a.data)

    def grad_fn(g):
        return (g * (1.0 - data * data),)

    return from_op(data, (a,), grad_fn, "tanh")


def exp(a: Tensor) -> Tensor:
    with np.errstate(over="raise"):
        try:
            data = np.exp(a.data)
        except FloatingPointError:
            raise NonFinite("exp overflow") from None

    def grad_fn(g):
        return (g * data,)

    return from_op(data, (a,), grad_fn, "exp")


def ln(a: Tensor) -> Tensor:
    arg = np.maximum(a.data, EPS_GUARD)
    data = np.log(arg)
    mask = a.data >= EPS_GUARD

    def grad_fn(g):
        return (g * mask / arg,)

    return from_op(data, (a,), grad_fn, "ln")


def sqrt(a: Tensor) -> Tensor:
    arg = np.maximum(a.data, EPS_GUARD)
    data = np.sqrt(arg)
    mask = a.data >= EPS_GUARD

    def grad_fn(g):
        return (g * mask * 0.5 / data,)

    return from_op(data, (a,), grad_fn, "sqrt")


def softplus(a: Tensor) -> Tensor:
    data = np.logaddexp(0.0, a.data)
    ad = a.data

    def grad_fn(g):
        sig = np.where(ad >= 0, 1.0 / (1.0 + np.exp(-np.maximum(ad, 0))),
                       np.exp(np.minimum(ad, 0)) / (1.0 + np.exp(np.minimum(ad, 0))))
        return (g * sig,)

    return from_op(data, (a,), grad_fn, "softplus")


def clamp(a: Tensor, lo: float | None = None, hi: float | None = None) -> Tensor:
    data = np.clip(a.data, lo, hi)
    mask = np.ones_like(a.data)
    if lo is not None:
        mask = mask * (a.data >= lo)
    if hi is not None:
        mask = mask * (a.data <= hi)

    def grad_fn(g):
        return (g * mask,)

    return from_op(data, (a,), grad_fn, "clamp")


_ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "div": div,
    "tanh": tanh,
    "exp": exp,
    "ln": ln,
    "sqrt": sqrt,
    "neg": neg,
    "clamp": clamp,
}


def elementwise(op: str, a: Tensor, b: Tensor | None = None, **kwargs) -> Tensor:
    """Dispatch by name; binary ops require ``b``, unary ops forbid it."""
    fn = _ELEMENTWISE[op]
    if op in ("add", "sub", "mul", "div"):
        if b is None:
            raise ShapeMismatch(f"{op} needs two operands")
        return fn(a, b)
    if b is not None:
        raise ShapeMismatch(f"{op} is unary")
    return fn(a, **kwargs)


# ---------------------------------------------------------------------------
# matmul and reductions


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Stacked matrix product: ``a`` is (..., m, k), ``b`` is (k, n)."""
    if a.ndim < 2 or b.ndim != 2 or a.shape[-1] != b.shape[0]:
        raise ShapeMismatch(f"matmul: {a.shape} @ {b.shape}")
    data = a.data @ b.data
    ad, bd = a.data, b.data
    k, n = b.shape

    def grad_fn(g):
        ga = g @ bd.T
        gb = ad.reshape(-1, k).T @ g.reshape(-1, n)
        return ga, gb

    return from_op(data, (a, b), grad_fn, "matmul")


def _check_axes(a: Tensor, axes) -> tuple[int, ...]:
    norm = []
    for ax in axes:
        if not isinstance(ax, (int, np.integer)) or not -a.ndim <= ax < a.ndim:
            raise InvalidAxis(f"axis {ax} invalid for shape {a.shape}")
        norm.append(ax % a.ndim)
    if len(set(norm)) != len(norm):
        raise InvalidAxis(f"duplicate axes {axes}")
    return tuple(sorted(norm))


def _keepdims_shape(shape: tuple[int, ...], axes: tuple[int, ...]) -> tuple[int, ...]:
    return tuple(1 if i in axes else n for i, n in enumerate(shape))


def sum_(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = _check_axes(a, axes)
    data = a.data.sum(axis=axes, keepdims=keepdims)
    kshape = _keepdims_shape(a.shape, axes)

    def grad_fn(g):
        return (np.broadcast_to(g.reshape(kshape), a.shape).copy(),)

    return from_op(data, (a,), grad_fn, "sum")


def mean(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = _check_axes(a, axes)
    count = 1
    for ax in axes:
        count *= a.shape[ax]
    data = a.data.mean(axis=axes, keepdims=keepdims)
    kshape = _keepdims_shape(a.shape, axes)

    def grad_fn(g):
        return (np.broadcast_to(g.reshape(kshape) / count, a.shape).copy(),)

    return from_op(data, (a,), grad_fn, "mean")


def max_(a: Tensor, axes, keepdims: bool = False) -> Tensor:
    axes = _check_axes(a, axes)
    data = a.data.max(axis=axes, keepdims=keepdims)
    kshape = _keepdims_shape(a.shape, axes)
    # Ties share the gradient equally; deterministic and symmetric.
    hit = (a.data == data.reshape(kshape)).astype(np.float64)
    hit /= hit.sum(axis=axes, keepdims=True)

    def grad_fn(g):
        return (hit * g.reshape(kshape),)

    return from_op(data, (a,), grad_fn, "max")


_REDUCE = {"sum": sum_, "mean": mean, "max": max_}


def reduce(op: str, a: Tensor, axes, keepdims: bool = False) -> Tensor:
    return _REDUCE[op](a, axes, keepdims=keepdims)


# ---------------------------------------------------------------------------
# shape and indexing operations


def reshape(a: Tensor, shape) -> Tensor:
    shape = tuple(shape)
    data = a.data.reshape(shape).copy()
    old = a.shape

    def grad_fn(g):
        return (g.reshape(old),)

    return from_op(data, (a,), grad_fn, "reshape")


def transpose(a: Tensor, axes) -> Tensor:
    axes = tuple(axes)
    data = np.ascontiguousarray(np.transpose(a.data, axes))
    inv = tuple(np.argsort(axes))

    def grad_fn(g):
        return (np.ascontiguousarray(np.transpose(g, inv)),)

    return from_op(data, (a,), grad_fn, "transpose")


def flip(a: Tensor, axis: int) -> Tensor:
    data = np.flip(a.data, axis=axis).copy()

    def grad_fn(g):
        return (np.flip(g, axis=axis).copy(),)

    return from_op(data, (a,), grad_fn, "flip")


def take(a: Tensor, indices, axis: int = 0) -> Tensor:
    indices = np.asarray(indices, dtype=np.intp)
    data = np.take(a.data, indices, axis=axis).copy()
    shape = a.shape

    def grad_fn(g):
        out = np.zeros(shape, dtype=np.float64)
        np.add.at(out, (slice(None),) * axis + (indices,), g)
        return (out,)

    return from_op(data, (a,), grad_fn, "take")


def norm(a: Tensor, axis: int = -1, keepdims: bool = False) -> Tensor:
    """Euclidean norm along one axis.

    Exact at zero (``norm(0) == 0``) with the gradient guard applied only
    in the backward denominator, so the coincidence subgradient is 0.
    """
    sq = np.sum(a.data * a.data, axis=axis, keepdims=True)
    n = np.sqrt(sq)
    ad = a.data

    def grad_fn(g):
        gk = g if keepdims else np.expand_dims(g, axis=axis)
        return (gk * ad / np.maximum(n, NORM_EPS),)

    data = n if keepdims else np.squeeze(n, axis=axis)
    return from_op(data.copy(), (a,), grad_fn, "norm")


def concat(tensors: list[Tensor], axis: int = 0) -> Tensor:
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def grad_fn(g):
        return tuple(np.ascontiguousarray(p) for p in np.split(g, splits, axis=axis))

    return from_op(data, tuple(tensors), grad_fn, "concat")


# ---------------------------------------------------------------------------
# optimizer


class AdamState:
    """First/second moment buffers plus the shared step counter."""

    def __init__(self, params: list[Tensor]):
        self.m = [np.zeros_like(p.data) for p in params]
        self.v = [np.zeros_like(p.data) for p in params]
        self.t = 0


def adam_step(params: list[Tensor], state: AdamState, lr: float,
              beta1: float = 0.9, beta2: float = 0.99) -> None:
    """Bias-corrected Adam update; gradients are consumed and zeroed."""
    for i, p in enumerate(params):
        if p.grad is None:
            raise MissingGradient(f"parameter {i} has no gradient")
        if not np.all(np.isfinite(p.grad)):
            raise NonFinite(f"parameter {i} has non-finite gradient")
    state.t += 1
    t = state.t
    for i, p in enumerate(params):
        g = p.grad
        state.m[i] = beta1 * state.m[i] + (1.0 - beta1) * g
        state.v[i] = beta2 * state.v[i] + (1.0 - beta2) * g * g
        m_hat = state.m[i] / (1.0 - beta1 ** t)
        v_hat = state.v[i] / (1.0 - beta2 ** t)
        p.data -= lr * m_hat / (np.sqrt(v_hat) + ADAM_EPS)
        p.grad = None
