"""Dense float64 tensors with define-by-run reverse-mode differentiation.

The graph is rebuilt on every forward pass: each op returns a fresh Tensor
holding its parents and a vector-Jacobian closure.  Everything is float64 and
eagerly checked for NaN/Inf, so numerical trouble surfaces at the op that
produced it instead of three modules later.
"""

from __future__ import annotations

import contextlib
from typing import Callable, Iterable, Sequence

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible for an op."""


class NonFiniteError(FloatingPointError):
    """Raised when an op produces NaN or Inf."""


_GRAD_ENABLED = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (sampling, metric eval)."""
    global _GRAD_ENABLED
    prev = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = prev


class Tensor:
    """A numpy array plus optional autodiff bookkeeping.

    Tensors are immutable after creation; ops never write into their inputs.
    """

    __slots__ = ("data", "requires_grad", "_parents", "_vjp", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self._parents: tuple[Tensor, ...] = ()
        self._vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]] | None = None
        self.name = name

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        tag = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}, grad={self.requires_grad}{tag})"

    # operator sugar -------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __sub__(self, other):
        return add(self, mul(other, -1.0))

    def __rsub__(self, other):
        return add(other, mul(self, -1.0))

    def __truediv__(self, other):
        if isinstance(other, Tensor):
            raise TypeError("tensor/tensor division is not a primitive; "
                            "multiply by a reciprocal instead")
        return mul(self, 1.0 / float(other))

    def __matmul__(self, other):
        return matmul(self, other)


def as_tensor(x) -> Tensor:
    """Wrap plain arrays/scalars as constant (non-grad) tensors."""
    return x if isinstance(x, Tensor) else Tensor(x)


def _check_finite(data: np.ndarray, op: str) -> None:
    if not np.all(np.isfinite(data)):
        raise NonFiniteError(f"op {op!r} produced non-finite values")


def _record(op: str, data: np.ndarray, parents: Sequence[Tensor],
            vjp: Callable[[np.ndarray], tuple[np.ndarray, ...]]) -> Tensor:
    """Register an op result in the graph (the single node constructor)."""
    _check_finite(data, op)
    out = Tensor(data)
    if _GRAD_ENABLED and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._vjp = vjp
    return out


def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Reduce a broadcast gradient back to the operand's shape."""
    if grad.shape == shape:
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# primitive ops ------------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data + b.data
    except ValueError:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} do not broadcast")
    return _record("add", data, (a, b),
                   lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    try:
        data = a.data * b.data
    except ValueError:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} do not broadcast")
    return _record("mul", data, (a, b),
                   lambda g: (_unbroadcast(g * b.data, a.shape),
                              _unbroadcast(g * a.data, b.shape)))


def matmul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: shapes {a.shape} and {b.shape} are incompatible")
    data = a.data @ b.data
    return _record("matmul", data, (a, b),
                   lambda g: (g @ b.data.T, a.data.T @ g))


def _reduce_vjp(a: Tensor, axis, keepdims, scale: float):
    def vjp(g: np.ndarray) -> tuple[np.ndarray, ...]:
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g * scale, a.shape).copy(),)
    return vjp


def tsum(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.sum(axis=axis, keepdims=keepdims)
    return _record("sum", data, (a,), _reduce_vjp(a, axis, keepdims, 1.0))


def tmean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    data = a.data.mean(axis=axis, keepdims=keepdims)
    count = a.data.size if axis is None else a.data.shape[axis]
    return _record("mean", data, (a,), _reduce_vjp(a, axis, keepdims, 1.0 / count))


def tanh(a) -> Tensor:
    a = as_tensor(a)
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1.0 - y * y),))


def square(a) -> Tensor:
    a = as_tensor(a)
    return _record("square", a.data * a.data, (a,), lambda g: (g * 2.0 * a.data,))


def sqrt(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore"):
        y = np.sqrt(a.data)
    return _record("sqrt", y, (a,), lambda g: (g * 0.5 / y,))


def log(a) -> Tensor:
    a = as_tensor(a)
    with np.errstate(invalid="ignore", divide="ignore"):
        y = np.log(a.data)
    return _record("log", y, (a,), lambda g: (g / a.data,))


def concat(tensors: Iterable, axis: int = 0) -> Tensor:
    ts = [as_tensor(t) for t in tensors]
    try:
        data = np.concatenate([t.data for t in ts], axis=axis)
    except ValueError:
        shapes = [t.shape for t in ts]
        raise ShapeError(f"concat: shapes {shapes} do not align on axis {axis}")
    sizes = [t.data.shape[axis] for t in ts]
    splits = np.cumsum(sizes)[:-1]

    def vjp(g: np.ndarray) -> tuple[np.ndarray, ...]:
        return tuple(np.split(g, splits, axis=axis))

    return _record("concat", data, ts, vjp)


def sigmoid(a) -> Tensor:
    """Logistic function, composed from tanh: sigma(x) = (1 + tanh(x/2)) / 2."""
    return add(mul(tanh(mul(a, 0.5)), 0.5), 0.5)


# backward pass ------------------------------------------------------------

def _toposort(root: Tensor) -> list[Tensor]:
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
        for p in node._parents:
            if p.requires_grad and id(p) not in seen:
                stack.append((p, False))
    return order


def backward(loss: Tensor, params: Sequence[Tensor]) -> dict[Tensor, Tensor]:
    """Gradients of a scalar loss with respect to `params`.

    Parameters the loss does not depend on get zero gradients.  Each graph
    node is visited exactly once.
    """
    if loss.data.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.shape}")
    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(_toposort(loss)):
        if node._vjp is None:
            continue
        g = grads.pop(id(node), None)
        if g is None:
            continue
        _check_finite(g, "backward")
        for parent, pg in zip(node._parents, node._vjp(g)):
            if not parent.requires_grad:
                continue
            acc = grads.get(id(parent))
            grads[id(parent)] = pg if acc is None else acc + pg
    return {p: Tensor(grads.get(id(p), np.zeros_like(p.data))) for p in params}


def grad(loss: Tensor, params: Sequence[Tensor]) -> dict[Tensor, np.ndarray]:
    """Like `backward` but returns raw arrays (optimizer-facing)."""
    return {p: g.data for p, g in backward(loss, params).items()}


def grad_check(f: Callable[[Tensor], Tensor], x: np.ndarray,
               step: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    rel = |analytic - cd| / (|analytic| + |cd| + 1e-12), maximized over
    coordinates of x.  NaN propagates as the failure value.
    """
    x = np.asarray(x, dtype=np.float64)
    leaf = Tensor(x.copy(), requires_grad=True)
    analytic = backward(f(leaf), [leaf])[leaf].data
    worst = 0.0
    flat = x.ravel()
    for i in range(flat.size):
        bumped = flat.copy()
        bumped[i] += step
        hi = float(f(Tensor(bumped.reshape(x.shape))).data)
        bumped[i] = flat[i] - step
        lo = float(f(Tensor(bumped.reshape(x.shape))).data)
        cd = (hi - lo) / (2.0 * step)
        an = float(analytic.ravel()[i])
        rel = abs(an - cd) / (abs(an) + abs(cd) + 1e-12)
        if not np.isfinite(rel):
            return float("nan")
        worst = max(worst, rel)
    return worst
