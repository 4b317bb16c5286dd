"""Minimal reverse-mode automatic differentiation over dense float64 arrays.

A :class:`Tensor` wraps a numpy array and remembers the operation that
produced it.  Calling :func:`backward` on a scalar tensor walks the
recorded graph in reverse topological order and returns the gradient of
that scalar with respect to every leaf that requires one.

Piecewise operations (ReLU, the piecewise-linear Heaviside, clamps, the
guarded division) report which segment each element fell on while a
:func:`record_segments` block is active.  :func:`grad_check` uses those
reports to skip finite differences that straddle a breakpoint.
"""

from __future__ import annotations

import contextlib
from dataclasses import dataclass, field
from typing import Callable, Iterator, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "ShapeError",
    "ZeroDivision",
    "tensor",
    "constant",
    "backward",
    "forward_op",
    "add",
    "sub",
    "mul",
    "neg",
    "matmul",
    "divide",
    "safe_divide",
    "power",
    "sqrt",
    "log",
    "relu",
    "dropout",
    "softmax",
    "sum",
    "mean",
    "maximum",
    "l1_normalize",
    "record_segments",
    "GradCheckReport",
    "grad_check",
]


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible with an operation."""

    def __init__(self, op: str, *shapes: tuple[int, ...]):
        self.op = op
        self.shapes = shapes
        super().__init__(f"{op}: incompatible shapes {', '.join(str(s) for s in shapes)}")


class ZeroDivision(ArithmeticError):
    """Raised by :func:`divide` when a denominator entry is exactly zero."""


class Tensor:
    """A node in the computation graph."""

    __slots__ = ("data", "requires_grad", "grad", "op", "_parents", "_backward", "__weakref__")

    def __init__(self, data, requires_grad: bool = False, *, op: str = "leaf",
                 parents: tuple["Tensor", ...] = (), backward_fn=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.op = op
        self._parents = parents
        self._backward = backward_fn

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def backward(self) -> dict["Tensor", np.ndarray]:
        return backward(self)

    def __repr__(self) -> str:
        return f"Tensor(op={self.op!r}, shape={self.shape}, requires_grad={self.requires_grad})"

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
        return divide(self, other)

    def __rtruediv__(self, other):
        return divide(other, self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __pow__(self, exponent: float):
        return power(self, exponent)

    def sum(self, axis=None, keepdims: bool = False):
        return sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims: bool = False):
        return mean(self, axis=axis, keepdims=keepdims)


def tensor(data, requires_grad: bool = False) -> Tensor:
    return Tensor(np.array(data, dtype=np.float64), requires_grad=requires_grad)


def constant(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, op: str, parents: tuple[Tensor, ...], backward_fn) -> Tensor:
    needs = any(p.requires_grad for p in parents)
    return Tensor(data, requires_grad=needs, op=op,
                  parents=parents if needs else (), backward_fn=backward_fn if needs else None)


# --------------------------------------------------------------------------
# breakpoint bookkeeping

_segment_log: list | None = None


@contextlib.contextmanager
def record_segments() -> Iterator[list]:
    """Collect the segment pattern of every piecewise op run inside the block."""
    global _segment_log
    previous, _segment_log = _segment_log, []
    try:
        yield _segment_log
    finally:
        _segment_log = previous


def note_segments(op: str, pattern: np.ndarray) -> None:
    """Called by piecewise ops to report which branch each element took."""
    if _segment_log is not None:
        _segment_log.append((op, np.array(pattern, copy=True)))


def _same_segments(a: list, b: list) -> bool:
    if len(a) != len(b):
        return False
    return all(oa == ob and pa.shape == pb.shape and np.array_equal(pa, pb)
               for (oa, pa), (ob, pb) in zip(a, b))


# --------------------------------------------------------------------------
# elementwise helpers

def _unbroadcast(grad: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


def _broadcast_shape(op: str, a: Tensor, b: Tensor) -> None:
    try:
        np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


def add(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("add", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _node(a.data + b.data, "add", (a, b), bw)


def sub(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("sub", a, b)

    def bw(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _node(a.data - b.data, "sub", (a, b), bw)


def mul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    _broadcast_shape("multiply", a, b)

    def bw(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    op = "scalar-multiply" if a.data.ndim == 0 or b.data.ndim == 0 else "multiply"
    return _node(a.data * b.data, op, (a, b), bw)


def neg(a) -> Tensor:
    a = constant(a)
    return _node(-a.data, "neg", (a,), lambda g: (-g,))


def divide(a, b) -> Tensor:
    """Elementwise ``a / b``; any exactly-zero denominator raises :class:`ZeroDivision`."""
    a, b = constant(a), constant(b)
    _broadcast_shape("divide", a, b)
    if np.any(b.data == 0):
        raise ZeroDivision(f"divide: zero denominator in operand of shape {b.shape}; "
                           "use safe_divide for guarded ratios")
    out = a.data / b.data

    def bw(g):
        return (_unbroadcast(g / b.data, a.shape),
                _unbroadcast(-g * out / b.data, b.shape))

    return _node(out, "divide", (a, b), bw)


def safe_divide(a, b) -> Tensor:
    """Guarded ratio: ``a / b`` where ``b != 0`` and 0 (with zero gradient) elsewhere."""
    a, b = constant(a), constant(b)
    _broadcast_shape("safe_divide", a, b)
    zero = b.data == 0
    note_segments("safe_divide", zero)
    denom = np.where(zero, 1.0, b.data)
    out = np.where(zero, 0.0, a.data / denom)

    def bw(g):
        ga = np.where(zero, 0.0, g / denom)
        gb = np.where(zero, 0.0, -g * out / denom)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _node(out, "safe_divide", (a, b), bw)


def power(a, exponent: float) -> Tensor:
    a = constant(a)
    out = a.data ** exponent

    def bw(g):
        return (g * exponent * a.data ** (exponent - 1),)

    return _node(out, "power", (a,), bw)


def sqrt(a) -> Tensor:
    a = constant(a)
    if np.any(a.data < 0):
        raise ValueError("sqrt: negative operand")
    out = np.sqrt(a.data)
    zero = out == 0
    note_segments("sqrt", zero)

    def bw(g):
        # a zero root only ever feeds a guarded ratio, which sends zero upstream
        return (np.where(zero, 0.0, g / (2.0 * np.where(zero, 1.0, out))),)

    return _node(out, "sqrt", (a,), bw)


def log(a) -> Tensor:
    a = constant(a)
    if np.any(a.data <= 0):
        raise ValueError("log: non-positive operand")
    return _node(np.log(a.data), "log", (a,), lambda g: (g / a.data,))


def maximum(a, floor: float) -> Tensor:
    """Elementwise ``max(a, floor)`` against a constant floor."""
    a = constant(a)
    keep = a.data >= floor
    note_segments("maximum", keep)
    return _node(np.where(keep, a.data, floor), "maximum", (a,), lambda g: (g * keep,))


def relu(a) -> Tensor:
    a = constant(a)
    active = a.data > 0
    note_segments("relu", active)
    return _node(a.data * active, "relu", (a,), lambda g: (g * active,))


def dropout(a, mask: np.ndarray | None) -> Tensor:
    """Apply a pre-sampled, already-rescaled dropout mask; ``None`` means eval mode."""
    a = constant(a)
    if mask is None:
        return a
    mask = np.asarray(mask, dtype=np.float64)
    if mask.shape != a.shape:
        raise ShapeError("dropout-mask-apply", a.shape, mask.shape)
    return _node(a.data * mask, "dropout-mask-apply", (a,), lambda g: (g * mask,))


def matmul(a, b) -> Tensor:
    a, b = constant(a), constant(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError("matmul", a.shape, b.shape)

    def bw(g):
        return g @ b.data.T, a.data.T @ g

    return _node(a.data @ b.data, "matmul", (a, b), bw)


def softmax(a) -> Tensor:
    """Row-wise softmax with max subtraction."""
    a = constant(a)
    if a.ndim not in (1, 2):
        raise ShapeError("softmax", a.shape)
    shifted = a.data - a.data.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    out = e / e.sum(axis=-1, keepdims=True)

    def bw(g):
        return (out * (g - (g * out).sum(axis=-1, keepdims=True)),)

    return _node(out, "softmax", (a,), bw)


def l1_normalize(a) -> Tensor:
    """Divide each row of a nonnegative matrix by its sum."""
    a = constant(a)
    if a.ndim not in (1, 2):
        raise ShapeError("l1-normalize", a.shape)
    norm = np.abs(a.data).sum(axis=-1, keepdims=True)
    if np.any(norm < 1e-12):
        raise ZeroDivision("l1-normalize: row with L1 norm below 1e-12")
    out = a.data / norm
    sign = np.sign(a.data)

    def bw(g):
        return ((g - (g * out).sum(axis=-1, keepdims=True) * sign) / norm,)

    return _node(out, "l1-normalize", (a,), bw)


def sum(a, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    a = constant(a)
    out = a.data.sum(axis=axis, keepdims=keepdims)

    def bw(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, a.shape).copy(),)

    return _node(out, "sum", (a,), bw)


def mean(a, axis=None, keepdims: bool = False) -> Tensor:
    a = constant(a)
    count = a.data.size if axis is None else np.prod([a.shape[ax] for ax in np.atleast_1d(axis)])
    return mul(sum(a, axis=axis, keepdims=keepdims), 1.0 / count)


def _heaviside(p, temperature, detach_threshold=False):
    from .heaviside import heaviside_linear_op

    return heaviside_linear_op(p, temperature, detach_threshold=detach_threshold)


_OPS: dict[str, Callable[..., Tensor]] = {
    "matmul": matmul,
    "add": add,
    "sub": sub,
    "multiply": mul,
    "scalar-multiply": mul,
    "relu": relu,
    "dropout-mask-apply": dropout,
    "softmax": softmax,
    "sum": sum,
    "mean": mean,
    "divide": divide,
    "safe-divide": safe_divide,
    "piecewise-linear-heaviside": _heaviside,
    "l1-normalize": l1_normalize,
    "power": power,
    "sqrt": sqrt,
    "log": log,
    "maximum": maximum,
}


def forward_op(op: str, *inputs, **kwargs) -> Tensor:
    """Run a named op; the tag set mirrors the graph's ``Tensor.op`` values."""
    try:
        fn = _OPS[op]
    except KeyError:
        raise ValueError(f"unknown op {op!r}; known: {sorted(_OPS)}") from None
    return fn(*inputs, **kwargs)


# --------------------------------------------------------------------------
# reverse pass

def _topological(root: Tensor) -> list[Tensor]:
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
        for parent in node._parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    return order


def backward(root: Tensor) -> dict[Tensor, np.ndarray]:
    """Gradients of a scalar ``root`` with respect to every leaf requiring grad.

    Adjoints live in a fresh dictionary on every call, so running the same
    graph twice yields identical results.  Leaf ``.grad`` attributes are
    overwritten with the returned arrays.
    """
    if root.data.size != 1:
        raise ShapeError("backward (root must be scalar)", root.shape)
    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.data)}
    grads: dict[Tensor, np.ndarray] = {}
    for node in reversed(_topological(root)):
        g = adjoint.pop(id(node), None)
        if g is None:
            continue
        if not node._parents:
            if node.requires_grad:
                grads[node] = g
                node.grad = g
            continue
        for parent, pg in zip(node._parents, node._backward(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = pg if prev is None else prev + pg
    return grads


# --------------------------------------------------------------------------
# finite-difference checking

@dataclass
class GradCheckReport:
    """Per-component comparison of analytic and central-difference gradients."""

    analytic: np.ndarray
    numeric: np.ndarray
    rel_error: np.ndarray
    skipped: np.ndarray
    eps: float
    rel_tol: float
    notes: list[str] = field(default_factory=list)

    @property
    def checked(self) -> int:
        return int((~self.skipped).sum())

    @property
    def flagged(self) -> np.ndarray:
        return np.flatnonzero((self.rel_error > self.rel_tol) & ~self.skipped)

    @property
    def max_rel_error(self) -> float:
        live = self.rel_error[~self.skipped]
        return float(live.max()) if live.size else 0.0

    @property
    def passed(self) -> bool:
        return self.checked > 0 and self.flagged.size == 0


def relative_error(a: np.ndarray, b: np.ndarray, floor: float = 1e-12) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return np.abs(a - b) / denom


def grad_check(fn: Callable[[Tensor], Tensor], x, eps: float = 1e-5, rel_tol: float = 1e-4,
               indices: Sequence[int] | None = None, floor: float = 1e-6,
               margin: float = 1.0) -> GradCheckReport:
    """Compare ``backward`` against ``(f(x+eps) - f(x-eps)) / (2 eps)`` per component.

    ``fn`` builds a scalar graph from its tensor argument.  A component is
    skipped (reported as near-breakpoint) when any piecewise op in ``fn``
    lands on a different segment at ``x +/- margin*eps`` than at ``x``.
    Relative errors divide by ``max(|analytic|, |numeric|, floor)``; the
    floor keeps exact-zero gradients from turning rounding noise into
    relative error 1.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    if margin < 1.0:
        raise ValueError("margin must be at least 1")
    x = np.array(x, dtype=np.float64)
    leaf = Tensor(x.copy(), requires_grad=True)
    with record_segments() as base_segments:
        out = fn(leaf)
    analytic_full = backward(out).get(leaf, np.zeros_like(x)).reshape(-1)

    flat = x.reshape(-1)
    idx = np.arange(flat.size) if indices is None else np.asarray(indices, dtype=int)
    numeric = np.zeros(idx.size)
    skipped = np.zeros(idx.size, dtype=bool)
    notes: list[str] = []
    for n, i in enumerate(idx):
        values = []
        for step in (eps, -eps):
            probe = flat.copy()
            probe[i] += step
            with record_segments() as segs:
                values.append(fn(Tensor(probe.reshape(x.shape))).item())
            if not _same_segments(segs, base_segments):
                skipped[n] = True
        if margin > 1.0 and not skipped[n]:
            for step in (margin * eps, -margin * eps):
                probe = flat.copy()
                probe[i] += step
                with record_segments() as segs:
                    fn(Tensor(probe.reshape(x.shape)))
                if not _same_segments(segs, base_segments):
                    skipped[n] = True
        if skipped[n]:
            notes.append(f"component {int(i)}: near-breakpoint, skipped")
        numeric[n] = (values[0] - values[1]) / (2 * eps)
    analytic = analytic_full[idx]
    rel = relative_error(analytic, numeric, floor)
    return GradCheckReport(analytic, numeric, rel, skipped, eps, rel_tol, notes)
