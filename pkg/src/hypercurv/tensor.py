"""Dense float64 tensors with tape-based reverse-mode differentiation.

A :class:`GradTape` records every primitive executed while it is active and
replays the record backwards to produce gradients.  Vector-Jacobian rules are
written with the same tensor primitives, so a gradient computed with
``create_graph=True`` is itself recorded by any enclosing tape, which is how
analytic Hessian-vector products are obtained.

Second-order quantities used by the optimisation code default to finite
differences of first-order gradients (see :func:`hvp` and
:func:`mixed_partial_c`).
"""
from __future__ import annotations

import math
import threading
from typing import Callable, Sequence

import numpy as np

__all__ = [
    "Tensor",
    "GradTape",
    "TensorError",
    "ConfigurationError",
    "ContractViolation",
    "DegenerateDirectionError",
    "DomainError",
    "as_tensor",
    "constant",
    "grad",
    "value_and_grad",
    "hvp",
    "mixed_partial_c",
    "no_record",
    "tanh",
    "atanh",
    "asinh",
    "acosh",
    "exp",
    "log",
    "sqrt",
    "power",
    "clamp",
    "norm",
    "dot",
    "matmul",
    "concat",
    "logsumexp",
]


class TensorError(Exception):
    """Base class for tensor-core failures."""


class ConfigurationError(TensorError):
    """A function used something the tape cannot differentiate."""


class ContractViolation(TensorError):
    """A caller broke a documented precondition (e.g. non-scalar loss)."""


class DegenerateDirectionError(TensorError):
    """Direction vector too small for a directional derivative."""


class DomainError(TensorError):
    """Argument outside the domain where the operation is defined."""


_NORM_FLOOR = 1e-300
_local = threading.local()


def _tapes() -> list["GradTape"]:
    stack = getattr(_local, "tapes", None)
    if stack is None:
        stack = _local.tapes = []
    return stack


def _suspended() -> int:
    return getattr(_local, "suspended", 0)


class no_record:
    """Context manager that stops all tapes of this thread from recording."""

    def __enter__(self):
        _local.suspended = _suspended() + 1
        return self

    def __exit__(self, *exc):
        _local.suspended = _suspended() - 1
        return False


class Tensor:
    """Immutable dense array of 64-bit reals (rank 0, 1 or 2)."""

    __slots__ = ("_data", "requires_grad", "grad", "__weakref__")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad: bool = False):
        arr = np.array(data, dtype=np.float64)
        if arr.ndim > 2:
            raise ContractViolation(f"rank {arr.ndim} tensors are not supported")
        arr.setflags(write=False)
        self._data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None

    @classmethod
    def _wrap(cls, arr: np.ndarray) -> "Tensor":
        t = object.__new__(cls)
        if type(arr) is not np.ndarray or arr.dtype != np.float64:
            arr = np.asarray(arr, dtype=np.float64)
        if arr.ndim > 2:
            raise ContractViolation(f"rank {arr.ndim} tensors are not supported")
        if arr.flags.writeable:
            arr.setflags(write=False)
        t._data = arr
        t.requires_grad = False
        t.grad = None
        return t

    @property
    def data(self) -> np.ndarray:
        return self._data

    @property
    def shape(self) -> tuple[int, ...]:
        return self._data.shape

    @property
    def ndim(self) -> int:
        return self._data.ndim

    @property
    def size(self) -> int:
        return self._data.size

    def numpy(self) -> np.ndarray:
        return np.array(self._data)

    def item(self) -> float:
        return float(self._data.reshape(-1)[0]) if self.size == 1 else _raise_item(self)

    def __float__(self) -> float:
        return self.item()

    def __len__(self) -> int:
        return len(self._data)

    def __repr__(self) -> str:
        return f"Tensor({np.array2string(self._data, precision=6)})"

    # numpy interop: arithmetic ufuncs are routed back to tape primitives,
    # anything else cannot be differentiated.
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        table = {
            np.add: _add,
            np.subtract: _sub,
            np.multiply: _mul,
            np.true_divide: _div,
        }
        if method == "__call__" and not kwargs:
            if ufunc in table and len(inputs) == 2:
                return table[ufunc](as_tensor(inputs[0]), as_tensor(inputs[1]))
            if ufunc is np.negative:
                return _neg(as_tensor(inputs[0]))
        raise ConfigurationError(
            f"unsupported primitive numpy.{ufunc.__name__} on Tensor; "
            "use the functions in hypercurv.tensor"
        )

    def __add__(self, other):
        return _add(self, as_tensor(other))

    def __radd__(self, other):
        return _add(as_tensor(other), self)

    def __sub__(self, other):
        return _sub(self, as_tensor(other))

    def __rsub__(self, other):
        return _sub(as_tensor(other), self)

    def __mul__(self, other):
        return _mul(self, as_tensor(other))

    def __rmul__(self, other):
        return _mul(as_tensor(other), self)

    def __truediv__(self, other):
        return _div(self, as_tensor(other))

    def __rtruediv__(self, other):
        return _div(as_tensor(other), self)

    def __neg__(self):
        return _neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, as_tensor(other))

    def __rmatmul__(self, other):
        return matmul(as_tensor(other), self)

    def __getitem__(self, idx):
        return _getitem(self, idx)

    @property
    def T(self) -> "Tensor":
        return _transpose(self)

    def sum(self, axis=None, keepdims: bool = False) -> "Tensor":
        return _sum(self, axis, keepdims)

    def mean(self, axis=None, keepdims: bool = False) -> "Tensor":
        n = self.size if axis is None else self.shape[axis]
        return _sum(self, axis, keepdims) / float(n)

    def reshape(self, *shape) -> "Tensor":
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return _reshape(self, shape)


def _raise_item(t: Tensor):
    raise ContractViolation(f"item() needs a single element, got shape {t.shape}")


def as_tensor(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor._wrap(np.array(x, dtype=np.float64))


def constant(x) -> Tensor:
    """Tensor that never carries gradient, even inside a tape."""
    return Tensor._wrap(np.array(x.data if isinstance(x, Tensor) else x, dtype=np.float64))


class _Node:
    __slots__ = ("out", "inputs", "vjp", "forward")

    def __init__(self, out, inputs, vjp, forward):
        self.out = out
        self.inputs = inputs
        self.vjp = vjp
        self.forward = forward


class GradTape:
    """Ordered record of primitives for one reverse-mode pass.

    Use as a context manager, ``watch`` the sources, evaluate the function,
    then call :meth:`gradient` once.  Tensors created with
    ``requires_grad=True`` are watched automatically.
    """

    def __init__(self):
        self._nodes: list[_Node] = []
        self._tracked: dict[int, Tensor] = {}
        self._consumed = False
        self._paused = False

    def __enter__(self) -> "GradTape":
        _tapes().append(self)
        return self

    def __exit__(self, *exc):
        stack = _tapes()
        if stack and stack[-1] is self:
            stack.pop()
        else:
            stack.remove(self)
        return False

    def __len__(self) -> int:
        return len(self._nodes)

    def watch(self, t: Tensor) -> None:
        self._tracked[id(t)] = t

    def is_tracked(self, t: Tensor) -> bool:
        return id(t) in self._tracked

    def _record(self, out: Tensor, inputs: tuple, vjp, forward) -> None:
        hit = False
        for t in inputs:
            if id(t) in self._tracked:
                hit = True
            elif t.requires_grad:
                self._tracked[id(t)] = t
                hit = True
        if hit:
            self._tracked[id(out)] = out
            self._nodes.append(_Node(out, inputs, vjp, forward))

    def replay(self) -> np.ndarray:
        """Recompute the recorded forward pass; returns the last output."""
        if not self._nodes:
            raise TensorError("empty tape")
        env: dict[int, np.ndarray] = {}
        val = None
        for node in self._nodes:
            args = [env.get(id(t), t.data) for t in node.inputs]
            val = np.asarray(node.forward(*args), dtype=np.float64)
            env[id(node.out)] = val
        return val

    def gradient(self, target: Tensor, sources, create_graph: bool = False):
        if self._consumed:
            raise TensorError("tape already consumed by a backward pass")
        if not isinstance(target, Tensor):
            raise ConfigurationError(f"target is {type(target).__name__}, not a Tensor")
        if target.size != 1:
            raise ContractViolation(f"gradient needs a scalar target, got shape {target.shape}")
        single = isinstance(sources, Tensor)
        srcs = [sources] if single else list(sources)
        self._consumed = True
        self._paused = True
        guard = no_record() if not create_graph else _NullCtx()
        with guard:
            grads: dict[int, Tensor] = {}
            if id(target) in self._tracked:
                grads[id(target)] = Tensor._wrap(np.ones(target.shape))
            for node in reversed(self._nodes):
                g = grads.get(id(node.out))
                if g is None:
                    continue
                in_grads = node.vjp(g)
                for t, gi in zip(node.inputs, in_grads):
                    if gi is None or id(t) not in self._tracked:
                        continue
                    prev = grads.get(id(t))
                    grads[id(t)] = gi if prev is None else prev + gi
            out = []
            for s in srcs:
                g = grads.get(id(s))
                out.append(g if g is not None else Tensor._wrap(np.zeros(s.shape)))
        self._nodes = []
        return out[0] if single else out


class _NullCtx:
    def __enter__(self):
        return self

    def __exit__(self, *exc):
        return False


def _make(value, inputs: tuple, vjp, forward) -> Tensor:
    out = Tensor._wrap(value)
    if _suspended():
        return out
    for tape in _tapes():
        if not tape._paused:
            tape._record(out, inputs, vjp, forward)
    return out


# --------------------------------------------------------------- primitives

def _unbroadcast(g: Tensor, shape: tuple) -> Tensor:
    if g.shape == shape:
        return g
    while g.ndim > len(shape):
        g = _sum(g, 0, False)
    for axis, n in enumerate(shape):
        if n == 1 and g.shape[axis] != 1:
            g = _sum(g, axis, True)
    return g if g.shape == shape else _reshape(g, shape)


def _add(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data + b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)),
        np.add,
    )


def _sub(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data - b.data, (a, b),
        lambda g: (_unbroadcast(g, a.shape), _unbroadcast(_neg(g), b.shape)),
        np.subtract,
    )


def _mul(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data * b.data, (a, b),
        lambda g: (_unbroadcast(g * b, a.shape), _unbroadcast(g * a, b.shape)),
        np.multiply,
    )


def _div(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data / b.data, (a, b),
        lambda g: (
            _unbroadcast(g / b, a.shape),
            _unbroadcast(_neg(g * a / (b * b)), b.shape),
        ),
        np.divide,
    )


def _neg(a: Tensor) -> Tensor:
    return _make(-a.data, (a,), lambda g: (_neg(g),), np.negative)


def _matmul2(a: Tensor, b: Tensor) -> Tensor:
    return _make(
        a.data @ b.data, (a, b),
        lambda g: (_matmul2(g, _transpose(b)), _matmul2(_transpose(a), g)),
        np.matmul,
    )


def _transpose(a: Tensor) -> Tensor:
    return _make(a.data.T, (a,), lambda g: (_transpose(g),), np.transpose)


def _sum(a: Tensor, axis, keepdims: bool) -> Tensor:
    shape = a.shape

    def vjp(g):
        if axis is None:
            kshape = (1,) * len(shape)
        else:
            kshape = tuple(1 if i == axis % len(shape) else n for i, n in enumerate(shape))
        return (_reshape(g, kshape) * Tensor._wrap(np.ones(shape)),)

    return _make(
        np.sum(a.data, axis=axis, keepdims=keepdims), (a,), vjp,
        lambda x: np.sum(x, axis=axis, keepdims=keepdims),
    )


def _reshape(a: Tensor, shape: tuple) -> Tensor:
    src = a.shape
    return _make(
        a.data.reshape(shape), (a,), lambda g: (_reshape(g, src),),
        lambda x: x.reshape(shape),
    )


def _getitem(a: Tensor, idx) -> Tensor:
    src = a.shape
    return _make(
        a.data[idx], (a,), lambda g: (_scatter(g, idx, src),),
        lambda x: x[idx],
    )


def _scatter(g: Tensor, idx, shape: tuple) -> Tensor:
    def fwd(x):
        z = np.zeros(shape)
        z[idx] = x
        return z

    return _make(fwd(g.data), (g,), lambda gg: (_getitem(gg, idx),), fwd)


def concat(parts: Sequence[Tensor], axis: int = 0) -> Tensor:
    parts = tuple(as_tensor(p) for p in parts)
    sizes = [p.shape[axis] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def vjp(g):
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(int(lo), int(hi))
            out.append(_getitem(g, tuple(sl)))
        return tuple(out)

    return _make(
        np.concatenate([p.data for p in parts], axis=axis), parts, vjp,
        lambda *xs: np.concatenate(xs, axis=axis),
    )


def matmul(a, b) -> Tensor:
    """Matrix product for rank-1/rank-2 operands."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim == 0 or b.ndim == 0:
        raise ContractViolation("matmul needs rank >= 1 operands")
    a2 = a if a.ndim == 2 else _reshape(a, (1, a.shape[0]))
    b2 = b if b.ndim == 2 else _reshape(b, (b.shape[0], 1))
    out = _matmul2(a2, b2)
    if a.ndim == 1 and b.ndim == 1:
        return _reshape(out, ())
    if a.ndim == 1:
        return _reshape(out, (b.shape[1],))
    if b.ndim == 1:
        return _reshape(out, (a.shape[0],))
    return out


def dot(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _sum(_mul(a, b), None, False)


def exp(a) -> Tensor:
    a = as_tensor(a)
    out_holder = []

    def vjp(g):
        return (g * out_holder[0],)

    out = _make(np.exp(a.data), (a,), vjp, np.exp)
    out_holder.append(out)
    return out


def log(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.log(a.data), (a,), lambda g: (g / a,), np.log)


def tanh(a) -> Tensor:
    a = as_tensor(a)
    out_holder = []

    def vjp(g):
        t = out_holder[0]
        return (g * (1.0 - t * t),)

    out = _make(np.tanh(a.data), (a,), vjp, np.tanh)
    out_holder.append(out)
    return out


def atanh(a) -> Tensor:
    a = as_tensor(a)
    return _make(np.arctanh(a.data), (a,), lambda g: (g / (1.0 - a * a),), np.arctanh)


def asinh(a) -> Tensor:
    a = as_tensor(a)
    return _make(
        np.arcsinh(a.data), (a,), lambda g: (g / sqrt(a * a + 1.0),), np.arcsinh
    )


def acosh(a) -> Tensor:
    a = as_tensor(a)
    return _make(
        np.arccosh(a.data), (a,), lambda g: (g / sqrt(a * a - 1.0),), np.arccosh
    )


def power(a, p: float) -> Tensor:
    """Elementwise ``a ** p`` for a constant real exponent."""
    a = as_tensor(a)
    if isinstance(p, Tensor):
        raise ConfigurationError("power() takes a constant exponent")
    p = float(p)
    if p == 1.0:
        return a

    def vjp(g):
        if p == 2.0:
            return (g * a * 2.0,)
        return (g * power(a, p - 1.0) * p,)

    return _make(np.power(a.data, p), (a,), vjp, lambda x: np.power(x, p))


def sqrt(a) -> Tensor:
    return power(a, 0.5)


def clamp(a, lo: float | None = None, hi: float | None = None) -> Tensor:
    """Clip into ``[lo, hi]``; gradient passes only where the input is inside."""
    a = as_tensor(a)
    lo_v = -np.inf if lo is None else float(lo)
    hi_v = np.inf if hi is None else float(hi)

    def vjp(g):
        mask = ((a.data >= lo_v) & (a.data <= hi_v)).astype(np.float64)
        return (g * Tensor._wrap(mask),)

    return _make(
        np.clip(a.data, lo_v, hi_v), (a,), vjp, lambda x: np.clip(x, lo_v, hi_v)
    )


def norm(a, axis: int | None = None, keepdims: bool = False) -> Tensor:
    """Euclidean norm; the gradient at the origin is taken as zero."""
    a = as_tensor(a)

    def fwd(x):
        return np.sqrt(np.sum(x * x, axis=axis, keepdims=keepdims))

    out_holder = []

    def vjp(g):
        n = out_holder[0]
        if axis is None:
            kshape = (1,) * a.ndim
        else:
            kshape = tuple(1 if i == axis % a.ndim else s for i, s in enumerate(a.shape))
        gk = _reshape(g, kshape)
        nk = _reshape(n, kshape)
        # where the norm vanishes the numerator is zero too; dividing by one
        # instead of the floor keeps second derivatives finite
        pad = constant(np.where(nk.data < _NORM_FLOOR, 1.0, 0.0))
        return (gk * a / (nk + pad),)

    out = _make(fwd(a.data), (a,), vjp, fwd)
    out_holder.append(out)
    return out


def logsumexp(a, axis: int = -1, keepdims: bool = False) -> Tensor:
    a = as_tensor(a)
    shift = constant(np.max(a.data, axis=axis, keepdims=True))
    s = log(_sum(exp(a - shift), axis, True)) + shift
    return s if keepdims else _reshape(s, np.squeeze(s.data, axis=axis).shape)


# ------------------------------------------------------------- derivatives

def _scalar_output(y) -> Tensor:
    if not isinstance(y, Tensor):
        raise ConfigurationError(
            f"function returned {type(y).__name__}; it must be built from Tensor primitives"
        )
    if y.size != 1:
        raise ContractViolation(f"function must return a scalar, got shape {y.shape}")
    return y


def grad(f: Callable, w, *args, create_graph: bool = False) -> Tensor:
    """Gradient of scalar ``f(w, *args)`` with respect to ``w``."""
    w = as_tensor(w) if not isinstance(w, Tensor) else w
    if not np.all(np.isfinite(w.data)):
        raise DomainError("non-finite input to grad")
    with GradTape() as tape:
        tape.watch(w)
        y = _scalar_output(f(w, *args))
    return tape.gradient(y, w, create_graph=create_graph)


def value_and_grad(f: Callable, w, *args) -> tuple[float, np.ndarray]:
    w = as_tensor(w)
    with GradTape() as tape:
        tape.watch(w)
        y = _scalar_output(f(w, *args))
    g = tape.gradient(y, w)
    return y.item(), g.numpy()


def fd_step(w) -> float:
    """Finite-difference step for parameters: max(1e-5, 1e-5 * ||w||)."""
    return max(1e-5, 1e-5 * float(np.linalg.norm(np.asarray(w.data if isinstance(w, Tensor) else w))))


def hvp(f: Callable, w, v, *args, mode: str = "fd") -> Tensor:
    """Hessian-vector product ``H v`` of scalar ``f`` at ``w``.

    ``mode="fd"`` uses central differences of gradients along ``v``;
    ``mode="analytic"`` differentiates the recorded gradient a second time.
    """
    w = as_tensor(w)
    v = as_tensor(v)
    vn = float(np.linalg.norm(v.data))
    if vn < 1e-12:
        raise DegenerateDirectionError(f"direction norm {vn:.3e} below 1e-12")
    if mode == "analytic":
        w_src = Tensor._wrap(w.data)
        with GradTape() as outer:
            outer.watch(w_src)
            with GradTape() as inner:
                inner.watch(w_src)
                y = _scalar_output(f(w_src, *args))
            g = inner.gradient(y, w_src, create_graph=True)
            gv = dot(g, constant(v))
        return Tensor._wrap(outer.gradient(gv, w_src).data)
    if mode != "fd":
        raise ConfigurationError(f"unknown hvp mode {mode!r}")
    h = fd_step(w)
    u = v.data / vn
    gp = grad(f, Tensor._wrap(w.data + h * u), *args).data
    gm = grad(f, Tensor._wrap(w.data - h * u), *args).data
    return Tensor._wrap((gp - gm) / (2.0 * h) * vn)


def c_step(c: float) -> float:
    """Finite-difference step for curvature: max(1e-6, 1e-4 * c)."""
    return max(1e-6, 1e-4 * c)


def mixed_partial_c(f: Callable, w, c: float, one_sided: bool = False) -> Tensor:
    """``d/dc grad_w f(w, c)`` by central differences in ``c``.

    With ``one_sided=True`` a forward difference is used instead of raising
    when ``c - dc`` would not be positive.
    """
    c = float(c)
    if not math.isfinite(c) or c <= 0:
        raise DomainError(f"curvature {c} is not positive")
    dc = c_step(c)
    w = as_tensor(w)
    gp = grad(f, Tensor._wrap(w.data), c + dc).data
    if c - dc <= 0:
        if not one_sided:
            raise DomainError(f"c - dc = {c - dc:.3e} leaves the positive-curvature domain")
        g0 = grad(f, Tensor._wrap(w.data), c).data
        return Tensor._wrap((gp - g0) / dc)
    gm = grad(f, Tensor._wrap(w.data), c - dc).data
    return Tensor._wrap((gp - gm) / (2.0 * dc))
