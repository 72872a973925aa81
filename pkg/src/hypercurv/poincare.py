"""Poincare-ball operations with positive curvature magnitude ``c``.

Two layers are provided.  The ``*_t`` functions work on :class:`Tensor`
rows (the last axis is the coordinate axis) and are differentiable; the model
code uses them.  The public functions wrap them for single points and
validate inputs through :class:`BallPoint` / :class:`TangentVector`.

Every geometric output is passed through :func:`project_to_ball`, keeping it
at least ``BALL_EPS`` away from the boundary in the sense
``c * ||x||^2 <= 1 - BALL_EPS``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import tensor as tn
from .tensor import Tensor, as_tensor

BALL_EPS = 1e-5
C_MIN = 1e-6
C_MAX = 1.0
MIN_NORM = 1e-15
_DEN_TOL = 1e-12
_BOUNDARY_TOL = 1e-12


class GeometryError(ValueError):
    """Base class for failures of ball arithmetic."""


class NearSingularError(GeometryError):
    """Moebius denominator too close to zero."""


class BoundaryError(GeometryError):
    """Argument of atanh reaches the ball boundary."""


def _check_c(c) -> float:
    c = float(c)
    if not np.isfinite(c) or c <= 0:
        raise GeometryError(f"curvature must be positive and finite, got {c}")
    return c


def _sqnorm(x: Tensor) -> Tensor:
    return (x * x).sum(axis=-1, keepdims=True)


def _norm(x: Tensor) -> Tensor:
    return tn.norm(x, axis=-1, keepdims=True)


# ------------------------------------------------------------ tensor layer

def project_t(v: Tensor, c: float) -> Tensor:
    v = as_tensor(v)
    c = _check_c(c)
    maxnorm = np.sqrt((1.0 - BALL_EPS) / c)
    n = _norm(v)
    if np.all(c * n.data**2 <= 1.0 - BALL_EPS):
        return v
    scale = tn.clamp(maxnorm / tn.clamp(n, lo=MIN_NORM), hi=1.0)
    return v * scale


def mobius_add_t(x: Tensor, y: Tensor, c: float, project: bool = True) -> Tensor:
    x, y = as_tensor(x), as_tensor(y)
    xy = (x * y).sum(axis=-1, keepdims=True)
    x2 = _sqnorm(x)
    y2 = _sqnorm(y)
    num = (1.0 + 2.0 * c * xy + c * y2) * x + (1.0 - c * x2) * y
    den = 1.0 + 2.0 * c * xy + (c * c) * x2 * y2
    if np.min(np.abs(den.data)) < _DEN_TOL:
        raise NearSingularError(f"Moebius denominator {np.min(np.abs(den.data)):.3e} below {_DEN_TOL}")
    out = num / den
    return project_t(out, c) if project else out


def expmap0_t(v: Tensor, c: float) -> Tensor:
    v = as_tensor(v)
    sc = np.sqrt(_check_c(c))
    n = tn.clamp(_norm(v), lo=MIN_NORM)
    return project_t(tn.tanh(sc * n) / (sc * n) * v, c)


def _atanh_checked(z: Tensor) -> Tensor:
    if np.max(z.data, initial=0.0) >= 1.0 - _BOUNDARY_TOL:
        raise BoundaryError(f"atanh argument {np.max(z.data):.15f} at the ball boundary")
    return tn.atanh(z)


def logmap0_t(x: Tensor, c: float) -> Tensor:
    x = as_tensor(x)
    sc = np.sqrt(_check_c(c))
    n = tn.clamp(_norm(x), lo=MIN_NORM)
    return _atanh_checked(sc * n) / (sc * n) * x


def lambda_t(y: Tensor, c: float) -> Tensor:
    """Conformal factor 2 / (1 - c ||y||^2)."""
    return 2.0 / (1.0 - c * _sqnorm(as_tensor(y)))


def expmap_t(y: Tensor, v: Tensor, c: float) -> Tensor:
    y, v = as_tensor(y), as_tensor(v)
    sc = np.sqrt(_check_c(c))
    n = tn.clamp(_norm(v), lo=MIN_NORM)
    step = tn.tanh(sc * lambda_t(y, c) * n / 2.0) / (sc * n) * v
    return mobius_add_t(y, step, c)


def logmap_t(y: Tensor, x: Tensor, c: float) -> Tensor:
    y, x = as_tensor(y), as_tensor(x)
    sc = np.sqrt(_check_c(c))
    sub = mobius_add_t(-y, x, c)
    n = tn.clamp(_norm(sub), lo=MIN_NORM)
    return 2.0 / (sc * lambda_t(y, c)) * _atanh_checked(sc * n) / n * sub


def distance_t(x: Tensor, y: Tensor, c: float) -> Tensor:
    sc = np.sqrt(_check_c(c))
    sub = mobius_add_t(-as_tensor(x), as_tensor(y), c)
    return (2.0 / sc) * _atanh_checked(sc * tn.norm(sub, axis=-1))


def clip_features_t(v: Tensor, r: float) -> Tensor:
    v = as_tensor(v)
    n = tn.clamp(_norm(v), lo=MIN_NORM)
    return v * tn.clamp(r / n, hi=1.0)


# ------------------------------------------------------------ point layer

@dataclass(frozen=True, eq=False)
class BallPoint:
    """A point of the ball ``{x : c ||x||^2 < 1}``."""

    coords: np.ndarray
    c: float

    def __post_init__(self):
        x = np.array(self.coords, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(x)):
            raise GeometryError("ball point has non-finite coordinates")
        c = _check_c(self.c)
        if c * float(x @ x) > (1.0 - BALL_EPS) * (1.0 + 1e-12):
            raise GeometryError(
                f"c*||x||^2 = {c * float(x @ x):.9f} exceeds 1 - {BALL_EPS}"
            )
        x.setflags(write=False)
        object.__setattr__(self, "coords", x)
        object.__setattr__(self, "c", c)

    @property
    def dim(self) -> int:
        return self.coords.shape[0]

    @classmethod
    def origin(cls, dim: int, c: float) -> "BallPoint":
        return cls(np.zeros(dim), c)

    def __neg__(self) -> "BallPoint":
        return BallPoint(-self.coords, self.c)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BallPoint)
            and self.c == other.c
            and np.array_equal(self.coords, other.coords)
        )

    def __hash__(self) -> int:
        return hash((self.c, self.coords.tobytes()))


@dataclass(frozen=True, eq=False)
class TangentVector:
    """Vector of the tangent space at ``base``."""

    coords: np.ndarray
    base: BallPoint = field(repr=False)

    def __post_init__(self):
        v = np.array(self.coords, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(v)):
            raise GeometryError("tangent vector has non-finite coordinates")
        if not isinstance(self.base, BallPoint):
            raise GeometryError("tangent vector base must be a BallPoint")
        if v.shape != self.base.coords.shape:
            raise GeometryError("tangent vector and base differ in dimension")
        v.setflags(write=False)
        object.__setattr__(self, "coords", v)


def _same_c(x: BallPoint, y: BallPoint) -> float:
    if x.c != y.c:
        raise GeometryError(f"curvature mismatch: {x.c} vs {y.c}")
    return x.c


def _arr(t: Tensor) -> np.ndarray:
    return np.array(t.data)


def project_to_ball(v, c: float) -> BallPoint:
    return BallPoint(_arr(project_t(Tensor(np.reshape(v, -1)), c)), c)


def mobius_add(x: BallPoint, y: BallPoint) -> BallPoint:
    c = _same_c(x, y)
    return BallPoint(_arr(mobius_add_t(Tensor(x.coords), Tensor(y.coords), c)), c)


def expmap0(v, c: float) -> BallPoint:
    return BallPoint(_arr(expmap0_t(Tensor(np.reshape(v, -1)), c)), c)


def expmap(y: BallPoint, v: TangentVector) -> BallPoint:
    if v.base != y:
        raise GeometryError("tangent vector is not based at y")
    if np.linalg.norm(v.coords) < 1e-12:
        return y
    return BallPoint(_arr(expmap_t(Tensor(y.coords), Tensor(v.coords), y.c)), y.c)


def logmap(y: BallPoint, x: BallPoint) -> TangentVector:
    c = _same_c(x, y)
    if np.array_equal(x.coords, y.coords):
        return TangentVector(np.zeros_like(y.coords), y)
    return TangentVector(_arr(logmap_t(Tensor(y.coords), Tensor(x.coords), c)), y)


def logmap0(x: BallPoint) -> np.ndarray:
    return _arr(logmap0_t(Tensor(x.coords), x.c))


def distance(x: BallPoint, y: BallPoint) -> float:
    c = _same_c(x, y)
    if np.array_equal(x.coords, y.coords):
        return 0.0
    return float(distance_t(Tensor(x.coords), Tensor(y.coords), c).item())


def clip_features(v, r: float) -> np.ndarray:
    if r <= 0:
        raise ValueError(f"clip radius must be positive, got {r}")
    v = np.asarray(v, dtype=np.float64)
    n = np.linalg.norm(v, axis=-1, keepdims=True)
    return v * np.minimum(1.0, r / np.maximum(n, MIN_NORM))
