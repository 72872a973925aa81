"""Lipschitz and bound constants of ball operations, with an empirical checker.

Each ``const_*`` function evaluates the closed-form constant for a
:class:`LipschitzContext`.  Two variants exist for most constants:

* ``form="general"`` uses the actual vectors (norms and inner products);
* ``form="angular"`` uses only the curvature and the angle bound
  ``cos(theta) >= cos_theta_bound`` (for maps: the ball-constraint form).

Composite constants take their building blocks from the context when
supplied (``L_oplus_x`` etc.) and compute them otherwise.

:func:`verify_inequality` samples random instances, evaluates the left-hand
side with :mod:`hypercurv.poincare` and the right-hand side with the matching
general-form constant, and counts violations.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from . import poincare as pc

THEOREMS = ("mobius_c", "mobius_y", "mobius_x", "expmap_y", "expmap_x", "logmap_y", "tangent")
DEFAULT_CURVATURES = (1e-3, 1e-1, 1.0)
MAX_REJECTIONS = 10_000
_REL_SLACK = 1e-9


class DegenerateContextError(ValueError):
    pass


class SamplerError(RuntimeError):
    pass


@dataclass
class LipschitzContext:
    """Inputs of the closed-form constants.

    Vectors are optional; only those used by a given constant need to be
    set.  ``L_oplus_*``, ``L_expm_*`` and ``L_logm_y`` override the
    corresponding building blocks in composite constants.
    """

    c: float = 1.0
    c1: Optional[float] = None
    c2: Optional[float] = None
    x: Optional[np.ndarray] = None
    y: Optional[np.ndarray] = None
    x1: Optional[np.ndarray] = None
    x2: Optional[np.ndarray] = None
    y1: Optional[np.ndarray] = None
    y2: Optional[np.ndarray] = None
    cos_theta_bound: float = 0.0
    L_f: float = 1.0
    L_L: float = 1.0
    L_p: float = 1.0
    a_norm: float = 1.0
    rho: float = 0.05
    N_tilde: Optional[float] = None
    L_oplus_x: Optional[float] = None
    L_oplus_y: Optional[float] = None
    L_expm_y: Optional[float] = None
    L_expm_x: Optional[float] = None
    L_logm_y: Optional[float] = None

    def __post_init__(self):
        if not self.c > 0:
            raise DegenerateContextError("curvature must be positive")
        if not -1.0 < self.cos_theta_bound < 1.0:
            raise DegenerateContextError("cos_theta_bound must lie in (-1, 1)")
        for k in ("x", "y", "x1", "x2", "y1", "y2"):
            v = getattr(self, k)
            if v is not None:
                setattr(self, k, np.atleast_1d(np.asarray(v, dtype=np.float64)))


def _need(ctx, *names):
    for n in names:
        if getattr(ctx, n) is None:
            raise DegenerateContextError(f"context is missing '{n}'")
    return [getattr(ctx, n) for n in names]


def _nrm(v) -> float:
    return float(np.linalg.norm(v))


def _N(c, x, y) -> float:
    val = abs(1.0 + 2.0 * c * float(x @ y) + c * c * float(x @ x) * float(y @ y))
    if val < 1e-12:
        raise DegenerateContextError(f"denominator {val:.3e} below 1e-12")
    return val


def _ang(ctx) -> float:
    return (1.0 - ctx.cos_theta_bound ** 2) ** 2


# ------------------------------------------------------------ Moebius addition

def const_mobius_c(ctx: LipschitzContext, form: str = "general") -> tuple[float, float]:
    """``(L_oplus_c, L_oplus_c0)``: sensitivity to curvature and distance to x + y."""
    if form == "angular":
        c = ctx.c
        c1, c2 = (ctx.c1 if ctx.c1 is not None else c), (ctx.c2 if ctx.c2 is not None else c)
        Lc = abs(c2 - c1) * (6 / c**1.5 + 2 / c + 4 * c1 * c2 / c**3.5 + 2 * (c1 + c2) / c**2.5) / _ang(ctx)
        Lc0 = (8 / math.sqrt(c) + 2) / _ang(ctx)
        return Lc, Lc0
    x, y = _need(ctx, "x", "y")
    X, Y = _nrm(x), _nrm(y)
    c = ctx.c
    Lc = float("nan")
    if ctx.c1 is not None and ctx.c2 is not None:
        c1, c2 = ctx.c1, ctx.c2
        num = (2 * X * Y + 3 * X**2 * Y + 2 * X * Y**2
               + (c1 + c2) * X**2 * Y**3 + (c1 + c2) * X**3 * Y**2
               + c1 * c2 * X**3 * Y**4 + 3 * c1 * c2 * X**4 * Y**3)
        Lc = num / (_N(c1, x, y) * _N(c2, x, y))
    num0 = (2 * c * X * Y + 3 * c * X**2 * Y + 2 * c * X * Y**2
            + c**2 * X**2 * Y**3 + c**2 * X**3 * Y**2)
    return Lc, num0 / _N(c, x, y)


def const_mobius_y(ctx: LipschitzContext, form: str = "general") -> float:
    """Sensitivity of ``x (+) y`` to the right argument."""
    if form == "angular":
        return 48.0 / _ang(ctx)
    x, y1, y2 = _need(ctx, "x", "y1", "y2")
    c = ctx.c
    X, A, B = _nrm(x), _nrm(y1), _nrm(y2)
    num = (1 + c * (5 * X**2 + 5 * X * A + X * B)
           + c**2 * X**2 * (13 * X * A + X * B + 6 * A**2 + 3 * A * B)
           + c**3 * X**3 * (6 * X * A**2 + 3 * X * A * B + 2 * A**3 + 2 * A**2 * B))
    return num / (_N(c, x, y1) * _N(c, x, y2))


def const_mobius_x(ctx: LipschitzContext, form: str = "general") -> float:
    """Sensitivity of ``x (+) y`` to the left argument."""
    if form == "angular":
        return 44.0 / _ang(ctx)
    x1, x2, y = _need(ctx, "x1", "x2", "y")
    c = ctx.c
    P, Q, Y = _nrm(x1), _nrm(x2), _nrm(y)
    num = (1 + 3 * c * Y**2 + 3 * c * P * Y + 7 * c * Q * Y
           + c**2 * Y**2 * (7 * P * Q + P * Y + 5 * Q * Y + 6 * Q**2)
           + c**3 * Q * Y**3 * (4 * P**2 + 4 * P * Q + 2 * Q * Y + P * Y))
    return num / (_N(c, x1, y) * _N(c, x2, y))


# ------------------------------------------------------------ exp / log maps

def _block(ctx, name, fn, form):
    v = getattr(ctx, name)
    return fn(ctx, form) if v is None else float(v)


def const_expmap(ctx: LipschitzContext, form: str = "general") -> tuple[float, float]:
    """``(L_expm_y, L_expm_x)``.

    ``L_expm_y`` reads ``x`` (tangent vector) and ``y1``, ``y2``;
    ``L_expm_x`` reads ``y`` (base) and ``x2``.
    """
    c = ctx.c
    sc = math.sqrt(c)
    Ly = _block(ctx, "L_oplus_y", const_mobius_y, form)
    Lx = _block(ctx, "L_oplus_x", const_mobius_x, form)
    out_y = out_x = float("nan")
    if ctx.x is not None:
        X = _nrm(ctx.x)
        if form == "general":
            y1, y2 = _need(ctx, "y1", "y2")
            out_y = Ly * c * X * (_nrm(y1) + _nrm(y2)) / (1 - sc) ** 2 + Lx if sc != 1 else math.inf
        else:
            out_y = 2 * sc * Ly * X / (1 - sc) ** 2 + Lx if sc != 1 else math.inf
    if ctx.x2 is not None:
        Q = _nrm(ctx.x2)
        if Q == 0:
            raise DegenerateContextError("||x2|| must be positive")
        if form == "general":
            (y,) = _need(ctx, "y")
            k = 1.0 - c * float(y @ y)
            out_x = Ly * (abs(1.0 / k) + 2 * math.tanh(sc * Q / k) / (sc * Q))
        else:
            out_x = (Ly * abs(1.0 / (1 - sc)) if sc != 1 else math.inf) + 2 * Ly / (sc * Q)
    return out_y, out_x


def const_logmap_y(ctx: LipschitzContext, form: str = "general") -> float:
    """Sensitivity of ``logm_y(x)`` to the base point ``y``."""
    sc = math.sqrt(ctx.c)
    Lx = _block(ctx, "L_oplus_x", const_mobius_x, form)
    if form == "angular":
        return 4 * Lx + 0.5 + sc * Lx
    x, y1, y2 = _need(ctx, "x", "y1", "y2")
    return Lx * (1 + ctx.c * _nrm(x) * _nrm(y1)) ** 2 + sc / 4 * _nrm(y1 + y2) + sc * Lx


def _inner_sum(ctx, form, a_norm):
    Ley = ctx.L_expm_y
    Lex = ctx.L_expm_x
    if Ley is None or Lex is None:
        ey, ex = const_expmap(ctx, form)
        Ley = ey if Ley is None else Ley
        Lex = ex if Lex is None else Lex
    Llg = _block(ctx, "L_logm_y", const_logmap_y, form)
    return Ley + Lex * ctx.L_f * Llg * a_norm


def const_tangent(ctx: LipschitzContext, form: str = "general") -> tuple[float, float]:
    """``(L_tangent, E_ly)``.

    ``E_ly`` uses ``||y||`` in the general form and ``1/c`` in the
    ball-constraint form.
    """
    Lx = _block(ctx, "L_oplus_x", const_mobius_x, form)
    S = _inner_sum(ctx, form, ctx.a_norm)
    L_tan = ctx.L_L * Lx * S
    if form == "general":
        yn = _nrm(ctx.y) if ctx.y is not None else (_nrm(ctx.y1) if ctx.y1 is not None else float("nan"))
        E_ly = ctx.L_L * Lx * yn * S
    else:
        E_ly = ctx.L_L * Lx * S / ctx.c
    return L_tan, E_ly


def tangent_limit(ctx: LipschitzContext) -> float:
    """Stated small-curvature value ``L_L + L_L L_f ||a||``."""
    return ctx.L_L + ctx.L_L * ctx.L_f * ctx.a_norm


@dataclass
class BoundTerms:
    E_lgen_prime: float
    E_lc: float
    E_lc_prime: float
    E_ly_prime: float
    E_ly: float
    E_lgen: float

    def to_dict(self) -> dict:
        return asdict(self)


def e_lgen_prime(n: int, d: int, delta: float, w_norm: float, rho: float) -> float:
    """PAC-Bayes radical with the parameter-norm term."""
    if n < 2 or d < 1 or not 0 < delta < 1:
        raise ValueError("need n >= 2, d >= 1 and 0 < delta < 1")
    inner = (1 + w_norm**2 / rho**2 * (1 + math.sqrt(math.log(n) / d)) ** 2)
    num = d * math.log(inner) + 4 * math.log(n / delta) + 8 * math.log(6 * n + 3 * d)
    return math.sqrt(num / (n - 1))


def bound_terms(ctx: LipschitzContext, n: int, d: int, delta: float, w_norm: float,
                form: str = "angular") -> BoundTerms:
    """All additive constants of the generalization bound.

    The geometric pieces use ``form`` (default: the curvature-only form,
    since the bound is stated over the whole ball).
    """
    Ep = e_lgen_prime(n, d, delta, w_norm, ctx.rho)
    _, Lc0 = const_mobius_c(ctx, form)
    Lx = _block(ctx, "L_oplus_x", const_mobius_x, form)
    c = ctx.c
    t = math.atanh(c ** 0.25) / math.sqrt(c) if c < 1 else math.inf
    E_lc = ctx.L_L * Lc0 + ctx.L_L * Lx * ctx.a_norm * t * (ctx.L_f + 1)
    E_lc_p = ctx.L_L * Lc0 + ctx.L_L * Lx * t * (ctx.L_f + 1) * (ctx.a_norm + ctx.rho)
    E_ly_p = ctx.L_L * Lx / c * _inner_sum(ctx, form, ctx.a_norm + ctx.rho)
    _, E_ly = const_tangent(ctx, form)
    return BoundTerms(Ep, E_lc, E_lc_p, E_ly_p, E_ly, Ep + E_ly + E_lc + E_ly_p + E_lc_p)


# ---------------------------------------------------------------- verifier

@dataclass
class CertificateReport:
    name: str
    c: float
    formula_value: float
    n_samples: int
    max_ratio: float
    violations: int
    worst: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("formula_value", "max_ratio", "c"):
            if not math.isfinite(d[k]):
                d[k] = str(d[k])
        return d


def _unit(rng, d):
    v = rng.standard_normal(d)
    return v / np.linalg.norm(v)


def _point(rng, d, rmax):
    return _unit(rng, d) * rmax * rng.uniform(0.0, 1.0)


def _cos(a, b) -> float:
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0 or nb == 0:
        return 1.0
    return float(a @ b / (na * nb))


def _sample_pairs(rng, d, rmax, names, pairs, cos_bound):
    for _ in range(MAX_REJECTIONS):
        pts = {k: _point(rng, d, rmax) for k in names}
        if all(_cos(pts[a], pts[b]) >= cos_bound for a, b in pairs):
            return pts
    raise SamplerError(f"could not satisfy angular constraint after {MAX_REJECTIONS} draws")


def _bp(v, c):
    return pc.BallPoint(v, c)


def _instance(which: str, rng, c: float, d: int, cos_bound: float, L_f: float, L_L: float):
    """Return ``(lhs, rhs)`` for one random instance."""
    rmax = 0.9 / math.sqrt(c)
    if which == "mobius_c":
        c1 = c
        c2 = c * rng.uniform(0.5, 1.0)
        p = _sample_pairs(rng, d, rmax, ["x", "y"], [("x", "y")], cos_bound)
        lhs = _nrm(pc.mobius_add(_bp(p["x"], c1), _bp(p["y"], c1)).coords
                   - pc.mobius_add(_bp(p["x"], c2), _bp(p["y"], c2)).coords)
        Lc, _ = const_mobius_c(LipschitzContext(c=c, c1=c1, c2=c2, x=p["x"], y=p["y"]))
        return lhs, Lc * abs(c1 - c2)
    if which == "mobius_y":
        p = _sample_pairs(rng, d, rmax, ["x", "y1", "y2"], [("x", "y1"), ("x", "y2")], cos_bound)
        x = _bp(p["x"], c)
        lhs = _nrm(pc.mobius_add(x, _bp(p["y1"], c)).coords - pc.mobius_add(x, _bp(p["y2"], c)).coords)
        L = const_mobius_y(LipschitzContext(c=c, x=p["x"], y1=p["y1"], y2=p["y2"]))
        return lhs, L * _nrm(p["y1"] - p["y2"])
    if which == "mobius_x":
        p = _sample_pairs(rng, d, rmax, ["x1", "x2", "y"], [("x1", "y"), ("x2", "y")], cos_bound)
        y = _bp(p["y"], c)
        lhs = _nrm(pc.mobius_add(_bp(p["x1"], c), y).coords - pc.mobius_add(_bp(p["x2"], c), y).coords)
        L = const_mobius_x(LipschitzContext(c=c, x1=p["x1"], x2=p["x2"], y=p["y"]))
        return lhs, L * _nrm(p["x1"] - p["x2"])
    if which == "expmap_y":
        p = _sample_pairs(rng, d, rmax, ["y1", "y2"], [("y1", "y2")], cos_bound)
        v = _point(rng, d, 1.0 / math.sqrt(c))
        y1, y2 = _bp(p["y1"], c), _bp(p["y2"], c)
        e1 = pc.expmap(y1, pc.TangentVector(v, y1))
        e2 = pc.expmap(y2, pc.TangentVector(v, y2))
        lhs = _nrm(e1.coords - e2.coords)
        u1, u2 = _step(p["y1"], v, c), _step(p["y2"], v, c)
        Lx = const_mobius_x(LipschitzContext(c=c, x1=p["y1"], x2=p["y2"], y=u1))
        Ly = const_mobius_y(LipschitzContext(c=c, x=p["y2"], y1=u1, y2=u2))
        Ley, _ = const_expmap(LipschitzContext(c=c, x=v, y1=p["y1"], y2=p["y2"], L_oplus_x=Lx, L_oplus_y=Ly))
        return lhs, Ley * _nrm(p["y1"] - p["y2"])
    if which == "expmap_x":
        y = _point(rng, d, rmax)
        v1, v2 = _point(rng, d, 1.0 / math.sqrt(c)), _point(rng, d, 1.0 / math.sqrt(c))
        yb = _bp(y, c)
        lhs = _nrm(pc.expmap(yb, pc.TangentVector(v1, yb)).coords - pc.expmap(yb, pc.TangentVector(v2, yb)).coords)
        Ly = const_mobius_y(LipschitzContext(c=c, x=y, y1=_step(y, v1, c), y2=_step(y, v2, c)))
        _, Lex = const_expmap(LipschitzContext(c=c, y=y, x2=v2, L_oplus_y=Ly, L_oplus_x=1.0))
        return lhs, Lex * _nrm(v1 - v2)
    if which == "logmap_y":
        p = _sample_pairs(rng, d, rmax, ["x", "y1", "y2"], [("y1", "y2")], cos_bound)
        x = _bp(p["x"], c)
        lhs = _nrm(pc.logmap(_bp(p["y1"], c), x).coords - pc.logmap(_bp(p["y2"], c), x).coords)
        Lx = const_mobius_x(LipschitzContext(c=c, x1=-p["y1"], x2=-p["y2"], y=p["x"]))
        L = const_logmap_y(LipschitzContext(c=c, x=p["x"], y1=p["y1"], y2=p["y2"], L_oplus_x=Lx))
        return lhs, L * _nrm(p["y1"] - p["y2"])
    if which == "tangent":
        p = _sample_pairs(rng, d, rmax, ["x", "y1", "y2", "b"], [("y1", "y2")], cos_bound)
        A = rng.standard_normal((d, d)) / math.sqrt(d)
        a_norm = float(np.linalg.norm(A, 2))
        emb = []
        vs = []
        for yk in (p["y1"], p["y2"]):
            yb = _bp(yk, c)
            lg = pc.logmap(yb, _bp(p["x"], c)).coords
            v = A @ lg
            vs.append(v)
            e = pc.expmap(yb, pc.TangentVector(v, yb)) if np.linalg.norm(v) > 0 else yb
            emb.append(e.coords)
        h1 = pc.mobius_add(_bp(emb[0], c), _bp(p["b"], c)).coords
        h2 = pc.mobius_add(_bp(emb[1], c), _bp(p["b"], c)).coords
        lhs = L_L * _nrm(h1 - h2)
        Lx_out = const_mobius_x(LipschitzContext(c=c, x1=emb[0], x2=emb[1], y=p["b"]))
        u1, u2 = _step(p["y1"], vs[0], c), _step(p["y2"], vs[0], c)
        Ley, _ = const_expmap(LipschitzContext(
            c=c, x=vs[0], y1=p["y1"], y2=p["y2"],
            L_oplus_x=const_mobius_x(LipschitzContext(c=c, x1=p["y1"], x2=p["y2"], y=u1)),
            L_oplus_y=const_mobius_y(LipschitzContext(c=c, x=p["y2"], y1=u1, y2=u2))))
        _, Lex = const_expmap(LipschitzContext(
            c=c, y=p["y2"], x2=vs[1], L_oplus_x=1.0,
            L_oplus_y=const_mobius_y(LipschitzContext(c=c, x=p["y2"], y1=_step(p["y2"], vs[0], c),
                                                      y2=_step(p["y2"], vs[1], c)))))
        Llg = const_logmap_y(LipschitzContext(
            c=c, x=p["x"], y1=p["y1"], y2=p["y2"],
            L_oplus_x=const_mobius_x(LipschitzContext(c=c, x1=-p["y1"], x2=-p["y2"], y=p["x"]))))
        ctx = LipschitzContext(c=c, L_f=L_f, L_L=L_L, a_norm=a_norm, L_oplus_x=Lx_out,
                               L_expm_y=Ley, L_expm_x=Lex, L_logm_y=Llg)
        L_tan, _ = const_tangent(ctx)
        return lhs, L_tan * _nrm(p["y1"] - p["y2"])
    raise ValueError(f"unknown inequality '{which}'; choose from {THEOREMS}")


def _step(y, v, c):
    # second Moebius operand of expm_y(v)
    sc = math.sqrt(c)
    n = np.linalg.norm(v)
    if n < 1e-15:
        return np.zeros_like(v)
    lam = 2.0 / (1.0 - c * float(y @ y))
    return math.tanh(sc * lam * n / 2.0) * v / (sc * n)


def verify_inequality(which: str, c: float, n_samples: int = 2000, seed: int = 0, dim: int = 4,
                      cos_theta_bound: float = 0.1, L_f: float = 1.0, L_L: float = 1.0) -> CertificateReport:
    """Sample instances of one inequality at curvature ``c`` and count violations.

    Sample ``i`` uses the generator seeded by ``(seed, theorem, c, i)``, so the
    report does not depend on evaluation order.
    """
    if which not in THEOREMS:
        raise ValueError(f"unknown inequality '{which}'; choose from {THEOREMS}")
    t_idx = THEOREMS.index(which)
    c_key = int(round(-math.log10(c) * 1000)) if c < 1 else 0
    max_ratio, viol, worst, fval = 0.0, 0, {}, float("nan")
    for i in range(n_samples):
        rng = np.random.default_rng([seed, t_idx, c_key, i])
        lhs, rhs = _instance(which, rng, c, dim, cos_theta_bound, L_f, L_L)
        if lhs == 0.0:
            ratio = 0.0
        elif rhs == 0.0 or not math.isfinite(rhs):
            ratio = math.inf if rhs == 0.0 else 0.0
        else:
            ratio = lhs / rhs
        if lhs > rhs * (1.0 + _REL_SLACK) + 1e-15:
            viol += 1
        if ratio > max_ratio or not worst:
            max_ratio = max(max_ratio, ratio)
            worst = {"sample": i, "lhs": lhs, "rhs": rhs}
            fval = rhs
    return CertificateReport(which, float(c), float(fval), n_samples, float(max_ratio), viol, worst)


def verify_all(n_samples: int = 2000, seed: int = 0, curvatures=DEFAULT_CURVATURES,
               theorems=THEOREMS, **kw) -> list[CertificateReport]:
    return [verify_inequality(t, c, n_samples, seed, **kw) for t in theorems for c in curvatures]


def reports_to_json(reports) -> str:
    return json.dumps([r.to_dict() for r in reports], indent=2, sort_keys=True)


def limit_checks(c: float = 1e-10, a_norm: float = 3.0, L_f: float = 1.0, L_L: float = 1.0,
                 seed: int = 0) -> dict:
    """Small-curvature values of every constant next to the values they should approach.

    Vectors are random with norm <= 1 (so ``c ||x||^2`` is negligible).
    Returns ``{name: (value, target)}``.
    """
    rng = np.random.default_rng(seed)
    v = {k: _point(rng, 3, 1.0) for k in ("x", "y", "x1", "x2", "y1", "y2")}
    v["x2"] = v["x2"] if np.linalg.norm(v["x2"]) > 0.1 else v["x2"] + 0.2
    base = LipschitzContext(c=c, c1=c, c2=c / 2, a_norm=a_norm, L_f=L_f, L_L=L_L, **v)
    out = {}
    _, Lc0 = const_mobius_c(base)
    out["L_oplus_c0"] = (Lc0, 0.0)
    out["L_oplus_y"] = (const_mobius_y(base), 1.0)
    out["L_oplus_x"] = (const_mobius_x(base), 1.0)
    ey, ex = const_expmap(base)
    out["L_expm_y"] = (ey, 1.0)
    out["L_expm_x"] = (ex, 1.0)
    out["L_logm_y"] = (const_logmap_y(base), 1.0)
    lt, _ = const_tangent(base)
    out["L_tangent"] = (lt, tangent_limit(base))
    bt = bound_terms(base, n=100, d=10, delta=0.1, w_norm=1.0, form="general")
    out["E_lc"] = (bt.E_lc, 0.0)
    out["E_ly_prime*c"] = (bt.E_ly_prime * c, None)
    x = v["x"]
    for name, op in (("lemma_expmap0", lambda z: pc.expmap0(z, c).coords),
                     ("lemma_logmap0", lambda z: pc.logmap0(pc.BallPoint(z, c)))):
        out[name] = (_nrm(x - op(x)), 0.0)
    out["mobius_vs_sum"] = (_nrm(pc.mobius_add(pc.BallPoint(v["x"], c), pc.BallPoint(v["y"], c)).coords
                                 - (v["x"] + v["y"])), 0.0)
    return out
