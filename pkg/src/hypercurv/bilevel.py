"""Curvature learning as a bi-level problem.

Inner level: SAM steps on the training loss ``L_S(w, c)``.
Outer level: ``F(c) = L_V(w*, c) + sn_hat(grad L_S(w* + eps_hat, c))`` and a
clamped gradient step on ``c``.  The hypergradient is assembled as

    dF/dc = direct + U1 + U2

where ``direct`` differentiates F in c at fixed weights, ``U1`` is the
implicit term with the inverse inner Hessian replaced by a J-term Neumann
series, and ``U2`` is the first-order correction for the sharpness term.
Only gradients, Hessian-vector products and mixed partials are used.
"""
from __future__ import annotations

import json
import time
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

import numpy as np

from . import tensor as tn
from .sharpness import (FLAT_TOL, FlatPointWarning, SharpnessDomainWarning, epsilon_hat, l_sharp,
                        sn_hat)

LossFn = Callable[[tn.Tensor, float], tn.Tensor]


class NeumannDivergenceWarning(RuntimeWarning):
    """Neumann iterates grew for three consecutive steps."""


class CurvatureBoundsError(ValueError):
    pass


@dataclass
class BilevelConfig:
    T: int = 2                  # inner SAM steps per outer iteration
    outer_iters: int = 100
    eta: float = 0.1            # inner step size
    rho_hat: float = 0.05       # SAM radius
    J: int = 2                  # Neumann terms for U1
    K: int = 1                  # sharpness truncation
    rho: Optional[float] = None  # scope radius; defaults to rho_hat
    eta_c: float = 1e-3
    c_min: float = 1e-6
    c_max: float = 1.0
    val_split: float = 0.2
    decay: bool = False         # eta_t = eta/sqrt(t), rho_t = rho_hat/sqrt(t)
    loss_scale: object = "auto"  # "auto" or a positive number
    learn_curvature: bool = True

    def __post_init__(self):
        if self.T < 1:
            raise ValueError("T must be >= 1")
        if self.outer_iters < 0:
            raise ValueError("outer_iters must be >= 0")
        if self.J < 0:
            raise ValueError("J must be >= 0")
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not 0 < self.val_split < 1:
            raise ValueError("val_split must lie in (0, 1)")
        if not 0 < self.c_min <= self.c_max:
            raise ValueError("need 0 < c_min <= c_max")
        if self.eta <= 0 or self.rho_hat < 0 or self.eta_c < 0:
            raise ValueError("eta must be positive, rho_hat and eta_c non-negative")
        if self.loss_scale != "auto" and not float(self.loss_scale) > 0:
            raise ValueError("loss_scale must be 'auto' or positive")

    @property
    def scope_rho(self) -> float:
        return self.rho_hat if self.rho is None else self.rho


@dataclass
class CurvatureState:
    c: float
    c_min: float = 1e-6
    c_max: float = 1.0
    eta_c: float = 1e-3
    history: list = field(default_factory=list)

    def __post_init__(self):
        if not self.c_min <= self.c <= self.c_max:
            raise CurvatureBoundsError(f"c={self.c} outside [{self.c_min}, {self.c_max}]")

    def update(self, dFdc: float, it: int) -> float:
        self.c = float(np.clip(self.c - self.eta_c * dFdc, self.c_min, self.c_max))
        assert self.c_min <= self.c <= self.c_max
        self.history.append((it, self.c, abs(float(dFdc))))
        return self.c


@dataclass
class HypergradBreakdown:
    direct: float
    u1: float
    u2: float
    flags: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.direct + self.u1 + self.u2


def _flat(w) -> np.ndarray:
    return np.array(w.data if isinstance(w, tn.Tensor) else w, dtype=np.float64).reshape(-1)


def _g(f, w, c) -> np.ndarray:
    return tn.grad(f, tn.Tensor(w), c).numpy()


def _val(f, w, c) -> float:
    with tn.no_record():
        return float(f(tn.Tensor(w), c).item())


def scaled(lossfn: LossFn, s: float) -> LossFn:
    """``lossfn / s``; identity for s == 1."""
    if s == 1.0:
        return lossfn
    return lambda w, c: lossfn(w, c) / s


def choose_loss_scale(gnorm: float) -> float:
    return max(1.0, 2.0 * float(gnorm))


def sam_step(lossfn: LossFn, w, c: float, eta: float, rho_hat: float, g=None) -> np.ndarray:
    """One SAM update: gradient taken at ``w + rho_hat g/||g||``.

    ``g`` may carry an already computed gradient at ``w``.
    """
    w = _flat(w)
    g = _g(lossfn, w, c) if g is None else _flat(g)
    gn = float(np.linalg.norm(g))
    if gn < FLAT_TOL:
        return w.copy()
    if rho_hat == 0:
        return w - eta * g
    return w - eta * _g(lossfn, w + rho_hat * g / gn, c)


def _eps(train_loss, w, c, rho, K):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatPointWarning)
        return epsilon_hat(train_loss, w, c, rho, K, return_flag=True)


def _sn(g, K) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SharpnessDomainWarning)
        return sn_hat(g, K)


def outer_objective(train_loss: LossFn, val_loss: LossFn, w, c: float, K: int, rho: float,
                    eps=None) -> float:
    """``L_V(w, c) + sn_hat(grad L_S(w + eps_hat, c))``."""
    w = _flat(w)
    if eps is None:
        eps, _ = _eps(train_loss, w, c, rho, K)
    return _val(val_loss, w, c) + _sn(_g(train_loss, w + eps, c), K)


def u1_neumann(train_loss: LossFn, val_loss: LossFn, w, c: float, J: int,
               return_flag: bool = False, mixed=None):
    """Implicit term ``-p_J . d/dc grad_w L_S`` with ``p_J = sum_{i<=J} v (I - H)^i``."""
    w = _flat(w)
    v = _g(val_loss, w, c)
    p = v.copy()
    diverged = False
    growth = 0
    prev = np.linalg.norm(v)
    for _ in range(J):
        if np.linalg.norm(v) < 1e-12:
            # remaining terms are numerically zero
            break
        v = v - tn.hvp(train_loss, tn.Tensor(w), tn.Tensor(v), c).numpy()
        p = p + v
        nv = np.linalg.norm(v)
        growth = growth + 1 if nv > prev else 0
        prev = nv
        if growth >= 3:
            warnings.warn("Neumann series diverging; returning partial sum", NeumannDivergenceWarning, stacklevel=2)
            diverged = True
            break
    if mixed is None:
        mixed = tn.mixed_partial_c(train_loss, tn.Tensor(w), c, one_sided=True).numpy()
    out = -float(p @ mixed)
    return (out, diverged) if return_flag else out


def u2_term(train_loss: LossFn, w, c: float, K: int, rho: float, eps=None, mixed=None,
            return_flag: bool = False):
    """Sharpness correction ``-coef * <g(w_hat), d/dc grad_w L_S(w)>``.

    ``coef = 2 (K+1) (1 - ||g(w_hat)||^2)^K`` is the derivative of the
    closed-form measure with respect to ``||g||^2`` up to the factor 2.
    """
    w = _flat(w)
    if eps is None:
        eps, flat = _eps(train_loss, w, c, rho, K)
    else:
        flat = not np.any(eps)
    if flat:
        return (0.0, True) if return_flag else 0.0
    gh = _g(train_loss, w + eps, c)
    a = float(gh @ gh)
    if mixed is None:
        mixed = tn.mixed_partial_c(train_loss, tn.Tensor(w), c, one_sided=True).numpy()
    coef = 2.0 * (K + 1) * max(0.0, 1.0 - a) ** K
    out = -coef * float(gh @ mixed)
    return (out, False) if return_flag else out


def curvature_grad(train_loss: LossFn, val_loss: LossFn, w, c: float, config: BilevelConfig,
                   eps=None) -> HypergradBreakdown:
    """Approximate ``dF/dc`` at the current inner solution ``w``.

    ``eps`` may carry a precomputed ``epsilon_hat`` at ``(w, c)``.
    """
    w = _flat(w)
    K, rho = config.K, config.scope_rho
    flags = []
    if eps is None:
        eps, flat = _eps(train_loss, w, c, rho, K)
    else:
        eps = _flat(eps)
        flat = not np.any(eps)
    if flat:
        flags.append("flat_point")
    dc = tn.c_step(c)
    lo = c - dc if c - dc > 0 else c  # forward difference at the lower bound
    fp = _val(val_loss, w, c + dc) + _sn(_g(train_loss, w + eps, c + dc), K)
    fm = _val(val_loss, w, lo) + _sn(_g(train_loss, w + eps, lo), K)
    direct = (fp - fm) / (c + dc - lo)
    mixed = tn.mixed_partial_c(train_loss, tn.Tensor(w), c, one_sided=True).numpy()
    u1, div = u1_neumann(train_loss, val_loss, w, c, config.J, return_flag=True, mixed=mixed)
    if div:
        flags.append("neumann_divergence")
    u2 = u2_term(train_loss, w, c, K, rho, eps=eps, mixed=mixed)
    return HypergradBreakdown(direct, u1, u2, flags)


@dataclass
class BilevelTrace:
    records: list = field(default_factory=list)        # per outer iteration
    inner_grad_sq: list = field(default_factory=list)  # ||grad L_S||^2 per inner step
    loss_scale: float = 1.0
    flags: list = field(default_factory=list)

    def running_min_grad_sq(self) -> np.ndarray:
        return np.minimum.accumulate(np.asarray(self.inner_grad_sq)) if self.inner_grad_sq else np.zeros(0)


TELEMETRY_KEYS = ("iter", "c", "F", "grad_norm", "sn_hat", "l_sharp", "wall_ms")


def run_algorithm1(train_loss: LossFn, val_loss: LossFn, w0, c0: float, config: BilevelConfig,
                   telemetry=None, on_error: Optional[Callable] = None):
    """Alternate T SAM steps on ``w`` with one clamped gradient step on ``c``.

    ``telemetry`` may be an open text stream; one JSON line is written per
    outer iteration.  ``on_error(w, c)`` is called before a failure
    propagates (the harness writes a checkpoint there).

    Returns ``(w, CurvatureState, BilevelTrace)``.
    """
    w = _flat(w0).copy()
    state = CurvatureState(float(c0), config.c_min, config.c_max, config.eta_c)
    trace = BilevelTrace()
    if config.outer_iters == 0:
        return w, state, trace
    if config.loss_scale == "auto":
        s = choose_loss_scale(np.linalg.norm(_g(train_loss, w, state.c)))
    else:
        s = float(config.loss_scale)
    trace.loss_scale = s
    LS = scaled(train_loss, s)
    step = 0
    try:
        for it in range(1, config.outer_iters + 1):
            t0 = time.perf_counter()
            c = state.c
            for _ in range(config.T):
                step += 1
                f = 1.0 / np.sqrt(step) if config.decay else 1.0
                g = _g(train_loss, w, c)
                trace.inner_grad_sq.append(float(g @ g))
                w = sam_step(train_loss, w, c, config.eta * f, config.rho_hat * f, g=g)
            g = _g(train_loss, w, c)
            gs = g / s
            rec = {"iter": it, "c": c}
            eps, _ = _eps(LS, w, c, config.scope_rho, config.K)
            F = outer_objective(LS, val_loss, w, c, config.K, config.scope_rho, eps=eps)
            if config.learn_curvature:
                hg = curvature_grad(LS, val_loss, w, c, config, eps=eps)
                trace.flags.extend(f"{it}:{x}" for x in hg.flags)
                state.update(hg.total, it)
                rec.update(dFdc=hg.total, direct=hg.direct, u1=hg.u1, u2=hg.u2)
            else:
                state.history.append((it, c, 0.0))
            rec.update(
                F=F,
                grad_norm=float(np.linalg.norm(g)),
                sn_hat=_sn(gs, config.K),
                l_sharp=l_sharp(train_loss, w, c, config.scope_rho),
                c_next=state.c,
                wall_ms=(time.perf_counter() - t0) * 1e3,
            )
            trace.records.append(rec)
            if telemetry is not None:
                telemetry.write(json.dumps(rec, sort_keys=True) + "\n")
    except Exception:
        if on_error is not None:
            on_error(w, state.c)
        raise
    return w, state, trace
