"""Sharpness quantities of a loss ``lossfn(w, c)`` around flat parameters ``w``.

The scope measure uses the closed form ``1 - (1 - ||g||^2)^(K+1)`` of the
Neumann-truncated reparametrisation-invariant measure; its parameter gradient
``2 (K+1) (1 - ||g||^2)^K H g`` needs one gradient and one Hessian-vector
product.
"""
from __future__ import annotations

import json
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Sequence

import numpy as np

from . import tensor as tn

ORACLE_MAX_DIM = 64
FLAT_TOL = 1e-12


class FlatPointWarning(RuntimeWarning):
    """A normalised direction was requested at a point where it is undefined."""


class SharpnessDomainWarning(RuntimeWarning):
    """``||g||^2 >= 1``: the Neumann series behind the measure diverges."""


class ConvergenceWarning(RuntimeWarning):
    """Power iteration stopped before the Rayleigh quotient settled."""


class OracleScaleError(ValueError):
    pass


@dataclass
class SharpnessConfig:
    K: int = 1
    rho: float = 0.05
    sweep_steps: list = field(default_factory=lambda: [0.0, 0.1, 0.2, 0.3, 0.4, 0.5])
    power_iters: int = 50
    n_eigs: int = 1

    def __post_init__(self):
        if int(self.K) != self.K or self.K < 1:
            raise ValueError("K must be an integer >= 1")
        if not self.rho > 0:
            raise ValueError("rho must be positive")
        if any(not (0.0 <= z < 1.0) for z in self.sweep_steps):
            raise ValueError("sweep steps must lie in [0, 1)")
        if self.power_iters < 10:
            raise ValueError("power_iters must be at least 10")
        if self.n_eigs < 1:
            raise ValueError("n_eigs must be positive")


@dataclass
class SharpnessReport:
    sn_hat: float
    scope_sn: float
    l_sharp: float
    eigenvalues: list
    sweep: list

    def __post_init__(self):
        eig = [float(e) for e in self.eigenvalues]
        if any(a < b for a, b in zip(eig, eig[1:])):
            raise ValueError("eigenvalues must be sorted descending")
        self.eigenvalues = eig

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)

    @classmethod
    def from_json(cls, text: str) -> "SharpnessReport":
        return cls(**json.loads(text))


def _flat(w) -> np.ndarray:
    return np.array(w.data if isinstance(w, tn.Tensor) else w, dtype=np.float64).reshape(-1)


def _loss(lossfn, w, c) -> float:
    with tn.no_record():
        return float(lossfn(tn.Tensor(w), c).item())


def _grad(lossfn, w, c) -> np.ndarray:
    return tn.grad(lossfn, tn.Tensor(w), c).numpy()


def _hvp(lossfn, w, v, c, mode="fd") -> np.ndarray:
    return tn.hvp(lossfn, tn.Tensor(w), tn.Tensor(v), c, mode=mode).numpy()


# ------------------------------------------------------------------ measure

def sn_hat(g, K: int) -> float:
    """Closed-form truncated measure ``sum_{i<=K} a (1-a)^i`` with ``a = ||g||^2``."""
    g = _flat(g)
    a = float(g @ g)
    if a >= 1.0:
        warnings.warn(f"||g||^2 = {a:.4g} >= 1; measure clamped to 1", SharpnessDomainWarning, stacklevel=2)
        return 1.0
    # -expm1(n log1p(-a)) keeps full relative precision for small a
    return float(-np.expm1((K + 1) * np.log1p(-a)))


def sn_exact_small(g, K: int) -> float:
    """Brute-force ``g^T [sum_{i<=K} (I - g g^T)^i] g`` with explicit matrices."""
    g = _flat(g)
    d = g.shape[0]
    if d > ORACLE_MAX_DIM:
        raise OracleScaleError(f"oracle limited to dim <= {ORACLE_MAX_DIM}, got {d}")
    M = np.eye(d) - np.outer(g, g)
    P = np.eye(d)
    S = np.zeros((d, d))
    for _ in range(K + 1):
        S += P
        P = P @ M
    return float(g @ S @ g)


def sn_grad(lossfn: Callable, w, c, K: int, hvp_mode: str = "fd") -> np.ndarray:
    """Gradient of ``sn_hat(grad L(w), K)`` with respect to ``w``."""
    w = _flat(w)
    g = _grad(lossfn, w, c)
    a = float(g @ g)
    if np.sqrt(a) < FLAT_TOL:
        return np.zeros_like(w)
    Hg = _hvp(lossfn, w, g, c, hvp_mode)
    return 2.0 * (K + 1) * (1.0 - a) ** K * Hg


def epsilon_hat(lossfn: Callable, w, c, rho: float, K: int, return_flag: bool = False,
                hvp_mode: str = "fd"):
    """Worst-case perturbation ``rho * d / ||d||`` with ``d`` the measure's gradient.

    At a flat point (``||d|| < 1e-12``) the zero vector is returned and a
    :class:`FlatPointWarning` is emitted.
    """
    w = _flat(w)
    d = sn_grad(lossfn, w, c, K, hvp_mode)
    dn = float(np.linalg.norm(d))
    if dn < FLAT_TOL:
        warnings.warn("flat point: measure gradient vanishes, zero perturbation", FlatPointWarning, stacklevel=2)
        eps, flat = np.zeros_like(w), True
    else:
        eps, flat = rho * d / dn, False
    return (eps, flat) if return_flag else eps


def _critical_direction(lossfn, w, c, seed: int = 0) -> np.ndarray:
    # second-order worst case at a critical point: ||H e|| is largest along
    # the dominant Hessian eigenvector
    _, vecs, _ = _power(lambda v: _hvp(lossfn, w, v, c), w.shape[0], 1, 50, seed, shift=0.0, found=[])
    return vecs[0]


def scope_sharpness(lossfn: Callable, w, c, rho: float, K: int, return_flag: bool = False,
                    hvp_mode: str = "fd"):
    """``sn_hat`` of the gradient at ``w + eps_hat``.

    When the measure gradient vanishes because ``w`` is itself a critical
    point, the perturbation falls back to the dominant Hessian eigendirection
    (the second-order maximiser of ``||grad L(w + e)||``).
    """
    w = _flat(w)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", FlatPointWarning)
        eps, flat = epsilon_hat(lossfn, w, c, rho, K, return_flag=True, hvp_mode=hvp_mode)
    if flat:
        g = _grad(lossfn, w, c)
        if np.linalg.norm(g) < FLAT_TOL:
            eps = rho * _critical_direction(lossfn, w, c)
    val = sn_hat(_grad(lossfn, w + eps, c), K)
    return (val, flat) if return_flag else val


def l_sharp(lossfn: Callable, w, c, rho: float, return_flag: bool = False):
    """Larger of the two losses at ``w +- rho g/||g||`` minus the loss at ``w``."""
    w = _flat(w)
    g = _grad(lossfn, w, c)
    gn = float(np.linalg.norm(g))
    if gn < FLAT_TOL or rho == 0:
        return (0.0, gn < FLAT_TOL) if return_flag else 0.0
    e = rho * g / gn
    base = _loss(lossfn, w, c)
    val = max(_loss(lossfn, w + e, c), _loss(lossfn, w - e, c)) - base
    return (val, False) if return_flag else val


# ------------------------------------------------------------ Hessian spectrum

def _power(op, dim, n, iters, seed, shift, found):
    rng = np.random.default_rng(seed)
    vals, vecs, converged = [], [], True
    basis = list(found)
    for _ in range(n):
        v = rng.standard_normal(dim)
        for u in basis:
            v -= (u @ v) * u
        v /= np.linalg.norm(v)
        rq_prev = None
        rq = 0.0
        for _ in range(iters):
            Hv = op(v) + shift * v
            rq = float(v @ Hv)
            for u in basis:
                Hv -= (u @ Hv) * u
            nrm = np.linalg.norm(Hv)
            if nrm < 1e-300:
                break
            v_new = Hv / nrm
            if rq_prev is not None and abs(rq - rq_prev) <= 1e-12 * max(1.0, abs(rq)):
                v = v_new
                break
            rq_prev, v = rq, v_new
        rq_final = float(v @ (op(v) + shift * v))
        if abs(rq_final - rq) > 1e-3 * max(abs(rq_final), 1e-12):
            converged = False
        vals.append(rq_final - shift)
        vecs.append(v)
        basis.append(v)
    return vals, vecs, converged


def top_hessian_eigs(lossfn: Callable, w, c, n_eigs: int = 1, power_iters: int = 50,
                     seed: int = 0, hvp_mode: str = "fd", return_flag: bool = False):
    """Largest (algebraic) Hessian eigenvalues by deflated power iteration.

    A first pass finds the eigenvalue of largest magnitude; when it is
    positive it is the top eigenvalue and further ones are found on the
    shifted operator ``H + |lambda| I``, which is positive semidefinite.
    """
    w = _flat(w)
    dim = w.shape[0]
    if n_eigs > dim:
        raise ValueError(f"n_eigs={n_eigs} exceeds dimension {dim}")
    if power_iters < 10:
        raise ValueError("power_iters must be at least 10")
    op = lambda v: _hvp(lossfn, w, v, c, hvp_mode)
    lam, vecs, ok = _power(op, dim, 1, power_iters, seed, 0.0, [])
    shift = abs(lam[0])
    if lam[0] >= 0:
        vals, found = list(lam), list(vecs)
    else:
        vals, found = [], []
    if len(vals) < n_eigs:
        more, _, ok2 = _power(op, dim, n_eigs - len(vals), power_iters, seed + 1, shift, found)
        vals += more
        ok = ok and ok2
    vals = sorted(vals, reverse=True)
    if not ok:
        warnings.warn("power iteration did not reach relative change 1e-3", ConvergenceWarning, stacklevel=2)
    out = np.array(vals)
    return (out, not ok) if return_flag else out


def perturbation_sweep(lossfn: Callable, w, c, direction_seed: int, sweep_steps: Sequence[float],
                       direction=None, metric: Callable | None = None) -> list:
    """Loss along ``w + zeta ||w|| o / ||o||`` for a fixed random direction ``o``.

    Returns ``[(zeta, loss, metric-or-None), ...]`` sorted by ``zeta``.
    """
    w = _flat(w)
    wn = float(np.linalg.norm(w))
    if wn == 0:
        raise ValueError("sweep needs ||w|| > 0")
    if direction is None:
        o = np.random.default_rng(direction_seed).standard_normal(w.shape[0])
    else:
        o = _flat(direction)
    o = o / np.linalg.norm(o)
    out = []
    for z in sorted(float(s) for s in sweep_steps):
        wz = w + z * wn * o
        out.append((z, _loss(lossfn, wz, c), None if metric is None else float(metric(wz))))
    return out


def sharpness_report(lossfn: Callable, w, c, config: SharpnessConfig, seed: int = 0,
                     metric: Callable | None = None) -> SharpnessReport:
    w = _flat(w)
    g = _grad(lossfn, w, c)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", SharpnessDomainWarning)
        s = sn_hat(g, config.K)
    return SharpnessReport(
        sn_hat=s,
        scope_sn=scope_sharpness(lossfn, w, c, config.rho, config.K),
        l_sharp=l_sharp(lossfn, w, c, config.rho),
        eigenvalues=list(top_hessian_eigs(lossfn, w, c, config.n_eigs, config.power_iters, seed)),
        sweep=[list(t) for t in perturbation_sweep(lossfn, w, c, seed, config.sweep_steps, metric=metric)],
    )
