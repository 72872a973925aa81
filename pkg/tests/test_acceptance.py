"""Acceptance suite: one test per criterion, each at its stated tolerance and time budget.

Each test prints a ``CRITERION n: PASS|FAIL`` line (also repeated in the
terminal summary) and then asserts the same verdict.
"""
import json
import math
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import minimize

from conftest import ACCEPTANCE_LINES, fd_grad
from hypercurv import lipschitz as L
from hypercurv import model as M
from hypercurv import poincare as pc
from hypercurv import sharpness as S
from hypercurv import tensor as tn
from hypercurv.bilevel import BilevelConfig, curvature_grad, outer_objective, scaled
from hypercurv.cli import main
from hypercurv.config import parse_config
from hypercurv.experiments import ablate_curvature, run_training
from hypercurv.model import Batch, HnnModel
from hypercurv.poincare import BallPoint

CURVATURES = (1e-4, 1e-2, 1e-1, 1.0)


def report(n, ok, elapsed, budget, detail):
    within = elapsed < budget
    verdict = "PASS" if ok and within else "FAIL"
    line = f"CRITERION {n}: {verdict}  ({elapsed:.1f}s / budget {budget:.0f}s)  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return verdict == "PASS"


def _ball_point(rng, dim, c, rmax=0.95):
    v = rng.standard_normal(dim)
    return v / np.linalg.norm(v) * rng.uniform(0, rmax) / math.sqrt(c)


# ------------------------------------------------------------------ 1

def test_criterion_1_closed_form_measure():
    t0 = time.time()
    rng = np.random.default_rng(0)
    worst = 0.0
    for _ in range(200):
        d, K = int(rng.integers(1, 17)), int(rng.integers(1, 9))
        g = rng.standard_normal(d)
        g *= math.sqrt(rng.uniform(0.0, 1.0)) / np.linalg.norm(g)
        worst = max(worst, abs(S.sn_hat(g, K) - S.sn_exact_small(g, K)))
    ok = worst <= 1e-12
    assert report(1, ok, time.time() - t0, 5, f"max |sn_hat - brute force| = {worst:.2e} (tol 1e-12)")


# ------------------------------------------------------------------ 2

def test_criterion_2_geometry():
    t0 = time.time()
    rng = np.random.default_rng(1)
    bad = []
    for c in CURVATURES:
        o = BallPoint.origin(3, c)
        for _ in range(1000):
            y = BallPoint(_ball_point(rng, 3, c), c)
            if not np.array_equal(pc.mobius_add(o, y).coords, y.coords):
                bad.append(("left identity", c))
            if np.linalg.norm(pc.mobius_add(y, -y).coords) > 1e-12:
                bad.append(("right inverse", c))
            v = rng.standard_normal(3) * rng.uniform(0, 3) / math.sqrt(c)
            e = pc.expmap0(v, c)
            if c * e.coords @ e.coords < 1 - 1e-5 - 1e-12:
                if np.linalg.norm(pc.logmap0(e) - v) > 1e-8 * (1 + np.linalg.norm(v)):
                    bad.append(("round trip", c))
        for _ in range(500):
            x, y, z = (BallPoint(_ball_point(rng, 3, c), c) for _ in range(3))
            dxy, dyx = pc.distance(x, y), pc.distance(y, x)
            if abs(dxy - dyx) > 1e-12 * max(1.0, dxy):
                bad.append(("symmetry", c))
            if pc.distance(x, z) - dxy - pc.distance(y, z) > 1e-9:
                bad.append(("triangle", c))
    ok = not bad
    assert report(2, ok, time.time() - t0, 30, f"{len(bad)} property failures over 4 curvatures x 1000 samples"
                  + (f" first={bad[0]}" if bad else ""))


# ------------------------------------------------------------------ 3

def test_criterion_3_small_curvature_limits():
    t0 = time.time()
    failing = []
    for name, (value, target) in L.limit_checks(c=1e-10).items():
        if target is None:
            if not math.isfinite(value):
                failing.append(name)
        elif abs(value - target) > 1e-3:
            failing.append(f"{name}={value:.4g}->{target:g}")
    # bound-term limit checked componentwise at 1e-8
    for name, (value, target) in L.limit_checks(c=1e-8).items():
        if name == "E_lc" and abs(value - target) > 1e-3 and not any(f.startswith("E_lc") for f in failing):
            failing.append(f"E_lc={value:.4g}->0")
    rng = np.random.default_rng(2)
    c = 1e-8
    for _ in range(200):
        x, y = (rng.standard_normal(3) * rng.uniform(0, 1) / math.sqrt(3) for _ in range(2))
        if np.linalg.norm(pc.mobius_add(BallPoint(x, c), BallPoint(y, c)).coords - (x + y)) > 1e-5 \
                or np.linalg.norm(pc.expmap0(x, c).coords - x) > 1e-5 \
                or np.linalg.norm(pc.logmap0(BallPoint(x, c)) - x) > 1e-5:
            failing.append("lemma limits")
            break
    worst_loss = 0.0
    for seed in range(5):
        r = np.random.default_rng(seed)
        m = HnnModel(5, 3, hidden=7, embed=4, hyp_dim=3)
        p = m.init_params(seed)
        p.b = 0.3 * r.standard_normal(3)
        p.mlr_b = 0.3 * r.standard_normal((3, 3))
        batch = Batch(r.standard_normal((12, 5)), r.integers(0, 3, 12), 3)
        worst_loss = max(worst_loss, abs(M.loss(p, batch, 1e-8) - M.euclidean_reference_loss(p, batch)))
    if worst_loss > 1e-4:
        failing.append(f"loss gap {worst_loss:.2e}")
    ok = not failing
    assert report(3, ok, time.time() - t0, 30,
                  f"loss vs Euclidean reference {worst_loss:.1e} (tol 1e-4); failing limits: {failing or 'none'}")


# ------------------------------------------------------------------ 4

def test_criterion_4_lipschitz_certificates():
    t0 = time.time()
    reports = L.verify_all(n_samples=2000, seed=0, curvatures=(1e-3, 1e-1, 1.0))
    v = sum(r.violations for r in reports)
    worst = max(r.max_ratio for r in reports)
    ok = v == 0 and len(reports) == 3 * len(L.THEOREMS)
    assert report(4, ok, time.time() - t0, 120,
                  f"{v} violations over {len(reports)} cells x 2000 samples; max lhs/rhs = {worst:.3g}")


# ------------------------------------------------------------------ 5

def _toy(alpha):
    def LS(w, c):
        d = w - c
        return 0.5 * alpha * tn.dot(d, d)

    def LV(w, c):
        return 0.5 * tn.dot(w, w)

    return LS, LV


def _fd_classifier_errors():
    errs = []
    for seed in range(3):
        rng = np.random.default_rng(seed)
        n = 120
        y = rng.integers(0, 2, n)
        X = (rng.normal(size=(n, 2)) * 0.6 + np.where(y[:, None] == 1, 0.5, -0.5)) * 1.5
        m = HnnModel(2, 2, hidden=0, embed=2, hyp_dim=2)
        LS = scaled(m.make_loss(X[:80], y[:80], weight_decay=0.5), 2.0)
        LV = m.make_loss(X[80:], y[80:])

        def solve(c, w0):
            r = minimize(lambda w: (LS(tn.Tensor(w), c).item(), tn.grad(LS, w, c).numpy()), w0, jac=True,
                         method="L-BFGS-B", options=dict(gtol=1e-13, ftol=1e-16, maxiter=10000))
            return r.x

        c, rho, d = 0.5, 1e-6, 1e-3
        ws = solve(c, m.init_params(seed).flat())
        F = lambda cc: outer_objective(LS, LV, solve(cc, ws), cc, 1, rho)
        fd = (F(c + d) - F(c - d)) / (2 * d)
        hg = curvature_grad(LS, LV, ws, c, BilevelConfig(J=100, K=1, rho_hat=rho, loss_scale=1.0))
        errs.append(abs(hg.total - fd) / abs(fd))
    return errs


def test_criterion_5_hypergradient():
    t0 = time.time()
    worst_toy = 0.0
    for alpha in (0.5, 1.0, 1.5):
        LS, LV = _toy(alpha)
        for J in (0, 2, 8):
            for c in (0.05, 0.3, 0.9):
                hg = curvature_grad(LS, LV, np.array([c]), c, BilevelConfig(J=J, K=1, rho=1e-6))
                bound = abs(1 - alpha) ** (J + 1) * abs(c)
                worst_toy = max(worst_toy, abs(hg.total - c) - bound)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        errs = _fd_classifier_errors()
    ok = worst_toy <= 1e-9 and max(errs) <= 0.15
    assert report(5, ok, time.time() - t0, 120,
                  f"toy excess over bound {max(worst_toy, 0):.1e}; classifier rel. err vs FD "
                  f"{', '.join(f'{e:.1e}' for e in errs)} (tol 0.15)")


# ------------------------------------------------------------------ 6

def _nonquadratic(w):
    return tn.logsumexp(tn.tanh(w) * 2.0) + 0.1 * tn.dot(w, w) ** 2


def test_criterion_6_gradient_hygiene():
    t0 = time.time()
    fails = []
    for seed in range(10):
        rng = np.random.default_rng(seed)
        k = 2 + seed % 3
        m = HnnModel(4, k, hidden=6, embed=4, hyp_dim=3)
        X, y = rng.standard_normal((8, 4)), rng.integers(0, k, 8)
        f = m.make_loss(X, y, weight_decay=0.01)
        w = m.init_params(seed).flat()
        c = [1e-3, 0.1, 0.5, 1.0][seed % 4]
        g = tn.grad(f, tn.Tensor(w), c).numpy()
        gfd = fd_grad(lambda v: f(v, c).item(), w, 1e-6)
        if np.linalg.norm(g - gfd) > 1e-4 * max(1.0, np.linalg.norm(gfd)):
            fails.append(f"loss grad seed {seed}")
    rng = np.random.default_rng(0)
    m = HnnModel(3, 2, hidden=4, embed=3, hyp_dim=2)
    X, y = rng.standard_normal((10, 3)), rng.integers(0, 2, 10)
    raw, w, c = m.make_loss(X, y), m.init_params(1).flat(), 0.5
    s = 2.0 * np.linalg.norm(tn.grad(raw, tn.Tensor(w), c).numpy())
    f = lambda v, cc: raw(v, cc) / s
    ref = fd_grad(lambda v: S.sn_hat(tn.grad(f, tn.Tensor(v), c).numpy(), 2), w, 1e-5)
    for mode in ("fd", "analytic"):
        if np.linalg.norm(S.sn_grad(f, w, c, 2, hvp_mode=mode) - ref) > 1e-3 * np.linalg.norm(ref):
            fails.append(f"sn grad {mode}")
    for _ in range(50):
        w, u, v = (rng.uniform(-1, 1, 4) for _ in range(3))
        a, b = rng.uniform(-2, 2, 2)
        for mode, tol in (("analytic", 1e-6), ("fd", 1e-3)):
            Hu = tn.hvp(_nonquadratic, tn.Tensor(w), tn.Tensor(u), mode=mode).numpy()
            Hv = tn.hvp(_nonquadratic, tn.Tensor(w), tn.Tensor(v), mode=mode).numpy()
            Hm = tn.hvp(_nonquadratic, tn.Tensor(w), tn.Tensor(a * u + b * v), mode=mode).numpy()
            scale = np.linalg.norm(a * Hu + b * Hv) + np.linalg.norm(a * Hu) + np.linalg.norm(b * Hv)
            if np.linalg.norm(Hm - (a * Hu + b * Hv)) > tol * scale:
                fails.append(f"hvp linearity {mode}")
            if abs(u @ Hv - v @ Hu) > tol * (abs(u @ Hv) + abs(v @ Hu)):
                fails.append(f"hvp symmetry {mode}")
    ok = not fails
    assert report(6, ok, time.time() - t0, 60, f"failures: {sorted(set(fails)) or 'none'}")


# ------------------------------------------------------------------ 7 and 8

# desk-scale protocol: tree depth 4, branching 3, sigma 0.2 (the defaults), five seeds
ITERS_7, ITERS_8 = 100, 60
BASE_7 = {"bilevel": {"outer_iters": ITERS_7, "eta": 0.05, "rho_hat": 0.05}, "curvature": {"init": 1.0}}
BASE_8 = {"bilevel": {"outer_iters": ITERS_8, "eta": 0.05, "rho_hat": 0.05, "decay": True},
          "curvature": {"init": 1.0}}
_timing = {}


@pytest.mark.slow
def test_criterion_7_curvature_changes_sharpness():
    t0 = time.time()
    ratios, eig_ratios, learned_ls, best_ls, learned_acc, best_acc = [], [], [], [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(5):
            rows = ablate_curvature(parse_config({**BASE_7, "seed": s, "data": {"seed": s}}))
            fixed, learned = rows[:4], rows[4]
            ls = [r["l_sharp"] for r in fixed]
            eig = [r["top_eig"] for r in fixed]
            ratios.append(max(ls) / min(ls))
            eig_ratios.append(max(eig) / min(eig))
            best_ls.append(min(ls))
            best_acc.append(max(r["val_accuracy"] for r in fixed))
            learned_ls.append(learned["l_sharp"])
            learned_acc.append(learned["val_accuracy"])
    elapsed = time.time() - t0
    _timing[7] = elapsed
    ok_a = np.mean(ratios) >= 1.5
    ok_b_sharp = np.mean(learned_ls) <= 1.1 * np.mean(best_ls)
    ok_b_acc = np.mean(learned_acc) >= np.mean(best_acc) - 0.01
    detail = (f"(a) mean l_sharp max/min {np.mean(ratios):.2f} (>=1.5), top-eig max/min {np.mean(eig_ratios):.2f}; "
              f"(b) learned l_sharp {np.mean(learned_ls):.4g} vs 1.1 x best {1.1 * np.mean(best_ls):.4g}, "
              f"learned acc {np.mean(learned_acc):.3f} vs best-0.01 {np.mean(best_acc) - 0.01:.3f}")
    assert report(7, ok_a and ok_b_sharp and ok_b_acc, elapsed, 600, detail)


@pytest.mark.slow
def test_criterion_8_convergence_trends():
    t0 = time.time()
    mono, shrink, ratios = [], [], []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for s in range(5):
            r = run_training(parse_config({**BASE_8, "seed": s, "data": {"seed": s}}))
            rm = r.trace.running_min_grad_sq()
            mono.append(bool(np.all(np.diff(rm) <= 0)))
            d2 = np.array([rec["dFdc"] for rec in r.trace.records]) ** 2
            k = len(d2) // 3
            first, last = d2[:k].mean(), d2[-k:].mean()
            shrink.append(last <= first)
            ratios.append(last / first if first > 0 else float("nan"))
    elapsed = time.time() - t0
    # shares the time budget of the behavioural reproduction
    total = elapsed + _timing.get(7, 0.0)
    ok = all(mono) and all(shrink)
    assert report(8, ok, total, 600,
                  f"running min monotone {sum(mono)}/5; last/first-third mean |dF/dc|^2 "
                  f"{', '.join(f'{x:.2g}' for x in ratios)} (<=1 each)")


# ------------------------------------------------------------------ 9

TINY = {"seed": 1, "data": {"depth": 2, "branching": 3, "d_in": 4, "samples_per_leaf": 4, "seed": 1},
        "model": {"hidden": 4, "embed": 3, "hyp_dim": 2},
        "bilevel": {"outer_iters": 3, "eta": 0.05},
        "sharpness": {"power_iters": 10, "sweep_steps": [0.0, 0.2]}}


def _telemetry(path):
    return [{k: v for k, v in json.loads(s).items() if k != "wall_ms"} for s in path.read_text().splitlines()]


def test_criterion_9_determinism(tmp_path):
    t0 = time.time()
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(TINY))
    shared = tmp_path / "input.csv"
    main(["gen-data", "--depth", "3", "--seed", "4", "-o", str(shared)])
    diffs = []
    for tag in ("a", "b"):
        d = tmp_path / tag
        d.mkdir()
        main(["gen-data", "--depth", "3", "--seed", "4", "-o", str(d / "data.csv")])
        main(["hyperbolicity", str(shared), "--quadruples", "3000", "-o", str(d / "delta.json")])
        main(["verify-lipschitz", "--samples", "50", "-o", str(d / "lip.json")])
        main(["train", "--config", str(cfg), "-o", str(d / "run")])
        main(["sharpness-report", "--checkpoint", str(d / "run" / "checkpoint.ckpt"), "--config", str(cfg),
              "-o", str(d / "sharp.json")])
        main(["ablate-curvature", "--config", str(cfg), "--grid", "0.01,1", "-o", str(d / "abl")])
    a, b = tmp_path / "a", tmp_path / "b"
    files = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    for rel in files:
        if rel.name == "telemetry.jsonl":
            same = _telemetry(a / rel) == _telemetry(b / rel)
        else:
            same = (a / rel).read_bytes() == (b / rel).read_bytes()
        if not same:
            diffs.append(str(rel))
    ok = not diffs and len(files) > 10
    assert report(9, ok, time.time() - t0, 120,
                  f"{len(files)} output files compared, {len(diffs)} differ (wall_ms excluded)")
