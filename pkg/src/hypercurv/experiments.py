"""Experiment orchestration: single runs, fixed-curvature ablations, output files."""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .bilevel import BilevelTrace, CurvatureState, run_algorithm1
from .config import RunConfig
from .data import Dataset, gen_tree_dataset, load_csv
from .model import HnnModel, flat_to_params, save_checkpoint
from .sharpness import SharpnessReport, sharpness_report

ABLATION_GRID = (1e-4, 1e-2, 1e-1, 1.0)
ABLATION_COLUMNS = ("curvature_or_mode", "val_accuracy", "sn_hat", "l_sharp", "top_eig")


class RunFailure(RuntimeError):
    pass


@dataclass
class RunResult:
    config: RunConfig
    model: HnnModel
    w: np.ndarray
    state: CurvatureState
    trace: BilevelTrace
    report: SharpnessReport
    train_accuracy: float
    val_accuracy: float

    def metrics(self) -> dict:
        return {
            "mode": self.config.mode,
            "c_init": self.config.curvature.init,
            "c_final": self.state.c,
            "train_accuracy": self.train_accuracy,
            "val_accuracy": self.val_accuracy,
            "loss_scale": self.trace.loss_scale,
            "sn_hat": self.report.sn_hat,
            "scope_sn": self.report.scope_sn,
            "l_sharp": self.report.l_sharp,
            "top_eig": self.report.eigenvalues[0],
            "flags": self.trace.flags,
        }


def build_dataset(cfg: RunConfig) -> Dataset:
    d = cfg.data
    if d.source == "csv":
        return load_csv(d.path, d.label_column)
    return gen_tree_dataset(d.depth, d.branching, d.noise_sigma, d.d_in, d.seed, d.samples_per_leaf)


def run_training(cfg: RunConfig, out_dir=None, dataset: Optional[Dataset] = None) -> RunResult:
    """Train one model per ``cfg``; write outputs into ``out_dir`` when given."""
    ds = dataset if dataset is not None else build_dataset(cfg)
    (Xtr, ytr), (Xva, yva) = ds.split(cfg.bilevel.val_split, cfg.seed)
    m = cfg.model
    model = HnnModel(ds.features.shape[1], ds.n_classes, hidden=m.hidden, embed=m.embed,
                     hyp_dim=m.hyp_dim, clip_radius=cfg.clip_radius())
    w0 = model.init_params(cfg.seed, m.init_scale).flat()
    LS = model.make_loss(Xtr, ytr, cfg.weight_decay)
    LV = model.make_loss(Xva, yva)
    bcfg = cfg.bilevel_config()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    def on_error(w, c):
        if out is not None:
            save_checkpoint(out / "checkpoint.ckpt", flat_to_params(model.layout(), w), c,
                            {"model": model.get_config(), "status": "failed"})

    tele = open(out / "telemetry.jsonl", "w", encoding="utf-8") if out is not None else None
    try:
        w, state, trace = run_algorithm1(LS, LV, w0, cfg.curvature.init, bcfg, telemetry=tele,
                                         on_error=on_error)
    except Exception as exc:
        raise RunFailure(f"training failed: {exc}") from exc
    finally:
        if tele is not None:
            tele.close()
    c = state.c
    report = sharpness_report(LS, w, c, cfg.sharpness_config(), seed=cfg.seed,
                              metric=lambda wz: model.accuracy(wz, Xva, yva, c))
    res = RunResult(cfg, model, w, state, trace, report,
                    model.accuracy(w, Xtr, ytr, c), model.accuracy(w, Xva, yva, c))
    if out is not None:
        save_checkpoint(out / "checkpoint.ckpt", flat_to_params(model.layout(), w), c,
                        {"model": model.get_config(), "status": "ok"})
        (out / "sharpness_report.json").write_text(report.to_json() + "\n", encoding="utf-8")
        (out / "metrics.json").write_text(json.dumps(res.metrics(), sort_keys=True, indent=2) + "\n",
                                          encoding="utf-8")
    return res


def with_changes(cfg: RunConfig, **changes) -> RunConfig:
    """Copy of ``cfg`` with dotted-path overrides, e.g. ``{"curvature.init": 0.1}``."""
    doc = cfg.model_dump()
    for key, val in changes.items():
        node = doc
        parts = key.split(".")
        for p in parts[:-1]:
            node = node[p]
        node[parts[-1]] = val
    return RunConfig.model_validate(doc)


def ablate_curvature(cfg: RunConfig, grid: Sequence[float] = ABLATION_GRID, out_dir=None,
                     dataset: Optional[Dataset] = None) -> list[dict]:
    """Fixed-curvature runs over ``grid`` followed by one curvature-learning run."""
    ds = dataset if dataset is not None else build_dataset(cfg)
    c_lo = min(min(grid), cfg.curvature.c_min)
    c_hi = max(max(grid), cfg.curvature.c_max)
    rows = []
    for c in grid:
        sub = with_changes(cfg, **{"mode": "fixed-curvature", "curvature.init": float(c),
                                   "curvature.c_min": c_lo, "curvature.c_max": c_hi})
        r = run_training(sub, None if out_dir is None else Path(out_dir) / f"fixed_c{c:g}", ds)
        rows.append(_row(f"c={c:g}", r))
    sub = with_changes(cfg, mode="curvature-learning")
    r = run_training(sub, None if out_dir is None else Path(out_dir) / "learned", ds)
    rows.append(_row("learned", r, r.state.c))
    if out_dir is not None:
        write_table(rows, Path(out_dir) / "comparison.csv")
    return rows


def _row(label, r: RunResult, c_final=None) -> dict:
    row = {"curvature_or_mode": label, "val_accuracy": r.val_accuracy, "sn_hat": r.report.sn_hat,
           "l_sharp": r.report.l_sharp, "top_eig": r.report.eigenvalues[0]}
    if c_final is not None:
        row["curvature_or_mode"] = f"learned(c={c_final:.6g})"
    return row


def table_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    for r in rows:
        w.writerow([r["curvature_or_mode"]] + [repr(float(r[k])) for k in ABLATION_COLUMNS[1:]])
    return buf.getvalue()


def write_table(rows, path) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(table_csv(rows), encoding="utf-8")
