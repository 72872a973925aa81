"""Command-line entry point: ``hypercurv <subcommand> ...``.

Exit status: 0 on success, 1 when a run fails or a certificate is violated,
2 for invalid configuration or arguments.
"""
from __future__ import annotations

import argparse
import json
import sys
import warnings
from pathlib import Path

from . import lipschitz as lip
from .config import ConfigError, json_schema, load_config
from .data import CsvParseError, DataSizeError, delta_hyperbolicity, gen_tree_dataset, load_csv, write_csv
from .experiments import ABLATION_GRID, RunFailure, ablate_curvature, build_dataset, run_training
from .model import CheckpointError, HnnModel, load_checkpoint
from .sharpness import sharpness_report

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _emit(text: str, path=None) -> None:
    if path is None:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    else:
        Path(path).parent.mkdir(parents=True, exist_ok=True)
        Path(path).write_text(text if text.endswith("\n") else text + "\n", encoding="utf-8")


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.output or cfg.output_dir)
    try:
        res = run_training(cfg, out)
    except RunFailure as exc:
        print(f"error: {exc}; checkpoint in {out}", file=sys.stderr)
        return EXIT_FAIL
    m = res.metrics()
    print(f"c={m['c_final']:.6g} val_accuracy={m['val_accuracy']:.4f} l_sharp={m['l_sharp']:.6g} -> {out}")
    return EXIT_OK


def _cmd_verify(args) -> int:
    reports = lip.verify_all(args.samples, args.seed, tuple(args.curvatures), dim=args.dim)
    _emit(lip.reports_to_json(reports), args.output)
    bad = sum(r.violations for r in reports)
    if bad:
        print(f"{bad} violation(s)", file=sys.stderr)
        return EXIT_FAIL
    return EXIT_OK


def _cmd_sharpness(args) -> int:
    cfg = load_config(args.config)
    try:
        params, c, extra = load_checkpoint(args.checkpoint)
    except (OSError, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    spec = extra.get("model")
    if not spec:
        print("error: checkpoint has no model description", file=sys.stderr)
        return EXIT_FAIL
    model = HnnModel(**spec)
    ds = build_dataset(cfg)
    (Xtr, ytr), (Xva, yva) = ds.split(cfg.bilevel.val_split, cfg.seed)
    w = model.layout().pack(params.as_dict())
    LS = model.make_loss(Xtr, ytr, cfg.weight_decay)
    report = sharpness_report(LS, w, c, cfg.sharpness_config(), seed=cfg.seed,
                              metric=lambda wz: model.accuracy(wz, Xva, yva, c))
    _emit(report.to_json(), args.output)
    return EXIT_OK


def _cmd_delta(args) -> int:
    try:
        ds = load_csv(args.csv, args.label_column)
        d = delta_hyperbolicity(ds, args.quadruples, args.seed)
    except (OSError, CsvParseError, DataSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    _emit(json.dumps({"delta": d, "n_points": len(ds), "n_quadruples": args.quadruples,
                      "seed": args.seed, "source": str(args.csv)}, sort_keys=True), args.output)
    return EXIT_OK


def _cmd_gen(args) -> int:
    try:
        ds = gen_tree_dataset(args.depth, args.branching, args.noise_sigma, args.d_in, args.seed,
                              args.samples_per_leaf)
    except (ValueError, DataSizeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    write_csv(ds, args.output)
    return EXIT_OK


def _cmd_ablate(args) -> int:
    cfg = load_config(args.config)
    out = Path(args.output or cfg.output_dir)
    try:
        rows = ablate_curvature(cfg, tuple(args.grid), out)
    except RunFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    for r in rows:
        print(f"{r['curvature_or_mode']:>22s}  acc={r['val_accuracy']:.4f}  l_sharp={r['l_sharp']:.6g}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hypercurv", description="Curvature-aware hyperbolic network toolkit.")
    p.add_argument("--schema", action="store_true", help="print the run-config JSON schema and exit")
    sub = p.add_subparsers(dest="command")

    s = sub.add_parser("train", help="train one model from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("-o", "--output", help="output directory (default: config output_dir)")
    s.set_defaults(func=_cmd_train)

    s = sub.add_parser("verify-lipschitz", help="empirically check the Lipschitz inequalities")
    s.add_argument("--samples", type=int, default=2000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--dim", type=int, default=4)
    s.add_argument("--curvatures", type=_floats, default=list(lip.DEFAULT_CURVATURES))
    s.add_argument("-o", "--output", help="write the JSON report here instead of stdout")
    s.set_defaults(func=_cmd_verify)

    s = sub.add_parser("sharpness-report", help="sharpness metrics of a saved checkpoint")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--config", required=True, help="run config that produced the checkpoint")
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_sharpness)

    s = sub.add_parser("hyperbolicity", help="relative Gromov delta of a CSV dataset")
    s.add_argument("csv")
    s.add_argument("--label-column", default="label")
    s.add_argument("--quadruples", type=int, default=50_000)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output")
    s.set_defaults(func=_cmd_delta)

    s = sub.add_parser("gen-data", help="write a synthetic tree dataset as CSV")
    s.add_argument("--depth", type=int, default=4)
    s.add_argument("--branching", type=int, default=3)
    s.add_argument("--noise-sigma", type=float, default=0.2)
    s.add_argument("--d-in", type=int, default=8)
    s.add_argument("--samples-per-leaf", type=int, default=1)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=_cmd_gen)

    s = sub.add_parser("ablate-curvature", help="fixed-curvature grid plus a curvature-learning run")
    s.add_argument("--config", required=True)
    s.add_argument("--grid", type=_floats, default=list(ABLATION_GRID))
    s.add_argument("-o", "--output", help="output directory (default: config output_dir)")
    s.set_defaults(func=_cmd_ablate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code in (0, None) else EXIT_CONFIG
    if args.schema:
        sys.stdout.write(json_schema())
        return EXIT_OK
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_CONFIG
    try:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            return args.func(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
