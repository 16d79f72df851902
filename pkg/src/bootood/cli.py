"""Command-line entry point: ``bootood {train,eval,ablate,diagnose}``.

Exit codes: 0 success, 1 config error, 2 runtime/numerical error, 3 IO error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import replace
from pathlib import Path

from . import pipeline
from .config import RunConfig, load_config
from .errors import BootOODError, ConfigError, DataIOError
from .metrics import write_reports

log = logging.getLogger("bootood")


def _config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    if getattr(args, "seed", None) is not None:
        cfg = replace(cfg, seed=args.seed)
    return cfg


def _scorers(args, cfg):
    if not args.scorer:
        return cfg.scorers
    toks = [t.strip() for s in args.scorer for t in s.split(",") if t.strip()]
    pipeline.expand_scorers(toks)  # validate early
    return tuple(toks)


def _load(args):
    if not Path(args.checkpoint).is_file():
        raise DataIOError(f"checkpoint not found: {args.checkpoint}")
    model, geometry, cfg, meta = pipeline.load_run_checkpoint(args.checkpoint)
    if args.config:
        cfg = load_config(args.config)
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    return model, geometry, cfg, meta


def cmd_train(args) -> int:
    cfg = _config(args)
    model, geometry, record = pipeline.run_training(cfg, args.out)
    last = record.epochs[-1]
    print(f"trained {cfg.epochs} epochs; phase 1 ended at epoch {record.phase1_end_epoch}; "
          f"train acc {last.train_accuracy:.4f}; NC1 {last.nc.nc1:.4g}")
    print(f"artifacts in {args.out}")
    return 0


def cmd_eval(args) -> int:
    model, geometry, cfg, _ = _load(args)
    scorers = _scorers(args, cfg)
    data = pipeline.build_datasets(cfg)
    ood = dict(data.ood)
    for arg in args.ood or ():
        name, x = pipeline.load_ood_arg(arg)
        if x.shape[1] != cfg.input_dim:
            raise ConfigError(f"OOD set {name}: dim {x.shape[1]} != input_dim {cfg.input_dim}")
        ood[name] = x
    res = pipeline.evaluate_run(model, geometry, cfg, data, scorers=scorers, ood_sets=ood)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_reports(out / "metrics.csv", res.reports)
    if res.selection is not None:
        pipeline.write_selection(out / "selection.csv", res.selection, res.selected)
        print(f"auto-selected scorer: {res.selected}")
    pipeline.write_histograms(out, res.histograms)
    print(f"ID accuracy {res.id_acc:.4f}")
    for r in res.reports:
        print(f"{r.scorer:>14s} {r.ood_set:>8s}  AUROC {100 * r.auroc:6.2f}  FPR95 {100 * r.fpr95:6.2f}")
    return 0


def cmd_ablate(args) -> int:
    cfg = _config(args)
    grid_text = pipeline.DEFAULT_GRID
    if args.grid:
        p = Path(args.grid)
        grid_text = p.read_text() if p.is_file() else args.grid
    cells = pipeline.grid_cells(pipeline.parse_grid(grid_text), cfg)
    if not cells:
        raise ConfigError("empty ablation grid")
    rows = pipeline.run_ablation(cfg, cells)
    summary = pipeline.summarize(rows, reference=("full", cfg.K))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_rows(out / "ablation_cells.csv", rows, pipeline.CELL_FIELDS)
    pipeline.write_rows(out / "ablation_summary.csv", summary, pipeline.SUMMARY_FIELDS)
    for s in summary:
        if s["scorer"] == "best":
            print(f"{s['variant']:>10s} K={s['K']} {s['ood_set']:>5s}  AUROC {100 * s['auroc_mean']:6.2f} "
                  f"± {100 * s['auroc_std']:.2f}  (Δ {s['delta_auroc']:+.2f})")
    return 0


def cmd_diagnose(args) -> int:
    model, geometry, cfg, _ = _load(args)
    data = pipeline.build_datasets(cfg)
    report, hists = pipeline.diagnose(model, geometry, cfg, data, split=args.split)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pipeline.write_nc_report(out / "nc_report.csv", report)
    pipeline.write_histograms(out, hists)
    for f in report.CSV_FIELDS:
        print(f"{f:>14s} {getattr(report, f):.6g}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bootood", description="Training-time OOD detection on synthetic blobs.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train a model and write checkpoints and logs")
    t.add_argument("--config")
    t.add_argument("--seed", type=int)
    t.add_argument("--out", default="run")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="score ID test data against OOD sets")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--config", help="override the config stored in the checkpoint")
    e.add_argument("--seed", type=int)
    e.add_argument("--scorer", action="append", help="scorer ids, 'all' or 'auto'; repeatable or comma separated")
    e.add_argument("--ood", action="append", metavar="NAME=PATH", help="extra OOD set from a feature file")
    e.add_argument("--out", default="eval")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="run an ablation grid and aggregate over seeds")
    a.add_argument("--config")
    a.add_argument("--seed", type=int, help="ignored by the grid; seeds come from the grid or config")
    a.add_argument("--grid", help="grid text or path to a grid file")
    a.add_argument("--out", default="ablation")
    a.set_defaults(func=cmd_ablate)

    d = sub.add_parser("diagnose", help="neural-collapse report and feature histograms")
    d.add_argument("--checkpoint", required=True)
    d.add_argument("--config")
    d.add_argument("--seed", type=int)
    d.add_argument("--split", choices=("train", "val", "test"), default="train")
    d.add_argument("--out", default="diagnose")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except BootOODError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
