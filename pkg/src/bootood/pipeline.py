"""End-to-end runs: data, training artifacts, evaluation, diagnostics, ablation."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import pseudo_ood
from .config import RunConfig, parse_config
from .data import LabeledDataset, make_far_ood, make_near_ood, make_splits, overlap_fraction, read_features
from .diagnostics import NCReport, histogram, max_cosines, nc_metrics, radii, shared_range
from .errors import ConfigError, CorruptHeaderError
from .geometry import GeometryState
from .metrics import EvalReport, evaluate, id_accuracy, write_reports
from .models import ModelState, read_checkpoint, write_checkpoint
from .numeric import SeededRng
from .scorers import SCORERS, ScoringContext, react_clip, select_scorer
from .svg import step_histogram_svg, write_histogram_csv
from .trainer import TrainRecord, train

log = logging.getLogger(__name__)

STREAM_SELECT, STREAM_HIST = 10, 11
VARIANTS = ("full", "no-warmup", "no-radius", "no-sep")


@dataclass
class Datasets:
    train: LabeledDataset
    val: LabeledDataset
    test: LabeledDataset
    ood: dict = field(default_factory=dict)


def build_datasets(cfg: RunConfig) -> Datasets:
    splits = make_splits(
        cfg.num_classes, cfg.input_dim, cfg.n_train, cfg.n_val, cfg.n_test, cfg.separation, cfg.sigma, cfg.data_seed
    )
    near = make_near_ood(splits["train"], cfg.near_n, cfg.near_eta, seed=cfg.data_seed)
    far = make_far_ood(cfg.input_dim, cfg.far_n, cfg.far_mode, cfg.far_scale, seed=cfg.data_seed)
    frac = overlap_fraction(far, splits["train"].centers, cfg.sigma)
    if frac >= 0.01:
        log.warning("%.1f%% of far-OOD samples fall inside the ID shell", 100 * frac)
    return Datasets(splits["train"], splits["val"], splits["test"], {"near": near, "far": far})


# --- checkpoints -----------------------------------------------------------

def save_run_checkpoint(path, model: ModelState, geometry: GeometryState, cfg: RunConfig, **meta) -> None:
    extra = {}
    if geometry.mu is not None:
        extra["geometry.mu"] = geometry.mu
        extra["geometry.r_ref"] = np.array([geometry.r_ref])
    metadata = {
        "config": cfg.to_text(),
        "geometry": {"beta_mu": geometry.beta_mu, "beta_r": geometry.beta_r, "K": geometry.K, "spacing": geometry.spacing},
        **meta,
    }
    write_checkpoint(path, model, extra, metadata)


def load_run_checkpoint(path):
    """Returns (model, geometry, config, metadata)."""
    model, tensors, meta = read_checkpoint(path)
    try:
        cfg = parse_config(meta["config"])
        g = meta["geometry"]
    except KeyError as exc:
        raise CorruptHeaderError(f"{path}: missing metadata {exc}") from exc
    mu = tensors.get("geometry.mu")
    r_ref = float(tensors["geometry.r_ref"][0]) if "geometry.r_ref" in tensors else None
    geometry = GeometryState(g["beta_mu"], g["beta_r"], g["K"], g["spacing"], mu, r_ref)
    return model, geometry, cfg, meta


# --- training --------------------------------------------------------------

CHECKPOINT = "checkpoint.bin"
PHASE1_CHECKPOINT = "checkpoint_phase1.bin"
TRAIN_LOG = "train_log.csv"
EPOCH_LOG = "epoch_log.csv"
RESOLVED_CONFIG = "config.resolved.cfg"


def run_training(cfg: RunConfig, out_dir, data: Datasets | None = None):
    """Train and write the run artifacts under ``out_dir``."""
    data = data or build_datasets(cfg)
    tcfg = cfg.train_config()
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(cfg.to_text())

    def on_phase_end(model, geometry, record):
        save_run_checkpoint(out / PHASE1_CHECKPOINT, model, geometry, cfg, phase=1, epoch=record.phase1_end_epoch)

    model, geometry, record = train(tcfg, data.train.inputs, data.train.labels, cfg.num_classes, on_phase_end=on_phase_end)
    save_run_checkpoint(out / CHECKPOINT, model, geometry, cfg, phase=2 if record.phase1_end_epoch is not None else 1)
    record.write_csv(out / TRAIN_LOG)
    record.write_epoch_csv(out / EPOCH_LOG)
    return model, geometry, record


# --- evaluation ------------------------------------------------------------

@dataclass
class EvalResult:
    reports: list
    selection: dict | None
    selected: str | None
    id_acc: float
    histograms: dict


def _centre(model, geometry, data):
    if geometry.mu is not None:
        return geometry.mu
    return model.features(data.train.inputs).mean(axis=0)


def scoring_context(model: ModelState, geometry: GeometryState, cfg: RunConfig, data: Datasets) -> ScoringContext:
    h_val = model.features(data.val.inputs)
    return ScoringContext(model.W, _centre(model, geometry, data), react_clip(h_val, cfg.react_percentile), cfg.ebo_temperature)


def expand_scorers(tokens):
    names = []
    for tok in tokens:
        if tok == "all":
            names.extend(SCORERS)
        elif tok == "auto" or tok in SCORERS:
            names.append(tok)
        else:
            raise ConfigError(f"unknown scorer {tok!r}")
    return names


def evaluate_run(model, geometry, cfg: RunConfig, data: Datasets, scorers=None, ood_sets=None) -> EvalResult:
    names = expand_scorers(scorers or cfg.scorers)
    ood_sets = data.ood if ood_sets is None else ood_sets
    ctx = scoring_context(model, geometry, cfg, data)
    h_test = model.features(data.test.inputs)
    acc = id_accuracy(h_test @ model.W.T, data.test.labels)

    selection = selected = None
    if "auto" in names:
        h_val = model.features(data.val.inputs)
        selected, selection = select_scorer(ctx, h_val, SeededRng(cfg.seed).spawn(STREAM_SELECT), alpha=cfg.alpha)

    id_cache = {}
    reports = []
    for name in names:
        real = selected if name == "auto" else name
        label = f"auto:{selected}" if name == "auto" else name
        if real not in id_cache:
            id_cache[real] = ctx.score(real, h_test)
        for set_name, x in ood_sets.items():
            ood = ctx.score(real, model.features(x))
            reports.append(evaluate(label, set_name, id_cache[real], ood, acc))
    hists = feature_histograms(model, ctx.mu, h_test, cfg)
    return EvalResult(reports, selection, selected, acc, hists)


def feature_histograms(model, mu, h_id, cfg: RunConfig):
    """Radius and max-cosine histograms of ID features vs their mixup pseudo-OOD."""
    rng = SeededRng(cfg.seed).spawn(STREAM_HIST)
    pseudo = pseudo_ood.generate(h_id, h_id.shape[0], cfg.alpha, cfg.K, rng)
    r_id, r_ood = radii(h_id, mu), radii(pseudo.raw, mu)
    c_id, c_ood = max_cosines(h_id, model.W), max_cosines(pseudo.raw, model.W)
    rr = shared_range(r_id, r_ood)
    return {
        "radius": [("ID", histogram(r_id, cfg.hist_bins, rr)), ("pseudo-OOD", histogram(r_ood, cfg.hist_bins, rr))],
        "max_cosine": [
            ("ID", histogram(c_id, cfg.hist_bins, (-1.0, 1.0))),
            ("pseudo-OOD", histogram(c_ood, cfg.hist_bins, (-1.0, 1.0))),
        ],
    }


def write_histograms(out_dir, hists) -> list:
    out = Path(out_dir)
    written = []
    labels = {"radius": "distance to ID centre", "max_cosine": "max cosine to class weights"}
    for key, series in hists.items():
        svg = out / f"{key}_hist.svg"
        svg.write_text(step_histogram_svg(series, title=f"{key.replace('_', ' ')}: ID vs pseudo-OOD", xlabel=labels[key]))
        write_histogram_csv(out / f"{key}_hist.csv", series)
        written += [svg, out / f"{key}_hist.csv"]
    return written


def write_selection(path, selection: dict, selected: str) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("scorer", "proxy_auroc", "selected"))
        for name, v in selection.items():
            w.writerow((name, repr(float(v)), int(name == selected)))


def load_ood_arg(arg: str):
    """``name=path`` to a feature file of raw inputs."""
    if "=" not in arg:
        raise ConfigError(f"OOD set must be given as name=path, got {arg!r}")
    name, path = arg.split("=", 1)
    x, _ = read_features(path)
    return name, x


# --- diagnostics -----------------------------------------------------------

def diagnose(model, geometry, cfg: RunConfig, data: Datasets, split="train"):
    ds = {"train": data.train, "val": data.val, "test": data.test}[split]
    h = model.features(ds.inputs)
    report = nc_metrics(h, ds.labels, h @ model.W.T, num_classes=cfg.num_classes)
    hists = feature_histograms(model, _centre(model, geometry, data), h, cfg)
    return report, hists


def write_nc_report(path, report: NCReport) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(NCReport.CSV_FIELDS) + "\n")
        fh.write(",".join(repr(float(getattr(report, f))) for f in NCReport.CSV_FIELDS) + "\n")


# --- ablation --------------------------------------------------------------

def variant_config(cfg: RunConfig, variant: str, K: int, seed: int) -> RunConfig:
    if variant not in VARIANTS:
        raise ConfigError(f"unknown ablation variant {variant!r}; expected one of {VARIANTS}")
    flags = {
        "full": {},
        "no-warmup": {"use_warmup": False},
        "no-radius": {"use_radius": False},
        "no-sep": {"use_separation": False},
    }[variant]
    return replace(cfg, K=K, seed=seed, **flags)


def parse_grid(text: str) -> list:
    """``variants=a,b; K=1,4; seeds=0,1`` -> list of (variant, K, seed) cells.

    Missing keys default to (full), the config's K and the config's seeds.
    Several blocks may be given on separate lines; cells are de-duplicated.
    """
    blocks = []
    for line in text.replace("\n", "|").split("|"):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        block = {}
        for part in line.split(";"):
            part = part.strip()
            if not part:
                continue
            if "=" not in part:
                raise ConfigError(f"bad grid entry {part!r}")
            k, v = (s.strip() for s in part.split("=", 1))
            if k not in ("variants", "K", "seeds"):
                raise ConfigError(f"unknown grid key {k!r}")
            block[k] = [s.strip() for s in v.split(",") if s.strip()]
        blocks.append(block)
    return blocks


def grid_cells(blocks, cfg: RunConfig) -> list:
    cells = []
    for b in blocks:
        try:
            Ks = [int(k) for k in b.get("K", [cfg.K])]
            seeds = [int(s) for s in b.get("seeds", cfg.seeds)]
        except ValueError as exc:
            raise ConfigError(f"bad grid value: {exc}") from exc
        for v in b.get("variants", ["full"]):
            if v not in VARIANTS:
                raise ConfigError(f"unknown ablation variant {v!r}")
            for K in Ks:
                if K < 1:
                    raise ConfigError(f"InvalidK: K must be >= 1, got {K}")
                for s in seeds:
                    if (v, K, s) not in cells:
                        cells.append((v, K, s))
    return cells


DEFAULT_GRID = "variants=full,no-warmup,no-radius,no-sep; K=4\nvariants=full; K=1,3,6"


def run_cell(cfg: RunConfig, cell):
    variant, K, seed = cell
    ccfg = variant_config(cfg, variant, K, seed)
    data = build_datasets(ccfg)
    model, geometry, _ = train(ccfg.train_config(), data.train.inputs, data.train.labels, ccfg.num_classes)
    res = evaluate_run(model, geometry, ccfg, data, scorers=("all", "auto"))
    rows = []
    for r in res.reports:
        rows.append({"variant": variant, "K": K, "seed": seed, **{f: getattr(r, f) for f in EvalReport.CSV_FIELDS}})
    for set_name in data.ood:
        per = [r for r in res.reports if r.ood_set == set_name and not r.scorer.startswith("auto")]
        best = max(per, key=lambda r: r.auroc)
        rows.append({"variant": variant, "K": K, "seed": seed, **{f: getattr(best, f) for f in EvalReport.CSV_FIELDS}, "scorer": "best"})
    return rows


def run_ablation(cfg: RunConfig, cells, workers=None) -> list:
    workers = workers or int(os.environ.get("BOOTOOD_THREADS", "1") or 1)
    if workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            chunks = list(ex.map(run_cell, [cfg] * len(cells), cells))
    else:
        chunks = [run_cell(cfg, c) for c in cells]
    return [r for chunk in chunks for r in chunk]


CELL_FIELDS = ("variant", "K", "seed", *EvalReport.CSV_FIELDS)
SUMMARY_FIELDS = (
    "variant", "K", "scorer", "ood_set", "n_seeds",
    "auroc_mean", "auroc_std", "fpr95_mean", "fpr95_std", "id_acc_mean", "id_acc_std",
    "delta_auroc", "delta_fpr95", "delta_id_acc",
)


def summarize(rows, reference=("full", None)) -> list:
    """Mean/std over seeds per (variant, K, scorer, ood_set), with deltas in
    percentage points against the reference cell (full model, default K)."""
    groups = {}
    for r in rows:
        scorer = "auto" if r["scorer"].startswith("auto") else r["scorer"]
        groups.setdefault((r["variant"], r["K"], scorer, r["ood_set"]), []).append(r)
    ref_variant, ref_K = reference
    out = []
    stats = {}
    for key, rs in groups.items():
        a = np.array([r["auroc"] for r in rs])
        f = np.array([r["fpr95"] for r in rs])
        acc = np.array([r["id_acc"] for r in rs])
        stats[key] = (a.mean(), f.mean(), acc.mean())
        out.append({
            "variant": key[0], "K": key[1], "scorer": key[2], "ood_set": key[3], "n_seeds": len(rs),
            "auroc_mean": a.mean(), "auroc_std": a.std(), "fpr95_mean": f.mean(), "fpr95_std": f.std(),
            "id_acc_mean": acc.mean(), "id_acc_std": acc.std(),
        })
    for row in out:
        ref = stats.get((ref_variant, ref_K if ref_K is not None else row["K"], row["scorer"], row["ood_set"]))
        if ref is None:
            row.update(delta_auroc=float("nan"), delta_fpr95=float("nan"), delta_id_acc=float("nan"))
        else:
            row.update(
                delta_auroc=100 * (row["auroc_mean"] - ref[0]),
                delta_fpr95=100 * (row["fpr95_mean"] - ref[1]),
                delta_id_acc=100 * (row["id_acc_mean"] - ref[2]),
            )
    return out


def write_rows(path, rows, fieldnames) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(fieldnames)
        for r in rows:
            w.writerow([repr(float(r[k])) if isinstance(r[k], (float, np.floating)) else r[k] for k in fieldnames])
