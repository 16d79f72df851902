"""Two-phase training loop: CE-only warm-up, then the full scheduled objective."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from . import geometry as geo
from . import pseudo_ood
from .diagnostics import NCReport, nc_metrics
from .errors import ConfigError, NonFiniteLossError
from .geometry import GeometryState
from .losses import LossBreakdown, LossWeights
from .models import SGD, ModelState, backbone_forward, clip_grad_norm, init_model
from .numeric import SeededRng
from .objective import REG_TARGETS, loss_and_grads

log = logging.getLogger(__name__)

# child-stream keys of the run seed
STREAM_INIT, STREAM_ORDER, STREAM_MIX = 0, 1, 2


@dataclass(frozen=True)
class WarmupPolicy:
    """``fixed``: Phase 1 lasts ``epochs``. ``diagnostic``: ends once the train
    error is 0 and NC1 / norm-CV are under threshold, with ``epochs`` as fallback."""

    mode: str = "diagnostic"
    epochs: int = 40
    nc1_threshold: float = 0.2
    cv_threshold: float = 0.2

    def __post_init__(self):
        if self.mode not in ("fixed", "diagnostic"):
            raise ConfigError(f"unknown warm-up policy {self.mode!r}")
        if self.epochs < 0:
            raise ConfigError("warm-up epochs must be >= 0")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 60
    batch_size: int = 64
    lr: float = 0.05
    head_lr: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    grad_clip: float = 10.0
    hidden: tuple = (64, 64)
    feature_dim: int = 16
    K: int = 4
    alpha: float = 1.0
    M: int = 0  # 0 -> one mixture per ID row
    spacing: str = "uniform"
    beta_mu: float = 0.95
    beta_r: float = 0.95
    weights: LossWeights = field(default_factory=LossWeights)
    ramp_fraction: float = 0.2
    reg_target: str = "raw"
    warmup: WarmupPolicy = field(default_factory=WarmupPolicy)
    use_warmup: bool = True
    use_radius: bool = True
    use_separation: bool = True
    seed: int = 0
    log_interval: int = 10
    cross_class_pairs: bool = False

    def __post_init__(self):
        if self.batch_size < 2:
            raise ConfigError("batch size must be >= 2")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            from .errors import InvalidKError

            raise InvalidKError(f"K must be a positive integer, got {self.K!r}")
        if self.reg_target not in REG_TARGETS:
            raise ConfigError(f"reg_target must be one of {REG_TARGETS}")
        if not 0 < self.ramp_fraction <= 1:
            raise ConfigError("ramp_fraction must lie in (0, 1]")
        if self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.lr <= 0 or self.head_lr <= 0:
            raise ConfigError("learning rates must be positive")
        if self.log_interval < 1:
            raise ConfigError("log_interval must be >= 1")

    @property
    def effective_weights(self) -> LossWeights:
        """Weights after the ablation switches (schedule bounds set by the trainer)."""
        w = self.weights
        if not self.use_radius:
            w = replace(w, ood_max=0.0)
        if not self.use_separation:
            w = replace(w, sep_max=0.0)
        return w

    def ce_only(self) -> "TrainConfig":
        return replace(self, use_radius=False, use_separation=False)


@dataclass
class EpochDiagnostics:
    epoch: int
    iteration: int
    phase: int
    train_accuracy: float
    nc: NCReport


@dataclass
class TrainRecord:
    rows: list = field(default_factory=list)
    epochs: list = field(default_factory=list)
    phase1_end_iteration: int | None = None
    phase1_end_epoch: int | None = None

    ROW_FIELDS = ("iteration", "epoch", "phase", *LossBreakdown.CSV_FIELDS, "batch_accuracy", "mu_norm", "r_ref", "nc1", "norm_cv")
    EPOCH_FIELDS = ("epoch", "iteration", "phase", "train_accuracy", *NCReport.CSV_FIELDS)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.ROW_FIELDS)
            for r in self.rows:
                w.writerow([_fmt(r[k]) for k in self.ROW_FIELDS])

    def write_epoch_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(self.EPOCH_FIELDS)
            for e in self.epochs:
                vals = [e.epoch, e.iteration, e.phase, e.train_accuracy] + [getattr(e.nc, f) for f in NCReport.CSV_FIELDS]
                w.writerow([_fmt(v) for v in vals])


def _fmt(v):
    return repr(float(v)) if isinstance(v, (float, np.floating)) else str(v)


def phase1_complete(diagnostics: list[EpochDiagnostics], policy: WarmupPolicy) -> bool:
    """Whether Phase 1 may end after the latest epoch in ``diagnostics``."""
    if not diagnostics:
        return False
    last = diagnostics[-1]
    if last.epoch >= policy.epochs:
        return True
    if policy.mode == "fixed":
        return False
    return (
        last.nc.train_error == 0.0
        and last.nc.nc1 < policy.nc1_threshold
        and last.nc.norm_cv < policy.cv_threshold
    )


def batches(n, batch_size, order):
    """Index chunks over ``order``; a trailing singleton joins the previous chunk."""
    starts = list(range(0, n, batch_size))
    if len(starts) > 1 and n - starts[-1] == 1:
        starts.pop()
    for k, s in enumerate(starts):
        e = starts[k + 1] if k + 1 < len(starts) else n
        yield order[s:e]


def train(config: TrainConfig, inputs, labels, num_classes=None, on_step=None, on_phase_end=None):
    """Run both phases. Returns (model, geometry, record).

    ``on_step(t, model, geometry, output)`` fires after every update;
    ``on_phase_end(model, geometry, record)`` fires once when Phase 1 ends.
    """
    inputs = np.asarray(inputs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.intp)
    N = inputs.shape[0]
    if N < 2:
        raise ConfigError("training set needs at least 2 samples")
    C = int(labels.max()) + 1 if num_classes is None else num_classes
    if labels.min() < 0 or labels.max() >= C:
        raise ConfigError("labels out of range")

    root = SeededRng(config.seed)
    order_rng = root.spawn(STREAM_ORDER)
    mix_rng = root.spawn(STREAM_MIX)
    model = init_model(inputs.shape[1], C, config.hidden, config.feature_dim, config.K, rng=root.spawn(STREAM_INIT))
    geometry = GeometryState(config.beta_mu, config.beta_r, config.K, config.spacing)
    opt = SGD(config.lr, config.head_lr, config.momentum, config.weight_decay)
    record = TrainRecord()

    iters_per_epoch = len(list(batches(N, config.batch_size, np.arange(N))))
    total_iters = iters_per_epoch * config.epochs
    ramp = max(1, int(round(config.ramp_fraction * total_iters)))
    base_weights = config.effective_weights
    off = replace(base_weights, ood_max=0.0, sep_max=0.0)
    weights = off
    phase = 1

    def start_phase2(t):
        nonlocal phase, weights
        phase = 2
        weights = replace(base_weights, ood_start=t, ood_end=t + ramp, sep_start=t, sep_end=t + ramp)

    if not config.use_warmup:
        start_phase2(0)
        record.phase1_end_iteration = 0
        record.phase1_end_epoch = 0

    last_nc = None
    t = 0
    for epoch in range(1, config.epochs + 1):
        order = order_rng.permutation(N)
        for idx in batches(N, config.batch_size, order):
            x, y = inputs[idx], labels[idx]
            fwd = backbone_forward(model.backbone, x)
            geometry = geo.update(geometry, fwd[0])
            pseudo = None
            if weights.ood(t) > 0 or weights.sep(t) > 0:
                M = config.M or len(idx)
                pseudo = pseudo_ood.generate(
                    fwd[0], M, config.alpha, config.K, mix_rng, labels=y if config.cross_class_pairs else None
                )
            out = loss_and_grads(model, x, y, geometry, pseudo, weights, t, config.reg_target, forward=fwd)
            if not math.isfinite(out.breakdown.total):
                raise NonFiniteLossError(t)
            clip_grad_norm(out.grads, config.grad_clip)
            opt.step(model, out.grads)
            if on_step is not None:
                on_step(t, model, geometry, out)
            if t % config.log_interval == 0:
                record.rows.append(
                    {
                        "iteration": t,
                        "epoch": epoch,
                        "phase": phase,
                        **{f: getattr(out.breakdown, f) for f in LossBreakdown.CSV_FIELDS},
                        "batch_accuracy": float(np.mean(out.logits.argmax(axis=1) == y)),
                        "mu_norm": float(np.linalg.norm(geometry.mu)),
                        "r_ref": float(geometry.r_ref),
                        "nc1": last_nc.nc1 if last_nc else float("nan"),
                        "norm_cv": last_nc.norm_cv if last_nc else float("nan"),
                    }
                )
            t += 1

        h = model.features(inputs)
        z = h @ model.W.T
        last_nc = nc_metrics(h, labels, z, num_classes=C)
        record.epochs.append(EpochDiagnostics(epoch, t, phase, 1.0 - last_nc.train_error, last_nc))
        log.debug("epoch %d phase %d acc %.4f nc1 %.4f cv %.4f", epoch, phase, 1 - last_nc.train_error, last_nc.nc1, last_nc.norm_cv)
        if phase == 1 and phase1_complete(record.epochs, config.warmup):
            start_phase2(t)
            record.phase1_end_iteration = t
            record.phase1_end_epoch = epoch
            if on_phase_end is not None:
                on_phase_end(model, geometry, record)
    return model, geometry, record
