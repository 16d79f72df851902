"""Loss terms and the scheduled total objective.

Each loss returns ``(value, grad)``; values are batch means.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, LabelOutOfRangeError
from .numeric import as_matrix, log_softmax, normalize_rows, softmax

log = logging.getLogger(__name__)


def _cross_entropy(logits, targets, err):
    logits = as_matrix(logits, "logits")
    targets = np.asarray(targets, dtype=np.intp)
    B, C = logits.shape
    if targets.shape != (B,):
        raise err(f"expected {B} targets, got shape {targets.shape}")
    if B and (targets.min() < 0 or targets.max() >= C):
        raise err(f"targets must lie in [0, {C})")
    logp = log_softmax(logits)
    rows = np.arange(B)
    loss = -float(logp[rows, targets].mean())
    grad = softmax(logits)
    grad[rows, targets] -= 1.0
    return loss, grad / B


def ce_loss(logits, labels):
    """Mean cross-entropy; gradient is ``(softmax(z) - onehot(y)) / B``."""
    return _cross_entropy(logits, labels, LabelOutOfRangeError)


def radius_cls_loss(shell_logits, shell_index):
    """Cross-entropy of radius-head logits against the sampled shell."""
    return _cross_entropy(shell_logits, shell_index, LabelOutOfRangeError)


def radius_reg_loss(features, mu, targets):
    """Mean of ``(||f - mu|| - target)^2``; rows sitting exactly on mu get zero gradient."""
    features = as_matrix(features, "features")
    targets = np.asarray(targets, dtype=np.float64)
    diff = features - mu
    dist = np.linalg.norm(diff, axis=1)
    resid = dist - targets
    loss = float(np.mean(resid**2))
    degenerate = dist == 0.0
    if np.any(degenerate):
        log.warning("radius regression: %d feature(s) coincide with mu; using zero subgradient", int(degenerate.sum()))
    safe = np.where(degenerate, 1.0, dist)
    coef = np.where(degenerate, 0.0, 2.0 * resid / safe) / features.shape[0]
    return loss, diff * coef[:, None]


def separation_loss(h_tilde, W):
    """Mean over rows and classes of ``|cos(h_tilde_r, w_c)|``.

    Only the gradient w.r.t. ``h_tilde`` is returned: W is treated as a constant.
    """
    unit, norms = normalize_rows(h_tilde)
    w_unit, _ = normalize_rows(W)
    cos = unit @ w_unit.T
    M, C = cos.shape
    loss = float(np.abs(cos).mean())
    d_unit = (np.sign(cos) @ w_unit) / (M * C)
    radial = np.einsum("ij,ij->i", d_unit, unit)
    return loss, (d_unit - unit * radial[:, None]) / norms[:, None]


def warmup_weight(t, start, end, max_weight) -> float:
    """0 up to ``start``, ``max_weight`` from ``end``, linear in between."""
    if not end > start:
        raise ConfigError(f"warm-up end ({end}) must exceed start ({start})")
    if t <= start:
        return 0.0
    if t >= end:
        return float(max_weight)
    return float(max_weight) * (t - start) / (end - start)


@dataclass(frozen=True)
class LossWeights:
    """Inner weights of the pseudo-OOD loss and the two warm-up schedules."""

    cls: float = 1.0
    reg: float = 1.0
    ood_max: float = 0.5
    sep_max: float = 0.1
    ood_start: float = 0.0
    ood_end: float = 1.0
    sep_start: float = 0.0
    sep_end: float = 1.0

    def __post_init__(self):
        for name in ("cls", "reg", "ood_max", "sep_max"):
            v = getattr(self, name)
            if not (np.isfinite(v) and v >= 0):
                raise ConfigError(f"loss weight {name} must be finite and >= 0, got {v}")
        if not (self.ood_end > self.ood_start and self.sep_end > self.sep_start):
            raise ConfigError("warm-up end must exceed start")

    def ood(self, t) -> float:
        return warmup_weight(t, self.ood_start, self.ood_end, self.ood_max)

    def sep(self, t) -> float:
        return warmup_weight(t, self.sep_start, self.sep_end, self.sep_max)


@dataclass(frozen=True)
class LossBreakdown:
    ce: float
    cls: float
    reg: float
    sep: float
    total: float
    w_ood: float
    w_sep: float

    CSV_FIELDS = ("ce", "cls", "reg", "sep", "total", "w_ood", "w_sep")

    def as_row(self) -> list[float]:
        return [getattr(self, f) for f in self.CSV_FIELDS]


def total_loss(ce, cls, reg, sep, weights: LossWeights, t) -> LossBreakdown:
    w_ood = weights.ood(t)
    w_sep = weights.sep(t)
    total = ce + w_ood * (weights.cls * cls + weights.reg * reg) + w_sep * sep
    return LossBreakdown(ce, cls, reg, sep, total, w_ood, w_sep)
