"""Feature-level mixup of ID features into pseudo-OOD samples."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import BatchTooSmallError, ConfigError, NonPositiveAlphaError
from .numeric import SeededRng, as_matrix, normalize_rows, normalize_rows_backward


@dataclass
class PseudoOODBatch:
    """Mixed features with their provenance.

    ``raw[k] = lam[k] * h[src_i[k]] + (1 - lam[k]) * h[src_j[k]]`` and
    ``h_tilde[k] = raw[k] / ||raw[k]||``. Shell indices are 0-based.
    """

    h_tilde: np.ndarray
    raw: np.ndarray
    norms: np.ndarray
    src_i: np.ndarray
    src_j: np.ndarray
    lam: np.ndarray
    shells: np.ndarray

    def __len__(self):
        return self.raw.shape[0]


def mix(features, src_i, src_j, lam) -> np.ndarray:
    lam = np.asarray(lam, dtype=np.float64)[:, None]
    return lam * features[src_i] + (1.0 - lam) * features[src_j]


def mix_backward(d_raw, src_i, src_j, lam, n_rows) -> np.ndarray:
    """Scatter gradients of the mixtures back onto the source rows."""
    lam = np.asarray(lam, dtype=np.float64)[:, None]
    out = np.zeros((n_rows, d_raw.shape[1]))
    np.add.at(out, src_i, lam * d_raw)
    np.add.at(out, src_j, (1.0 - lam) * d_raw)
    return out


def from_sources(features, src_i, src_j, lam, shells) -> PseudoOODBatch:
    features = as_matrix(features, "features")
    src_i = np.asarray(src_i, dtype=np.intp)
    src_j = np.asarray(src_j, dtype=np.intp)
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(src_i == src_j):
        raise ConfigError("mixup pairs must use distinct rows")
    if np.any((lam < 0) | (lam > 1)):
        raise ConfigError("mixing weights must lie in [0, 1]")
    raw = mix(features, src_i, src_j, lam)
    h_tilde, norms = normalize_rows(raw)
    return PseudoOODBatch(h_tilde, raw, norms, src_i, src_j, lam, np.asarray(shells, dtype=np.intp))


def generate(features, M: int, alpha: float, K: int, rng: SeededRng, labels=None) -> PseudoOODBatch:
    """Draw M mixtures of distinct row pairs with ``lam ~ Beta(alpha, alpha)``.

    Draw order from ``rng`` is fixed: i, j, lam, shell index. With ``labels``
    the partner j is redrawn until its class differs from i's (rows whose
    class fills the whole batch keep a same-class partner).
    """
    features = as_matrix(features, "features")
    B = features.shape[0]
    if B < 2:
        raise BatchTooSmallError(f"mixup needs at least 2 rows, got {B}")
    if M < 1:
        raise ConfigError("M must be >= 1")
    if not alpha > 0:
        raise NonPositiveAlphaError(f"alpha must be positive, got {alpha}")
    src_i = rng.integers(0, B, size=M)
    src_j = rng.integers(0, B - 1, size=M)
    src_j = src_j + (src_j >= src_i)
    if labels is not None:
        src_j = _cross_class_partners(np.asarray(labels), src_i, src_j, rng)
    lam = rng.beta(alpha, size=M)
    shells = rng.integers(0, K, size=M)
    return from_sources(features, src_i, src_j, lam, shells)


def _cross_class_partners(labels, src_i, src_j, rng, max_rounds=64):
    B = labels.shape[0]
    for _ in range(max_rounds):
        clash = labels[src_i] == labels[src_j]
        if not clash.any():
            break
        redraw = rng.integers(0, B - 1, size=int(clash.sum()))
        redraw = redraw + (redraw >= src_i[clash])
        src_j = src_j.copy()
        src_j[clash] = redraw
    return src_j


def backward(batch: PseudoOODBatch, d_h_tilde, d_raw, n_rows) -> np.ndarray:
    """Gradient w.r.t. the source features from grads on h_tilde and raw."""
    total = normalize_rows_backward(batch.h_tilde, batch.norms, d_h_tilde)
    if d_raw is not None:
        total = total + d_raw
    return mix_backward(total, batch.src_i, batch.src_j, batch.lam, n_rows)
