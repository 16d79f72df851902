"""Neural-Collapse statistics and the radius / max-cosine histograms."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ClassTooSmallError
from .numeric import as_matrix, normalize_rows


@dataclass(frozen=True)
class NCReport:
    nc1: float
    norm_cv: float
    etf_deviation: float
    mean_cosine: float
    train_error: float = float("nan")

    CSV_FIELDS = ("nc1", "norm_cv", "etf_deviation", "mean_cosine", "train_error")


def class_means(features, labels, num_classes=None):
    labels = np.asarray(labels, dtype=np.intp)
    C = int(labels.max()) + 1 if num_classes is None else num_classes
    counts = np.bincount(labels, minlength=C)
    if counts.min() < 2:
        raise ClassTooSmallError(f"class {int(counts.argmin())} has {int(counts.min())} sample(s); need >= 2")
    sums = np.zeros((C, features.shape[1]))
    np.add.at(sums, labels, features)
    return sums / counts[:, None]


def nc_metrics(features, labels, logits=None, num_classes=None) -> NCReport:
    """NC1 = tr(Sigma_W) / tr(Sigma_B), class-mean norm CV and ETF deviation.

    Scatter is taken about the global feature mean; Sigma_B weights classes
    equally. ``train_error`` is filled in when logits are supplied.
    """
    features = as_matrix(features, "features")
    labels = np.asarray(labels, dtype=np.intp)
    means = class_means(features, labels, num_classes)
    C = means.shape[0]
    centre = features.mean(axis=0)
    within = float(np.sum((features - means[labels]) ** 2) / features.shape[0])
    centred = means - centre
    between = float(np.sum(centred**2) / C)
    nc1 = within / between if between > 0 else float("inf")

    norms = np.linalg.norm(centred, axis=1)
    cv = float(norms.std() / norms.mean()) if norms.mean() > 0 else float("inf")

    if np.all(norms > 0):
        unit = centred / norms[:, None]
        cos = unit @ unit.T
        off = ~np.eye(C, dtype=bool)
        mean_cos = float(cos[off].mean())
        etf_dev = float(np.abs(cos[off] + 1.0 / (C - 1)).mean())
    else:
        mean_cos = etf_dev = float("nan")

    err = float("nan")
    if logits is not None:
        err = float(np.mean(np.argmax(logits, axis=1) != labels))
    return NCReport(nc1, cv, etf_dev, mean_cos, err)


@dataclass(frozen=True)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    @property
    def total(self) -> int:
        return int(self.counts.sum())


def histogram(values, bins=30, value_range=None) -> Histogram:
    """Uniform bins over ``value_range`` (default: the observed range)."""
    values = np.asarray(values, dtype=np.float64).ravel()
    if bins < 2:
        raise ValueError("need at least 2 bins")
    if value_range is None:
        if values.size == 0:
            value_range = (0.0, 1.0)
        else:
            lo, hi = float(values.min()), float(values.max())
            value_range = (lo - 0.5, hi + 0.5) if lo == hi else (lo, hi)
    counts, edges = np.histogram(values, bins=bins, range=value_range)
    return Histogram(edges, counts)


def radii(features, mu) -> np.ndarray:
    features = as_matrix(features, "features")
    if features.shape[0] == 0:
        return np.zeros(0)
    return np.linalg.norm(features - mu, axis=1)


def max_cosines(features, W) -> np.ndarray:
    features = as_matrix(features, "features")
    if features.shape[0] == 0:
        return np.zeros(0)
    unit, _ = normalize_rows(features)
    w_unit, _ = normalize_rows(W)
    return (unit @ w_unit.T).max(axis=1)


def radius_histogram(features, mu, bins=30, value_range=None) -> Histogram:
    return histogram(radii(features, mu), bins, value_range)


def max_cosine_histogram(features, W, bins=30, value_range=(-1.0, 1.0)) -> Histogram:
    return histogram(max_cosines(features, W), bins, value_range)


def shared_range(*arrays):
    """Common (lo, hi) over several value arrays, for overlaid histograms."""
    vals = np.concatenate([np.ravel(a) for a in arrays if np.size(a)]) if any(np.size(a) for a in arrays) else np.zeros(0)
    if vals.size == 0:
        return (0.0, 1.0)
    lo, hi = float(vals.min()), float(vals.max())
    return (lo - 0.5, hi + 0.5) if lo == hi else (lo, hi)
