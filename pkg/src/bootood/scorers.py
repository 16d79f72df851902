"""Post-hoc OOD scores computed from a frozen backbone + classifier.

Every scorer returns one value per row, oriented so higher means more ID-like.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pseudo_ood
from .errors import ConfigError, EmptyBatchError, NonPositiveClipError
from .metrics import auroc
from .numeric import SeededRng, as_matrix, logsumexp, softmax

SCORERS = ("msp", "ebo", "entropy", "react", "norm")


def score_msp(logits) -> np.ndarray:
    return softmax(as_matrix(logits, "logits")).max(axis=1)


def score_ebo(logits, T=1.0) -> np.ndarray:
    """Negative free energy ``T * logsumexp(z / T)``."""
    if not T > 0:
        raise ConfigError(f"temperature must be positive, got {T}")
    return T * logsumexp(as_matrix(logits, "logits") / T, axis=1)


def score_entropy(logits) -> np.ndarray:
    """Negative Shannon entropy of the softmax."""
    p = softmax(as_matrix(logits, "logits"))
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(p > 0, p * np.log(p), 0.0)
    return plogp.sum(axis=1)


def score_react(h, W, clip, T=1.0) -> np.ndarray:
    """Energy score on logits of features clipped from above at ``clip``."""
    if not clip > 0:
        raise NonPositiveClipError(f"ReAct clip must be positive, got {clip}")
    return score_ebo(np.minimum(as_matrix(h, "h"), clip) @ W.T, T)


def score_norm(h, mu) -> np.ndarray:
    """Distance of each feature to the tracked ID centre.

    Mixtures of ID features sit closer to the centre than the features
    themselves, so a larger distance reads as more ID-like.
    """
    return np.linalg.norm(as_matrix(h, "h") - mu, axis=1)


def react_clip(id_val_features, percentile=90.0) -> float:
    return float(np.percentile(np.asarray(id_val_features), percentile))


@dataclass(frozen=True)
class ScoringContext:
    """Frozen inference state: classifier, centre, ReAct clip, EBO temperature."""

    W: np.ndarray
    mu: np.ndarray
    clip: float
    T: float = 1.0

    def score(self, name, h) -> np.ndarray:
        h = as_matrix(h, "h", cols=self.W.shape[1])
        if name == "react":
            return score_react(h, self.W, self.clip, self.T)
        if name == "norm":
            return score_norm(h, self.mu)
        z = h @ self.W.T
        if name == "msp":
            return score_msp(z)
        if name == "ebo":
            return score_ebo(z, self.T)
        if name == "entropy":
            return score_entropy(z)
        raise ConfigError(f"unknown scorer {name!r}; expected one of {SCORERS}")


def select_scorer(ctx: ScoringContext, id_val_features, rng: SeededRng, names=SCORERS, alpha=1.0):
    """Pick the scorer with the best AUROC of ID validation features against
    mixup pseudo-OOD built from those same features. Ties keep ``names`` order.

    Returns (name, {name: auroc}).
    """
    h = as_matrix(id_val_features, "id_val_features")
    if h.shape[0] < 2:
        raise EmptyBatchError("scorer selection needs at least 2 validation features")
    names = list(names)
    if len(names) == 1:
        return names[0], {}
    M = h.shape[0]
    src_i = rng.integers(0, M, size=M)
    src_j = rng.integers(0, M - 1, size=M)
    src_j = src_j + (src_j >= src_i)
    lam = rng.beta(alpha, size=M)
    proxy = pseudo_ood.mix(h, src_i, src_j, lam)
    results = {n: auroc(ctx.score(n, h), ctx.score(n, proxy)) for n in names}
    best = max(names, key=lambda n: (results[n], -names.index(n)))
    return best, results
