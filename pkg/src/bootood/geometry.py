"""EMA tracking of the global feature centre and reference radius, plus shells."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError, EmptyBatchError, InvalidKError
from .numeric import as_matrix

SPACINGS = ("uniform", "cosine")


def shell_radii(r_ref: float, K: int, spacing: str = "uniform") -> np.ndarray:
    """K strictly increasing target radii inside (0, r_ref).

    uniform: ``k * r_ref / (K + 1)``; cosine: ``r_ref * (1 - cos(k*pi / (2(K+1))))``,
    which already stays below r_ref since the angle never reaches pi/2.
    """
    if not isinstance(K, (int, np.integer)) or K < 1:
        raise InvalidKError(f"K must be a positive integer, got {K!r}")
    if not r_ref > 0:
        raise ConfigError(f"r_ref must be positive, got {r_ref}")
    k = np.arange(1, K + 1, dtype=np.float64)
    if spacing == "uniform":
        return k * r_ref / (K + 1)
    if spacing == "cosine":
        return r_ref * (1.0 - np.cos(k * np.pi / (2 * (K + 1))))
    raise ConfigError(f"unknown shell spacing {spacing!r}")


@dataclass(frozen=True)
class GeometryState:
    """``mu`` / ``r_ref`` are None until the first batch initialises them."""

    beta_mu: float = 0.95
    beta_r: float = 0.95
    K: int = 4
    spacing: str = "uniform"
    mu: np.ndarray | None = None
    r_ref: float | None = None

    def __post_init__(self):
        for name in ("beta_mu", "beta_r"):
            b = getattr(self, name)
            if not 0.0 <= b <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {b}")
        if not isinstance(self.K, (int, np.integer)) or self.K < 1:
            raise InvalidKError(f"K must be a positive integer, got {self.K!r}")
        if self.spacing not in SPACINGS:
            raise ConfigError(f"unknown shell spacing {self.spacing!r}")

    @property
    def shells(self) -> np.ndarray:
        return shell_radii(self.r_ref, self.K, self.spacing)


def _batch(features):
    features = as_matrix(features, "batch_features")
    if features.shape[0] == 0:
        raise EmptyBatchError("empty feature batch")
    return features


def update_mean(state: GeometryState, batch_features) -> GeometryState:
    """``mu' = beta_mu * mu + (1 - beta_mu) * mean(batch)``; first call sets mu."""
    mean = _batch(batch_features).mean(axis=0)
    if state.mu is None:
        return replace(state, mu=mean)
    return replace(state, mu=state.beta_mu * state.mu + (1.0 - state.beta_mu) * mean)


def update_radius(state: GeometryState, batch_features) -> GeometryState:
    """EMA of the batch-mean distance to mu; first call sets r_ref."""
    features = _batch(batch_features)
    if state.mu is None:
        raise ConfigError("update_mean must run before update_radius")
    target = float(np.mean(np.linalg.norm(features - state.mu, axis=1)))
    if state.r_ref is None:
        return replace(state, r_ref=target)
    return replace(state, r_ref=state.beta_r * state.r_ref + (1.0 - state.beta_r) * target)


def update(state: GeometryState, batch_features) -> GeometryState:
    return update_radius(update_mean(state, batch_features), batch_features)
