"""Dense numeric helpers shared by every other module.

All arrays are float64. Randomness goes through :class:`SeededRng`, a thin
owner of a NumPy ``Generator`` backed by the PCG64 bit generator (O'Neill's
permuted congruential generator, 128-bit state, XSL-RR output). PCG64 output
is defined bit-for-bit independently of platform, so a seed plus a call
sequence pins every draw.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionMismatchError, NonFiniteError, NonPositiveAlphaError, ZeroNormError

EPS_NORM = 1e-12


def as_matrix(a, name="array", cols=None) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise DimensionMismatchError(f"{name}: expected a 2-D matrix, got shape {a.shape}")
    if cols is not None and a.shape[1] != cols:
        raise DimensionMismatchError(f"{name}: expected {cols} columns, got {a.shape[1]}")
    return a


def check_finite(a, name="array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise NonFiniteError(f"{name} contains NaN or Inf")
    return a


def l2_normalize(u) -> np.ndarray:
    """Return ``u / ||u||``; raises :class:`ZeroNormError` below ``EPS_NORM``."""
    u = check_finite(u, "u")
    if u.ndim != 1:
        raise DimensionMismatchError(f"l2_normalize expects a vector, got shape {u.shape}")
    n = np.sqrt(np.dot(u, u))
    if n <= EPS_NORM:
        raise ZeroNormError(f"cannot normalize vector with norm {n:.3g}")
    return u / n


def normalize_rows(a) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise l2 normalisation. Returns (unit rows, row norms)."""
    a = as_matrix(a)
    norms = np.sqrt(np.einsum("ij,ij->i", a, a))
    if a.shape[0] and norms.min() <= EPS_NORM:
        raise ZeroNormError(f"row {int(norms.argmin())} has norm {norms.min():.3g}")
    return a / norms[:, None], norms


def normalize_rows_backward(unit, norms, d_unit) -> np.ndarray:
    """Gradient through ``u -> u/||u||`` given the forward outputs."""
    radial = np.einsum("ij,ij->i", d_unit, unit)
    return (d_unit - unit * radial[:, None]) / norms[:, None]


def softmax(v, axis=-1) -> np.ndarray:
    v = check_finite(v, "logits")
    shifted = v - v.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=axis, keepdims=True)


def log_softmax(v, axis=-1) -> np.ndarray:
    v = check_finite(v, "logits")
    shifted = v - v.max(axis=axis, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=axis, keepdims=True))


def logsumexp(v, axis=-1):
    """Max-shifted ``log(sum(exp(v)))``; scalar for vectors, per-row for matrices."""
    v = check_finite(v, "v")
    m = v.max(axis=axis, keepdims=True)
    out = m + np.log(np.exp(v - m).sum(axis=axis, keepdims=True))
    out = np.squeeze(out, axis=axis)
    return float(out) if out.ndim == 0 else out


class SeededRng:
    """Single-owner seeded random stream (PCG64).

    ``spawn(key)`` derives an independent child stream from the root seed and
    an integer key, so separate consumers (batch order, mixup pairs, ...)
    never perturb each other's sequences.
    """

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        ss = np.random.SeedSequence(self.seed, spawn_key=self.key)
        self.generator = np.random.Generator(np.random.PCG64(ss))

    def spawn(self, key: int) -> "SeededRng":
        return SeededRng(self.seed, self.key + (key,))

    def integers(self, low, high, size=None):
        return self.generator.integers(low, high, size=size)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.generator.uniform(low, high, size=size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self.generator.normal(loc, scale, size=size)

    def beta(self, alpha, size=None):
        if not alpha > 0:
            raise NonPositiveAlphaError(f"Beta parameter must be positive, got {alpha}")
        return self.generator.beta(alpha, alpha, size=size)

    def permutation(self, n):
        return self.generator.permutation(n)


def sample_beta(rng: SeededRng, alpha: float) -> float:
    """One draw from the symmetric Beta(alpha, alpha)."""
    return float(rng.beta(alpha))


def finite_diff_grad(f, x, eps=1e-5) -> np.ndarray:
    """Central-difference gradient of scalar ``f`` at ``x`` (any array shape)."""
    x = np.array(x, dtype=np.float64, copy=True)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    g = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f(x)
        flat[i] = orig - eps
        fm = f(x)
        flat[i] = orig
        g[i] = (fp - fm) / (2.0 * eps)
    return grad


def relative_error(a, b, floor=1e-8) -> float:
    """Max elementwise ``|a-b| / max(|a|, |b|, floor)``."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float(np.max(np.abs(a - b) / denom)) if a.size else 0.0
