"""Synthetic ID / near-OOD / far-OOD data and the feature file format.

Feature file (``.bin``), little-endian::

    8 bytes  magic b"BOOTFEAT"
    u32      format version (1)
    u64      N rows
    u32      dim
    u8       1 if a label column follows, else 0
    N*dim    float64 row-major payload
    N        int64 labels (only when the flag is set)

The size must match the header exactly. Files ending in ``.csv`` use the
fallback: a header line ``f0,...,f{dim-1}[,label]`` then one row per line,
floats written with ``repr`` so the round trip is exact.
"""

from __future__ import annotations

import csv
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, CorruptHeaderError, DataIOError, DimMismatchError
from .numeric import SeededRng


@dataclass
class LabeledDataset:
    inputs: np.ndarray
    labels: np.ndarray
    split: str = "train"
    provenance: dict = field(default_factory=dict)
    centers: np.ndarray | None = None

    def __len__(self):
        return self.inputs.shape[0]

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) + 1 if len(self) else 0


def simplex_frame(C, d, rng: SeededRng) -> np.ndarray:
    """C unit vectors in R^d with pairwise cosine -1/(C-1), randomly rotated.

    Falls back to random unit directions when d < C - 1.
    """
    if d >= C - 1:
        basis, _ = np.linalg.qr(rng.normal(size=(d, C)))
        vertices = np.eye(C) - 1.0 / C
        vertices /= np.linalg.norm(vertices, axis=1, keepdims=True)
        # the centred simplex spans C-1 dims: express it in a C-1 basis first
        u, s, vt = np.linalg.svd(vertices)
        coords = u[:, : C - 1] * s[: C - 1]
        return coords @ basis[:, : C - 1].T
    g = rng.normal(size=(C, d))
    return g / np.linalg.norm(g, axis=1, keepdims=True)


def make_blobs(C=4, d=8, n_per_class=500, separation=6.0, sigma=1.0, seed=0, split="train", centers=None) -> LabeledDataset:
    """Gaussian blobs of std ``sigma`` around ``separation`` x a simplex frame."""
    if C < 2 or d < 2:
        raise ConfigError("need C >= 2 and d >= 2")
    if sigma < 0 or separation < 0 or n_per_class < 0:
        raise ConfigError("sigma, separation and n_per_class must be non-negative")
    rng = SeededRng(seed)
    if centers is None:
        centers = separation * simplex_frame(C, d, rng.spawn(0))
    noise_rng = rng.spawn(1)
    labels = np.repeat(np.arange(C), n_per_class)
    inputs = centers[labels] + sigma * noise_rng.normal(size=(labels.size, d))
    prov = {"generator": "blobs", "seed": seed, "C": C, "d": d, "separation": separation, "sigma": sigma}
    return LabeledDataset(inputs, labels, split, prov, centers)


def make_splits(C=4, d=8, n_train=500, n_val=100, n_test=100, separation=6.0, sigma=1.0, seed=0):
    """Train/val/test index partitions of one blob draw sharing the same centres."""
    per = n_train + n_val + n_test
    full = make_blobs(C, d, per, separation, sigma, seed)
    perm = SeededRng(seed).spawn(2).permutation(per)
    cuts = {"train": perm[:n_train], "val": perm[n_train:n_train + n_val], "test": perm[n_train + n_val:]}
    out = {}
    for name, local in cuts.items():
        idx = (np.arange(C)[:, None] * per + np.sort(local)[None, :]).ravel()
        out[name] = LabeledDataset(full.inputs[idx], full.labels[idx], name, dict(full.provenance), full.centers)
    return out


def make_near_ood(dataset: LabeledDataset, n, eta=1.0, seed=0, lam_range=(0.3, 0.7), return_sources=False):
    """Points on segments between two distinct class centres plus N(0, eta^2) jitter."""
    centers = dataset.centers
    if centers is None or centers.shape[0] < 2:
        raise ConfigError("near-OOD needs a dataset with >= 2 class centres")
    C, d = centers.shape
    rng = SeededRng(seed).spawn(3)
    a = rng.integers(0, C, size=n)
    b = rng.integers(0, C - 1, size=n)
    b = b + (b >= a)
    lam = rng.uniform(lam_range[0], lam_range[1], size=n)
    x = lam[:, None] * centers[a] + (1.0 - lam[:, None]) * centers[b]
    x = x + eta * rng.normal(size=(n, d))
    return (x, a, b, lam) if return_sources else x


def make_far_ood(d, n, mode="uniform-box", scale=27.0, seed=0) -> np.ndarray:
    """uniform-box: U[-scale, scale]^d. shifted-gaussian: unit-variance cloud
    centred ``scale`` away from the origin along a random direction."""
    rng = SeededRng(seed).spawn(4)
    if mode == "uniform-box":
        return rng.uniform(-scale, scale, size=(n, d))
    if mode == "shifted-gaussian":
        u = rng.normal(size=d)
        u /= np.linalg.norm(u)
        return scale * u + rng.normal(size=(n, d))
    raise ConfigError(f"unknown far-OOD mode {mode!r}")


def overlap_fraction(x, centers, sigma) -> float:
    """Fraction of rows within 3*sigma*sqrt(d) of some centre (the typical ID shell)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return 0.0
    dist = np.linalg.norm(x[:, None, :] - centers[None, :, :], axis=2).min(axis=1)
    return float(np.mean(dist <= 3.0 * sigma * np.sqrt(centers.shape[1])))


FEATURE_MAGIC = b"BOOTFEAT"
FEATURE_VERSION = 1
_HEADER = struct.Struct("<8sIQIB")


def write_features(path, features, labels=None) -> None:
    features = np.ascontiguousarray(features, dtype="<f8")
    if features.ndim != 2:
        raise DimMismatchError("features must be a 2-D matrix")
    N, dim = features.shape
    if labels is not None:
        labels = np.ascontiguousarray(labels, dtype="<i8")
        if labels.shape != (N,):
            raise DimMismatchError(f"expected {N} labels, got {labels.shape}")
    try:
        if str(path).endswith(".csv"):
            with open(path, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow([f"f{k}" for k in range(dim)] + (["label"] if labels is not None else []))
                for r in range(N):
                    row = [repr(float(v)) for v in features[r]]
                    w.writerow(row + ([str(int(labels[r]))] if labels is not None else []))
            return
        with open(path, "wb") as fh:
            fh.write(_HEADER.pack(FEATURE_MAGIC, FEATURE_VERSION, N, dim, int(labels is not None)))
            fh.write(features.tobytes())
            if labels is not None:
                fh.write(labels.tobytes())
    except OSError as exc:
        raise DataIOError(f"cannot write {path}: {exc}") from exc


def read_features(path):
    """Returns (features, labels or None)."""
    try:
        if str(path).endswith(".csv"):
            return _read_csv(path)
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read {path}: {exc}") from exc
    if len(data) < _HEADER.size:
        raise CorruptHeaderError(f"{path}: header truncated")
    magic, version, N, dim, has_labels = _HEADER.unpack_from(data)
    if magic != FEATURE_MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic")
    if version != FEATURE_VERSION:
        raise CorruptHeaderError(f"{path}: unsupported version {version}")
    if has_labels not in (0, 1):
        raise CorruptHeaderError(f"{path}: bad label flag")
    expected = _HEADER.size + 8 * N * dim + (8 * N if has_labels else 0)
    if len(data) != expected:
        raise DimMismatchError(f"{path}: header declares {N}x{dim} ({expected} bytes), file has {len(data)}")
    off = _HEADER.size
    features = np.frombuffer(data, dtype="<f8", count=N * dim, offset=off).reshape(N, dim).astype(np.float64)
    labels = None
    if has_labels:
        labels = np.frombuffer(data, dtype="<i8", count=N, offset=off + 8 * N * dim).astype(np.int64)
    return features, labels


def _read_csv(path):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise CorruptHeaderError(f"{path}: missing header")
    header = rows[0]
    has_labels = bool(header) and header[-1] == "label"
    dim = len(header) - int(has_labels)
    body = rows[1:]
    if any(len(r) != len(header) for r in body):
        raise DimMismatchError(f"{path}: row width does not match header")
    features = np.array([[float(v) for v in r[:dim]] for r in body], dtype=np.float64).reshape(len(body), dim)
    labels = np.array([int(r[dim]) for r in body], dtype=np.int64) if has_labels else None
    return features, labels
