"""Backbone MLP, linear classifier and radius head with hand-written backprop.

Weight matrices are stored (out, in) and applied as ``x @ W.T + b``. The
backbone applies tanh *between* layers only, so its last layer is affine and
a one-layer backbone is a plain affine map.
"""

from __future__ import annotations

import struct
import json
from dataclasses import dataclass

import numpy as np

from .errors import (
    ConfigError,
    CorruptHeaderError,
    DataIOError,
    DimensionMismatchError,
    DimMismatchError,
)
from .numeric import SeededRng, as_matrix


@dataclass
class BackboneParams:
    weights: list[np.ndarray]
    biases: list[np.ndarray]

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise DimensionMismatchError("backbone needs matching, non-empty weight and bias lists")
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 2 or b.shape != (w.shape[0],):
                raise DimensionMismatchError(f"layer {i}: weight {w.shape} / bias {b.shape}")
            if i and w.shape[1] != self.weights[i - 1].shape[0]:
                raise DimensionMismatchError(f"layer {i} input {w.shape[1]} != previous output")

    @property
    def in_dim(self) -> int:
        return self.weights[0].shape[1]

    @property
    def out_dim(self) -> int:
        return self.weights[-1].shape[0]


@dataclass
class TapeCache:
    inputs: list[np.ndarray]
    pre: list[np.ndarray]


def backbone_forward(params: BackboneParams, x) -> tuple[np.ndarray, TapeCache]:
    a = as_matrix(x, "x", cols=params.in_dim)
    cache = TapeCache(inputs=[], pre=[])
    last = len(params.weights) - 1
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        cache.inputs.append(a)
        z = a @ w.T + b
        cache.pre.append(z)
        a = z if i == last else np.tanh(z)
    return a, cache


def backbone_backward(params: BackboneParams, cache: TapeCache, dh):
    """Returns (weight grads, bias grads, grad w.r.t. the input)."""
    n = len(params.weights)
    dws: list = [None] * n
    dbs: list = [None] * n
    g = dh
    for i in range(n - 1, -1, -1):
        if i != n - 1:
            g = g * (1.0 - np.tanh(cache.pre[i]) ** 2)
        dws[i] = g.T @ cache.inputs[i]
        dbs[i] = g.sum(axis=0)
        g = g @ params.weights[i]
    return dws, dbs, g


def classifier_forward(W, h) -> np.ndarray:
    h = as_matrix(h, "h", cols=W.shape[1])
    return h @ W.T


@dataclass
class RadiusHeadParams:
    weight: np.ndarray
    bias: np.ndarray

    @property
    def K(self) -> int:
        return self.weight.shape[0]


def radius_head_forward(head: RadiusHeadParams, h_tilde) -> np.ndarray:
    h_tilde = as_matrix(h_tilde, "h_tilde", cols=head.weight.shape[1])
    return h_tilde @ head.weight.T + head.bias


def radius_head_backward(head: RadiusHeadParams, h_tilde, dlogits):
    return dlogits.T @ h_tilde, dlogits.sum(axis=0), dlogits @ head.weight


@dataclass
class ModelState:
    """Everything trainable: backbone, classifier (C x m, no bias), radius head."""

    backbone: BackboneParams
    W: np.ndarray
    head: RadiusHeadParams

    @property
    def num_classes(self) -> int:
        return self.W.shape[0]

    @property
    def feature_dim(self) -> int:
        return self.W.shape[1]

    def named_parameters(self) -> dict[str, np.ndarray]:
        """Parameters in declaration order; arrays are shared, not copied."""
        out = {}
        for i, (w, b) in enumerate(zip(self.backbone.weights, self.backbone.biases)):
            out[f"backbone.{i}.weight"] = w
            out[f"backbone.{i}.bias"] = b
        out["classifier.weight"] = self.W
        out["radius_head.weight"] = self.head.weight
        out["radius_head.bias"] = self.head.bias
        return out

    def copy(self) -> "ModelState":
        return ModelState(
            BackboneParams([w.copy() for w in self.backbone.weights], [b.copy() for b in self.backbone.biases]),
            self.W.copy(),
            RadiusHeadParams(self.head.weight.copy(), self.head.bias.copy()),
        )

    def features(self, x) -> np.ndarray:
        return backbone_forward(self.backbone, x)[0]

    def logits(self, x) -> np.ndarray:
        return classifier_forward(self.W, self.features(x))


def init_model(in_dim, num_classes, hidden=(64, 64), feature_dim=16, K=4, rng: SeededRng | None = None, seed=0):
    """Gaussian init scaled by 1/sqrt(fan_in), zero biases."""
    if num_classes < 2:
        raise ConfigError("need at least 2 classes")
    if K < 1:
        raise ConfigError("K must be >= 1")
    rng = rng or SeededRng(seed)
    dims = [in_dim, *hidden, feature_dim]
    weights = [rng.normal(0.0, 1.0 / np.sqrt(i), size=(o, i)) for i, o in zip(dims[:-1], dims[1:])]
    biases = [np.zeros(o) for o in dims[1:]]
    W = rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(num_classes, feature_dim))
    head = RadiusHeadParams(rng.normal(0.0, 1.0 / np.sqrt(feature_dim), size=(K, feature_dim)), np.zeros(K))
    return ModelState(BackboneParams(weights, biases), W, head)


def sgd_step(params: dict, grads: dict, lr, momentum=0.0, weight_decay=0.0, buffers: dict | None = None) -> dict:
    """Momentum SGD (heavy-ball, buffer initialised with the first gradient).

    ``g = grad + wd * p; buf = momentum * buf + g; p' = p - lr * buf``.
    Returns new arrays; ``buffers`` is updated in place when given.
    """
    if lr < 0:
        raise ConfigError("learning rate must be non-negative")
    out = {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise DimensionMismatchError(f"{name}: grad {g.shape} vs param {p.shape}")
        if weight_decay:
            g = g + weight_decay * p
        if momentum:
            if buffers is None:
                raise ConfigError("momentum requires a buffer dict")
            buf = buffers.get(name)
            buf = g.copy() if buf is None else momentum * buf + g
            buffers[name] = buf
            g = buf
        out[name] = p - lr * g
    return out


class SGD:
    """Two parameter groups: backbone+classifier, and the radius head."""

    HEAD_PREFIX = "radius_head."

    def __init__(self, lr, head_lr, momentum=0.9, weight_decay=5e-4):
        self.groups = [
            {"lr": lr, "momentum": momentum, "weight_decay": weight_decay, "head": False},
            {"lr": head_lr, "momentum": momentum, "weight_decay": weight_decay, "head": True},
        ]
        self.buffers: dict[str, np.ndarray] = {}

    def step(self, model: ModelState, grads: dict) -> None:
        params = model.named_parameters()
        for group in self.groups:
            names = [n for n in params if n.startswith(self.HEAD_PREFIX) == group["head"]]
            new = sgd_step(
                {n: params[n] for n in names},
                grads,
                group["lr"],
                group["momentum"],
                group["weight_decay"],
                self.buffers,
            )
            for n in names:
                params[n][...] = new[n]


def clip_grad_norm(grads: dict, max_norm: float) -> float:
    """Scale ``grads`` in place to global norm <= max_norm; returns the pre-clip norm."""
    total = float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))
    if max_norm and total > max_norm:
        scale = max_norm / total
        for g in grads.values():
            g *= scale
    return total


# Checkpoint layout (all integers little-endian):
#   8 bytes   magic b"BOOTOOD1"
#   u32       metadata length L, then L bytes of UTF-8 JSON (sorted keys)
#   u32       tensor count T
#   T times:  u16 name length, name bytes, u8 ndim, ndim x u32 dims,
#             prod(dims) float64 values, C order
CKPT_MAGIC = b"BOOTOOD1"


def _pack_tensor(name: str, arr: np.ndarray) -> bytes:
    arr = np.ascontiguousarray(arr, dtype="<f8")
    enc = name.encode()
    head = struct.pack("<H", len(enc)) + enc + struct.pack("<B", arr.ndim)
    head += struct.pack(f"<{arr.ndim}I", *arr.shape)
    return head + arr.tobytes()


def write_checkpoint(path, model: ModelState, extra_tensors: dict | None = None, metadata: dict | None = None) -> None:
    tensors = dict(model.named_parameters())
    tensors.update(extra_tensors or {})
    meta = dict(metadata or {})
    meta["backbone_layers"] = len(model.backbone.weights)
    blob = json.dumps(meta, sort_keys=True).encode()
    parts = [CKPT_MAGIC, struct.pack("<I", len(blob)), blob, struct.pack("<I", len(tensors))]
    parts += [_pack_tensor(n, a) for n, a in tensors.items()]
    try:
        with open(path, "wb") as fh:
            fh.write(b"".join(parts))
    except OSError as exc:
        raise DataIOError(f"cannot write checkpoint {path}: {exc}") from exc


def read_checkpoint(path) -> tuple[ModelState, dict, dict]:
    """Returns (model, extra tensors, metadata)."""
    try:
        with open(path, "rb") as fh:
            data = fh.read()
    except OSError as exc:
        raise DataIOError(f"cannot read checkpoint {path}: {exc}") from exc
    if data[:8] != CKPT_MAGIC:
        raise CorruptHeaderError(f"{path}: bad magic")
    pos = 8

    def take(n):
        nonlocal pos
        if pos + n > len(data):
            raise DimMismatchError(f"{path}: truncated at byte {pos}")
        chunk = data[pos:pos + n]
        pos += n
        return chunk

    (mlen,) = struct.unpack("<I", take(4))
    try:
        meta = json.loads(take(mlen).decode())
    except ValueError as exc:
        raise CorruptHeaderError(f"{path}: unreadable metadata") from exc
    (count,) = struct.unpack("<I", take(4))
    tensors = {}
    for _ in range(count):
        (nlen,) = struct.unpack("<H", take(2))
        name = take(nlen).decode()
        (ndim,) = struct.unpack("<B", take(1))
        shape = struct.unpack(f"<{ndim}I", take(4 * ndim))
        size = int(np.prod(shape)) if ndim else 1
        tensors[name] = np.frombuffer(take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
    if pos != len(data):
        raise DimMismatchError(f"{path}: {len(data) - pos} trailing bytes")

    n_layers = meta["backbone_layers"]
    try:
        backbone = BackboneParams(
            [tensors.pop(f"backbone.{i}.weight") for i in range(n_layers)],
            [tensors.pop(f"backbone.{i}.bias") for i in range(n_layers)],
        )
        model = ModelState(
            backbone,
            tensors.pop("classifier.weight"),
            RadiusHeadParams(tensors.pop("radius_head.weight"), tensors.pop("radius_head.bias")),
        )
    except KeyError as exc:
        raise CorruptHeaderError(f"{path}: missing tensor {exc}") from exc
    return model, tensors, meta
