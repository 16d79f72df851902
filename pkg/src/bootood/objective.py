"""One training step's loss and hand-derived gradients for every parameter."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import pseudo_ood
from .geometry import GeometryState
from .losses import (
    LossBreakdown,
    LossWeights,
    ce_loss,
    radius_cls_loss,
    radius_reg_loss,
    separation_loss,
    total_loss,
)
from .models import (
    ModelState,
    backbone_backward,
    backbone_forward,
    classifier_forward,
    radius_head_backward,
    radius_head_forward,
)

REG_TARGETS = ("raw", "normalized")


@dataclass
class StepOutput:
    breakdown: LossBreakdown
    grads: dict
    features: np.ndarray
    logits: np.ndarray
    pseudo: pseudo_ood.PseudoOODBatch | None


def loss_and_grads(
    model: ModelState,
    x,
    y,
    geometry: GeometryState,
    pseudo: pseudo_ood.PseudoOODBatch | None,
    weights: LossWeights,
    t,
    reg_target: str = "raw",
    forward=None,
) -> StepOutput:
    """Total objective at iteration ``t`` and its gradient.

    ``pseudo`` must have been mixed from this model's features of ``x``;
    pass None to skip every auxiliary term. ``forward`` may carry a
    precomputed ``(features, cache)`` pair. W enters the separation term as a
    constant, so that term writes nothing into the classifier gradient.
    """
    h, cache = forward if forward is not None else backbone_forward(model.backbone, x)
    z = classifier_forward(model.W, h)
    l_ce, dz = ce_loss(z, y)
    dW = dz.T @ h
    dh = dz @ model.W
    d_head_w = np.zeros_like(model.head.weight)
    d_head_b = np.zeros_like(model.head.bias)
    l_cls = l_reg = l_sep = 0.0

    if pseudo is not None:
        w_ood = weights.ood(t)
        w_sep = weights.sep(t)
        ht = pseudo.h_tilde
        shell_logits = radius_head_forward(model.head, ht)
        l_cls, d_sl = radius_cls_loss(shell_logits, pseudo.shells)
        d_sl = d_sl * (w_ood * weights.cls)
        d_head_w, d_head_b, d_ht = radius_head_backward(model.head, ht, d_sl)

        targets = geometry.shells[pseudo.shells]
        if reg_target == "raw":
            l_reg, d_reg = radius_reg_loss(pseudo.raw, geometry.mu, targets)
            d_raw = d_reg * (w_ood * weights.reg)
        elif reg_target == "normalized":
            l_reg, d_reg = radius_reg_loss(ht, geometry.mu, targets)
            d_ht = d_ht + d_reg * (w_ood * weights.reg)
            d_raw = None
        else:
            raise ValueError(f"unknown reg_target {reg_target!r}")

        l_sep, d_sep = separation_loss(ht, model.W)
        d_ht = d_ht + d_sep * w_sep
        dh = dh + pseudo_ood.backward(pseudo, d_ht, d_raw, h.shape[0])

    dws, dbs, _ = backbone_backward(model.backbone, cache, dh)
    grads = {}
    for i, (dw, db) in enumerate(zip(dws, dbs)):
        grads[f"backbone.{i}.weight"] = dw
        grads[f"backbone.{i}.bias"] = db
    grads["classifier.weight"] = dW
    grads["radius_head.weight"] = d_head_w
    grads["radius_head.bias"] = d_head_b
    breakdown = total_loss(l_ce, l_cls, l_reg, l_sep, weights, t)
    return StepOutput(breakdown, grads, h, z, pseudo)
