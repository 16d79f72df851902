"""Acceptance criteria AC1-AC10, one PASS/FAIL line each (see the terminal summary).

Reference runs use the default RunConfig (4 blobs in 8 dims) over seeds 0, 1, 2.
"""

import math
import time
from dataclasses import replace

import numpy as np
import pytest
from scipy.special import logsumexp

from bootood import pipeline, pseudo_ood
from bootood.cli import main
from bootood.config import RunConfig
from bootood.diagnostics import radii
from bootood.geometry import GeometryState, update_mean, update_radius
from bootood.losses import LossWeights, ce_loss, separation_loss
from bootood.metrics import aupr, auroc, fpr_at_tpr
from bootood.models import SGD, BackboneParams, ModelState, RadiusHeadParams, backbone_backward, backbone_forward, clip_grad_norm, init_model
from bootood.numeric import SeededRng
from bootood.objective import loss_and_grads
from bootood.scorers import SCORERS
from bootood.trainer import train

from .conftest import ACCEPTANCE_LINES

SEEDS = (0, 1, 2)


def report(tag, ok, detail):
    line = f"{tag:<5s} {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


# --- shared reference runs --------------------------------------------------

_RUNS = {}


def reference_run(variant="full", K=4, seed=0, ce_only=False):
    key = (variant, K, seed, ce_only)
    if key not in _RUNS:
        cfg = pipeline.variant_config(RunConfig(), variant, K, seed)
        if ce_only:
            cfg = replace(cfg, lambda_ood=0.0, lambda_sep=0.0)
        t0 = time.perf_counter()
        data = pipeline.build_datasets(cfg)
        model, geometry, record = train(cfg.train_config(), data.train.inputs, data.train.labels, cfg.num_classes)
        res = pipeline.evaluate_run(model, geometry, cfg, data, scorers=("all",))
        elapsed = time.perf_counter() - t0
        auc = {(r.scorer, r.ood_set): r.auroc for r in res.reports}
        _RUNS[key] = dict(cfg=cfg, data=data, model=model, geometry=geometry, record=record,
                          auroc=auc, id_acc=res.id_acc, seconds=elapsed)
    return _RUNS[key]


def best_near(run):
    return max(run["auroc"][(s, "near")] for s in SCORERS)


# --- AC1: gradients against an independent finite-difference oracle --------

def _oracle_total(model, x, y, src, mu, rho, w, W_sep):
    h = x
    n = len(model.backbone.weights)
    for k, (Wl, bl) in enumerate(zip(model.backbone.weights, model.backbone.biases)):
        h = h @ Wl.T + bl
        if k < n - 1:
            h = np.tanh(h)
    z = h @ model.W.T
    ce = np.mean(logsumexp(z, axis=1) - z[np.arange(len(y)), y])
    lam = src.lam[:, None]
    raw = lam * h[src.src_i] + (1 - lam) * h[src.src_j]
    ht = raw / np.linalg.norm(raw, axis=1, keepdims=True)
    s = ht @ model.head.weight.T + model.head.bias
    cls = np.mean(logsumexp(s, axis=1) - s[np.arange(len(ht)), src.shells])
    reg = np.mean((np.linalg.norm(raw - mu, axis=1) - rho[src.shells]) ** 2)
    wn = W_sep / np.linalg.norm(W_sep, axis=1, keepdims=True)
    sep = np.mean(np.abs(ht @ wn.T))
    return ce + w.ood_max * (w.cls * cls + w.reg * reg) + w.sep_max * sep


def _rel(a, b):
    return float(np.linalg.norm(a - b) / max(np.linalg.norm(a), np.linalg.norm(b), 1e-8))


def _fd(f, p, eps=1e-6):
    g = np.zeros_like(p)
    flat, gf = p.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        o = flat[i]
        flat[i] = o + eps
        fp = f()
        flat[i] = o - eps
        fm = f()
        flat[i] = o
        gf[i] = (fp - fm) / (2 * eps)
    return g


TERMS = {
    "CE": None,
    "cls": dict(cls=1.0, reg=0.0, ood_max=1.0, sep_max=0.0),
    "reg": dict(cls=0.0, reg=1.0, ood_max=1.0, sep_max=0.0),
    "sep": dict(cls=0.0, reg=0.0, ood_max=0.0, sep_max=1.0),
    "total": dict(cls=0.7, reg=0.4, ood_max=0.5, sep_max=0.3),
}


def test_ac1_gradient_suite():
    t0 = time.perf_counter()
    worst = {k: 0.0 for k in TERMS}
    gen = np.random.default_rng(2024)
    n_inst = 50
    for inst in range(n_inst):
        d_in, hid, m = (int(v) for v in gen.integers(2, 9, size=3))
        C, K, B = int(gen.integers(2, 6)), int(gen.integers(1, 6)), int(gen.integers(2, 9))
        model = init_model(d_in, C, hidden=(hid,), feature_dim=m, K=K, seed=inst)
        model.head.bias[...] = gen.normal(size=K)
        for b in model.backbone.biases:
            b[...] = 0.1 * gen.normal(size=b.shape)
        x = gen.normal(size=(B, d_in))
        y = gen.integers(0, C, size=B)
        h = model.features(x)
        src = pseudo_ood.generate(h, int(gen.integers(1, 9)), 1.0, K, SeededRng(inst))
        geo = GeometryState(K=K, mu=gen.normal(size=m) * 0.3, r_ref=float(gen.uniform(0.5, 3.0)))
        rho = geo.shells
        W0 = model.W.copy()
        for term, wkw in TERMS.items():
            w = LossWeights(**(wkw or dict(ood_max=0.0, sep_max=0.0)))
            out = loss_and_grads(model, x, y, geo, None if wkw is None else src, w, t=5)
            for name, p in model.named_parameters().items():
                def f():
                    hh = model.features(x)
                    s = pseudo_ood.from_sources(hh, src.src_i, src.src_j, src.lam, src.shells)
                    return _oracle_total(model, x, y, s, geo.mu, rho, w, W0)
                worst[term] = max(worst[term], _rel(out.grads[name], _fd(f, p)))
    elapsed = time.perf_counter() - t0
    ok = all(v < 1e-4 for v in worst.values()) and elapsed < 30
    detail = ", ".join(f"{k} {v:.1e}" for k, v in worst.items())
    report("AC1", ok, f"{n_inst} instances, worst relative error: {detail}; {elapsed:.1f}s")


# --- AC2: separation term leaves W untouched --------------------------------

def test_ac2_separation_detached():
    gen = np.random.default_rng(7)
    worst = 0.0
    for inst in range(20):
        model = init_model(5, 4, hidden=(6,), feature_dim=5, K=3, seed=inst)
        x = gen.normal(size=(8, 5))
        y = gen.integers(0, 4, size=8)
        src = pseudo_ood.generate(model.features(x), 8, 1.0, 3, SeededRng(inst))
        geo = GeometryState(K=3, mu=np.zeros(5), r_ref=1.0)
        sep_only = loss_and_grads(model, x, y, geo, src, LossWeights(ood_max=0.0, sep_max=1.0), t=5)
        ce_only = loss_and_grads(model, x, y, geo, None, LossWeights(), t=5)
        assert sep_only.breakdown.sep > 0
        worst = max(worst, float(np.max(np.abs(sep_only.grads["classifier.weight"] - ce_only.grads["classifier.weight"]))))
        # the loss itself exposes no W gradient at all
        assert len(separation_loss(src.h_tilde, model.W)) == 2
    report("AC2", worst == 0.0, f"max |dW(sep)| = {worst}")


# --- AC3: zero auxiliary weights reproduce a CE-only trainer exactly -------

def _ce_only_trajectory(cfg, inputs, labels, C):
    root = SeededRng(cfg.seed)
    order_rng = root.spawn(1)
    model = init_model(inputs.shape[1], C, cfg.hidden, cfg.feature_dim, cfg.K, rng=root.spawn(0))
    opt = SGD(cfg.lr, cfg.head_lr, cfg.momentum, cfg.weight_decay)
    N = inputs.shape[0]
    snaps = []
    for _ in range(cfg.epochs):
        order = order_rng.permutation(N)
        starts = list(range(0, N, cfg.batch_size))
        if len(starts) > 1 and N - starts[-1] == 1:
            starts.pop()
        for k, s in enumerate(starts):
            idx = order[s: starts[k + 1] if k + 1 < len(starts) else N]
            x, y = inputs[idx], labels[idx]
            h, cache = backbone_forward(model.backbone, x)
            _, dz = ce_loss(h @ model.W.T, y)
            dws, dbs, _ = backbone_backward(model.backbone, cache, dz @ model.W)
            grads = {}
            for i, (dw, db) in enumerate(zip(dws, dbs)):
                grads[f"backbone.{i}.weight"] = dw
                grads[f"backbone.{i}.bias"] = db
            grads["classifier.weight"] = dz.T @ h
            grads["radius_head.weight"] = np.zeros_like(model.head.weight)
            grads["radius_head.bias"] = np.zeros_like(model.head.bias)
            clip_grad_norm(grads, cfg.grad_clip)
            opt.step(model, grads)
            snaps.append({k: v.copy() for k, v in model.named_parameters().items()})
    return snaps


def test_ac3_degeneration_to_ce():
    base = replace(RunConfig(epochs=4), lambda_ood=0.0, lambda_sep=0.0)
    data = pipeline.build_datasets(base)
    mismatches = 0
    steps = 0
    for cfg in (base, replace(base, use_warmup=False), replace(base, warmup_epochs=1)):
        tc = cfg.train_config()
        ref = _ce_only_trajectory(tc, data.train.inputs, data.train.labels, cfg.num_classes)
        got = []
        train(tc, data.train.inputs, data.train.labels, cfg.num_classes,
              on_step=lambda t, m, g, o: got.append({k: v.copy() for k, v in m.named_parameters().items()}))
        steps += len(ref)
        assert len(got) == len(ref)
        for a, b in zip(got, ref):
            mismatches += sum(not np.array_equal(a[k], b[k]) for k in a)
    report("AC3", mismatches == 0, f"{steps} iterations over 3 warm-up settings, {mismatches} differing tensors")


# --- AC4: metrics against exhaustive oracles --------------------------------

def _auroc_brute(a, b):
    return np.mean([(x > y) + 0.5 * (x == y) for x in a for y in b])


def _fpr_sweep(a, b, tpr=0.95):
    best = None
    for thr in np.unique(np.concatenate([a, b])):
        if np.mean(a >= thr) >= tpr and (best is None or thr > best):
            best = thr
    return float(np.mean(b >= best))


def _aupr_sweep(pos, neg):
    s = np.concatenate([pos, neg])
    lab = np.concatenate([np.ones(len(pos)), np.zeros(len(neg))])
    ap, prev_r = 0.0, 0.0
    for thr in np.unique(s)[::-1]:
        sel = s >= thr
        r = lab[sel].sum() / len(pos)
        p = lab[sel].mean()
        ap += (r - prev_r) * p
        prev_r = r
    return ap


def test_ac4_metric_oracles():
    gen = np.random.default_rng(11)
    worst = 0.0
    for inst in range(200):
        n, k = int(gen.integers(1, 51)), int(gen.integers(1, 51))
        q = [1, 2, 4, 100][inst % 4]  # coarse grids force ties
        a = np.round(gen.normal(0.5, 1, n) * q) / q
        b = np.round(gen.normal(0.0, 1, k) * q) / q
        worst = max(worst,
                    abs(auroc(a, b) - _auroc_brute(a, b)),
                    abs(fpr_at_tpr(a, b) - _fpr_sweep(a, b)),
                    abs(aupr(a, b) - _aupr_sweep(a, b)))
    report("AC4", worst <= 1e-9, f"200 instances, max deviation {worst:.2e}")


# --- AC5: EMA contraction ---------------------------------------------------

def test_ac5_ema_contraction():
    gen = np.random.default_rng(5)
    X = gen.normal(size=(16, 6))
    c = X.mean(axis=0)
    ok = True
    worst_mu = worst_r = 0.0
    for beta in (0.5, 0.9, 0.95, 0.99):
        mu0 = gen.normal(size=6) * 5
        g = GeometryState(beta_mu=beta, beta_r=beta, mu=mu0)
        for _ in range(200):
            g = update_mean(g, X)
        lhs, rhs = np.linalg.norm(g.mu - c), beta**200 * np.linalg.norm(mu0 - c)
        ok &= lhs <= rhs + 1e-12
        worst_mu = max(worst_mu, lhs - rhs)
        # radius: centre held at the stream mean so the target is constant
        target = float(np.mean(np.linalg.norm(X - c, axis=1)))
        r0 = float(gen.uniform(0, 10))
        g = GeometryState(beta_mu=beta, beta_r=beta, mu=c, r_ref=r0)
        for _ in range(200):
            g = update_radius(g, X)
        lhs, rhs = abs(g.r_ref - target), beta**200 * abs(r0 - target)
        ok &= lhs <= rhs + 1e-12
        worst_r = max(worst_r, lhs - rhs)
    report("AC5", ok, f"t=200, max slack mu {worst_mu:.1e}, r_ref {worst_r:.1e}")


# --- AC6: shell ordering after every iteration -------------------------------

def test_ac6_shell_invariant():
    cfg = RunConfig(epochs=5, warmup_epochs=2)
    data = pipeline.build_datasets(cfg)
    bad = []

    def check(t, model, geo, out):
        rho = geo.shells
        if not (rho[0] > 0 and np.all(np.diff(rho) > 0) and rho[-1] < geo.r_ref):
            bad.append(t)

    _, _, rec = train(cfg.train_config(), data.train.inputs, data.train.labels, cfg.num_classes, on_step=check)
    n = rec.epochs[-1].iteration
    report("AC6", not bad and n > 0, f"{n} iterations checked, {len(bad)} violations")


# --- AC7: reference synthetic experiment ------------------------------------

def test_ac7_reference_experiment():
    boots = [reference_run(seed=s) for s in SEEDS]
    ces = [reference_run(seed=s, ce_only=True) for s in SEEDS]
    single = boots[0]["seconds"]
    three = sum(r["seconds"] for r in boots)

    acc_b = np.mean([r["id_acc"] for r in boots])
    acc_c = np.mean([r["id_acc"] for r in ces])
    ok_a = abs(acc_b - acc_c) <= 0.01
    near_b = np.mean([best_near(r) for r in boots])
    near_c = np.mean([best_near(r) for r in ces])
    ok_b = near_b - near_c >= 0.03

    r_id, r_ood = [], []
    for r in boots:
        h = r["model"].features(r["data"].test.inputs)
        p = pseudo_ood.generate(h, h.shape[0], r["cfg"].alpha, r["cfg"].K, SeededRng(r["cfg"].seed).spawn(pipeline.STREAM_HIST))
        r_id.append(radii(h, r["geometry"].mu).mean())
        r_ood.append(radii(p.raw, r["geometry"].mu).mean())
    ok_c = np.mean(r_id) > np.mean(r_ood)

    order = {s: (np.mean([r["auroc"][(s, "near")] for r in boots]), np.mean([r["auroc"][(s, "far")] for r in boots]))
             for s in SCORERS}
    ok_d = all(n < f for n, f in order.values())
    ok_t = single < 120 and three < 360

    lines = [
        ("AC7a", ok_a, f"ID accuracy BootOOD {acc_b:.4f} vs CE {acc_c:.4f}"),
        ("AC7b", ok_b, f"best-scorer near AUROC BootOOD {100 * near_b:.2f} vs CE {100 * near_c:.2f} "
                       f"(gain {100 * (near_b - near_c):+.2f}, need >= +3.00)"),
        ("AC7c", ok_c, f"mean radius ID {np.mean(r_id):.3f} vs pseudo-OOD {np.mean(r_ood):.3f}"),
        ("AC7d", ok_d, "near < far per scorer: " + ", ".join(f"{s} {100 * n:.1f}/{100 * f:.1f}" for s, (n, f) in order.items())),
        ("AC7t", ok_t, f"one run {single:.1f}s, three seeds {three:.1f}s"),
    ]
    for tag, ok, detail in lines:
        ACCEPTANCE_LINES.append(f"{tag:<5s} {'PASS' if ok else 'FAIL'}  {detail}")
        print(ACCEPTANCE_LINES[-1])
    failed = [tag for tag, ok, _ in lines if not ok]
    assert not failed, f"failed: {failed}"


# --- AC8: ablation ordering -------------------------------------------------

def test_ac8_ablation_direction():
    m = {
        "full": np.mean([best_near(reference_run("full", 4, s)) for s in SEEDS]),
        "no-sep": np.mean([best_near(reference_run("no-sep", 4, s)) for s in SEEDS]),
        "no-radius": np.mean([best_near(reference_run("no-radius", 4, s)) for s in SEEDS]),
        "K=1": np.mean([best_near(reference_run("full", 1, s)) for s in SEEDS]),
    }
    ok = m["full"] >= m["no-sep"] >= m["no-radius"] and m["full"] >= m["K=1"]
    report("AC8", ok, "mean best near AUROC: " + ", ".join(f"{k} {100 * v:.2f}" for k, v in m.items())
           + " (need full >= no-sep >= no-radius, K=4 >= K=1)")


# --- AC9: neural-collapse emergence over Phase 1 ------------------------------

def test_ac9_nc_emergence():
    rec = reference_run(seed=0)["record"]
    end = rec.phase1_end_epoch
    epochs = {e.epoch: e for e in rec.epochs}
    assert end is not None and end >= 1
    first, last = epochs[1].nc.nc1, epochs[end].nc.nc1
    ratio = first / last
    gate_ok = epochs[end].nc.train_error == 0.0
    ok = ratio >= 10 and gate_ok
    report("AC9", ok, f"NC1 epoch 1 {first:.4f} -> phase-1 end (epoch {end}) {last:.4f}, ratio {ratio:.2f} (need >= 10); "
                      f"train error at gate {epochs[end].nc.train_error}")


# --- AC10: determinism of the train / eval commands ---------------------------

def test_ac10_determinism(tmp_path):
    for d in ("a", "b"):
        assert main(["train", "--seed", "3", "--out", str(tmp_path / d)]) == 0
        assert main(["eval", "--checkpoint", str(tmp_path / d / "checkpoint.bin"), "--scorer", "all,auto",
                     "--out", str(tmp_path / d / "eval")]) == 0
    names = ["checkpoint.bin", "checkpoint_phase1.bin", "train_log.csv", "epoch_log.csv", "config.resolved.cfg",
             "eval/metrics.csv", "eval/selection.csv"]
    same = [(tmp_path / "a" / n).read_bytes() == (tmp_path / "b" / n).read_bytes() for n in names]
    report("AC10", all(same), f"{sum(same)}/{len(names)} artifacts byte-identical")
