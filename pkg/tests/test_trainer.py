import numpy as np
import pytest

from bootood.data import make_splits
from bootood.diagnostics import NCReport
from bootood.errors import ConfigError, InvalidKError
from bootood.trainer import EpochDiagnostics, TrainConfig, WarmupPolicy, batches, phase1_complete, train


def _data():
    s = make_splits(3, 4, 30, 5, 5, seed=0)["train"]
    return s.inputs, s.labels


def _diag(epoch, err=0.0, nc1=0.01, cv=0.01):
    return EpochDiagnostics(epoch, epoch * 10, 1, 1 - err, NCReport(nc1, cv, 0.0, -0.5, err))


def test_batches_merge_trailing_singleton():
    chunks = list(batches(9, 4, np.arange(9)))
    assert [len(c) for c in chunks] == [4, 5]
    assert [len(c) for c in batches(8, 4, np.arange(8))] == [4, 4]


def test_phase_gate():
    pol = WarmupPolicy("diagnostic", epochs=10, nc1_threshold=0.1, cv_threshold=0.1)
    assert not phase1_complete([_diag(1, err=0.1)], pol)
    assert not phase1_complete([_diag(1, nc1=0.5)], pol)
    assert phase1_complete([_diag(1)], pol)
    assert phase1_complete([_diag(10, err=0.5)], pol)
    fixed = WarmupPolicy("fixed", epochs=3)
    assert not phase1_complete([_diag(2)], fixed)
    assert phase1_complete([_diag(3)], fixed)


def test_config_validation():
    with pytest.raises(InvalidKError):
        TrainConfig(K=0)
    with pytest.raises(ConfigError):
        TrainConfig(batch_size=1)


def test_training_is_deterministic():
    x, y = _data()
    cfg = TrainConfig(epochs=4, batch_size=16, hidden=(8,), feature_dim=4, warmup=WarmupPolicy("fixed", epochs=2))
    m1, g1, r1 = train(cfg, x, y)
    m2, g2, r2 = train(cfg, x, y)
    for a, b in zip(m1.named_parameters().values(), m2.named_parameters().values()):
        assert np.array_equal(a, b)
    assert np.array_equal(g1.mu, g2.mu)
    assert r1.phase1_end_epoch == 2


def test_phase_end_callback_and_logs(tmp_path):
    x, y = _data()
    seen = []
    cfg = TrainConfig(epochs=3, batch_size=16, hidden=(8,), feature_dim=4, warmup=WarmupPolicy("fixed", epochs=1))
    _, _, rec = train(cfg, x, y, on_phase_end=lambda m, g, r: seen.append(r.phase1_end_epoch))
    assert seen == [1]
    phases = [e.phase for e in rec.epochs]
    assert phases == [1, 2, 2]
    rec.write_csv(tmp_path / "t.csv")
    rec.write_epoch_csv(tmp_path / "e.csv")
    assert (tmp_path / "t.csv").read_text().startswith("iteration,epoch,phase,ce")
    assert len((tmp_path / "e.csv").read_text().splitlines()) == 4


def test_no_warmup_starts_in_phase_two():
    x, y = _data()
    cfg = TrainConfig(epochs=1, batch_size=16, hidden=(8,), feature_dim=4, use_warmup=False, log_interval=1)
    _, _, rec = train(cfg, x, y)
    assert rec.phase1_end_epoch == 0
    assert rec.epochs[0].phase == 2
    assert any(r["w_ood"] > 0 for r in rec.rows)
