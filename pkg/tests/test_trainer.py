import numpy as np
import pytest

from heed import autograd as ag
from heed.core import EntitySpan, Task
from heed.trainer import AdamWState, TrainConfig, chunk_record, optimizer_step, train

from conftest import small_record


def test_chunk_spanning_boundary_is_split():
    rec = small_record(1100, spans=[EntitySpan("name", 510, 515), EntitySpan("price", 3, 4)])
    chunks = chunk_record(rec, 512)
    assert [(c.offset, len(c)) for c in chunks] == [(0, 512), (512, 512), (1024, 76)]
    first = {s.task: s for s in chunks[0].spans}
    (second,) = chunks[1].spans
    assert (first[Task.NAME].start, first[Task.NAME].end, first[Task.NAME].split) == (510, 511, True)
    assert (first[Task.PRICE].start, first[Task.PRICE].end, first[Task.PRICE].split) == (3, 4, False)
    assert (second.task, second.start, second.end, second.split) == (Task.NAME, 0, 3, True)
    assert chunks[2].spans == ()


def test_single_short_page_one_chunk():
    rec = small_record(30, spans=[EntitySpan("image", 29, 29)])
    (c,) = chunk_record(rec, 512)
    assert c.offset == 0 and len(c) == 30 and c.spans[0].end == 29


def test_chunks_cover_page_exactly():
    rec = small_record(1025)
    chunks = chunk_record(rec, 512)
    assert sum(len(c) for c in chunks) == 1025
    assert tuple(t for c in chunks for t in c.tokens) == rec.tokens


def _param(x):
    return ag.Tensor(np.array(x, dtype=np.float64), requires_grad=True)


def test_adamw_zero_grad_only_decays():
    p = _param([2.0, -4.0])
    cfg = TrainConfig(lr=0.1, weight_decay=0.5)
    optimizer_step({"w": p}, {"w": np.zeros(2)}, AdamWState(), cfg)
    np.testing.assert_allclose(p.data, [2.0 * 0.95, -4.0 * 0.95])


def test_adamw_first_step_is_lr_sign():
    p = _param([1.0, 1.0])
    optimizer_step({"w": p}, {"w": np.array([3.0, -0.01])}, AdamWState(), TrainConfig(lr=0.01, weight_decay=0))
    np.testing.assert_allclose(p.data, [0.99, 1.01], atol=1e-6)


def test_adamw_decay_is_decoupled_from_gradient_scale():
    a, b = _param([1.0]), _param([1.0])
    cfg = TrainConfig(lr=0.01, weight_decay=0.1)
    optimizer_step({"w": a}, {"w": np.array([1.0])}, AdamWState(), cfg)
    optimizer_step({"w": b}, {"w": np.array([1000.0])}, AdamWState(), cfg)
    np.testing.assert_allclose(a.data, b.data, atol=1e-9)


def test_adamw_minimizes_quadratic():
    p = _param([0.0])
    state, cfg = AdamWState(), TrainConfig(lr=0.1, weight_decay=0)
    for _ in range(200):
        optimizer_step({"w": p}, {"w": 2 * (p.data - 3.0)}, state, cfg)
    assert abs(p.data[0] - 3.0) < 0.05


def test_adamw_rejects_non_finite():
    p = _param([1.0])
    with pytest.raises(FloatingPointError, match="'w'"):
        optimizer_step({"w": p}, {"w": np.array([np.nan])}, AdamWState(), TrainConfig())
    assert p.data[0] == 1.0


def test_train_config_validation_and_roundtrip():
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(epochs=0)
    cfg = TrainConfig(class_weights=[1, 5])
    assert cfg.class_weights == (1.0, 5.0)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert TrainConfig.finetune_preset().lr == 1e-5


@pytest.fixture(scope="module")
def tiny_run_args(records):
    from heed.model import ModelConfig
    mc = ModelConfig(d_model=8, n_layers=1, n_heads=2, ff_dim=16, n_experts=1)
    tc = TrainConfig(lr=3e-3, epochs=2, batch_size=4, max_len=128, seed=5)
    return records[:3], records[3:5], mc, tc


def test_train_logs_dev_every_epoch(tiny_run_args, tmp_path):
    tr, dev, mc, tc = tiny_run_args
    res = train(tr, dev, mc, tc, out_dir=tmp_path)
    dev_rows = [r for r in res.log if r["split"] == "dev" and r["task"] == "overall"]
    assert len(dev_rows) == tc.epochs == res.epochs_run
    best = max(dev_rows, key=lambda r: (r["F1"], -r["epoch"]))
    assert res.best_epoch == best["epoch"]
    assert (tmp_path / "metrics.csv").exists()
    assert (tmp_path / "checkpoint" / "model.json").exists()
    assert all(np.isfinite(r["loss"]) for r in res.log if r["split"] == "train")


def test_train_is_deterministic(tiny_run_args):
    tr, dev, mc, tc = tiny_run_args
    a, b = train(tr, dev, mc, tc), train(tr, dev, mc, tc)
    assert a.log == b.log
    for k in a.model.params:
        np.testing.assert_array_equal(a.model.params[k].data, b.model.params[k].data)


def test_train_without_dev_uses_last_epoch(tiny_run_args):
    tr, _, mc, tc = tiny_run_args
    res = train(tr, None, mc, tc)
    assert res.best_epoch == tc.epochs and res.best_dev_f1 is None


def test_train_empty_set_raises(tiny_run_args):
    _, dev, mc, tc = tiny_run_args
    with pytest.raises(ValueError, match="empty"):
        train([], dev, mc, tc)


def test_training_reduces_loss(tiny_run_args):
    from dataclasses import replace
    tr, _, mc, tc = tiny_run_args
    res = train(tr[:1], None, mc, replace(tc, epochs=6))
    losses = [r["loss"] for r in res.log if r["split"] == "train" and r["task"] == "overall"]
    assert losses[-1] < losses[0]
