import numpy as np
import pytest

from hierembed.encoder import EmbeddingModel, EncoderConfig, SparseGradient
from hierembed.exceptions import ConfigInvalid, NonFiniteGradient, NoTrainingData
from hierembed.synth import SynthConfig, generate
from hierembed.training import (
    OptimizerState,
    TrainConfig,
    Trainer,
    apply_update,
    checkpoint_path,
    load_checkpoint,
    lr_at,
    train,
)

ENC = {"dim": 8, "n_buckets": 2048}


@pytest.fixture(scope="module")
def forest():
    return generate(SynthConfig(n_trees=3, depth=3, seed=0))


def cfg(**kw):
    base = dict(ENC, batch_size=8, epochs=2, seed=1)
    base.update(kw)
    return TrainConfig.from_flat(base)


def test_lr_schedule_is_linear():
    c = TrainConfig(learning_rate=1e-3)
    lrs = [lr_at(c, s, 10) for s in range(11)]
    assert lrs[0] == 1e-3 and lrs[-1] == 0.0
    np.testing.assert_allclose(np.diff(lrs), -1e-4, rtol=1e-9)
    with pytest.raises(ValueError):
        lr_at(c, 11, 10)


def test_adamw_first_step_matches_closed_form():
    model = EmbeddingModel(EncoderConfig(dim=2, n_buckets=256), np.ones((256, 2)))
    state = OptimizerState.zeros(model.config)
    g = SparseGradient(np.array([3]), np.array([[0.5, -2.0]]))
    apply_update(model, state, g, lr=0.1, weight_decay=0.01)
    # bias-corrected first step moves by lr * sign(g), plus decoupled decay
    np.testing.assert_allclose(model.weights[3], [1 - 0.1 - 0.001, 1 + 0.1 - 0.001], rtol=1e-6)
    assert np.all(model.weights[4] == 1.0)


def test_nonfinite_gradient_rejected():
    model = EmbeddingModel(EncoderConfig(dim=2, n_buckets=256), np.ones((256, 2)))
    with pytest.raises(NonFiniteGradient):
        apply_update(model, OptimizerState.zeros(model.config),
                     SparseGradient(np.array([0]), np.array([[np.nan, 0.0]])), 0.1, 0.0)


def test_total_steps(forest):
    t = Trainer(cfg(), [forest])
    assert t.total_steps == 2 * int(np.ceil(len(forest) / 8))


def test_loss_decreases(forest):
    res = train(forest, config=cfg(epochs=6, learning_rate=5e-3))
    losses = res.log.losses
    k = max(1, len(losses) // 10)
    assert np.all(np.isfinite(losses))
    assert losses[-k:].mean() < losses[:k].mean()


def test_same_config_same_bytes(tmp_path, forest):
    train(forest, config=cfg(), out=tmp_path / "a.hprb")
    train(forest, config=cfg(), out=tmp_path / "b.hprb")
    assert (tmp_path / "a.hprb").read_bytes() == (tmp_path / "b.hprb").read_bytes()


def test_resume_is_bit_exact(tmp_path, forest):
    full = train(forest, config=cfg(checkpoint_every=5), out=tmp_path / "full.hprb")
    ckpt = checkpoint_path(tmp_path / "full.hprb", 5)
    assert ckpt in full.checkpoints
    resumed = Trainer(cfg(), [forest]).resume(ckpt, tmp_path / "resumed.hprb")
    assert (tmp_path / "full.hprb").read_bytes() == (tmp_path / "resumed.hprb").read_bytes()
    assert resumed.log.rows[0][0] == 6
    model, state = load_checkpoint(ckpt)
    assert state.step_count == 5


@pytest.mark.parametrize("mode", ["flat", "mixed"])
def test_other_modes_run(forest, mode):
    pairs = [(forest.strings[c][0], forest.strings[c][1]) for c in forest.sorted_codes[:10]]
    res = train(forest, pairs, cfg(loss_mode=mode, epochs=1))
    assert res.total_steps > 0 and np.all(np.isfinite(res.log.losses))


def test_pairs_only():
    res = train([], [("heart attack", "myocardial infarction"), ("flu", "influenza")], cfg(loss_mode="flat"))
    assert res.total_steps == 2


def test_no_data():
    with pytest.raises(NoTrainingData):
        Trainer(cfg(), [])


def test_flat_round_trip():
    c = cfg(per_category_counts={0: 1, 1: 1, 2: 1, 3: 1})
    assert TrainConfig.from_flat({k: v for k, v in c.to_flat().items()}) == c
    with pytest.raises(ConfigInvalid):
        TrainConfig.from_flat({"nope": 1})
    with pytest.raises(ConfigInvalid):
        TrainConfig.from_flat({"loss_mode": "other"})


def test_log_csv(tmp_path, forest):
    res = train(forest, config=cfg(epochs=1), log_path=tmp_path / "log.csv")
    lines = (tmp_path / "log.csv").read_text().splitlines()
    assert lines[0] == "step,lr,loss"
    assert len(lines) == res.total_steps + 1
