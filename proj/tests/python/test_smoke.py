import numpy as np
import pytest

import physssm

TINY = """
[experiment]
name = tiny

[data]
n_train = 4
n_val = 2
n_test = 2
horizon = 60

[model]
prenet_hidden = 8
encoder_width = 8
encoder_state = 8
learner_a_width = 8
learner_a_state = 8
learner_b_width = 8
learner_b_state = 8
decoder_hidden = 8

[train]
epochs = 2
batch_size = 4
window = 30
extrap_horizon = 10
train_window = 30
eval_every = 1
seeds = 0
"""


def test_config_round_trip():
    ini = physssm.default_config("pendulum")
    assert physssm.canonical_config(ini) == ini
    assert physssm.config_hash(ini) == physssm.config_hash(physssm.canonical_config(ini))
    with pytest.raises(physssm.ConfigError):
        physssm.canonical_config("[train]\nbogus = 1\n")
    with pytest.raises(physssm.ConfigError):
        physssm.default_config("lorenz")


def test_discretization_matches_scalar_closed_form():
    a_bar, b_bar = physssm.discretize_bilinear(np.array([[-2.0]]), np.array([[1.0]]), 0.1)
    assert a_bar[0, 0] == pytest.approx((1 - 0.1) / (1 + 0.1), rel=1e-14)
    assert b_bar[0, 0] == pytest.approx(0.1 / (1 + 0.1), rel=1e-14)
    hippo = physssm.init_hippo(3)
    assert hippo.shape == (3, 3)
    assert hippo[0, 1] == 0.0
    assert hippo[1, 0] == pytest.approx(-np.sqrt(3.0))


def test_dataset_save_load(tmp_path):
    data = physssm.Dataset.from_config(TINY)
    assert len(data) == 4
    assert data.obs_dim == 3
    assert data.control_dim == 1
    train = data.split("train")
    assert train[0]["observations"].shape == (48, 3)
    assert train[0]["controls"].shape == (48, 1)
    assert np.all(np.diff(train[0]["times"]) > 0)
    data.save(tmp_path / "d")
    back = physssm.Dataset.load(tmp_path / "d")
    np.testing.assert_array_equal(back.split("test")[1]["observations"], data.split("test")[1]["observations"])
    with pytest.raises(physssm.ConfigError):
        data.save(tmp_path / "d")
    with pytest.raises(physssm.ConfigError):
        data.split("holdout")


def test_train_predict_checkpoint(tmp_path):
    data = physssm.Dataset.from_config(TINY)
    model, history, best = physssm.train(TINY, data, 0)
    assert [h["epoch"] for h in history] == [1, 2]
    assert all(np.isfinite(h["total"]) for h in history)
    assert best in (1, 2)
    metrics = physssm.evaluate(model, data, "test", 30, 10)
    assert set(metrics) == {"interp_mae", "interp_mse", "extrap_mae", "extrap_mse"}

    tr = data.split("test")[0]
    out = model.predict(tr["times"], tr["observations"], tr["controls"], data.dt, 30, 10)
    assert out["recon"].shape == (30, 3)
    assert out["extrap"].shape == (10, 3)
    assert out["posterior_mean"].shape == (30, 2)
    assert np.all(out["posterior_std"] > 0)

    model.save(tmp_path / "m.ckpt")
    back = physssm.Model.load(tmp_path / "m.ckpt")
    again = back.predict(tr["times"], tr["observations"], tr["controls"], data.dt, 30, 10)
    np.testing.assert_array_equal(again["extrap"], out["extrap"])
    assert back.parameter_count == model.parameter_count


def test_fresh_model_and_shape_errors():
    model = physssm.Model(TINY, 3, seed=1)
    assert model.latent_dim == 2
    times = np.arange(12) * 0.05
    with pytest.raises(physssm.Error):
        model.predict(times, np.zeros((12, 5)), np.zeros((12, 1)), 0.05, 8, 4)


def test_uniqueness_short_run():
    report = physssm.uniqueness_recovery(0, 20)
    assert report["known_bit_identical"] is True
