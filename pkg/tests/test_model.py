import warnings

import numpy as np
import pytest

from conftest import quick_config
from nsibf.data import WindowedSeries
from nsibf.errors import InsufficientDataError, InvalidWindowError, ShapeError, ValidationError
from nsibf.model import (
    GRADCHECK_CONFIG,
    NetConfig,
    NsibfModel,
    backward,
    build_linear_model,
    empirical_covariance,
    forward,
    gradient_check,
    loss,
    loss_terms,
    model_forward,
    prediction_residuals,
    prepare_split,
    reconstruction_residuals,
    train,
)
from nsibf.simcps import SimConfig, simulate_normal


def identity_model(d=3, window=2):
    return build_linear_model(np.eye(d), np.eye(d), np.eye(d), window)


def toy_batch(model, rng, n=5):
    cfg = model.config
    return (
        rng.uniform(size=(n, cfg.measurement_dim)),
        rng.uniform(size=(n, cfg.window, cfg.window_features)),
        rng.uniform(size=(n, cfg.measurement_dim)),
    )


# ---------------------------------------------------------------- config


def test_config_validation():
    with pytest.raises(ValidationError):
        NetConfig(n_sensors=1, state_dim=0)
    with pytest.raises(ValidationError):
        NetConfig(n_sensors=1, w1=0, w2=0, w3=0)
    with pytest.raises(ValidationError):
        NetConfig(n_sensors=1, window_unit="days")
    with pytest.warns(UserWarning, match="not lower"):
        NetConfig(n_sensors=2, stack=1, state_dim=3)


def test_default_loss_weights():
    assert NetConfig(n_sensors=1, stack=3).weights == (0.45, 0.45, 0.1)


def test_config_round_trip():
    cfg = quick_config(activation="tanh")
    assert NetConfig.from_dict(cfg.to_dict()) == cfg


# ---------------------------------------------------------------- linear identities


def test_identity_encoder_decoder():
    model = identity_model()
    x = np.array([0.3, -1.0, 2.0])
    assert np.array_equal(model.encode(x), x)
    assert np.array_equal(model.decode(x), x)


def test_identity_forward_reconstructs(rng):
    model = identity_model()
    prev, win, target = toy_batch(model, rng)
    rec = forward(model, prev, win)
    assert np.array_equal(rec.x_recon, prev)
    assert np.array_equal(rec.x_pred, prev)  # identity transition with zero context weight
    r, p, s = loss_terms(rec, prev, target)
    assert r == 0 and s == 0 and p == pytest.approx(np.sum((target - prev) ** 2) / 5)


def test_shape_errors(rng):
    model = identity_model()
    with pytest.raises(ShapeError):
        model.encode(np.zeros(4))
    with pytest.raises(ShapeError):
        model.decode(np.zeros((2, 2)))
    with pytest.raises(InvalidWindowError):
        model.transition(np.zeros(3), np.zeros((3, model.config.window_features)))


def test_encode_deterministic(quick_model, rng):
    x = rng.uniform(size=(4, quick_model.measurement_dim))
    assert np.array_equal(quick_model.encode(x), quick_model.encode(x))


def test_transition_batch_invariance(quick_model, rng):
    cfg = quick_model.config
    window = rng.uniform(size=(cfg.window, cfg.window_features))
    Z = rng.normal(size=(7, cfg.state_dim))
    batch = quick_model.transition(Z, window)
    for k in range(7):
        assert np.array_equal(quick_model.transition(Z[k], window), batch[k])
    same = quick_model.transition(np.repeat(Z[:1], 4, axis=0), window)
    assert (same == same[0]).all()


# ---------------------------------------------------------------- loss


def test_loss_zero_for_perfect_model(rng):
    model = identity_model()
    prev = rng.uniform(size=(3, 3))
    win = rng.uniform(size=(3, 2, model.config.window_features))
    assert loss(model, (prev, win, prev)) == 0.0


def test_loss_hand_sum():
    model = build_linear_model(np.eye(2), np.eye(2), np.zeros((2, 2)), 1)
    prev = np.ones((1, 2))
    win = np.zeros((1, 1, 2))
    # decoder outputs zero, so the reconstruction residual is (1, 1)
    assert loss(model, (prev, win, prev), (1, 0, 0)) == 2.0


def test_loss_decomposition(quick_model, rng):
    batch = toy_batch(quick_model, rng, 6)
    parts = [loss(quick_model, batch, w) for w in ((1, 0, 0), (0, 1, 0), (0, 0, 1))]
    total = 0.45 * parts[0] + 0.45 * parts[1] + 0.1 * parts[2]
    assert loss(quick_model, batch) == pytest.approx(total, rel=1e-12, abs=1e-15)


def test_loss_accepts_items_and_rejects_empty(quick_model, sim_frames):
    norm, tr, _ = prepare_split(sim_frames[0], quick_model.config)
    items = WindowedSeries(tr, quick_model.config.window_spec)
    batch = [items[k] for k in range(3)]
    idx = np.arange(3)
    assert loss(quick_model, batch) == loss(quick_model, (items.prev(idx), items.window(idx), items.target(idx)))
    out = model_forward(quick_model, items[0])
    assert out[0].shape == (quick_model.measurement_dim,)
    with pytest.raises(ValidationError):
        loss(quick_model, [])


# ---------------------------------------------------------------- gradients


@pytest.mark.parametrize("overrides", [{}, {"activation": "relu"}, {"window_unit": "raw", "window": 5}, {"n_actuators": 0}])
def test_full_loss_gradient(overrides):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        cfg = NetConfig(**{**GRADCHECK_CONFIG, **overrides})
    rep = gradient_check(cfg, n_items=10)
    assert rep.passed, rep.summary()


def test_gradient_check_detects_fault():
    cfg = NetConfig(**GRADCHECK_CONFIG)
    rep = gradient_check(cfg, fault=1.0)
    assert not rep.passed and rep.worst_name is not None


def test_shared_decoder_collects_both_branches(quick_model, rng):
    prev, win, target = toy_batch(quick_model, rng)
    rec = forward(quick_model, prev, win)
    w = quick_model.config.weights
    span = quick_model.store.prefix_span("h.")
    both = backward(quick_model, rec, prev, target, w)[span]
    no_recon = backward(quick_model, rec, prev, target, w, use_recon=False)[span]
    no_pred = backward(quick_model, rec, prev, target, w, use_pred=False)[span]
    assert not np.allclose(both, no_recon) and not np.allclose(both, no_pred)
    assert np.allclose(both, no_recon + no_pred, rtol=1e-12, atol=1e-15)


# ---------------------------------------------------------------- covariances


def test_empirical_covariance_hand_case():
    C = empirical_covariance(np.array([[1.0, 0.0], [-1.0, 0.0]]))
    assert np.array_equal(C, np.array([[1.0, 0.0], [0.0, 0.0]]) + 1e-6 * np.eye(2))


def test_perfect_reconstruction_gives_jitter():
    C = empirical_covariance(np.zeros((10, 3)))
    assert np.array_equal(C, 1e-6 * np.eye(3))


def streaming_covariance(rows):
    """Welford-style single-pass covariance (population normalisation)."""
    n, mean, M2 = 0, np.zeros(rows.shape[1]), np.zeros((rows.shape[1],) * 2)
    for r in rows:
        n += 1
        delta = r - mean
        mean = mean + delta / n
        M2 = M2 + np.outer(delta, r - mean)
    return M2 / n


def test_covariances_match_streaming_oracle(quick_model, sim_frames):
    _, _, val = prepare_split(sim_frames[0], quick_model.config)
    Q_ref = streaming_covariance(prediction_residuals(quick_model, val))
    R_ref = streaming_covariance(reconstruction_residuals(quick_model, val))
    m, d = quick_model.state_dim, quick_model.measurement_dim
    assert np.abs(quick_model.Q - 1e-6 * np.eye(m) - Q_ref).max() < 1e-10
    assert np.abs(quick_model.R - 1e-6 * np.eye(d) - R_ref).max() < 1e-10


def test_q_r_symmetric_and_positive(quick_model):
    for C in (quick_model.Q, quick_model.R):
        assert np.array_equal(C, C.T)
        assert np.linalg.eigvalsh(C).min() > 0
        np.linalg.cholesky(C)
    assert quick_model.Q.shape == (2, 2) and quick_model.R.shape == (8, 8)


# ---------------------------------------------------------------- training


def test_training_improves_and_residuals_are_small(quick_model, sim_frames):
    hist = quick_model.metadata["history"]
    best = hist["best_epoch"]
    assert hist["val_loss"][best - 1] < hist["val_loss"][0]
    _, _, val = prepare_split(sim_frames[0], quick_model.config)
    e_f = prediction_residuals(quick_model, val)
    items = WindowedSeries(val, quick_model.config.detection_spec)
    idx = np.arange(len(items))
    dz = quick_model.encode(items.target(idx)) - quick_model.encode(items.prev(idx))
    assert np.linalg.norm(e_f.mean(axis=0)) < 0.1 * np.linalg.norm(dz, axis=1).mean()


def test_reconstruction_beats_baseline(quick_model, sim_frames):
    """Held-out reconstruction error is well below that of predicting the mean."""
    _, _, val = prepare_split(sim_frames[0], quick_model.config)
    e_h = reconstruction_residuals(quick_model, val)
    x = val.X[: e_h.shape[0] * 8].reshape(-1, 8)
    assert np.mean(np.sum(e_h**2, axis=1)) < 3 * np.mean(np.sum((x - x.mean(axis=0)) ** 2, axis=1))


def test_training_deterministic(sim_frames):
    cfg = quick_config(epochs=2)
    a = train(sim_frames[0], cfg)
    b = train(sim_frames[0], cfg)
    assert a.to_bytes() == b.to_bytes()


def test_training_without_actuators():
    frame = simulate_normal(SimConfig(seed=1), 800)
    frame.U = np.zeros((len(frame), 0))
    frame.actuator_names = []
    model = train(frame, quick_config(n_actuators=0, epochs=1))
    assert model.config.window_features == 8


def test_training_rejects_short_series(sim_frames):
    with pytest.raises(InsufficientDataError):
        train(sim_frames[0].slice(0, 50), quick_config())


def test_training_rejects_mismatched_frame(sim_frames):
    with pytest.raises(ValidationError):
        train(sim_frames[0], quick_config(n_sensors=2))


# ---------------------------------------------------------------- persistence


def test_bundle_round_trip(quick_model, tmp_path, rng):
    quick_model.save(tmp_path / "m.bin")
    back = NsibfModel.load(tmp_path / "m.bin")
    assert back.to_bytes() == quick_model.to_bytes()
    assert back.fingerprint() == quick_model.fingerprint()
    x = rng.uniform(size=(3, 8))
    assert np.array_equal(back.encode(x), quick_model.encode(x))


def test_corrupt_bundle_rejected(quick_model):
    blob = quick_model.to_bytes()
    with pytest.raises(ValidationError):
        NsibfModel.from_bytes(b"garbage" + blob)
    with pytest.raises(ValidationError):
        NsibfModel.from_bytes(blob[:-100])
