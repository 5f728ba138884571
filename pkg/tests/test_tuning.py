import csv

import numpy as np
import pytest
from scipy import stats

from conftest import quick_config
from nsibf import tuning
from nsibf.data import SeriesFrame
from nsibf.errors import DivergenceError, TuningFailureError, ValidationError
from nsibf.tuning import (
    NegSampleSpec,
    SearchSpace,
    TrialResult,
    aggregate_f1,
    compute_limits,
    generate_grid,
    inject_negative_samples,
    injection_count,
    random_search_tune,
    select_best,
    write_leaderboard,
)


def unit_frame(n=200, d=3, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.uniform(size=(n, d))
    X[0], X[1] = 0.0, 1.0
    U = rng.integers(0, 2, size=(n, 1)).astype(float)
    return SeriesFrame(X, U, None, [f"s{i}" for i in range(d)], ["u"])


# ---------------------------------------------------------------- limits and injection


def test_limits_examples():
    lo, hi = compute_limits(np.array([[0.0, 0.0], [1.0, 0.0], [0.5, 0.0]]), 0.05)
    assert lo.tolist() == [-0.05, -0.05] and hi.tolist() == [1.05, 0.05]
    lo, hi = compute_limits(np.array([[0.2], [0.7]]), 0.0)
    assert lo.tolist() == [0.2] and hi.tolist() == [0.7]
    with pytest.raises(ValidationError):
        compute_limits(np.zeros((0, 2)), 0.05)


def test_zero_ratio_leaves_frame_unchanged():
    f = unit_frame()
    out, rows = inject_negative_samples(f, compute_limits(f.X, 0.05), 0.0, np.random.default_rng(0))
    assert rows.size == 0 and np.array_equal(out.X, f.X) and not out.labels.any()


def test_full_ratio_replaces_every_row():
    f = unit_frame(n=10)
    out, rows = inject_negative_samples(f, compute_limits(f.X, 0.05), 1.0, np.random.default_rng(0))
    assert rows.tolist() == list(range(10)) and out.labels.all()


def test_injection_touches_only_selected_sensor_rows():
    f = unit_frame()
    lim = compute_limits(f.X, 0.05)
    out, rows = inject_negative_samples(f, lim, 0.3, np.random.default_rng(1))
    assert rows.size == 60 and np.unique(rows).size == 60
    keep = np.setdiff1d(np.arange(len(f)), rows)
    assert np.array_equal(out.X[keep], f.X[keep])
    assert np.array_equal(out.U, f.U)
    assert np.all(out.X[rows] >= lim[0]) and np.all(out.X[rows] <= lim[1])
    assert np.flatnonzero(out.labels).tolist() == rows.tolist()
    with pytest.raises(ValidationError):
        inject_negative_samples(f, lim, 1.5, np.random.default_rng(1))


def test_injection_count_rounds_half_up():
    assert injection_count(0.05, 10) == 1
    assert injection_count(0.25, 10) == 3
    assert injection_count(0.95, 200) == 190


def test_injected_draws_are_uniform():
    n = 100_000
    f = SeriesFrame(np.zeros((n, 1)), np.zeros((n, 0)), None, ["x"], [])
    out, rows = inject_negative_samples(f, (np.array([-0.05]), np.array([1.05])), 1.0, np.random.default_rng(7))
    ks = stats.kstest(out.X[rows, 0], stats.uniform(loc=-0.05, scale=1.1).cdf).statistic
    assert ks < 0.01


# ---------------------------------------------------------------- grid


def test_default_grid():
    f = unit_frame(n=101)
    grid = generate_grid(f)
    assert len(grid) == 20
    assert [ds.ratio for ds in grid] == [k / 20 for k in range(20)]
    assert all(ds.injected.size == injection_count(ds.ratio, 101) for ds in grid)
    assert sum(ds.injected.size for ds in grid) == sum(injection_count(k / 20, 101) for k in range(20))


def test_grid_reproducible_per_dataset():
    f = unit_frame()
    a = generate_grid(f, NegSampleSpec(seed=4))
    b = generate_grid(f, NegSampleSpec(ratios=(0.0, 0.05, 0.1), seed=4))
    for k in range(3):
        assert np.array_equal(a[k].frame.X, b[k].frame.X)
    c = generate_grid(f, NegSampleSpec(seed=5))
    assert not np.array_equal(a[5].frame.X, c[5].frame.X)


def test_spec_validation():
    with pytest.raises(ValidationError):
        NegSampleSpec(ratios=(0.5, 1.2))
    with pytest.raises(ValidationError):
        NegSampleSpec(delta=-1)


# ---------------------------------------------------------------- search space


def test_space_validation():
    with pytest.raises(ValidationError):
        SearchSpace({"colour": [1, 2]}).validate()
    with pytest.raises(ValidationError):
        SearchSpace({"hidden_dim": [16, 64]}).validate()
    with pytest.raises(ValidationError):
        SearchSpace({"g_layers": [3, 1]}).validate()
    capped = SearchSpace({"state_dim": [1, 10]}).validate(state_cap=4)
    assert capped.params["state_dim"] == [1, 4]
    with pytest.raises(ValidationError):
        SearchSpace({"state_dim": [6, 10]}).validate(state_cap=4)


def test_space_sampling(tmp_path):
    p = tmp_path / "space.json"
    p.write_text('{"state_dim": [1, 3], "activation": {"choices": ["relu", "tanh"]}, "epochs": 5}')
    space = SearchSpace.from_json(p).validate(state_cap=7)
    rng = np.random.default_rng(0)
    draws = [space.sample(rng) for _ in range(200)]
    assert {d["state_dim"] for d in draws} == {1, 2, 3}
    assert {d["activation"] for d in draws} == {"relu", "tanh"}
    assert all(d["epochs"] == 5 for d in draws)


# ---------------------------------------------------------------- selection


def trial(k, mean_f1, val_loss=1.0, m=2, error=None):
    return TrialResult(k, {"state_dim": m}, mean_f1=mean_f1, val_loss=val_loss, error=error)


def test_aggregate_excludes_zero_ratio():
    assert aggregate_f1([0.0, 0.05, 0.1], [0.0, 0.5, 1.0]) == 0.75


def test_select_best_tie_breaks():
    assert select_best([trial(0, 0.5), trial(1, 0.8), trial(2, 0.7)]).trial == 1
    assert select_best([trial(0, 0.8, 2.0), trial(1, 0.8, 1.0)]).trial == 1
    assert select_best([trial(0, 0.8, 1.0, m=4), trial(1, 0.8, 1.0, m=2)]).trial == 1
    assert select_best([trial(0, 0.9, error="boom"), trial(1, 0.1)]).trial == 1


def test_select_best_invariant_to_rescaling():
    trials = [trial(k, f, v) for k, (f, v) in enumerate([(0.3, 2.0), (0.9, 5.0), (0.9, 4.0), (0.1, 0.1)])]
    best = select_best(trials).trial
    scaled = [trial(t.trial, 0.5 * t.mean_f1 + 0.1, 10 * t.val_loss) for t in trials]
    assert select_best(scaled).trial == best == 2


def test_all_failed_raises():
    with pytest.raises(TuningFailureError) as exc:
        select_best([trial(0, 0.0, error="DivergenceError: x"), trial(1, 0.0, error="y")])
    assert len(exc.value.diagnostics) == 2


# ---------------------------------------------------------------- end to end


TUNE_SPACE = SearchSpace({"state_dim": [1, 3], "hidden_dim": [32, 48]})


@pytest.fixture(scope="module")
def tuned(sim_frames):
    return random_search_tune(sim_frames[0], quick_config(epochs=3), TUNE_SPACE, budget=2, seed=1, test=sim_frames[1])


def test_tune_selects_argmax(tuned):
    assert len(tuned.trials) == 2
    assert all(len(t.f1s) == 20 for t in tuned.trials)
    assert tuned.best.mean_f1 == max(t.mean_f1 for t in tuned.trials)
    assert tuned.model.fingerprint() == tuned.best.fingerprint
    assert all(t.test_f1 is not None for t in tuned.trials)


def test_tune_reproducible(tuned, sim_frames):
    again = random_search_tune(sim_frames[0], quick_config(epochs=3), TUNE_SPACE, budget=2, seed=1, test=sim_frames[1])
    assert [t.fingerprint for t in again.trials] == [t.fingerprint for t in tuned.trials]
    assert [t.f1s for t in again.trials] == [t.f1s for t in tuned.trials]


def test_budget_one_returns_single_trial(sim_frames):
    res = random_search_tune(sim_frames[0], quick_config(epochs=1), TUNE_SPACE, budget=1)
    assert len(res.trials) == 1 and res.best is res.trials[0]
    with pytest.raises(ValidationError):
        random_search_tune(sim_frames[0], quick_config(epochs=1), TUNE_SPACE, budget=0)


def test_all_trials_diverging(monkeypatch, sim_frames):
    def diverge(*args, **kw):
        raise DivergenceError("loss became nan")

    monkeypatch.setattr(tuning, "train_normalized", diverge)
    with pytest.raises(TuningFailureError) as exc:
        random_search_tune(sim_frames[0], quick_config(), TUNE_SPACE, budget=3)
    assert len(exc.value.diagnostics) == 3 and "nan" in exc.value.diagnostics[0]


def test_leaderboard(tuned, tmp_path):
    write_leaderboard(tuned, tmp_path / "lb.csv")
    with open(tmp_path / "lb.csv") as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2
    assert "f1_r0.95" in rows[0] and "hidden_dim" in rows[0]
    assert float(rows[tuned.best.trial]["mean_f1"]) == tuned.best.mean_f1
