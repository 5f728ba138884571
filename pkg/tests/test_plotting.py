import numpy as np

from nsibf.detector import run_nsibf
from nsibf.evaluation import roc_auc
from nsibf.plotting import plot_history, plot_roc, plot_trace, plot_tuning
from nsibf.tuning import TrialResult


def test_trace_plot_deterministic(quick_model, sim_frames, tmp_path):
    trace = run_nsibf(quick_model, sim_frames[1])
    a = plot_trace(trace, tmp_path / "a.png", threshold=float(np.median(trace.score)))
    b = plot_trace(trace, tmp_path / "b.png", threshold=float(np.median(trace.score)))
    assert a.stat().st_size > 0 and a.read_bytes() == b.read_bytes()


def test_other_plots_written(quick_model, tmp_path, rng):
    labels = rng.random(100) < 0.2
    scores = rng.normal(size=100) + labels
    assert plot_roc({"nsibf": roc_auc(scores, labels)}, tmp_path / "roc.png").exists()
    assert plot_history(quick_model.metadata["history"], tmp_path / "sub" / "hist.png").exists()
    trials = [TrialResult(k, {"state_dim": 2}, mean_f1=0.1 * k, val_loss=1.0, test_f1=0.5) for k in range(4)]
    trials.append(TrialResult(4, {}, error="boom"))
    assert plot_tuning(trials, tmp_path / "tune.png").exists()
