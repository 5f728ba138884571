"""Anomaly detection for cyber-physical systems by neural system identification and Bayesian filtering."""

__version__ = "0.1.0"

from .data import Normalizer, Schema, SeriesFrame, WindowSpec, load_csv, write_csv  # noqa: E402
from .detector import ScoreTrace, apply_threshold, run_nsibf, run_pred_baseline, run_recon_baseline  # noqa: E402
from .errors import NsibfError, NumericalError, ValidationError  # noqa: E402
from .evaluation import best_f1_search, evaluate, point_adjust, roc_auc  # noqa: E402
from .model import NetConfig, NsibfModel, train  # noqa: E402
from .simcps import SimConfig, simulate_normal, simulate_test  # noqa: E402
from .tuning import NegSampleSpec, SearchSpace, generate_grid, random_search_tune  # noqa: E402

__all__ = [
    "Normalizer", "Schema", "SeriesFrame", "WindowSpec", "load_csv", "write_csv",
    "ScoreTrace", "apply_threshold", "run_nsibf", "run_pred_baseline", "run_recon_baseline",
    "NsibfError", "NumericalError", "ValidationError",
    "best_f1_search", "evaluate", "point_adjust", "roc_auc",
    "NetConfig", "NsibfModel", "train",
    "SimConfig", "simulate_normal", "simulate_test",
    "NegSampleSpec", "SearchSpace", "generate_grid", "random_search_tune",
]
