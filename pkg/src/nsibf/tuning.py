"""Label-free hyperparameter search guided by uniform negative sampling.

Surrogate anomaly datasets are built from the (normalized) validation split
by overwriting randomly chosen rows with uniform draws from the per-sensor
data range widened by ``delta``. Each trial configuration is trained, scored
on every surrogate, and ranked by its mean best point-adjusted F1.
"""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .data import SeriesFrame, write_csv
from .detector import run_nsibf
from .errors import NumericalError, TuningFailureError, ValidationError
from .evaluation import best_f1_search
from .model import NetConfig, NsibfModel, prepare_split, train_normalized

log = logging.getLogger(__name__)

DEFAULT_RATIOS = tuple(k / 20 for k in range(20))


@dataclass(frozen=True)
class NegSampleSpec:
    ratios: tuple = DEFAULT_RATIOS
    delta: float = 0.05
    seed: int = 0

    def __post_init__(self):
        if not all(0.0 <= r <= 1.0 for r in self.ratios):
            raise ValidationError("sample ratios must lie in [0, 1]")
        if not self.delta >= 0:
            raise ValidationError("delta must be non-negative")


def compute_limits(X: np.ndarray, delta: float) -> tuple[np.ndarray, np.ndarray]:
    """Per-column ``[min - delta, max + delta]``."""
    X = np.asarray(X, dtype=np.float64)
    if X.shape[0] == 0:
        raise ValidationError("cannot compute limits of an empty series")
    return X.min(axis=0) - delta, X.max(axis=0) + delta


def injection_count(ratio: float, n: int) -> int:
    # half rounds up
    return int(math.floor(ratio * n + 0.5))


def inject_negative_samples(frame: SeriesFrame, limits, ratio: float, rng: np.random.Generator):
    """Overwrite ``round(ratio * N)`` distinct rows' sensors with uniform draws inside ``limits``.

    Returns ``(new_frame, injected_rows)``; actuators and other rows are untouched
    and the new frame's labels mark the injected rows.
    """
    if not 0.0 <= ratio <= 1.0:
        raise ValidationError(f"sample ratio {ratio} outside [0, 1]")
    lo, hi = limits
    n = len(frame)
    k = injection_count(ratio, n)
    rows = np.sort(rng.choice(n, size=k, replace=False)) if k else np.zeros(0, dtype=np.int64)
    X = frame.X.copy()
    X[rows] = rng.uniform(lo, hi, size=(k, X.shape[1]))
    labels = np.zeros(n, dtype=bool)
    labels[rows] = True
    out = SeriesFrame(X, frame.U.copy(), labels, list(frame.sensor_names), list(frame.actuator_names), frame.time)
    return out, rows


@dataclass
class SurrogateDataset:
    index: int
    ratio: float
    frame: SeriesFrame
    injected: np.ndarray


def generate_grid(val: SeriesFrame, spec: NegSampleSpec = NegSampleSpec()) -> list[SurrogateDataset]:
    """One surrogate per ratio; dataset ``k`` uses its own generator seeded by ``(seed, k)``."""
    limits = compute_limits(val.X, spec.delta)
    out = []
    for k, r in enumerate(spec.ratios):
        rng = np.random.default_rng([spec.seed, k])
        frame, rows = inject_negative_samples(val, limits, r, rng)
        out.append(SurrogateDataset(k, r, frame, rows))
    return out


def write_grid(grid: list[SurrogateDataset], outdir) -> list:
    """Write each surrogate as ``surrogate_<k>.csv`` plus a ``grid.json`` summary; returns the paths."""
    out = Path(outdir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ds in grid:
        path = out / f"surrogate_{ds.index:02d}.csv"
        write_csv(ds.frame, path)
        paths.append(path)
    summary = [{"index": ds.index, "ratio": ds.ratio, "injected": ds.injected.tolist()} for ds in grid]
    path = out / "grid.json"
    with open(path, "w") as fh:
        json.dump(summary, fh, indent=1, sort_keys=True)
        fh.write("\n")
    paths.append(path)
    return paths


BOUNDS = {
    "g_layers": (1, 3),
    "h_layers": (1, 3),
    "f_dense_layers": (1, 3),
    "f_lstm_layers": (1, 3),
    "hidden_dim": (32, 256),
    "lstm_dim": (32, 256),
}

DEFAULT_SPACE = {
    "state_dim": [1, 10],
    "g_layers": [1, 3],
    "h_layers": [1, 3],
    "f_dense_layers": [1, 3],
    "f_lstm_layers": [1, 3],
    "hidden_dim": [32, 256],
}


@dataclass
class SearchSpace:
    """Per-hyperparameter integer ranges ``[lo, hi]``, choice lists, or fixed values."""

    params: dict = field(default_factory=lambda: dict(DEFAULT_SPACE))

    @classmethod
    def from_json(cls, path) -> "SearchSpace":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(raw)

    def _values(self, spec):
        if isinstance(spec, dict) and "choices" in spec:
            return list(spec["choices"])
        if isinstance(spec, list) and len(spec) == 2:
            return list(spec)
        return [spec]

    def validate(self, state_cap: int | None = None) -> "SearchSpace":
        """Check names and bounds; returns a copy with ``state_dim`` capped at ``state_cap``."""
        known = set(NetConfig.__dataclass_fields__) - {"n_sensors", "n_actuators"}
        params = dict(self.params)
        for name, spec in params.items():
            if name not in known:
                raise ValidationError(f"unknown hyperparameter {name!r} in search space")
            vals = self._values(spec)
            if isinstance(spec, list) and len(spec) == 2 and spec[0] > spec[1]:
                raise ValidationError(f"empty range for {name!r}: {spec}")
            if name in BOUNDS:
                lo, hi = BOUNDS[name]
                if not all(isinstance(v, int) and lo <= v <= hi for v in vals):
                    raise ValidationError(f"{name!r} must stay within [{lo}, {hi}], got {spec}")
        m = params.get("state_dim")
        if state_cap is not None and m is not None:
            vals = self._values(m)
            if min(vals) < 1 or min(vals) > state_cap:
                raise ValidationError(f"state_dim {m} outside [1, {state_cap}]")
            if max(vals) > state_cap:
                log.info("capping state_dim range %s at %d", m, state_cap)
                if isinstance(m, dict):
                    params["state_dim"] = {"choices": [v for v in vals if v <= state_cap]}
                else:
                    params["state_dim"] = [m[0], state_cap]
        return SearchSpace(params)

    def sample(self, rng: np.random.Generator) -> dict:
        out = {}
        for name in sorted(self.params):
            spec = self.params[name]
            if isinstance(spec, dict) and "choices" in spec:
                out[name] = spec["choices"][int(rng.integers(len(spec["choices"])))]
            elif isinstance(spec, list) and len(spec) == 2:
                lo, hi = spec
                if isinstance(lo, int) and isinstance(hi, int):
                    out[name] = int(rng.integers(lo, hi + 1))
                else:
                    out[name] = float(rng.uniform(lo, hi))
            else:
                out[name] = spec
        return out


@dataclass
class TrialResult:
    trial: int
    params: dict
    f1s: list = field(default_factory=list)
    mean_f1: float = float("nan")
    val_loss: float = float("inf")
    fingerprint: str = ""
    test_f1: float | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


def aggregate_f1(ratios, f1s) -> float:
    """Mean best F1 over surrogates that contain at least one injected point."""
    vals = [f for r, f in zip(ratios, f1s) if r > 0]
    return float(np.mean(vals)) if vals else 0.0


def surrogate_f1(model: NsibfModel, ds: SurrogateDataset) -> float:
    """Best point-adjusted F1 of the filter on one surrogate; 0 when it has no positives."""
    trace = run_nsibf(model, ds.frame, normalized=True)
    if trace.error is not None or not trace.labels.any():
        return 0.0
    return best_f1_search(trace.score, trace.labels).f1


def select_best(trials: list[TrialResult]) -> TrialResult:
    """Highest mean F1; ties go to lower validation loss, then smaller hidden state."""
    good = [t for t in trials if t.ok]
    if not good:
        raise TuningFailureError(
            "every tuning trial failed", [f"trial {t.trial}: {t.error}" for t in trials]
        )
    return min(good, key=lambda t: (-t.mean_f1, t.val_loss, t.params.get("state_dim", 0), t.trial))


def _run_trial(args):
    trial, params, base, tr, val, norm, grid, test = args
    cfg = replace(base, **params)
    result = TrialResult(trial, params)
    try:
        model = train_normalized(tr, val, cfg, norm)
    except (NumericalError, ValidationError) as exc:
        result.error = f"{type(exc).__name__}: {exc}"
        return result, None
    result.val_loss = float(model.metadata["best_val_loss"])
    result.f1s = [surrogate_f1(model, ds) for ds in grid]
    result.mean_f1 = aggregate_f1([ds.ratio for ds in grid], result.f1s)
    result.fingerprint = model.fingerprint()
    if test is not None:
        trace = run_nsibf(model, test)
        if trace.labels is not None and trace.labels.any() and trace.error is None:
            result.test_f1 = best_f1_search(trace.score, trace.labels).f1
    return result, model.to_bytes()


@dataclass
class TuneResult:
    best: TrialResult
    model: NsibfModel
    trials: list[TrialResult]
    ratios: tuple


def random_search_tune(
    frame: SeriesFrame,
    base: NetConfig,
    space: SearchSpace,
    budget: int,
    seed: int = 0,
    neg: NegSampleSpec | None = None,
    test: SeriesFrame | None = None,
    jobs: int = 1,
) -> TuneResult:
    """Train ``budget`` random configurations and keep the best on the surrogates.

    Each trial's training seed is derived from ``(seed, trial)``. ``test``, when
    given, is only scored for reporting and never influences selection.
    """
    if budget < 1:
        raise ValidationError("budget must be >= 1")
    space = space.validate(state_cap=max(1, base.measurement_dim - 1))
    neg = neg or NegSampleSpec(seed=seed)
    norm, tr, val = prepare_split(frame, base)
    grid = generate_grid(val, neg)
    rng = np.random.default_rng([seed, 0x7E57])
    jobs_args = []
    for trial in range(budget):
        params = space.sample(rng)
        params["seed"] = int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])
        jobs_args.append((trial, params, base, tr, val, norm, grid, test))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            outputs = list(pool.map(_run_trial, jobs_args))
    else:
        outputs = [_run_trial(a) for a in jobs_args]
    trials = [r for r, _ in outputs]
    for r in trials:
        log.info("trial %d %s mean F1 %.4f val loss %.6f", r.trial, r.params, r.mean_f1, r.val_loss)
    best = select_best(trials)
    model = NsibfModel.from_bytes(outputs[best.trial][1])
    return TuneResult(best, model, trials, tuple(neg.ratios))


def write_leaderboard(result: TuneResult, path) -> None:
    names = sorted({k for t in result.trials for k in t.params})
    header = ["trial"] + names + [f"f1_r{r:.2f}" for r in result.ratios] + ["mean_f1", "val_loss", "test_f1", "fingerprint", "error"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for t in result.trials:
            f1s = t.f1s if t.f1s else [float("nan")] * len(result.ratios)
            w.writerow(
                [t.trial] + [t.params.get(n, "") for n in names] + [repr(float(f)) for f in f1s]
                + [repr(t.mean_f1), repr(t.val_loss), "" if t.test_f1 is None else repr(t.test_f1), t.fingerprint, t.error or ""]
            )
