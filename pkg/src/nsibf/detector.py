"""Online anomaly scoring with a trained model.

Three variants share one time alignment: super-step ``k`` (rows
``[k*s, (k+1)*s)``) is scored for every ``k >= warmup`` where ``warmup`` is
the number of leading super-steps needed to fill the first window.

* ``nsibf`` - Mahalanobis distance of each observation from the filter's
  predicted measurement distribution.
* ``recon`` - Euclidean norm of the reconstruction residual ``x - h(g(x))``.
* ``pred`` - Euclidean norm of the one-step prediction residual computed from
  the previous observation, without tracking a belief.
"""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field

import numpy as np

from . import filtering, kernel
from .data import SeriesFrame, WindowedSeries, normalize
from .errors import NumericalError, ValidationError

log = logging.getLogger(__name__)

VARIANTS = ("nsibf", "recon", "pred")
CONTEXT_CHUNK = 512


@dataclass
class ScoreTrace:
    t: np.ndarray
    score: np.ndarray
    variant: str
    mu: np.ndarray | None = None
    sigma_diag: np.ndarray | None = None
    x: np.ndarray | None = None
    labels: np.ndarray | None = None
    posterior_mu: np.ndarray | None = None
    fingerprint: str = ""
    meta: dict = field(default_factory=dict)
    error: dict | None = None

    def __len__(self):
        return self.t.size

    def to_csv(self, path, full: bool = False) -> None:
        header = ["t", "score", "variant"]
        if self.labels is not None:
            header.append("label")
        cols = []
        if full:
            blocks = (("mu", self.mu), ("sigma", self.sigma_diag), ("x", self.x), ("post_mu", self.posterior_mu))
            for name, arr in blocks:
                if arr is not None:
                    header += [f"{name}_{i}" for i in range(arr.shape[1])]
                    cols.append(arr)
        if self.error is not None:
            header.append("error")
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for k in range(len(self)):
                row = [str(int(self.t[k])), repr(float(self.score[k])), self.variant]
                if self.labels is not None:
                    row.append("1" if self.labels[k] else "0")
                for arr in cols:
                    row += [repr(float(v)) for v in arr[k]]
                if self.error is not None:
                    row.append("")
                w.writerow(row)
            if self.error is not None:
                row = [str(int(self.error["t"])), "nan", self.variant]
                if self.labels is not None:
                    row.append("")
                row += [""] * sum(a.shape[1] for a in cols)
                row.append(self.error["message"])
                w.writerow(row)

    @classmethod
    def from_csv(cls, path) -> "ScoreTrace":
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        error = None
        if rows and rows[-1].get("error"):
            last = rows.pop()
            error = {"t": int(last["t"]), "message": last["error"]}
        if not rows:
            raise ValidationError(f"{path}: trace has no scored rows")
        variant = rows[0]["variant"]
        t = np.array([int(r["t"]) for r in rows])
        score = np.array([float(r["score"]) for r in rows])
        labels = None
        if "label" in rows[0]:
            labels = np.array([r["label"] == "1" for r in rows])

        def block(prefix):
            names = [k for k in rows[0] if k.startswith(prefix + "_")]
            if not names:
                return None
            return np.array([[float(r[n]) for n in names] for r in rows])

        return cls(t, score, variant, block("mu"), block("sigma"), block("x"), labels, block("post_mu"), error=error)


@dataclass
class Detection:
    flags: np.ndarray
    threshold: float


def apply_threshold(trace: ScoreTrace, threshold: float) -> Detection:
    """Flag steps whose score is strictly above ``threshold``."""
    threshold = float(threshold)
    if not np.isfinite(threshold):
        raise ValidationError("threshold must be finite")
    return Detection(trace.score > threshold, threshold)


def _prepare(model, frame: SeriesFrame, normalized: bool, limit: int | None):
    if frame.n_sensors != model.config.n_sensors or frame.n_actuators != model.config.n_actuators:
        raise ValidationError(
            f"series has {frame.n_sensors} sensors / {frame.n_actuators} actuators, model expects "
            f"{model.config.n_sensors} / {model.config.n_actuators}"
        )
    if limit is not None:
        frame = frame.slice(0, limit)
    if not normalized:
        frame = normalize(frame, model.normalizer)
    return WindowedSeries(frame, model.window_spec)


def _contexts(model, items: WindowedSeries) -> np.ndarray:
    n = len(items)
    out = np.empty((n, model.config.lstm_width))
    for start in range(0, n, CONTEXT_CHUNK):
        idx = np.arange(start, min(start + CONTEXT_CHUNK, n))
        out[idx] = model.context(items.window(idx))
    return out


def _base_trace(model, items: WindowedSeries, variant: str, **meta) -> ScoreTrace:
    s = items.spec.stack
    return ScoreTrace(
        t=items.targets // s,
        score=np.zeros(len(items)),
        variant=variant,
        labels=items.labels(),
        fingerprint=model.fingerprint(),
        meta={"stack": s, "warmup": items.spec.warmup, **meta},
    )


def run_nsibf(
    model,
    frame: SeriesFrame,
    epsilon: float = filtering.DEFAULT_EPSILON,
    kappa: float | None = None,
    normalized: bool = False,
    limit: int | None = None,
    reinit_on_failure: bool = False,
    posterior: bool = False,
) -> ScoreTrace:
    """Filter through ``frame`` and score each super-step after the warm-up.

    The belief starts at the encoding of the super-step just before the first
    scored one. On a numerical failure the trace is truncated at the failing
    step and ``trace.error`` is set, unless ``reinit_on_failure`` asks to
    restart the belief from the current observation instead.
    """
    items = _prepare(model, frame, normalized, limit)
    kappa = filtering.default_kappa(model.state_dim) if kappa is None else kappa
    trace = _base_trace(model, items, "nsibf", epsilon=epsilon, kappa=kappa)
    n = len(items)
    all_idx = np.arange(n)
    targets = items.target(all_idx)
    contexts = _contexts(model, items)
    d = model.measurement_dim
    trace.mu = np.empty((n, d))
    trace.sigma_diag = np.empty((n, d))
    trace.x = targets
    if posterior:
        trace.posterior_mu = np.empty((n, d))
    belief = filtering.init_belief(model, items.prev(np.array([0]))[0], epsilon)
    reinits = 0
    for k in range(n):
        try:
            step = filtering.filter_step(
                model, belief, targets[k], kappa=kappa, context=contexts[k], step=int(trace.t[k])
            )
        except NumericalError as exc:
            step = None
            if reinit_on_failure:
                log.warning("filter failure at step %d (%s); re-initialising", trace.t[k], exc)
                reinits += 1
                try:
                    belief = filtering.init_belief(model, items.prev(np.array([k]))[0], epsilon)
                    step = filtering.filter_step(
                        model, belief, targets[k], kappa=kappa, context=contexts[k], step=int(trace.t[k])
                    )
                except NumericalError as again:
                    exc = again
            if step is None:
                log.error("filter failure at step %d: %s", trace.t[k], exc)
                trace.error = {"t": int(trace.t[k]), "message": f"{type(exc).__name__}: {exc}"}
                _truncate(trace, k)
                return trace
        trace.score[k] = step.score
        trace.mu[k] = step.prediction.mean
        trace.sigma_diag[k] = np.diag(step.prediction.cov)
        if posterior:
            trace.posterior_mu[k] = model.decode(step.posterior.mean)
        belief = step.posterior
    trace.meta["reinitialisations"] = reinits
    return trace


def _truncate(trace: ScoreTrace, k: int):
    for name in ("t", "score", "mu", "sigma_diag", "x", "labels", "posterior_mu"):
        arr = getattr(trace, name)
        if arr is not None:
            setattr(trace, name, arr[:k])


def run_recon_baseline(model, frame: SeriesFrame, normalized: bool = False, limit: int | None = None) -> ScoreTrace:
    """Score each super-step by the norm of its reconstruction residual."""
    items = _prepare(model, frame, normalized, limit)
    trace = _base_trace(model, items, "recon")
    x = items.target(np.arange(len(items)))
    recon = model.decode(model.encode(x))
    trace.score = np.sqrt(np.sum((x - recon) ** 2, axis=1))
    trace.mu, trace.x = recon, x
    return trace


def run_pred_baseline(model, frame: SeriesFrame, normalized: bool = False, limit: int | None = None) -> ScoreTrace:
    """Score each super-step by the norm of ``x - h(f(g(x_prev), window))``."""
    items = _prepare(model, frame, normalized, limit)
    trace = _base_trace(model, items, "pred")
    idx = np.arange(len(items))
    x = items.target(idx)
    z_prev = model.encode(items.prev(idx))
    ctx = _contexts(model, items)
    z_next, _ = kernel.run_chain(model.store, model.net.f_dense, np.concatenate([z_prev, ctx], axis=1))
    pred = model.decode(z_next)
    trace.score = np.sqrt(np.sum((x - pred) ** 2, axis=1))
    trace.mu, trace.x = pred, x
    return trace


def run_variant(model, frame: SeriesFrame, variant: str, **kw) -> ScoreTrace:
    if variant == "nsibf":
        return run_nsibf(model, frame, **kw)
    kw = {k: v for k, v in kw.items() if k in ("normalized", "limit")}
    if variant == "recon":
        return run_recon_baseline(model, frame, **kw)
    if variant == "pred":
        return run_pred_baseline(model, frame, **kw)
    raise ValidationError(f"unknown variant {variant!r}; choose from {VARIANTS}")
