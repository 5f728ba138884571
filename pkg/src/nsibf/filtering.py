"""Sigma-point (unscented) Bayesian filtering over a learned state-space model.

The model object only needs ``encode``, ``decode``, ``transition`` (or
``transition_from_context`` plus ``context``), ``Q`` and ``R``; anything
shaped like :class:`nsibf.model.NsibfModel` works, which is how the linear
Kalman checks in the tests drive the same code.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_solve, solve_triangular

from .errors import DegenerateCovarianceError, NumericalBreakdownError, NumericalError, ShapeError

log = logging.getLogger(__name__)

DEFAULT_EPSILON = 1e-4
JITTER_START = 1e-9
JITTER_MAX = 1e-3


@dataclass
class GaussianBelief:
    mean: np.ndarray
    cov: np.ndarray

    @property
    def dim(self) -> int:
        return self.mean.shape[0]


@dataclass
class SigmaPoints:
    points: np.ndarray  # (2m + 1, m)
    wm: np.ndarray
    wc: np.ndarray


@dataclass
class MeasurementPrediction:
    mean: np.ndarray
    cov: np.ndarray
    chol: np.ndarray  # lower Cholesky factor of cov
    X: np.ndarray  # decoded sigma points
    Y: np.ndarray  # predicted state sigma points
    jitter: float = 0.0


def symmetrize(C: np.ndarray) -> np.ndarray:
    return 0.5 * (C + C.T)


def default_kappa(m: int) -> float:
    return float(3 - m) if m < 3 else 0.0


def safe_cholesky(C: np.ndarray, start: float = JITTER_START, limit: float = JITTER_MAX):
    """Lower Cholesky factor of ``C``, adding diagonal jitter (x10 per retry) if needed.

    Returns ``(L, jitter)``; ``jitter`` is 0 when none was needed.
    """
    try:
        return np.linalg.cholesky(C), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(C.shape[0])
    jitter = start
    while jitter <= limit * (1 + 1e-12):
        try:
            L = np.linalg.cholesky(C + jitter * eye)
            log.debug("cholesky needed jitter %.1e", jitter)
            return L, jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise DegenerateCovarianceError(f"covariance not positive definite even with jitter {limit:g}")


def init_belief(model, x0: np.ndarray, epsilon: float = DEFAULT_EPSILON) -> GaussianBelief:
    """Belief centred on the encoding of ``x0`` with covariance ``epsilon * I``."""
    if not epsilon > 0:
        raise ValueError("epsilon must be positive")
    z0 = np.asarray(model.encode(np.asarray(x0, dtype=np.float64)), dtype=np.float64)
    if not np.all(np.isfinite(z0)):
        raise NumericalError("initial encoding is not finite")
    return GaussianBelief(z0.copy(), epsilon * np.eye(z0.shape[0]))


def julier_sigma_points(belief: GaussianBelief, kappa: float | None = None) -> SigmaPoints:
    """Symmetric 2m+1 point set: the mean, then mean +/- columns of sqrt((m + kappa) P).

    Weights are ``kappa / (m + kappa)`` for the centre and ``1 / (2 (m + kappa))``
    for the rest, shared between mean and covariance.
    """
    m = belief.dim
    kappa = default_kappa(m) if kappa is None else float(kappa)
    if m + kappa <= 0:
        raise ValueError(f"m + kappa must be positive (m={m}, kappa={kappa})")
    L, _ = safe_cholesky(belief.cov)
    spread = np.sqrt(m + kappa) * L
    pts = np.empty((2 * m + 1, m))
    pts[0] = belief.mean
    pts[1 : m + 1] = belief.mean + spread.T
    pts[m + 1 :] = belief.mean - spread.T
    w = np.full(2 * m + 1, 0.5 / (m + kappa))
    w[0] = kappa / (m + kappa)
    return SigmaPoints(pts, w, w.copy())


def unscented_transform(points: np.ndarray, wm: np.ndarray, wc: np.ndarray, noise_cov=None):
    """Weighted mean and (symmetrized) scatter of ``points`` plus ``noise_cov``."""
    points = np.atleast_2d(points)
    if points.shape[0] != wm.shape[0] or wc.shape[0] != wm.shape[0]:
        raise ShapeError("points and weights disagree in count")
    mean = wm @ points
    D = points - mean
    cov = (D * wc[:, None]).T @ D
    if noise_cov is not None:
        cov = cov + noise_cov
    return mean, symmetrize(cov)


def predict_step(model, belief: GaussianBelief, window=None, kappa: float | None = None, context=None):
    """Push sigma points of ``belief`` through the transition and recombine with Q.

    Either ``window`` or a precomputed LSTM ``context`` must be given.
    Returns ``(prior, Y, sigma)`` where ``Y`` are the propagated points.
    """
    sigma = julier_sigma_points(belief, kappa)
    if context is not None:
        Y = model.transition_from_context(sigma.points, context)
    else:
        Y = model.transition(sigma.points, window)
    mean, cov = unscented_transform(Y, sigma.wm, sigma.wc, model.Q)
    return GaussianBelief(mean, cov), Y, sigma


def measurement_predict(model, Y: np.ndarray, sigma: SigmaPoints) -> MeasurementPrediction:
    """Decode the state points ``Y`` and form the measurement mean and covariance (with R).

    ``Y`` is normally a fresh sigma set drawn from the prior, so that the
    process noise Q carries into the measurement covariance.
    """
    if Y.shape[0] == 0:
        raise ShapeError("no state points to decode")
    X = np.atleast_2d(model.decode(Y))
    mean, cov = unscented_transform(X, sigma.wm, sigma.wc, model.R)
    L, jitter = safe_cholesky(cov)
    if jitter:
        cov = cov + jitter * np.eye(cov.shape[0])
    return MeasurementPrediction(mean, cov, L, X, Y, jitter)


def mahalanobis_score(x: np.ndarray, pred: MeasurementPrediction) -> float:
    """Mahalanobis distance of ``x`` from the predicted measurement distribution."""
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise NumericalError("observation contains non-finite values")
    white = solve_triangular(pred.chol, x - pred.mean, lower=True, check_finite=False)
    return float(np.sqrt(white @ white))


def update_step(prior: GaussianBelief, pred: MeasurementPrediction, sigma: SigmaPoints, x: np.ndarray, step=None):
    """Kalman update of the prior with observation ``x``; returns the posterior belief."""
    dY = pred.Y - prior.mean
    dX = pred.X - pred.mean
    cross = (dY * sigma.wc[:, None]).T @ dX
    # K = cross @ inv(S)  <=>  S K^T = cross^T
    K = cho_solve((pred.chol, True), cross.T, check_finite=False).T
    mean = prior.mean + K @ (np.asarray(x, dtype=np.float64) - pred.mean)
    cov = symmetrize(prior.cov - K @ pred.cov @ K.T)
    try:
        np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        cov = _floor_eigenvalues(cov, step)
    if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(cov))):
        raise NumericalBreakdownError("posterior is not finite", step)
    return GaussianBelief(mean, cov)


def _floor_eigenvalues(C, step):
    vals, vecs = np.linalg.eigh(C)
    tol = 1e-6 * max(1.0, float(np.abs(vals).max()))
    if vals.min() < -tol:
        raise NumericalBreakdownError(
            f"posterior covariance indefinite (min eigenvalue {vals.min():.3e})", step
        )
    vals = np.clip(vals, 0.0, None)
    return symmetrize((vecs * vals) @ vecs.T)


@dataclass
class FilterStep:
    score: float
    prior: GaussianBelief
    prediction: MeasurementPrediction
    posterior: GaussianBelief


def filter_step(
    model, belief: GaussianBelief, x: np.ndarray, window=None, kappa=None, context=None, step=None, redraw=True
):
    """One predict / score / update cycle.

    With ``redraw`` (the default) the measurement step decodes sigma points
    redrawn from the prior (z_hat, P_hat), which makes the recursion exact for
    linear maps. Without it the propagated points are decoded directly, which
    leaves Q out of the measurement covariance and the Kalman gain.
    """
    prior, Y, sigma = predict_step(model, belief, window, kappa, context)
    if redraw:
        sigma = julier_sigma_points(prior, kappa)
        Y = sigma.points
    pred = measurement_predict(model, Y, sigma)
    score = mahalanobis_score(x, pred)
    post = update_step(prior, pred, sigma, x, step)
    return FilterStep(score, prior, pred, post)
