"""Synthetic noisy-sine plant with an actuator that switches the frequency.

The actuator holds 3 or 6 and flips (``u <- 9 - u``) whenever ``t`` is a
multiple of 30, so it is a square wave of period 60. The hidden state is
``sin(t / u)`` plus process noise and the single sensor reads twice the
hidden state plus measurement noise. Test series inflate the process noise
inside periodic blocks, which are the labelled anomalies.

Noise comes from numpy's PCG64 bit generator (``default_rng``) using the
ziggurat normal sampler; one process-noise and one measurement-noise draw is
taken per step regardless of labels, so normal and test series generated
from the same seed differ only inside anomaly blocks.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .data import SeriesFrame
from .errors import ValidationError


@dataclass(frozen=True)
class SimConfig:
    flip_period: int = 30
    u0: float = 3.0
    flip_total: float = 9.0
    process_std: float = 0.1
    measurement_std: float = 0.2
    anomaly_std: float = 0.6
    anomaly_length: int = 100
    anomaly_period: int = 1000
    anomaly_offset: int = 0
    first_anomaly_block: int = 1
    seed: int = 0

    def __post_init__(self):
        if min(self.process_std, self.measurement_std, self.anomaly_std) < 0:
            raise ValidationError("noise standard deviations must be non-negative")
        if not 0 < self.anomaly_length < self.anomaly_period:
            raise ValidationError("anomaly block length must be positive and shorter than its period")
        if not 0 <= self.anomaly_offset <= self.anomaly_period - self.anomaly_length:
            raise ValidationError("anomaly offset must keep each block inside its period")

    def to_dict(self):
        return asdict(self)


def actuator_trace(t: np.ndarray, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Actuator value at times ``t`` (flip applied at multiples of the flip period)."""
    flips = np.asarray(t) // cfg.flip_period
    return np.where(flips % 2 == 0, cfg.u0, cfg.flip_total - cfg.u0)


def anomaly_mask(n: int, cfg: SimConfig = SimConfig()) -> np.ndarray:
    """Blocks at positions ``[k*period + offset, k*period + offset + length)`` for k >= first block."""
    mask = np.zeros(n, dtype=bool)
    k = cfg.first_anomaly_block
    while True:
        start = k * cfg.anomaly_period + cfg.anomaly_offset
        if start >= n:
            break
        mask[start : min(start + cfg.anomaly_length, n)] = True
        k += 1
    return mask


def _simulate(cfg: SimConfig, n: int, start: int, stream: int, anomalies: bool) -> SeriesFrame:
    if n < 1:
        raise ValidationError("series length must be >= 1")
    t = np.arange(start, start + n)
    u = actuator_trace(t, cfg)
    rng = np.random.default_rng([cfg.seed, stream])
    eps_p = rng.standard_normal(n)
    eps_m = rng.standard_normal(n)
    labels = anomaly_mask(n, cfg) if anomalies else np.zeros(n, dtype=bool)
    p_std = np.where(labels, cfg.anomaly_std, cfg.process_std)
    z = np.sin(t / u) + p_std * eps_p
    x = 2.0 * z + cfg.measurement_std * eps_m
    return SeriesFrame(x[:, None], u[:, None].astype(np.float64), labels, ["x"], ["u"], t)


def simulate_normal(cfg: SimConfig = SimConfig(), n: int = 10000, start: int = 1, stream: int = 0) -> SeriesFrame:
    """Normal operation for times ``start .. start + n - 1``."""
    return _simulate(cfg, n, start, stream, anomalies=False)


def simulate_test(cfg: SimConfig = SimConfig(), n: int = 10000, start: int = 10001, stream: int = 1) -> SeriesFrame:
    """Series with inflated process noise inside periodic blocks, labelled True there."""
    if n < cfg.anomaly_period:
        raise ValidationError(f"test series must cover at least one anomaly period ({cfg.anomaly_period})")
    return _simulate(cfg, n, start, stream, anomalies=True)
