"""Neural state-space model: encoder g, transition f, decoder h.

The encoder maps a stacked measurement vector to a low-dimensional hidden
state, the transition net advances the hidden state given an LSTM summary of
the preceding window of measurements and actuator states, and the decoder
maps hidden states back to measurements. The decoder is shared by the
reconstruction and prediction branches, so its parameters receive gradient
from both.

After training, the empirical covariances of the hidden-state prediction
residuals (``Q``) and measurement reconstruction residuals (``R``) on the
validation split turn the networks into a state-space model that the
filtering code can track.
"""

from __future__ import annotations

import hashlib
import io
import json
import logging
import struct
import warnings
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Sequence

import numpy as np

from . import kernel
from .data import (
    Normalizer,
    SeriesFrame,
    WindowedSeries,
    WindowSpec,
    fit_normalizer,
    normalize,
    split_train_val,
    stack_rows,
)
from .errors import (
    DivergenceError,
    InsufficientDataError,
    InvalidWindowError,
    ShapeError,
    ValidationError,
)

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
MAGIC = b"NSIBFMDL"
COV_JITTER = 1e-6
DEFAULT_WEIGHTS = (0.45, 0.45, 0.1)


@dataclass
class NetConfig:
    """Architecture, windowing and training settings.

    ``stride`` is the step between consecutive training items in raw rows
    (``None`` means one stack, i.e. non-overlapping super-steps). Detection
    always advances by one stack.
    """

    n_sensors: int
    n_actuators: int = 0
    stack: int = 1
    state_dim: int = 2
    window: int = 1
    window_unit: str = "super"
    stride: int | None = None
    g_layers: int = 1
    h_layers: int = 1
    f_dense_layers: int = 1
    f_lstm_layers: int = 1
    hidden_dim: int = 64
    lstm_dim: int | None = None
    activation: str = "relu"
    w1: float = DEFAULT_WEIGHTS[0]
    w2: float = DEFAULT_WEIGHTS[1]
    w3: float = DEFAULT_WEIGHTS[2]
    epochs: int = 100
    batch_size: int = 256
    lr: float = 1e-3
    clip_norm: float | None = 5.0
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.n_sensors < 1:
            raise ValidationError("at least one sensor column is required")
        if self.n_actuators < 0:
            raise ValidationError("n_actuators must be >= 0")
        for name in ("state_dim", "window", "stack", "hidden_dim", "epochs", "batch_size"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be >= 1, got {getattr(self, name)}")
        for name in ("g_layers", "h_layers", "f_dense_layers"):
            if getattr(self, name) < 0:
                raise ValidationError(f"{name} must be >= 0")
        if self.f_lstm_layers < 1:
            raise ValidationError("f_lstm_layers must be >= 1")
        if min(self.w1, self.w2, self.w3) < 0 or self.w1 + self.w2 + self.w3 == 0:
            raise ValidationError("loss weights must be non-negative and not all zero")
        if self.activation not in kernel.ACTIVATIONS:
            raise ValidationError(f"unknown activation {self.activation!r}")
        if self.lr <= 0:
            raise ValidationError("learning rate must be positive")
        WindowSpec(self.window, self.stack, self.stride, self.window_unit)
        if self.state_dim >= self.measurement_dim:
            warnings.warn(
                f"hidden state dimension {self.state_dim} is not lower than the stacked "
                f"measurement dimension {self.measurement_dim}",
                stacklevel=3,
            )

    @property
    def measurement_dim(self) -> int:
        return self.stack * self.n_sensors

    @property
    def lstm_width(self) -> int:
        return self.lstm_dim or self.hidden_dim

    @property
    def window_spec(self) -> WindowSpec:
        return WindowSpec(self.window, self.stack, self.stride, self.window_unit)

    @property
    def detection_spec(self) -> WindowSpec:
        return WindowSpec(self.window, self.stack, self.stack, self.window_unit)

    @property
    def window_features(self) -> int:
        per_row = self.n_sensors + self.n_actuators
        return per_row * self.stack if self.window_unit == "super" else per_row

    @property
    def weights(self) -> tuple[float, float, float]:
        return (self.w1, self.w2, self.w3)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "NetConfig":
        known = {f.name for f in fields(cls)}
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return cls(**{k: v for k, v in d.items() if k in known})


class Network:
    """Layer layout for one configuration. Holds no parameter values."""

    def __init__(self, cfg: NetConfig):
        act = cfg.activation
        m, d, w = cfg.state_dim, cfg.measurement_dim, cfg.hidden_dim
        self.g = _mlp("g", d, m, w, cfg.g_layers, act)
        self.h = _mlp("h", m, d, w, cfg.h_layers, act)
        lstm = []
        n_in = cfg.window_features
        for i in range(cfg.f_lstm_layers):
            lstm.append(kernel.LSTM(f"f.lstm{i}", n_in, cfg.lstm_width))
            n_in = cfg.lstm_width
        self.f_context = lstm + [kernel.LastStep("f.last")]
        self.f_dense = _mlp("f", m + cfg.lstm_width, m, w, cfg.f_dense_layers, act)
        self.state_dim = m

    @property
    def layers(self):
        # parameter order: g (omega), f (theta), h (phi)
        return self.g + self.f_context + self.f_dense + self.h

    def param_shapes(self):
        return [shape for layer in self.layers for shape in layer.param_shapes()]


def _mlp(prefix, n_in, n_out, width, n_hidden, act):
    layers = []
    for i in range(n_hidden):
        layers.append(kernel.Dense(f"{prefix}.{i}", n_in, width, act))
        n_in = width
    layers.append(kernel.Dense(f"{prefix}.out", n_in, n_out, "linear"))
    return layers


@dataclass
class NsibfModel:
    """Trained networks, normalizer and noise covariances; immutable after training."""

    config: NetConfig
    store: kernel.ParamStore
    normalizer: Normalizer
    Q: np.ndarray
    R: np.ndarray
    metadata: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION

    def __post_init__(self):
        self.net = Network(self.config)

    @classmethod
    def initialize(cls, config: NetConfig, normalizer: Normalizer | None = None, seed: int | None = None):
        net = Network(config)
        store = kernel.ParamStore(net.param_shapes())
        rng = np.random.default_rng(config.seed if seed is None else seed)
        kernel.init_params(store, net.layers, rng)
        if normalizer is None:
            normalizer = Normalizer(
                np.zeros(config.n_sensors), np.ones(config.n_sensors),
                np.zeros(config.n_actuators), np.ones(config.n_actuators),
            )
        m, d = config.state_dim, config.measurement_dim
        return cls(config, store, normalizer, np.eye(m) * COV_JITTER, np.eye(d) * COV_JITTER)

    @property
    def state_dim(self) -> int:
        return self.config.state_dim

    @property
    def measurement_dim(self) -> int:
        return self.config.measurement_dim

    # inference on normalized inputs

    def encode(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        _check_last_dim(x, self.measurement_dim, "encoder input")
        out, _ = kernel.run_chain(self.store, self.net.g, np.atleast_2d(x))
        return out[0] if x.ndim == 1 else out

    def decode(self, z: np.ndarray) -> np.ndarray:
        z = np.asarray(z, dtype=np.float64)
        _check_last_dim(z, self.state_dim, "decoder input")
        out, _ = kernel.run_chain(self.store, self.net.h, np.atleast_2d(z))
        return out[0] if z.ndim == 1 else out

    def context(self, windows: np.ndarray) -> np.ndarray:
        """LSTM summary of one window (L, F) or a batch of windows (B, L, F)."""
        windows = np.asarray(windows, dtype=np.float64)
        single = windows.ndim == 2
        w3 = windows[None] if single else windows
        expected = self.config.window
        if w3.ndim != 3 or w3.shape[1] != expected:
            raise InvalidWindowError(
                f"window must have {expected} steps, got shape {windows.shape}"
            )
        if w3.shape[2] != self.config.window_features:
            raise ShapeError(f"window rows must have {self.config.window_features} features, got {w3.shape[2]}")
        out, _ = kernel.run_chain(self.store, self.net.f_context, w3)
        return out[0] if single else out

    def transition_from_context(self, z: np.ndarray, ctx: np.ndarray) -> np.ndarray:
        """Advance hidden states ``z`` (m,) or (n, m) sharing one context vector."""
        z = np.asarray(z, dtype=np.float64)
        _check_last_dim(z, self.state_dim, "transition input")
        z2 = np.atleast_2d(z)
        c = np.broadcast_to(np.asarray(ctx).reshape(1, -1), (z2.shape[0], ctx.shape[-1]))
        out, _ = kernel.run_chain(self.store, self.net.f_dense, np.concatenate([z2, c], axis=1))
        return out[0] if z.ndim == 1 else out

    def transition(self, z: np.ndarray, window: np.ndarray) -> np.ndarray:
        """Advance hidden states through f; the window context is computed once per call."""
        window = np.asarray(window, dtype=np.float64)
        if window.ndim != 2:
            raise InvalidWindowError(f"transition takes a single window (L, F), got shape {window.shape}")
        return self.transition_from_context(z, self.context(window))

    @property
    def window_spec(self) -> WindowSpec:
        return self.config.detection_spec

    # persistence

    def to_bytes(self) -> bytes:
        arrays = {"params": self.store.values, "Q": self.Q, "R": self.R}
        directory, offset = {}, 0
        for name, arr in arrays.items():
            directory[name] = {"offset": offset, "shape": list(arr.shape)}
            offset += arr.size * 8
        header = {
            "format_version": self.format_version,
            "config": self.config.to_dict(),
            "normalizer": self.normalizer.to_dict(),
            "param_slices": self.store.directory(),
            "arrays": directory,
            "metadata": self.metadata,
        }
        hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<Q", len(hbytes)))
        buf.write(hbytes)
        for arr in arrays.values():
            buf.write(np.ascontiguousarray(arr, dtype="<f8").tobytes())
        return buf.getvalue()

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def from_bytes(cls, blob: bytes) -> "NsibfModel":
        try:
            return cls._from_bytes(blob)
        except (ValueError, KeyError, TypeError, struct.error) as exc:
            if isinstance(exc, ValidationError):
                raise
            raise ValidationError(f"corrupt model bundle: {exc}") from exc

    @classmethod
    def _from_bytes(cls, blob: bytes) -> "NsibfModel":
        if blob[: len(MAGIC)] != MAGIC:
            raise ValidationError("not a model bundle (bad magic)")
        (hlen,) = struct.unpack("<Q", blob[len(MAGIC) : len(MAGIC) + 8])
        start = len(MAGIC) + 8
        header = json.loads(blob[start : start + hlen].decode("utf-8"))
        if header["format_version"] != FORMAT_VERSION:
            raise ValidationError(f"unsupported bundle format {header['format_version']}")
        body = start + hlen
        arrays = {}
        for name, info in header["arrays"].items():
            n = int(np.prod(info["shape"]))
            a = np.frombuffer(blob, dtype="<f8", count=n, offset=body + info["offset"])
            arrays[name] = a.astype(np.float64).reshape(info["shape"])
        config = NetConfig.from_dict(header["config"])
        shapes = [(d["name"], tuple(d["shape"])) for d in header["param_slices"]]
        store = kernel.ParamStore(shapes)
        store.set_values(arrays["params"])
        return cls(
            config, store, Normalizer.from_dict(header["normalizer"]),
            arrays["Q"], arrays["R"], header["metadata"], header["format_version"],
        )

    @classmethod
    def load(cls, path) -> "NsibfModel":
        return cls.from_bytes(Path(path).read_bytes())

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]


def _check_last_dim(a, n, what):
    if a.ndim not in (1, 2) or a.shape[-1] != n:
        raise ShapeError(f"{what} must have length {n}, got shape {a.shape}")


def encode(model: NsibfModel, x):
    return model.encode(x)


def decode(model: NsibfModel, z):
    return model.decode(z)


def transition(model: NsibfModel, z, window):
    return model.transition(z, window)


@dataclass
class ForwardRecord:
    """Outputs and tapes of one batched pass through the composite network."""

    z_prev: np.ndarray
    z_next: np.ndarray
    x_recon: np.ndarray
    x_pred: np.ndarray
    tapes: dict


def forward(model: NsibfModel, prev: np.ndarray, windows: np.ndarray) -> ForwardRecord:
    store, net = model.store, model.net
    z0, tg = kernel.run_chain(store, net.g, prev)
    xr, th_recon = kernel.run_chain(store, net.h, z0)
    ctx, tc = kernel.run_chain(store, net.f_context, windows)
    z1, tf = kernel.run_chain(store, net.f_dense, np.concatenate([z0, ctx], axis=1))
    xp, th_pred = kernel.run_chain(store, net.h, z1)
    return ForwardRecord(z0, z1, xr, xp, {"g": tg, "h_recon": th_recon, "ctx": tc, "f": tf, "h_pred": th_pred})


def model_forward(model: NsibfModel, item):
    """Single-item pass: ``(x_recon_prev, x_pred_next, z_prev, z_next)``."""
    rec = forward(model, item.prev[None], item.window[None])
    return rec.x_recon[0], rec.x_pred[0], rec.z_prev[0], rec.z_next[0]


def _as_arrays(batch):
    if isinstance(batch, tuple):
        return batch
    items = list(batch)
    if not items:
        raise ValidationError("loss needs a non-empty batch")
    return (
        np.stack([it.prev for it in items]),
        np.stack([it.window for it in items]),
        np.stack([it.target for it in items]),
    )


def loss_terms(rec: ForwardRecord, prev, target) -> tuple[float, float, float]:
    """Batch means of the reconstruction, prediction and smoothness squared errors."""
    B = prev.shape[0]
    r = np.sum((prev - rec.x_recon) ** 2) / B
    p = np.sum((target - rec.x_pred) ** 2) / B
    s = np.sum((rec.z_next - rec.z_prev) ** 2) / B
    return float(r), float(p), float(s)


def loss(model: NsibfModel, batch, weights: Sequence[float] | None = None) -> float:
    prev, windows, target = _as_arrays(batch)
    if prev.shape[0] == 0:
        raise ValidationError("loss needs a non-empty batch")
    w1, w2, w3 = weights or model.config.weights
    r, p, s = loss_terms(forward(model, prev, windows), prev, target)
    return w1 * r + w2 * p + w3 * s


def backward(model: NsibfModel, rec: ForwardRecord, prev, target, weights, use_recon=True, use_pred=True):
    """Gradient of the weighted loss with respect to every parameter.

    ``use_recon`` / ``use_pred`` drop the corresponding decoder branch, which
    is only useful for inspecting how the shared decoder collects gradient.
    """
    store = model.store
    w1, w2, w3 = weights
    B = prev.shape[0]
    m = model.state_dim
    d_recon = 2.0 * w1 * (rec.x_recon - prev) / B
    d_pred = 2.0 * w2 * (rec.x_pred - target) / B
    d_smooth = 2.0 * w3 * (rec.z_next - rec.z_prev) / B
    grad = store.zeros_like()
    if not use_pred:
        d_pred = np.zeros_like(d_pred)
    if not use_recon:
        d_recon = np.zeros_like(d_recon)
    grad, dz1 = kernel.backprop(store, rec.tapes["h_pred"], d_pred, grad)
    dz1 = dz1 + d_smooth
    grad, dfin = kernel.backprop(store, rec.tapes["f"], dz1, grad)
    dz0 = dfin[:, :m] - d_smooth
    grad, _ = kernel.backprop(store, rec.tapes["ctx"], dfin[:, m:], grad)
    grad, dz0_h = kernel.backprop(store, rec.tapes["h_recon"], d_recon, grad)
    grad, _ = kernel.backprop(store, rec.tapes["g"], dz0 + dz0_h, grad)
    return grad


def loss_and_grad(model: NsibfModel, batch, weights=None):
    prev, windows, target = _as_arrays(batch)
    weights = weights or model.config.weights
    rec = forward(model, prev, windows)
    r, p, s = loss_terms(rec, prev, target)
    value = weights[0] * r + weights[1] * p + weights[2] * s
    return value, backward(model, rec, prev, target, weights)


def _batch(items: WindowedSeries, idx):
    return items.prev(idx), items.window(idx), items.target(idx)


def dataset_loss(model: NsibfModel, items: WindowedSeries, batch_size: int = 1024) -> float:
    total, n = 0.0, len(items)
    for start in range(0, n, batch_size):
        idx = np.arange(start, min(start + batch_size, n))
        total += loss(model, _batch(items, idx)) * idx.size
    return total / n


@dataclass
class TrainingHistory:
    train_loss: list = field(default_factory=list)
    val_loss: list = field(default_factory=list)
    best_epoch: int = -1

    def to_dict(self):
        return asdict(self)


def prepare_split(frame: SeriesFrame, config: NetConfig):
    """Chronological split plus normalizer fitted on the training part."""
    spec = config.window_spec
    if frame.n_sensors != config.n_sensors or frame.n_actuators != config.n_actuators:
        raise ValidationError(
            f"frame has {frame.n_sensors} sensors / {frame.n_actuators} actuators, "
            f"config expects {config.n_sensors} / {config.n_actuators}"
        )
    need = 4 * spec.min_rows()
    if len(frame) < need:
        raise InsufficientDataError(
            f"training needs at least {need} rows for window {spec.length} ({spec.unit}) "
            f"and stack {spec.stack}; got {len(frame)}"
        )
    tr, val = split_train_val(frame, min_length=need)
    norm = fit_normalizer(tr)
    return norm, normalize(tr, norm), normalize(val, norm)


def train(frame: SeriesFrame, config: NetConfig, progress=None) -> NsibfModel:
    """Fit the networks on the first 75% of ``frame`` and estimate Q, R on the rest.

    ``frame`` must contain normal operation only. The parameters from the epoch
    with the lowest validation loss are kept. ``progress`` is called as
    ``progress(epoch, train_loss, val_loss)`` after every epoch.
    """
    norm, tr, val = prepare_split(frame, config)
    return train_normalized(tr, val, config, norm, progress)


def train_normalized(tr: SeriesFrame, val: SeriesFrame, config: NetConfig, norm: Normalizer, progress=None):
    spec = config.window_spec
    items_tr = WindowedSeries(tr, spec)
    items_val = WindowedSeries(val, spec)
    init_seed, shuffle_seed = np.random.SeedSequence(config.seed).spawn(2)
    model = NsibfModel.initialize(config, norm, seed=int(init_seed.generate_state(1)[0]))
    rng = np.random.default_rng(shuffle_seed)
    state = kernel.OptimizerState.fresh(model.store, lr=config.lr)
    history = TrainingHistory()
    best_values, best_val = model.store.values.copy(), np.inf
    n = len(items_tr)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        running = 0.0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            value, grad = loss_and_grad(model, _batch(items_tr, idx))
            if not np.isfinite(value):
                raise DivergenceError(f"training loss became non-finite at epoch {epoch + 1}")
            grad = kernel.clip_global_norm(grad, config.clip_norm)
            try:
                kernel.adam_update(model.store, grad, state)
            except DivergenceError as exc:
                raise DivergenceError(f"epoch {epoch + 1}: {exc}") from exc
            running += value * idx.size
        train_loss = running / n
        val_loss = dataset_loss(model, items_val)
        if not np.isfinite(val_loss):
            raise DivergenceError(f"validation loss became non-finite at epoch {epoch + 1}")
        history.train_loss.append(train_loss)
        history.val_loss.append(val_loss)
        if val_loss < best_val:
            best_val = val_loss
            best_values = model.store.values.copy()
            history.best_epoch = epoch + 1
        if progress is not None:
            progress(epoch + 1, train_loss, val_loss)
        log.debug("epoch %d train %.6f val %.6f", epoch + 1, train_loss, val_loss)
    model.store.set_values(best_values)
    Q, R, diag = estimate_covariances(model, val)
    model.Q, model.R = Q, R
    model.metadata = {
        "history": history.to_dict(),
        "final_train_loss": history.train_loss[-1],
        "final_val_loss": history.val_loss[-1],
        "best_val_loss": best_val,
        "n_train_items": n,
        "n_val_items": len(items_val),
        "residuals": diag,
    }
    return model


def empirical_covariance(residuals: np.ndarray, jitter: float = COV_JITTER) -> np.ndarray:
    """Mean-centred covariance (divided by the sample count) plus ``jitter * I``."""
    D = residuals - residuals.mean(axis=0)
    C = D.T @ D / residuals.shape[0]
    C = 0.5 * (C + C.T)
    return C + jitter * np.eye(C.shape[0])


def prediction_residuals(model: NsibfModel, val: SeriesFrame):
    """Hidden-state prediction residuals on one-stack-stride items of ``val``."""
    items = WindowedSeries(val, model.config.detection_spec)
    idx = np.arange(len(items))
    z_next = model.encode(items.target(idx))
    z_prev = model.encode(items.prev(idx))
    ctx = model.context(items.window(idx))
    z_pred, _ = kernel.run_chain(model.store, model.net.f_dense, np.concatenate([z_prev, ctx], axis=1))
    return z_next - z_pred


def reconstruction_residuals(model: NsibfModel, val: SeriesFrame):
    x = stack_rows(val.X, model.config.stack)
    return x - model.decode(model.encode(x))


def estimate_covariances(model: NsibfModel, val: SeriesFrame):
    """Q and R from the residuals of a trained model on normalized validation data.

    Returns ``(Q, R, diagnostics)``; diagnostics hold the residual means.
    """
    try:
        e_f = prediction_residuals(model, val)
    except InsufficientDataError as exc:
        raise InsufficientDataError(f"validation split too short for covariance estimation: {exc}") from exc
    e_h = reconstruction_residuals(model, val)
    m = model.state_dim
    if e_f.shape[0] < m + 2:
        raise InsufficientDataError(
            f"covariance estimation needs at least {m + 2} validation super-steps, got {e_f.shape[0]}"
        )
    diag = {
        "pred_residual_mean": e_f.mean(axis=0).tolist(),
        "recon_residual_mean": e_h.mean(axis=0).tolist(),
        "n_pred_residuals": int(e_f.shape[0]),
        "n_recon_residuals": int(e_h.shape[0]),
    }
    return empirical_covariance(e_f), empirical_covariance(e_h), diag


def build_linear_model(
    g_weight, f_state_weight, h_weight, window, n_sensors=None, n_actuators=0,
    f_context_weight=None, f_bias=None, g_bias=None, h_bias=None, lstm_dim=1, Q=None, R=None, seed=0,
) -> NsibfModel:
    """Model whose g, f-dense and h nets are single affine layers with given weights.

    The LSTM context (randomly initialised) enters f through ``f_context_weight``
    (zero by default), acting like a known control input. Used for checking the
    filter against closed-form linear results.
    """
    g_weight = np.atleast_2d(g_weight)
    h_weight = np.atleast_2d(h_weight)
    m, d = g_weight.shape
    n_sensors = n_sensors or d
    cfg = _quiet_config(n_sensors, n_actuators, d // n_sensors, m, window, lstm_dim, seed)
    model = NsibfModel.initialize(cfg)
    s = model.store
    s.assign("g.out.W", g_weight)
    s.assign("g.out.b", 0.0 if g_bias is None else g_bias)
    fw = np.zeros((m, m + cfg.lstm_width))
    fw[:, :m] = f_state_weight
    if f_context_weight is not None:
        fw[:, m:] = f_context_weight
    s.assign("f.out.W", fw)
    s.assign("f.out.b", 0.0 if f_bias is None else f_bias)
    s.assign("h.out.W", h_weight)
    s.assign("h.out.b", 0.0 if h_bias is None else h_bias)
    if Q is not None:
        model.Q = np.asarray(Q, dtype=np.float64)
    if R is not None:
        model.R = np.asarray(R, dtype=np.float64)
    return model


def _quiet_config(n_sensors, n_actuators, stack, m, window, lstm_dim, seed):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return NetConfig(
            n_sensors=n_sensors, n_actuators=n_actuators, stack=stack, state_dim=m,
            window=window, g_layers=0, h_layers=0, f_dense_layers=0, f_lstm_layers=1,
            hidden_dim=max(lstm_dim, 1), lstm_dim=lstm_dim, activation="linear", seed=seed,
        )


GRADCHECK_CONFIG = dict(
    n_sensors=2, n_actuators=1, stack=3, state_dim=2, window=2, window_unit="super",
    g_layers=2, h_layers=2, f_dense_layers=2, f_lstm_layers=2, hidden_dim=8, activation="tanh",
)


def gradient_check(
    config: NetConfig,
    n_items: int = 10,
    seed: int = 0,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    fault: float = 0.0,
) -> kernel.GradCheckReport:
    """Central-difference check of the full training loss on a random toy batch.

    Inputs are uniform on [0, 1] like normalized data. ``fault`` scales the
    largest analytic gradient entry by ``1 + fault`` to confirm the check bites.
    """
    model = NsibfModel.initialize(config, seed=seed)
    rng = np.random.default_rng([seed, 1])
    d = config.measurement_dim
    prev = rng.uniform(size=(n_items, d))
    windows = rng.uniform(size=(n_items, config.window, config.window_features))
    target = rng.uniform(size=(n_items, d))
    batch = (prev, windows, target)
    _, grad = loss_and_grad(model, batch)
    if fault:
        grad = grad.copy()
        grad[int(np.argmax(np.abs(grad)))] *= 1.0 + fault
    base = model.store.values.copy()

    def f(p):
        model.store.set_values(p)
        return loss(model, batch)

    try:
        return kernel.finite_diff_check(f, base, grad, tolerance=tolerance, step=step, names=model.store)
    finally:
        model.store.set_values(base)
