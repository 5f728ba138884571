"""Small differentiable kernel: dense and LSTM layers with exact reverse mode.

Parameters of every layer live in one flat float64 vector (:class:`ParamStore`)
so that optimizers, gradient clipping, serialization and finite-difference
checks all operate on a single array. Forward passes return a :class:`Tape`
recording what reverse mode needs; :func:`backprop` walks it back.

All batched arrays use the leading axis for the batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.special import expit

from .errors import (
    DivergenceError,
    InvalidWindowError,
    NumericalError,
    ShapeError,
    StaleTapeError,
)

ACTIVATIONS = ("relu", "tanh", "sigmoid", "linear")


def sigmoid(x):
    return expit(x)


def rowwise_matmul(X: np.ndarray, W: np.ndarray) -> np.ndarray:
    """``X @ W.T`` with each row computed independently of the others.

    A plain GEMM may pick different kernels for different batch sizes, which
    changes rounding; forward passes use this so a row's result never depends
    on what else is in the batch.
    """
    lead = X.shape[:-1]
    flat = X.reshape(-1, 1, X.shape[-1])
    return (flat @ W.T).reshape(*lead, W.shape[0])


def activate(name: str, x: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(x, 0.0)
    if name == "tanh":
        return np.tanh(x)
    if name == "sigmoid":
        return sigmoid(x)
    if name == "linear":
        return x
    raise ValueError(f"unknown activation {name!r}")


def activation_grad(name: str, pre: np.ndarray, out: np.ndarray) -> np.ndarray:
    """Derivative of the activation evaluated at ``pre`` (``out`` = activate(pre))."""
    if name == "relu":
        return (pre > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - out * out
    if name == "sigmoid":
        return out * (1.0 - out)
    if name == "linear":
        return np.ones_like(pre)
    raise ValueError(f"unknown activation {name!r}")


class ParamStore:
    """Flat parameter vector with named, contiguous, reshaped views.

    ``version`` increases on every mutation made through the store; tapes
    remember the version they were recorded at so stale gradients are caught.
    """

    def __init__(self, shapes: Iterable[tuple[str, tuple[int, ...]]] = ()):
        self.slices: dict[str, tuple[int, int, tuple[int, ...]]] = {}
        offset = 0
        for name, shape in shapes:
            if name in self.slices:
                raise ValueError(f"duplicate parameter name {name!r}")
            shape = tuple(int(s) for s in shape)
            size = int(np.prod(shape)) if shape else 1
            self.slices[name] = (offset, offset + size, shape)
            offset += size
        self.values = np.zeros(offset)
        self.version = 0

    @property
    def size(self) -> int:
        return self.values.size

    def names(self) -> list[str]:
        return list(self.slices)

    def span(self, name: str) -> slice:
        start, stop, _ = self.slices[name]
        return slice(start, stop)

    def view(self, name: str, vector: np.ndarray | None = None) -> np.ndarray:
        """Reshaped view of ``name`` inside ``vector`` (default: the parameters)."""
        start, stop, shape = self.slices[name]
        vec = self.values if vector is None else vector
        return vec[start:stop].reshape(shape)

    __getitem__ = view

    def assign(self, name: str, value) -> None:
        self.view(name)[...] = value
        self.version += 1

    def set_values(self, values: np.ndarray) -> None:
        values = np.asarray(values, dtype=np.float64)
        if values.shape != self.values.shape:
            raise ShapeError(f"parameter vector has shape {values.shape}, expected {self.values.shape}")
        self.values[...] = values
        self.version += 1

    def prefix_span(self, prefix: str) -> slice:
        """Contiguous range covering every parameter whose name starts with ``prefix``."""
        spans = [(a, b) for n, (a, b, _) in self.slices.items() if n.startswith(prefix)]
        if not spans:
            raise KeyError(prefix)
        start = min(a for a, _ in spans)
        stop = max(b for _, b in spans)
        return slice(start, stop)

    def owner(self, index: int) -> str:
        for name, (start, stop, _) in self.slices.items():
            if start <= index < stop:
                return name
        raise IndexError(index)

    def zeros_like(self) -> np.ndarray:
        return np.zeros_like(self.values)

    def copy(self) -> "ParamStore":
        other = ParamStore.__new__(ParamStore)
        other.slices = dict(self.slices)
        other.values = self.values.copy()
        other.version = 0
        return other

    def directory(self) -> list[dict]:
        return [
            {"name": n, "offset": a, "shape": list(shape)}
            for n, (a, _, shape) in self.slices.items()
        ]


@dataclass(frozen=True)
class Dense:
    name: str
    n_in: int
    n_out: int
    activation: str = "linear"

    def param_shapes(self):
        return [(f"{self.name}.W", (self.n_out, self.n_in)), (f"{self.name}.b", (self.n_out,))]


@dataclass(frozen=True)
class LSTM:
    """Single LSTM layer; gate blocks are stacked in the order input, forget, cell, output."""

    name: str
    n_in: int
    n_hidden: int

    def param_shapes(self):
        h = self.n_hidden
        return [
            (f"{self.name}.Wx", (4 * h, self.n_in)),
            (f"{self.name}.Wh", (4 * h, h)),
            (f"{self.name}.b", (4 * h,)),
        ]


@dataclass(frozen=True)
class LastStep:
    """Selects the final element of a sequence output (no parameters)."""

    name: str = "last"

    def param_shapes(self):
        return []


@dataclass
class DenseSegment:
    layer: Dense
    inputs: np.ndarray
    pre: np.ndarray
    outputs: np.ndarray


@dataclass
class LSTMSegment:
    layer: LSTM
    inputs: np.ndarray  # (B, L, n_in)
    gates: np.ndarray  # (B, L, 4H) post-activation
    cells: np.ndarray  # (B, L+1, H), index 0 is the zero initial state
    hidden: np.ndarray  # (B, L+1, H)

    @property
    def outputs(self):
        return self.hidden[:, 1:]


@dataclass
class LastStepSegment:
    layer: LastStep
    inputs: np.ndarray
    outputs: np.ndarray


@dataclass
class Tape:
    """Sequential record of one forward pass through a chain of layers."""

    version: int
    segments: list = field(default_factory=list)

    @property
    def inputs(self):
        return self.segments[0].inputs

    @property
    def outputs(self):
        return self.segments[-1].outputs


def init_params(store: ParamStore, layers: Sequence, rng: np.random.Generator) -> None:
    """Uniform fan-in initialization, U(-1/sqrt(fan_in), 1/sqrt(fan_in)); zero biases.

    LSTM forget-gate biases start at 1.
    """
    for layer in layers:
        if isinstance(layer, Dense):
            lim = 1.0 / np.sqrt(layer.n_in)
            store[f"{layer.name}.W"][...] = rng.uniform(-lim, lim, (layer.n_out, layer.n_in))
            store[f"{layer.name}.b"][...] = 0.0
        elif isinstance(layer, LSTM):
            h = layer.n_hidden
            lim = 1.0 / np.sqrt(layer.n_in + h)
            store[f"{layer.name}.Wx"][...] = rng.uniform(-lim, lim, (4 * h, layer.n_in))
            store[f"{layer.name}.Wh"][...] = rng.uniform(-lim, lim, (4 * h, h))
            b = store[f"{layer.name}.b"]
            b[...] = 0.0
            b[h : 2 * h] = 1.0
    store.version += 1


def dense_forward(store: ParamStore, layer: Dense, x: np.ndarray):
    """Apply ``activation(W @ x + b)``; accepts a vector or a (batch, n_in) matrix."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != layer.n_in:
        raise ShapeError(f"layer {layer.name!r} expects input dimension {layer.n_in}, got shape {x.shape}")
    pre = rowwise_matmul(x2, store[f"{layer.name}.W"]) + store[f"{layer.name}.b"]
    out = activate(layer.activation, pre)
    seg = DenseSegment(layer, x2, pre, out)
    return (out[0] if single else out), seg


def lstm_forward(store: ParamStore, layer: LSTM, seq: np.ndarray):
    """Run the LSTM over ``seq`` of shape (L, n_in) or (B, L, n_in).

    Returns the final hidden state and the tape segment, which holds the full
    hidden sequence for stacking further recurrent layers.
    """
    seq = np.asarray(seq, dtype=np.float64)
    single = seq.ndim == 2
    s3 = seq[None] if single else seq
    if s3.ndim != 3 or s3.shape[1] < 1:
        raise InvalidWindowError(f"layer {layer.name!r} needs a non-empty sequence, got shape {seq.shape}")
    if s3.shape[2] != layer.n_in:
        raise ShapeError(f"layer {layer.name!r} expects input dimension {layer.n_in}, got {s3.shape[2]}")
    B, L, _ = s3.shape
    H = layer.n_hidden
    Wx = store[f"{layer.name}.Wx"]
    Wh = store[f"{layer.name}.Wh"]
    b = store[f"{layer.name}.b"]
    xw = rowwise_matmul(s3, Wx) + b  # input contribution for all steps at once
    gates = np.empty((B, L, 4 * H))
    cells = np.zeros((B, L + 1, H))
    hidden = np.zeros((B, L + 1, H))
    for t in range(L):
        a = xw[:, t] + rowwise_matmul(hidden[:, t], Wh)
        gi = sigmoid(a[:, :H])
        gf = sigmoid(a[:, H : 2 * H])
        gg = np.tanh(a[:, 2 * H : 3 * H])
        go = sigmoid(a[:, 3 * H :])
        gates[:, t, :H] = gi
        gates[:, t, H : 2 * H] = gf
        gates[:, t, 2 * H : 3 * H] = gg
        gates[:, t, 3 * H :] = go
        cells[:, t + 1] = gf * cells[:, t] + gi * gg
        hidden[:, t + 1] = go * np.tanh(cells[:, t + 1])
    seg = LSTMSegment(layer, s3, gates, cells, hidden)
    h_last = hidden[:, -1]
    return (h_last[0] if single else h_last), seg


def _forward_layer(store, layer, x):
    if isinstance(layer, Dense):
        return dense_forward(store, layer, x)[1]
    if isinstance(layer, LSTM):
        return lstm_forward(store, layer, x)[1]
    if isinstance(layer, LastStep):
        return LastStepSegment(layer, x, x[:, -1])
    raise TypeError(f"unsupported layer {layer!r}")


def run_chain(store: ParamStore, layers: Sequence, x: np.ndarray):
    """Forward ``x`` (batched) through ``layers`` in order; returns (output, Tape)."""
    tape = Tape(version=store.version)
    out = np.asarray(x, dtype=np.float64)
    for layer in layers:
        seg = _forward_layer(store, layer, out)
        tape.segments.append(seg)
        out = seg.outputs
    return out, tape


def replay(store: ParamStore, tape: Tape) -> np.ndarray:
    """Re-run the recorded chain from its recorded input."""
    out, _ = run_chain(store, [seg.layer for seg in tape.segments], tape.inputs)
    return out


def _dense_backward(store, seg: DenseSegment, dy, grad):
    layer = seg.layer
    dpre = dy * activation_grad(layer.activation, seg.pre, seg.outputs)
    store.view(f"{layer.name}.W", grad)[...] += dpre.T @ seg.inputs
    store.view(f"{layer.name}.b", grad)[...] += dpre.sum(axis=0)
    return dpre @ store[f"{layer.name}.W"]


def _lstm_backward(store, seg: LSTMSegment, dH, grad):
    layer = seg.layer
    H = layer.n_hidden
    Wx = store[f"{layer.name}.Wx"]
    Wh = store[f"{layer.name}.Wh"]
    B, L, _ = seg.inputs.shape
    dA = np.empty((B, L, 4 * H))
    dh_next = np.zeros((B, H))
    dc_next = np.zeros((B, H))
    for t in range(L - 1, -1, -1):
        g = seg.gates[:, t]
        gi, gf, gg, go = g[:, :H], g[:, H : 2 * H], g[:, 2 * H : 3 * H], g[:, 3 * H :]
        c = seg.cells[:, t + 1]
        tc = np.tanh(c)
        dh = dH[:, t] + dh_next
        dc = dc_next + dh * go * (1.0 - tc * tc)
        da = dA[:, t]
        da[:, :H] = dc * gg * gi * (1.0 - gi)
        da[:, H : 2 * H] = dc * seg.cells[:, t] * gf * (1.0 - gf)
        da[:, 2 * H : 3 * H] = dc * gi * (1.0 - gg * gg)
        da[:, 3 * H :] = dh * tc * go * (1.0 - go)
        dc_next = dc * gf
        dh_next = da @ Wh
    flat = dA.reshape(B * L, 4 * H)
    store.view(f"{layer.name}.Wx", grad)[...] += flat.T @ seg.inputs.reshape(B * L, -1)
    store.view(f"{layer.name}.Wh", grad)[...] += flat.T @ seg.hidden[:, :-1].reshape(B * L, H)
    store.view(f"{layer.name}.b", grad)[...] += flat.sum(axis=0)
    return dA @ Wx


def backprop(store: ParamStore, tape: Tape, output_grad: np.ndarray, grad: np.ndarray | None = None):
    """Reverse-mode sweep over ``tape``.

    ``output_grad`` is the gradient of a scalar loss with respect to the tape
    outputs. Parameter gradients are accumulated into ``grad`` (allocated when
    omitted), so a layer used by several tapes collects every contribution.

    Returns ``(grad, input_grad)``.
    """
    if tape.version != store.version:
        raise StaleTapeError(
            f"tape recorded at parameter version {tape.version}, store is at {store.version}"
        )
    if grad is None:
        grad = store.zeros_like()
    dy = np.asarray(output_grad, dtype=np.float64)
    if dy.shape != tape.outputs.shape:
        raise ShapeError(f"output gradient shape {dy.shape} != output shape {tape.outputs.shape}")
    for seg in reversed(tape.segments):
        if isinstance(seg, DenseSegment):
            dy = _dense_backward(store, seg, dy, grad)
        elif isinstance(seg, LSTMSegment):
            dy = _lstm_backward(store, seg, dy, grad)
        else:
            full = np.zeros_like(seg.inputs)
            full[:, -1] = dy
            dy = full
    return grad, dy


def clip_global_norm(grad: np.ndarray, max_norm: float | None) -> np.ndarray:
    if max_norm is None:
        return grad
    norm = float(np.sqrt(np.dot(grad, grad)))
    if norm > max_norm:
        return grad * (max_norm / norm)
    return grad


@dataclass
class OptimizerState:
    m: np.ndarray
    v: np.ndarray
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def fresh(cls, store: ParamStore, **kw) -> "OptimizerState":
        return cls(m=store.zeros_like(), v=store.zeros_like(), **kw)


def adam_update(store: ParamStore, grad: np.ndarray, state: OptimizerState):
    """One bias-corrected Adam step applied in place; returns ``(store, state)``."""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != store.values.shape or state.m.shape != store.values.shape:
        raise ShapeError("gradient / optimizer state shape does not match parameters")
    bad = ~np.isfinite(grad)
    if bad.any():
        name = store.owner(int(np.flatnonzero(bad)[0]))
        raise DivergenceError(f"non-finite gradient in parameter slice {name!r}")
    state.step += 1
    state.m = state.beta1 * state.m + (1.0 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1.0 - state.beta2) * grad * grad
    m_hat = state.m / (1.0 - state.beta1**state.step)
    v_hat = state.v / (1.0 - state.beta2**state.step)
    store.values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    store.version += 1
    return store, state


@dataclass
class GradCheckReport:
    max_rel_error: float
    worst_index: int
    worst_name: str | None
    tolerance: float
    coords: np.ndarray
    analytic: np.ndarray
    numeric: np.ndarray
    rel_errors: np.ndarray

    @property
    def passed(self) -> bool:
        return self.max_rel_error < self.tolerance

    @property
    def flagged(self) -> np.ndarray:
        return self.coords[self.rel_errors >= self.tolerance]

    def summary(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        where = f" ({self.worst_name})" if self.worst_name else ""
        return (
            f"{status} max relative error {self.max_rel_error:.3e} at coordinate "
            f"{self.worst_index}{where}; tolerance {self.tolerance:g}; "
            f"{self.coords.size} coordinates checked"
        )


def finite_diff_check(
    loss: Callable[[np.ndarray], float],
    params: np.ndarray,
    analytic: np.ndarray,
    tolerance: float = 1e-4,
    step: float = 1e-5,
    n_coords: int | None = None,
    rng: np.random.Generator | None = None,
    floor: float = 1e-6,
    names: ParamStore | None = None,
) -> GradCheckReport:
    """Compare ``analytic`` against central differences of ``loss`` around ``params``.

    The relative error per coordinate is ``|a - n| / max(|a|, |n|, floor)``.
    With ``n_coords`` set, a random subsample of coordinates is checked.
    """
    params = np.asarray(params, dtype=np.float64)
    base = loss(params.copy())
    if not np.isfinite(base):
        raise NumericalError(f"loss is not finite at the evaluation point ({base})")
    coords = np.arange(params.size)
    if n_coords is not None and n_coords < params.size:
        rng = rng or np.random.default_rng(0)
        coords = np.sort(rng.choice(params.size, n_coords, replace=False))
    numeric = np.empty(coords.size)
    work = params.copy()
    for k, i in enumerate(coords):
        orig = work[i]
        work[i] = orig + step
        up = loss(work.copy())
        work[i] = orig - step
        down = loss(work.copy())
        work[i] = orig
        numeric[k] = (up - down) / (2.0 * step)
    a = np.asarray(analytic, dtype=np.float64)[coords]
    denom = np.maximum(np.maximum(np.abs(a), np.abs(numeric)), floor)
    rel = np.abs(a - numeric) / denom
    worst = int(np.argmax(rel)) if rel.size else 0
    worst_index = int(coords[worst]) if rel.size else -1
    return GradCheckReport(
        max_rel_error=float(rel.max()) if rel.size else 0.0,
        worst_index=worst_index,
        worst_name=names.owner(worst_index) if names is not None and worst_index >= 0 else None,
        tolerance=tolerance,
        coords=coords,
        analytic=a,
        numeric=numeric,
        rel_errors=rel,
    )
