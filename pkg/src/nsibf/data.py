"""Series containers, CSV ingestion, normalization, splitting and windowing."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import InsufficientDataError, InvalidWindowError, ParseError, ValidationError


@dataclass
class SeriesFrame:
    """Aligned sensor / actuator matrices over a uniform integer time index."""

    X: np.ndarray
    U: np.ndarray
    labels: np.ndarray | None = None
    sensor_names: list[str] = field(default_factory=list)
    actuator_names: list[str] = field(default_factory=list)
    time: np.ndarray | None = None

    def __post_init__(self):
        self.X = np.asarray(self.X, dtype=np.float64)
        if self.X.ndim == 1:
            self.X = self.X[:, None]
        T = self.X.shape[0]
        U = np.zeros((T, 0)) if self.U is None else np.asarray(self.U, dtype=np.float64)
        if U.shape[0] != T:
            raise ValidationError(f"actuators have length {U.shape[0]}, sensors have {T}")
        self.U = U.reshape(T, -1)
        if self.labels is not None:
            self.labels = np.asarray(self.labels).astype(bool).reshape(-1)
            if self.labels.shape[0] != T:
                raise ValidationError(f"labels have length {self.labels.shape[0]}, sensors have {T}")
        if not self.sensor_names:
            self.sensor_names = [f"x{i}" for i in range(self.X.shape[1])]
        if not self.actuator_names:
            self.actuator_names = [f"u{i}" for i in range(self.U.shape[1])]
        names = self.sensor_names + self.actuator_names
        if len(set(names)) != len(names):
            raise ValidationError("column names must be unique")
        if self.time is None:
            self.time = np.arange(T)
        if not (np.isfinite(self.X).all() and np.isfinite(self.U).all()):
            raise ValidationError("series contains non-finite values")

    def __len__(self):
        return self.X.shape[0]

    @property
    def n_sensors(self) -> int:
        return self.X.shape[1]

    @property
    def n_actuators(self) -> int:
        return self.U.shape[1]

    def slice(self, start: int, stop: int) -> "SeriesFrame":
        return SeriesFrame(
            self.X[start:stop],
            self.U[start:stop],
            None if self.labels is None else self.labels[start:stop],
            list(self.sensor_names),
            list(self.actuator_names),
            self.time[start:stop],
        )


@dataclass
class Schema:
    sensors: list[str]
    actuators: list[str] = field(default_factory=list)
    label: str | None = None

    @classmethod
    def from_json(cls, path) -> "Schema":
        with open(path) as fh:
            raw = json.load(fh)
        return cls(list(raw["sensors"]), list(raw.get("actuators", [])), raw.get("label"))

    def to_dict(self) -> dict:
        return {"sensors": self.sensors, "actuators": self.actuators, "label": self.label}


LABEL_GUESSES = ("label", "attack", "anomaly")


def infer_schema(header: Sequence[str]) -> Schema:
    """Every column but ``t``/``time`` and a recognised label column is a sensor."""
    label = next((h for h in header if h.lower() in LABEL_GUESSES), None)
    sensors = [h for h in header if h != label and h.lower() not in ("t", "time", "timestamp")]
    return Schema(sensors, [], label)


def _parse_float(text: str) -> float:
    # locale independent; float() already only accepts '.' as decimal point
    return float(text.strip())


def load_csv(path, schema: Schema | None = None, require_label: bool = False) -> SeriesFrame:
    """Read a header-first CSV into a :class:`SeriesFrame` with strict validation."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise ParseError(f"{path}: empty file") from None
        schema = schema or infer_schema(header)
        missing = [c for c in schema.sensors + schema.actuators if c not in header]
        if missing:
            raise ParseError(f"{path}: missing columns {missing}")
        if schema.label and schema.label not in header:
            if require_label:
                raise ParseError(f"{path}: missing label column {schema.label!r}")
            schema = Schema(schema.sensors, schema.actuators, None)
        if require_label and not schema.label:
            raise ParseError(f"{path}: a label column is required")
        pos = {h: i for i, h in enumerate(header)}
        xi = [pos[c] for c in schema.sensors]
        ui = [pos[c] for c in schema.actuators]
        li = pos[schema.label] if schema.label else None
        rows_x, rows_u, rows_l = [], [], []
        problems = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                problems.append(f"row {lineno}: expected {len(header)} fields, got {len(row)}")
                continue
            try:
                vx = [_parse_float(row[i]) for i in xi]
                vu = [_parse_float(row[i]) for i in ui]
                vl = _parse_float(row[li]) if li is not None else 0.0
            except ValueError:
                bad = [header[i] for i in xi + ui + ([li] if li is not None else []) if not _is_number(row[i])]
                problems.append(f"row {lineno}: non-numeric value in column(s) {bad}")
                continue
            nonfinite = [
                header[i] for i, v in zip(xi + ui, vx + vu) if not math.isfinite(v)
            ]
            if nonfinite:
                problems.append(f"row {lineno}: non-finite value in column(s) {nonfinite}")
                continue
            rows_x.append(vx)
            rows_u.append(vu)
            rows_l.append(vl)
            if len(problems) > 20:
                break
    if problems:
        raise ParseError(f"{path}: " + "; ".join(problems[:20]))
    T = len(rows_x)
    X = np.array(rows_x, dtype=np.float64).reshape(T, len(xi))
    U = np.array(rows_u, dtype=np.float64).reshape(T, len(ui))
    labels = np.array(rows_l) != 0 if schema.label else None
    return SeriesFrame(X, U, labels, list(schema.sensors), list(schema.actuators))


def _is_number(text: str) -> bool:
    try:
        float(text)
        return True
    except ValueError:
        return False


def write_csv(frame: SeriesFrame, path, label_name: str = "label") -> None:
    header = ["t"] + frame.sensor_names + frame.actuator_names
    if frame.labels is not None:
        header.append(label_name)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(len(frame)):
            row = [str(int(frame.time[i]))]
            row += [repr(float(v)) for v in frame.X[i]]
            row += [repr(float(v)) for v in frame.U[i]]
            if frame.labels is not None:
                row.append("1" if frame.labels[i] else "0")
            w.writerow(row)


def downsample(frame: SeriesFrame, k: int, average: bool = False) -> SeriesFrame:
    """Keep every ``k``-th row, or average non-overlapping blocks of ``k`` rows."""
    if k <= 1:
        return frame
    if not average:
        idx = np.arange(0, len(frame), k)
        return SeriesFrame(
            frame.X[idx], frame.U[idx],
            None if frame.labels is None else frame.labels[idx],
            list(frame.sensor_names), list(frame.actuator_names), frame.time[idx],
        )
    n = len(frame) // k
    X = frame.X[: n * k].reshape(n, k, -1).mean(axis=1)
    U = frame.U[: n * k].reshape(n, k, -1).mean(axis=1)
    labels = None if frame.labels is None else frame.labels[: n * k].reshape(n, k).any(axis=1)
    return SeriesFrame(X, U, labels, list(frame.sensor_names), list(frame.actuator_names), frame.time[: n * k : k])


@dataclass
class Normalizer:
    """Per-column min-max scaling to [0, 1]; constant columns map to 0."""

    x_min: np.ndarray
    x_max: np.ndarray
    u_min: np.ndarray
    u_max: np.ndarray

    @staticmethod
    def _scale(v, lo, hi):
        span = hi - lo
        safe = np.where(span > 0, span, 1.0)
        out = (v - lo) / safe
        return np.where(span > 0, out, 0.0)

    @staticmethod
    def _unscale(v, lo, hi):
        return v * (hi - lo) + lo

    def transform_x(self, X):
        return self._scale(np.asarray(X, dtype=np.float64), self.x_min, self.x_max)

    def transform_u(self, U):
        return self._scale(np.asarray(U, dtype=np.float64), self.u_min, self.u_max)

    def inverse_x(self, X):
        return self._unscale(X, self.x_min, self.x_max)

    def inverse_u(self, U):
        return self._unscale(U, self.u_min, self.u_max)

    def to_dict(self) -> dict:
        return {k: getattr(self, k).tolist() for k in ("x_min", "x_max", "u_min", "u_max")}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(*(np.asarray(d[k], dtype=np.float64) for k in ("x_min", "x_max", "u_min", "u_max")))


def fit_normalizer(frame: SeriesFrame) -> Normalizer:
    if len(frame) == 0:
        raise InsufficientDataError("cannot fit a normalizer on an empty frame")
    U = frame.U
    return Normalizer(
        frame.X.min(axis=0), frame.X.max(axis=0),
        U.min(axis=0) if U.shape[1] else np.zeros(0),
        U.max(axis=0) if U.shape[1] else np.zeros(0),
    )


def normalize(frame: SeriesFrame, norm: Normalizer) -> SeriesFrame:
    return replace(frame, X=norm.transform_x(frame.X), U=norm.transform_u(frame.U))


TRAIN_FRACTION = 0.75


def split_train_val(frame: SeriesFrame, min_length: int = 8) -> tuple[SeriesFrame, SeriesFrame]:
    """Chronological 3:1 split; the boundary is ``floor(0.75 * T)``."""
    T = len(frame)
    if T < min_length:
        raise InsufficientDataError(f"need at least {min_length} rows to split, got {T}")
    cut = int(math.floor(TRAIN_FRACTION * T))
    return frame.slice(0, cut), frame.slice(cut, T)


@dataclass(frozen=True)
class WindowSpec:
    """Window length ``length`` counted in super-steps (``unit='super'``) or raw rows (``unit='raw'``)."""

    length: int
    stack: int = 1
    stride: int | None = None
    unit: str = "super"

    def __post_init__(self):
        if self.length < 1 or self.stack < 1 or (self.stride is not None and self.stride < 1):
            raise ValidationError(f"invalid window spec {self}")
        if self.unit not in ("super", "raw"):
            raise ValidationError(f"window unit must be 'super' or 'raw', got {self.unit!r}")

    @property
    def step(self) -> int:
        return self.stack if self.stride is None else self.stride

    @property
    def raw_length(self) -> int:
        return self.length * self.stack if self.unit == "super" else self.length

    @property
    def first_target(self) -> int:
        """Raw index where the first predictable super-step starts (a multiple of ``stack``)."""
        s = self.stack
        return s * -(-max(s, self.raw_length) // s)

    @property
    def warmup(self) -> int:
        """Number of leading super-steps that cannot be scored."""
        return self.first_target // self.stack

    def min_rows(self) -> int:
        return self.first_target + self.stack

    def with_stride(self, stride: int | None) -> "WindowSpec":
        return replace(self, stride=stride)


def stack_rows(A: np.ndarray, s: int) -> np.ndarray:
    """Group consecutive rows into blocks of ``s``: (T, M) -> (T // s, s * M)."""
    K = A.shape[0] // s
    return A[: K * s].reshape(K, s * A.shape[1])


def unstack_rows(S: np.ndarray, s: int) -> np.ndarray:
    return S.reshape(S.shape[0] * s, S.shape[1] // s)


def stack_labels(labels: np.ndarray, s: int) -> np.ndarray:
    """A super-step is anomalous when any constituent row is."""
    K = labels.shape[0] // s
    return labels[: K * s].reshape(K, s).any(axis=1)


@dataclass
class TrainingBatchItem:
    prev: np.ndarray
    window: np.ndarray
    target: np.ndarray
    start: int


class WindowedSeries:
    """Training/detection items over a (normalized) frame, gathered lazily.

    Item ``k`` predicts the stacked rows ``[r, r + s)`` for ``r = targets[k]``,
    from the previous stack ``[r - s, r)`` and the window of rows preceding ``r``.
    """

    def __init__(self, frame: SeriesFrame, spec: WindowSpec, stride: int | None = None):
        self.frame = frame
        self.spec = spec
        step = spec.step if stride is None else stride
        T = len(frame)
        if T < spec.min_rows():
            raise InsufficientDataError(
                f"series of {T} rows is shorter than the {spec.min_rows()} rows needed "
                f"for one window (length {spec.length} {spec.unit}, stack {spec.stack})"
            )
        self.targets = np.arange(spec.first_target, T - spec.stack + 1, step)
        s = spec.stack
        self._stack_offsets = np.arange(s)
        self._window_offsets = np.arange(-spec.raw_length, 0)

    def __len__(self):
        return self.targets.size

    @property
    def input_dim(self) -> int:
        m = self.frame.n_sensors + self.frame.n_actuators
        return m * self.spec.stack if self.spec.unit == "super" else m

    def _stacked(self, starts):
        rows = starts[:, None] + self._stack_offsets
        return self.frame.X[rows].reshape(starts.size, -1)

    def prev(self, idx) -> np.ndarray:
        return self._stacked(self.targets[idx] - self.spec.stack)

    def target(self, idx) -> np.ndarray:
        return self._stacked(self.targets[idx])

    def window(self, idx) -> np.ndarray:
        starts = self.targets[idx]
        return gather_window(self.frame, starts, self.spec)

    def labels(self) -> np.ndarray | None:
        if self.frame.labels is None:
            return None
        rows = self.targets[:, None] + self._stack_offsets
        return self.frame.labels[rows].any(axis=1)

    def __getitem__(self, k: int) -> TrainingBatchItem:
        idx = np.array([k])
        return TrainingBatchItem(self.prev(idx)[0], self.window(idx)[0], self.target(idx)[0], int(self.targets[k]))


def gather_window(frame: SeriesFrame, starts: np.ndarray, spec: WindowSpec) -> np.ndarray:
    """Windows ending just before each raw index in ``starts``: (n, length, features)."""
    starts = np.atleast_1d(np.asarray(starts))
    if (starts - spec.raw_length < 0).any():
        raise InvalidWindowError("window would start before the beginning of the series")
    rows = starts[:, None] + np.arange(-spec.raw_length, 0)
    xs = frame.X[rows]
    us = frame.U[rows]
    n = starts.size
    if spec.unit == "raw":
        return np.concatenate([xs, us], axis=2)
    l, s = spec.length, spec.stack
    xs = xs.reshape(n, l, s * frame.n_sensors)
    us = us.reshape(n, l, s * frame.n_actuators)
    return np.concatenate([xs, us], axis=2)


def make_windows(frame: SeriesFrame, spec: WindowSpec) -> WindowedSeries:
    return WindowedSeries(frame, spec)
