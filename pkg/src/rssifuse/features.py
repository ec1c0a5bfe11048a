"""Feature engineering: estimate/raw feature tracks, memory windowing, and
prescalers (standard, robust, Yeo-Johnson power transform).

Scalers are fit on base (un-windowed) feature columns from training data
only, then applied before windowing; fitted scalers are immutable and
serializable for audit.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .model import ConfigError, DataError, MeasurementSeries, SensorArray

SOURCES = ("filtered", "raw")
SCALER_KINDS = ("standard", "robust", "power")


@dataclass(frozen=True)
class FeatureSelection:
    """Which filter-estimate columns feed the classifier.

    Column order is fixed: position mean, position variance, velocity mean.
    With source='raw' the per-sensor RSSI columns are used instead and the
    flags are ignored.
    """

    use_pos_mean: bool = True
    use_pos_var: bool = True
    use_vel_mean: bool = True
    source: str = "filtered"

    def __post_init__(self):
        if self.source not in SOURCES:
            raise ConfigError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.source == "filtered" and not (self.use_pos_mean or self.use_pos_var
                                              or self.use_vel_mean):
            raise ConfigError("at least one feature flag must be set for filtered source")

    def label(self) -> str:
        if self.source == "raw":
            return "raw"
        parts = []
        if self.use_pos_mean:
            parts.append("pos")
        if self.use_pos_var:
            parts.append("var")
        if self.use_vel_mean:
            parts.append("vel")
        return "+".join(parts)

    @staticmethod
    def parse(text: str, source: str = "filtered") -> "FeatureSelection":
        if source == "raw" or text == "raw":
            return FeatureSelection(source="raw")
        parts = {p.strip() for p in text.replace(",", "+").split("+") if p.strip()}
        unknown = parts - {"pos", "var", "vel"}
        if unknown:
            raise ConfigError(f"unknown feature names {sorted(unknown)}")
        return FeatureSelection(use_pos_mean="pos" in parts,
                                use_pos_var="var" in parts,
                                use_vel_mean="vel" in parts,
                                source="filtered")


def build_feature_track(track, sel: FeatureSelection) -> np.ndarray:
    """Base feature rows from an EstimateTrack, one row per tick.

    Selected subset of (mu_px, var_px, mu_vx), always in that order.
    """
    if sel.source != "filtered":
        raise ConfigError("build_feature_track requires source='filtered'")
    cols = []
    if sel.use_pos_mean:
        cols.append(track.mu_p())
    if sel.use_pos_var:
        cols.append(track.var_p())
    if sel.use_vel_mean:
        cols.append(track.mu_v())
    return np.column_stack(cols)


def build_raw_feature_track(series: MeasurementSeries, array: SensorArray) -> np.ndarray:
    """Per-sensor RSSI rows with missing readings imputed at the sensor floor.

    Column order follows the sensor array; the floor is the semantically
    correct stand-in for 'nothing heard'.
    """
    sensors = array.sensors
    out = np.empty((len(series.frames), len(sensors)))
    for t, frame in enumerate(series.frames):
        for s_idx, sensor in enumerate(sensors):
            v = frame.readings.get(sensor.id)
            out[t, s_idx] = sensor.floor_dbm if v is None else v
    return out


def toeplitz_window(base: np.ndarray, memory: int) -> np.ndarray:
    """Stack the last `memory` base rows into each output row (oldest first).

    Rows before tick memory-1 are left-padded by replicating the earliest
    base row, so output and labels stay aligned on the original tick grid.
    """
    if memory < 1:
        raise ConfigError(f"memory length must be >= 1, got {memory}")
    base = np.asarray(base, dtype=float)
    if base.ndim != 2:
        raise ConfigError("base feature rows must be 2-D")
    n = base.shape[0]
    if n == 0:
        return np.empty((0, base.shape[1] * memory))
    padded = np.vstack([np.repeat(base[:1], memory - 1, axis=0), base])
    return np.concatenate([padded[i:i + n] for i in range(memory)], axis=1)


@dataclass(frozen=True)
class LabeledFeatureMatrix:
    rows: np.ndarray
    labels: np.ndarray
    n_base_features: int
    memory: int

    def __post_init__(self):
        if self.rows.shape[0] != self.labels.shape[0]:
            raise DataError("rows and labels must have equal length")
        if self.rows.shape[1] != self.n_base_features * self.memory:
            raise DataError(
                f"row width {self.rows.shape[1]} != "
                f"n_base_features*memory = {self.n_base_features * self.memory}"
            )


def make_matrix(base_rows: np.ndarray, labels, memory: int) -> LabeledFeatureMatrix:
    rows = toeplitz_window(base_rows, memory)
    return LabeledFeatureMatrix(rows=rows, labels=np.asarray(labels, dtype=np.int64),
                                n_base_features=base_rows.shape[1], memory=memory)


# ---------------------------------------------------------------------------
# Yeo-Johnson power transform


def yeo_johnson(x: float, lam: float) -> float:
    """The Yeo-Johnson transform of a single value."""
    if x >= 0.0:
        if lam != 0.0:
            return (math.pow(x + 1.0, lam) - 1.0) / lam
        return math.log1p(x)
    if lam != 2.0:
        return -(math.pow(-x + 1.0, 2.0 - lam) - 1.0) / (2.0 - lam)
    return -math.log1p(-x)


def _yeo_johnson_array(x: np.ndarray, lam: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    pos = x >= 0
    if lam != 0.0:
        out[pos] = (np.power(x[pos] + 1.0, lam) - 1.0) / lam
    else:
        out[pos] = np.log1p(x[pos])
    neg = ~pos
    if lam != 2.0:
        out[neg] = -(np.power(-x[neg] + 1.0, 2.0 - lam) - 1.0) / (2.0 - lam)
    else:
        out[neg] = -np.log1p(-x[neg])
    return out


def _yj_log_likelihood(x: np.ndarray, lam: float) -> float:
    """Normal-theory profile log-likelihood of lambda for one feature column."""
    n = x.shape[0]
    t = _yeo_johnson_array(x, lam)
    var = float(np.var(t))
    if var <= 0.0 or not np.isfinite(var):
        return -np.inf
    return (-0.5 * n * math.log(var)
            + (lam - 1.0) * float(np.sum(np.sign(x) * np.log1p(np.abs(x)))))


_INVPHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_max(fn, lo: float, hi: float, tol: float) -> float:
    """Golden-section maximization of a unimodal function on [lo, hi]."""
    a, b = lo, hi
    c = b - _INVPHI * (b - a)
    d = a + _INVPHI * (b - a)
    fc, fd = fn(c), fn(d)
    while (b - a) > tol:
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - _INVPHI * (b - a)
            fc = fn(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INVPHI * (b - a)
            fd = fn(d)
    return (a + b) / 2.0


def fit_yeo_johnson_lambda(x: np.ndarray, lo: float = -5.0, hi: float = 5.0,
                           tol: float = 1e-4) -> float:
    """Maximum-likelihood lambda for one feature column."""
    return _golden_max(lambda lam: _yj_log_likelihood(x, lam), lo, hi, tol)


# ---------------------------------------------------------------------------
# Scalers


@dataclass(frozen=True)
class Scaler:
    """Fitted per-feature scaling parameters.

    standard: (x - mean) / std;  robust: (x - median) / IQR(25, 75);
    power: Yeo-Johnson with fitted lambda, then standardized.  Zero spread
    maps the (constant) training column to 0.
    """

    kind: str
    center: np.ndarray
    scale: np.ndarray
    lambdas: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in SCALER_KINDS:
            raise ConfigError(f"scaler kind must be one of {SCALER_KINDS}")

    @property
    def n_features(self) -> int:
        return self.center.shape[0]

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "center": self.center.tolist(),
               "scale": self.scale.tolist()}
        if self.lambdas is not None:
            out["lambdas"] = self.lambdas.tolist()
        return out

    @staticmethod
    def from_dict(obj: dict) -> "Scaler":
        return Scaler(kind=obj["kind"],
                      center=np.asarray(obj["center"], dtype=float),
                      scale=np.asarray(obj["scale"], dtype=float),
                      lambdas=(np.asarray(obj["lambdas"], dtype=float)
                               if "lambdas" in obj else None))


def fit_scaler(kind: str, rows: np.ndarray) -> Scaler:
    """Fit per-feature scaling parameters on training rows only."""
    rows = np.asarray(rows, dtype=float)
    if rows.ndim != 2 or rows.shape[0] < 2:
        raise DataError("scaler fitting needs at least 2 training rows")
    if not np.all(np.isfinite(rows)):
        raise DataError("scaler fitting requires finite inputs")
    if kind == "standard":
        center = rows.mean(axis=0)
        scale = rows.std(axis=0)
        return Scaler(kind=kind, center=center, scale=_safe_scale(scale))
    if kind == "robust":
        q25, median, q75 = np.percentile(rows, [25.0, 50.0, 75.0], axis=0)
        return Scaler(kind=kind, center=median, scale=_safe_scale(q75 - q25))
    if kind == "power":
        lambdas = np.empty(rows.shape[1])
        center = np.empty(rows.shape[1])
        scale = np.empty(rows.shape[1])
        for j in range(rows.shape[1]):
            col = rows[:, j]
            if np.all(col == col[0]):
                lambdas[j] = 1.0
                center[j] = col[0]
                scale[j] = 1.0
                continue
            lam = fit_yeo_johnson_lambda(col)
            t = _yeo_johnson_array(col, lam)
            lambdas[j] = lam
            center[j] = t.mean()
            scale[j] = _safe_scale(np.array([t.std()]))[0]
        return Scaler(kind=kind, center=center, scale=scale, lambdas=lambdas)
    raise ConfigError(f"unknown scaler kind {kind!r}")


def _safe_scale(scale: np.ndarray) -> np.ndarray:
    out = np.asarray(scale, dtype=float).copy()
    out[out == 0.0] = 1.0
    return out


def apply_scaler(scaler: Scaler, rows: np.ndarray) -> np.ndarray:
    rows = np.asarray(rows, dtype=float)
    if rows.shape[1] != scaler.n_features:
        raise DataError(f"row width {rows.shape[1]} != fitted width {scaler.n_features}")
    if scaler.kind == "power":
        t = np.empty_like(rows)
        for j in range(rows.shape[1]):
            t[:, j] = _yeo_johnson_array(rows[:, j], float(scaler.lambdas[j]))
        return (t - scaler.center) / scaler.scale
    return (rows - scaler.center) / scaler.scale


def inverse_scaler(scaler: Scaler, rows: np.ndarray) -> np.ndarray:
    """Undo standard/robust scaling (power transform is not inverted)."""
    if scaler.kind == "power":
        raise ConfigError("inverse transform not supported for power scaler")
    return np.asarray(rows, dtype=float) * scaler.scale + scaler.center


# ---------------------------------------------------------------------------
# Feature matrix CSV: f0..f{k-1},label


def save_feature_matrix(path, matrix: LabeledFeatureMatrix):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        width = matrix.rows.shape[1]
        writer.writerow([f"f{j}" for j in range(width)] + ["label"])
        for row, label in zip(matrix.rows, matrix.labels):
            writer.writerow([repr(float(v)) for v in row] + [int(label)])


def load_feature_matrix(path, n_base_features: int, memory: int) -> LabeledFeatureMatrix:
    rows, labels = [], []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read feature matrix {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[-1] != "label":
            raise DataError(f"{path}: expected feature matrix header ending in 'label'")
        width = len(header) - 1
        for row_no, row in enumerate(reader, start=2):
            if len(row) != width + 1:
                raise DataError(f"{path}: malformed row {row_no}")
            rows.append([float(v) for v in row[:-1]])
            labels.append(int(row[-1]))
    return LabeledFeatureMatrix(rows=np.asarray(rows, dtype=float),
                                labels=np.asarray(labels, dtype=np.int64),
                                n_base_features=n_base_features, memory=memory)
