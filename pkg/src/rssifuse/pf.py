"""Sensor-fusion particle filter over RSSI measurement series.

State is (p_x, v_x) with velocity in meters per tick, so the motion model
is exactly x[t+1] = [[1,1],[0,1]] x[t] plus zero-mean Gaussian driving
noise.  Weights live in the log domain; the multi-sensor fusion product
becomes a sum and normalization uses log-sum-exp, which keeps six-sensor
updates stable for particles far from the true position.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from .model import CarState, ConfigError, DataError, MeasurementSeries, SensorArray
from .channel import ChannelParams

MOTION_MATRIX = np.array([[1.0, 1.0], [0.0, 1.0]])

RESAMPLING_MODES = ("multinomial", "systematic")


@dataclass(frozen=True)
class FilterConfig:
    n_particles: int = 300
    init_pos_range: tuple[float, float] = (-25.0, 25.0)
    init_vel_range: tuple[float, float] = (-3.0, 3.0)
    driving_cov: tuple[tuple[float, float], tuple[float, float]] = ((4.0, 0.0), (0.0, 4.0))
    resampling: str = "multinomial"
    seed: int = 0

    def __post_init__(self):
        if self.n_particles < 2:
            raise ConfigError(f"n_particles must be >= 2, got {self.n_particles}")
        for name, (lo, hi) in (("init_pos_range", self.init_pos_range),
                               ("init_vel_range", self.init_vel_range)):
            if not lo < hi:
                raise ConfigError(f"{name} must be a non-degenerate interval, got [{lo}, {hi}]")
        c = np.asarray(self.driving_cov, dtype=float)
        if c.shape != (2, 2) or not np.allclose(c, c.T, atol=1e-12):
            raise ConfigError("driving_cov must be a symmetric 2x2 matrix")
        if np.min(np.linalg.eigvalsh(c)) < -1e-9:
            raise ConfigError("driving_cov must be positive semi-definite")
        if self.resampling not in RESAMPLING_MODES:
            raise ConfigError(f"resampling must be one of {RESAMPLING_MODES}, "
                              f"got {self.resampling!r}")

    def cov_matrix(self) -> np.ndarray:
        return np.asarray(self.driving_cov, dtype=float)


def filter_config_from_dict(obj: dict) -> FilterConfig:
    if not isinstance(obj, dict):
        raise ConfigError("filter: expected an object")
    kwargs = {}
    if "n_particles" in obj:
        kwargs["n_particles"] = int(obj["n_particles"])
    for key in ("init_pos_range", "init_vel_range"):
        if key in obj:
            rng = obj[key]
            if not isinstance(rng, list) or len(rng) != 2:
                raise ConfigError(f"filter.{key}: expected [lo, hi]")
            kwargs[key] = (float(rng[0]), float(rng[1]))
    if "driving_cov" in obj:
        cov = obj["driving_cov"]
        try:
            kwargs["driving_cov"] = tuple(tuple(float(v) for v in row) for row in cov)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"filter.driving_cov: expected a 2x2 matrix: {exc}") from exc
    if "resampling" in obj:
        kwargs["resampling"] = str(obj["resampling"]).lower()
    if "seed" in obj:
        kwargs["seed"] = int(obj["seed"])
    return FilterConfig(**kwargs)


def filter_config_to_dict(config: FilterConfig) -> dict:
    return {
        "n_particles": config.n_particles,
        "init_pos_range": list(config.init_pos_range),
        "init_vel_range": list(config.init_vel_range),
        "driving_cov": [list(row) for row in config.driving_cov],
        "resampling": config.resampling,
        "seed": config.seed,
    }


@dataclass
class ParticleSet:
    """n weighted state hypotheses plus the RNG that drives them.

    states: (n, 2) array of (p_x, v_x); log_weights normalized so that
    logsumexp(log_weights) == 0.
    """

    states: np.ndarray
    log_weights: np.ndarray
    rng: np.random.Generator

    def __len__(self):
        return self.states.shape[0]

    def weights(self) -> np.ndarray:
        return np.exp(self.log_weights)


@dataclass(frozen=True)
class Estimate:
    tick: int
    mean: CarState
    var_p: float
    var_v: float
    degenerate: bool = False

    def __post_init__(self):
        if self.var_p < 0 or self.var_v < 0:
            raise ValueError("estimate variance components must be >= 0")


@dataclass(frozen=True)
class EstimateTrack:
    estimates: tuple[Estimate, ...]

    def __len__(self):
        return len(self.estimates)

    @property
    def ticks(self) -> list[int]:
        return [e.tick for e in self.estimates]

    def mu_p(self) -> np.ndarray:
        return np.array([e.mean.p_x for e in self.estimates])

    def mu_v(self) -> np.ndarray:
        return np.array([e.mean.v_x for e in self.estimates])

    def var_p(self) -> np.ndarray:
        return np.array([e.var_p for e in self.estimates])


def _logsumexp(values: np.ndarray) -> float:
    m = np.max(values)
    if not np.isfinite(m):
        return float(m)
    return float(m + np.log(np.sum(np.exp(values - m))))


def init(config: FilterConfig) -> ParticleSet:
    """Draw the initial particle cloud: positions and velocities uniform over
    the configured ranges, weights 1/n."""
    rng = np.random.default_rng(config.seed)
    n = config.n_particles
    states = np.empty((n, 2))
    states[:, 0] = rng.uniform(*config.init_pos_range, size=n)
    states[:, 1] = rng.uniform(*config.init_vel_range, size=n)
    return ParticleSet(states=states,
                       log_weights=np.full(n, -math.log(n)),
                       rng=rng)


def predict(pset: ParticleSet, config: FilterConfig) -> ParticleSet:
    """Constant-velocity propagation plus driving noise; weights unchanged."""
    cov = config.cov_matrix()
    # eigen square root instead of Cholesky: driving_cov may be singular
    w, v = np.linalg.eigh(cov)
    scale = v * np.sqrt(np.maximum(w, 0.0))
    z = pset.rng.standard_normal(pset.states.shape)
    states = pset.states @ MOTION_MATRIX.T + z @ scale.T
    return ParticleSet(states=states, log_weights=pset.log_weights.copy(),
                       rng=pset.rng)


def _estimate_from(pset: ParticleSet, tick: int, degenerate: bool) -> Estimate:
    w = pset.weights()
    mean = w @ pset.states
    dev = pset.states - mean
    var = w @ (dev * dev)
    return Estimate(tick=tick, mean=CarState(p_x=float(mean[0]), v_x=float(mean[1])),
                    var_p=max(0.0, float(var[0])), var_v=max(0.0, float(var[1])),
                    degenerate=degenerate)


def update(pset: ParticleSet, frame, array: SensorArray, params: ChannelParams,
           transmitter_yz=(0.0, 0.0)) -> tuple[ParticleSet, Estimate]:
    """Fuse one frame of readings into the weights and emit the tick estimate.

    Sensors without a reading contribute a factor of 1 (log 0).  If every
    particle's weight collapses to zero (log-sum-exp of -inf), the filter
    recovers by resetting to uniform weights and flags the tick degenerate.
    """
    unknown = set(frame.readings) - set(array.ids)
    if unknown:
        raise DataError(f"frame {frame.tick}: unknown sensor ids {sorted(unknown)}")
    readings = np.array([
        frame.readings.get(s.id, np.nan) if frame.readings.get(s.id) is not None else np.nan
        for s in array.sensors
    ], dtype=float)
    ll = _kernels.fuse_log_weights(
        pset.states[:, 0], transmitter_yz[0], transmitter_yz[1],
        array.positions(),
        np.array([s.ref_power_dbm for s in array.sensors]),
        np.array([s.floor_dbm for s in array.sensors]),
        readings,
        params.pathloss_exponent, params.likelihood_variance,
        params.pattern.angles(), params.pattern.gains(),
    )
    logw = pset.log_weights + ll
    norm = _logsumexp(logw)
    if not np.isfinite(norm):
        n = len(pset)
        new = ParticleSet(states=pset.states.copy(),
                          log_weights=np.full(n, -math.log(n)), rng=pset.rng)
        return new, _estimate_from(new, frame.tick, degenerate=True)
    new = ParticleSet(states=pset.states.copy(), log_weights=logw - norm, rng=pset.rng)
    return new, _estimate_from(new, frame.tick, degenerate=False)


def resample(pset: ParticleSet, config: FilterConfig) -> ParticleSet:
    """Draw n particles with replacement proportional to weight; reset
    weights to 1/n.

    Multinomial mode draws n i.i.d. uniforms; systematic mode uses one
    uniform offset on a stratified grid (with equal weights every particle
    is copied exactly once).
    """
    n = len(pset)
    cum = np.cumsum(pset.weights())
    cum[-1] = 1.0
    if config.resampling == "multinomial":
        u = pset.rng.random(n)
    else:
        u = (np.arange(n) + pset.rng.random()) / n
    idx = np.searchsorted(cum, u, side="left")
    return ParticleSet(states=pset.states[idx].copy(),
                       log_weights=np.full(n, -math.log(n)),
                       rng=pset.rng)


def run(series: MeasurementSeries, array: SensorArray, params: ChannelParams,
        config: FilterConfig, transmitter_yz=(0.0, 0.0)) -> EstimateTrack:
    """Cycle predict / update / resample over a measurement series.

    Deterministic given config.seed: one estimate per frame, in order.
    """
    pset = init(config)
    estimates = []
    for frame in series.frames:
        pset = predict(pset, config)
        pset, est = update(pset, frame, array, params, transmitter_yz)
        estimates.append(est)
        pset = resample(pset, config)
    return EstimateTrack(estimates=tuple(estimates))


def position_rmse(track: EstimateTrack, truth, burn_in: int = 0) -> float:
    """RMSE of the position estimate against a ground-truth track, skipping
    the first `burn_in` ticks."""
    if len(track) != len(truth):
        raise DataError(f"track length {len(track)} != truth length {len(truth)}")
    err = track.mu_p()[burn_in:] - truth.p_x()[burn_in:]
    if err.size == 0:
        raise DataError("no ticks left after burn-in")
    return float(np.sqrt(np.mean(err * err)))


# ---------------------------------------------------------------------------
# EstimateTrack CSV: tick,mu_px,mu_vx,var_px,var_vx,degenerate


def save_estimates(path, track: EstimateTrack):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "mu_px", "mu_vx", "var_px", "var_vx", "degenerate"])
        for e in track.estimates:
            writer.writerow([e.tick, repr(e.mean.p_x), repr(e.mean.v_x),
                             repr(e.var_p), repr(e.var_v), int(e.degenerate)])


def load_estimates(path) -> EstimateTrack:
    estimates = []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read estimates file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        expected = ["tick", "mu_px", "mu_vx", "var_px", "var_vx", "degenerate"]
        if header is None or [h.strip() for h in header] != expected:
            raise DataError(f"{path}: expected header {','.join(expected)}")
        for row_no, row in enumerate(reader, start=2):
            if len(row) != 6:
                raise DataError(f"{path}: malformed row {row_no}")
            try:
                estimates.append(Estimate(
                    tick=int(row[0]),
                    mean=CarState(p_x=float(row[1]), v_x=float(row[2])),
                    var_p=float(row[3]), var_v=float(row[4]),
                    degenerate=bool(int(row[5])),
                ))
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {row_no}: {exc}") from exc
    return EstimateTrack(estimates=tuple(estimates))
