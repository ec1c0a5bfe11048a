"""Synthetic replica of the measurement campaign.

Generates ground-truth trajectories (trapezoidal velocity profile with
dwells at both ends), forward-synthesizes RSSI readings through the channel
model (floor clamping, Gaussian noise, quantization, dropouts), and bundles
six seeded runs into a dataset.  The real measurement data is not public;
this module is the stand-in, and its geometry defaults are documented
assumptions, not measured values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import channel as channel_mod
from .model import (CarState, ConfigError, Frame, GroundTruthTrack,
                    MeasurementSeries, SensorArray, ZoneThresholds, derive_labels)
from .util import derive_seed


@dataclass(frozen=True)
class TrajectoryProfile:
    x_out: float = 10.0       # parking position outside the chamber
    x_in: float = -10.0       # end position inside
    cruise_speed: float = 1.0  # m/s
    accel: float = 0.5         # m/s^2
    dwell_ticks: int = 20      # nominal dwell at each end
    n_round_trips: int = 3
    speed_jitter: float = 0.0  # per-drive cruise speed spread, fraction of nominal

    def __post_init__(self):
        if not self.x_in < self.x_out:
            raise ConfigError(f"x_in ({self.x_in}) must be < x_out ({self.x_out})")
        if self.cruise_speed <= 0 or self.accel <= 0:
            raise ConfigError("cruise_speed and accel must be positive")
        if self.dwell_ticks < 0 or self.n_round_trips < 0:
            raise ConfigError("dwell_ticks and n_round_trips must be >= 0")
        if not 0.0 <= self.speed_jitter < 1.0:
            raise ConfigError(f"speed_jitter must be in [0, 1), got {self.speed_jitter}")

    def validate_against(self, zone: ZoneThresholds):
        if not (self.x_in < zone.inside_max_x < zone.outside_min_x < self.x_out):
            raise ConfigError(
                "zone thresholds must satisfy "
                f"x_in < inside_max_x < outside_min_x < x_out "
                f"(got {self.x_in}, {zone.inside_max_x}, {zone.outside_min_x}, {self.x_out})"
            )


@dataclass(frozen=True)
class NoiseSpec:
    rssi_noise_var: float = 9.0   # dB^2
    dropout_prob: float = 0.05
    quantization_step: float = 1.0  # dB, 0 disables

    def __post_init__(self):
        if not 0.0 <= self.dropout_prob <= 1.0:
            raise ConfigError(f"dropout_prob must be in [0, 1], got {self.dropout_prob}")
        if self.rssi_noise_var < 0 or self.quantization_step < 0:
            raise ConfigError("rssi_noise_var and quantization_step must be >= 0")


def _drive_segments(x_from, x_to, profile: TrajectoryProfile, speed_factor=1.0):
    """Closed-form accel / cruise / decel segments for one drive.

    Returns a list of (duration_s, pos_fn, vel_fn) with velocities in m/s.
    """
    distance = abs(x_to - x_from)
    direction = 1.0 if x_to > x_from else -1.0
    v = profile.cruise_speed * speed_factor
    a = profile.accel
    t_ramp = v / a
    d_ramp = v * v / (2.0 * a)
    if 2.0 * d_ramp > distance:
        raise ConfigError(
            f"cruise speed {v} m/s unreachable over {distance} m at accel {a} m/s^2"
        )
    d_cruise = distance - 2.0 * d_ramp
    t_cruise = d_cruise / v

    def accel_pos(tau, x0=x_from, s=direction):
        return x0 + s * 0.5 * a * tau * tau

    def accel_vel(tau, s=direction):
        return s * a * tau

    x_cruise_start = x_from + direction * d_ramp

    def cruise_pos(tau, x0=x_cruise_start, s=direction):
        return x0 + s * v * tau

    def cruise_vel(tau, s=direction):
        return s * v + 0.0 * tau

    x_decel_start = x_from + direction * (d_ramp + d_cruise)

    def decel_pos(tau, x0=x_decel_start, s=direction):
        return x0 + s * (v * tau - 0.5 * a * tau * tau)

    def decel_vel(tau, s=direction):
        return s * (v - a * tau)

    return [(t_ramp, accel_pos, accel_vel),
            (t_cruise, cruise_pos, cruise_vel),
            (t_ramp, decel_pos, decel_vel)]


def _dwell_segment(x, duration_s):
    def pos(tau, x0=x):
        return x0 + 0.0 * tau

    def vel(tau):
        return 0.0 * tau

    return (duration_s, pos, vel)


def simulate_trajectory(profile: TrajectoryProfile, thresholds: ZoneThresholds,
                        tick_interval_s: float, seed: int) -> GroundTruthTrack:
    """Simulate the car's drives in and out of the chamber on the tick grid.

    Each round trip is drive out->in, dwell, drive in->out, dwell; the run
    starts with a dwell at the outside parking position.  Dwell lengths vary
    per stop (uniform in [dwell_ticks, 2*dwell_ticks]) and, when
    speed_jitter > 0, each drive gets its own cruise speed drawn uniformly
    in nominal * [1-jitter, 1+jitter]; both driven by `seed`.
    """
    profile.validate_against(thresholds)
    rng = np.random.default_rng(seed)

    def dwell_s():
        if profile.dwell_ticks == 0:
            return 0.0
        lo = profile.dwell_ticks
        return int(rng.integers(lo, 2 * lo + 1)) * tick_interval_s

    def speed_factor():
        if profile.speed_jitter == 0.0:
            return 1.0
        return float(rng.uniform(1.0 - profile.speed_jitter,
                                 1.0 + profile.speed_jitter))

    segments = [_dwell_segment(profile.x_out, dwell_s())]
    for _ in range(profile.n_round_trips):
        segments.extend(_drive_segments(profile.x_out, profile.x_in, profile,
                                        speed_factor()))
        segments.append(_dwell_segment(profile.x_in, dwell_s()))
        segments.extend(_drive_segments(profile.x_in, profile.x_out, profile,
                                        speed_factor()))
        segments.append(_dwell_segment(profile.x_out, dwell_s()))

    starts = np.cumsum([0.0] + [d for d, _, _ in segments])
    total = starts[-1]
    n_ticks = max(1, int(math.floor(total / tick_interval_s)) + 1)
    times = np.arange(n_ticks) * tick_interval_s

    pos = np.empty(n_ticks)
    vel = np.empty(n_ticks)
    seg_idx = np.minimum(np.searchsorted(starts, times, side="right") - 1,
                         len(segments) - 1)
    for k, (duration, pos_fn, vel_fn) in enumerate(segments):
        mask = seg_idx == k
        if not np.any(mask):
            continue
        tau = np.minimum(times[mask] - starts[k], duration)
        pos[mask] = pos_fn(tau)
        vel[mask] = vel_fn(tau)

    states = tuple(CarState(p_x=float(p), v_x=float(v * tick_interval_s))
                   for p, v in zip(pos, vel))
    labels = tuple(derive_labels(pos, thresholds))
    return GroundTruthTrack(ticks=tuple(range(n_ticks)), states=states, labels=labels)


def synthesize_rssi(track: GroundTruthTrack, array: SensorArray,
                    params: channel_mod.ChannelParams, noise: NoiseSpec,
                    seed: int, transmitter_yz=(0.0, 0.0),
                    tick_interval_s: float = 0.1) -> MeasurementSeries:
    """Forward-model RSSI readings for every (tick, sensor) pair.

    reading = quantize(max(P_floor, path_gain) + Gaussian noise when
    rssi_noise_var > 0); each reading is independently dropped with
    dropout_prob.  Draw order is fixed (noise matrix first, then dropout
    matrix) so a seed pins the exact series.
    """
    rng = np.random.default_rng(seed)
    px = track.p_x()
    mu = clamped_mean_matrix(px, transmitter_yz[0], transmitter_yz[1], array, params)
    readings = mu
    if noise.rssi_noise_var > 0:
        readings = readings + rng.normal(0.0, math.sqrt(noise.rssi_noise_var), mu.shape)
    if noise.quantization_step > 0:
        step = noise.quantization_step
        readings = np.round(readings / step) * step
    dropped = np.zeros(mu.shape, dtype=bool)
    if noise.dropout_prob > 0:
        dropped = rng.random(mu.shape) < noise.dropout_prob

    ids = array.ids
    frames = []
    for t_idx, tick in enumerate(track.ticks):
        frame_readings = {
            ids[s]: float(readings[t_idx, s])
            for s in range(len(ids)) if not dropped[t_idx, s]
        }
        frames.append(Frame(tick=tick, readings=frame_readings))
    return MeasurementSeries(tick_interval_s=tick_interval_s, frames=tuple(frames))


def clamped_mean_matrix(px, ty, tz, array: SensorArray,
                        params: channel_mod.ChannelParams) -> np.ndarray:
    """Floor-clamped expected RSSI for every (tick, sensor) pair, (T, S)."""
    px = np.asarray(px, dtype=float)
    qpos = array.positions()
    dx = px[:, None] - qpos[None, :, 0]
    dy = ty - qpos[None, :, 1]
    dz = tz - qpos[None, :, 2]
    dist = np.sqrt(dx * dx + dy * dy + dz * dz)
    if np.any(dist == 0.0):
        raise ValueError("zero distance between transmitter and sensor")
    cos_a = np.clip(dx / dist, -1.0, 1.0)
    alpha = np.arccos(cos_a)
    band_angles = params.pattern.angles()
    band = np.minimum(np.searchsorted(band_angles, alpha, side="right"),
                      len(band_angles) - 1)
    gain = params.pattern.gains()[band]
    ref = np.array([s.ref_power_dbm for s in array.sensors])
    floor = np.array([s.floor_dbm for s in array.sensors])
    mu = ref[None, :] - params.pathloss_exponent * 10.0 * np.log10(dist) + gain
    return np.maximum(floor[None, :], mu)


def generate_dataset(array: SensorArray, zone: ZoneThresholds,
                     params: channel_mod.ChannelParams, profile: TrajectoryProfile,
                     noise: NoiseSpec, master_seed: int, n_runs: int = 6,
                     tick_interval_s: float = 0.1, transmitter_yz=(0.0, 0.0)):
    """Generate the n-run dataset with per-run seeds and trip counts.

    Trip counts are drawn uniformly in [2, 5] per run; every run gets its
    own derived trajectory and noise seeds so runs can be regenerated
    individually.  Returns (runs, info) where runs is a list of
    (MeasurementSeries, GroundTruthTrack) and info records all seeds.
    """
    trips_rng = np.random.default_rng(derive_seed(master_seed, "trip-counts"))
    trip_counts = [int(t) for t in trips_rng.integers(2, 6, size=n_runs)]
    runs = []
    run_info = []
    for i in range(n_runs):
        traj_seed = derive_seed(master_seed, "trajectory", i)
        noise_seed = derive_seed(master_seed, "noise", i)
        run_profile = TrajectoryProfile(
            x_out=profile.x_out, x_in=profile.x_in,
            cruise_speed=profile.cruise_speed, accel=profile.accel,
            dwell_ticks=profile.dwell_ticks, n_round_trips=trip_counts[i],
            speed_jitter=profile.speed_jitter)
        track = simulate_trajectory(run_profile, zone, tick_interval_s, traj_seed)
        series = synthesize_rssi(track, array, params, noise, noise_seed,
                                 transmitter_yz, tick_interval_s)
        runs.append((series, track))
        run_info.append({"run": i, "trips": trip_counts[i],
                         "trajectory_seed": traj_seed, "noise_seed": noise_seed})
    info = {"master_seed": master_seed, "runs": run_info}
    return runs, info


def profile_from_dict(obj: dict) -> TrajectoryProfile:
    if not isinstance(obj, dict):
        raise ConfigError("synth.profile: expected an object")
    kwargs = {}
    for key, conv in (("x_out", float), ("x_in", float), ("cruise_speed", float),
                      ("accel", float), ("dwell_ticks", int), ("n_round_trips", int),
                      ("speed_jitter", float)):
        if key in obj:
            kwargs[key] = conv(obj[key])
    return TrajectoryProfile(**kwargs)


def noise_from_dict(obj: dict) -> NoiseSpec:
    if not isinstance(obj, dict):
        raise ConfigError("synth.noise: expected an object")
    kwargs = {}
    for key in ("rssi_noise_var", "dropout_prob", "quantization_step"):
        if key in obj:
            kwargs[key] = float(obj[key])
    return NoiseSpec(**kwargs)


def profile_to_dict(p: TrajectoryProfile) -> dict:
    return {"x_out": p.x_out, "x_in": p.x_in, "cruise_speed": p.cruise_speed,
            "accel": p.accel, "dwell_ticks": p.dwell_ticks,
            "n_round_trips": p.n_round_trips, "speed_jitter": p.speed_jitter}


def noise_to_dict(n: NoiseSpec) -> dict:
    return {"rssi_noise_var": n.rssi_noise_var, "dropout_prob": n.dropout_prob,
            "quantization_step": n.quantization_step}
