"""Forward radio model: log-distance pathloss, directional antenna gain,
and the clamped-Gaussian RSSI likelihood.

The same model is used in both directions: synthesizing RSSI readings from a
known position, and weighting position hypotheses against observed readings.
The likelihood is computed in the log domain throughout so the multi-sensor
product in the filter becomes a sum and cannot underflow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import ConfigError, DataError, MeasurementSeries, Sensor, SensorArray

DEFAULT_PATHLOSS_EXPONENT = 2.0
DEFAULT_LIKELIHOOD_VARIANCE = 9.0  # dB^2
# (upper angle bound [rad], gain [dB]); bands are [lower, upper) with the
# boundary angle pi assigned to the last band.
DEFAULT_PATTERN = ((math.pi / 3, 0.0), (3 * math.pi / 4, -6.0), (math.pi, -10.0))


@dataclass(frozen=True)
class AntennaPattern:
    """Piecewise-constant transmitter gain over the aspect angle alpha."""

    breakpoints: tuple[tuple[float, float], ...] = DEFAULT_PATTERN

    def __post_init__(self):
        angles = [a for a, _ in self.breakpoints]
        if not angles:
            raise ConfigError("antenna pattern needs at least one band")
        if any(b <= a for a, b in zip(angles, angles[1:])):
            raise ConfigError("antenna pattern angles must be strictly increasing")
        if not math.isclose(angles[-1], math.pi, rel_tol=0, abs_tol=1e-12):
            raise ConfigError(f"antenna pattern must end at pi, got {angles[-1]}")
        if not all(math.isfinite(g) for _, g in self.breakpoints):
            raise ConfigError("antenna pattern gains must be finite")

    def angles(self) -> np.ndarray:
        return np.array([a for a, _ in self.breakpoints])

    def gains(self) -> np.ndarray:
        return np.array([g for _, g in self.breakpoints])


OMNI_PATTERN = AntennaPattern(((math.pi, 0.0),))


@dataclass(frozen=True)
class ChannelParams:
    pathloss_exponent: float = DEFAULT_PATHLOSS_EXPONENT
    likelihood_variance: float = DEFAULT_LIKELIHOOD_VARIANCE
    pattern: AntennaPattern = AntennaPattern()

    def __post_init__(self):
        if not self.pathloss_exponent > 0:
            raise ConfigError(f"pathloss_exponent must be > 0, got {self.pathloss_exponent}")
        if not self.likelihood_variance > 0:
            raise ConfigError(f"likelihood_variance must be > 0, got {self.likelihood_variance}")


def channel_params_from_dict(obj: dict) -> ChannelParams:
    if not isinstance(obj, dict):
        raise ConfigError("channel: expected an object")
    kwargs = {}
    if "pathloss_exponent" in obj:
        kwargs["pathloss_exponent"] = float(obj["pathloss_exponent"])
    if "likelihood_variance" in obj:
        kwargs["likelihood_variance"] = float(obj["likelihood_variance"])
    if "pattern" in obj:
        bands = obj["pattern"]
        if not isinstance(bands, list):
            raise ConfigError("channel.pattern: expected a list of bands")
        try:
            kwargs["pattern"] = AntennaPattern(tuple(
                (float(b["angle_max_rad"]), float(b["gain_db"])) for b in bands
            ))
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"channel.pattern: bad band entry: {exc}") from exc
    return ChannelParams(**kwargs)


def channel_params_to_dict(params: ChannelParams) -> dict:
    return {
        "pathloss_exponent": params.pathloss_exponent,
        "likelihood_variance": params.likelihood_variance,
        "pattern": [{"angle_max_rad": a, "gain_db": g} for a, g in params.pattern.breakpoints],
    }


def antenna_angle(p, q) -> float:
    """Aspect angle between the x-axis and the sensor-to-transmitter line.

    alpha = arccos((p_x - q_x) / ||p - q||), in [0, pi].
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    dist = float(np.linalg.norm(p - q))
    if dist == 0.0:
        raise ValueError("zero distance between transmitter and sensor")
    c = (p[0] - q[0]) / dist
    return math.acos(min(1.0, max(-1.0, c)))


def pattern_gain(pattern: AntennaPattern, alpha: float) -> float:
    """Gain of the first band with alpha < angle_max; alpha = pi maps to the
    last band."""
    if not 0.0 <= alpha <= math.pi:
        raise ValueError(f"alpha must be in [0, pi], got {alpha}")
    for angle_max, gain in pattern.breakpoints:
        if alpha < angle_max:
            return gain
    return pattern.breakpoints[-1][1]


def path_gain(p, sensor: Sensor, params: ChannelParams) -> float:
    """Expected received power in dBm at the sensor for a transmitter at p.

    ref_power - n * 10 * log10(||q - p|| / 1 m) + pattern gain.  No floor
    clamp here; clamping happens in the likelihood and in synthesis.
    """
    p = np.asarray(p, dtype=float)
    q = np.asarray(sensor.position, dtype=float)
    dist = float(np.linalg.norm(q - p))
    if dist == 0.0:
        raise ValueError("zero distance between transmitter and sensor")
    alpha = antenna_angle(p, q)
    return (sensor.ref_power_dbm
            - params.pathloss_exponent * 10.0 * math.log10(dist)
            + pattern_gain(params.pattern, alpha))


def clamped_mean(p, sensor: Sensor, params: ChannelParams) -> float:
    """Mean of the RSSI distribution: pathloss clamped at the noise floor."""
    return max(sensor.floor_dbm, path_gain(p, sensor, params))


def rssi_log_likelihood(p_rx: float, p, sensor: Sensor, params: ChannelParams) -> float:
    """Natural-log density of observing p_rx given transmitter position p.

    Gaussian around max(P_floor, path_gain) with the configured variance.
    """
    var = params.likelihood_variance
    mu = clamped_mean(p, sensor, params)
    return -0.5 * math.log(2.0 * math.pi * var) - (p_rx - mu) ** 2 / (2.0 * var)


def calibrate(series: MeasurementSeries, array: SensorArray,
              floor_percentile: float = 5.0) -> SensorArray:
    """Calibrate per-sensor reference power and noise floor from data.

    ref_power_dbm := maximum observed RSSI (the car passes within ~1 m of
    every sensor, so the max observation stands in for the power at 1 m);
    floor_dbm := the given percentile of observed RSSI.
    """
    per_sensor: dict[int, list[float]] = {s.id: [] for s in array.sensors}
    for frame in series.frames:
        for sensor_id, value in frame.readings.items():
            if value is not None:
                per_sensor[sensor_id].append(value)
    calibrated = []
    for s in array.sensors:
        values = per_sensor[s.id]
        if not values:
            raise DataError(f"sensor {s.id} has no readings; cannot calibrate")
        ref = float(np.max(values))
        floor = float(np.percentile(values, floor_percentile))
        if not floor < ref:
            raise DataError(
                f"sensor {s.id}: calibration degenerate (floor {floor} >= ref {ref})"
            )
        calibrated.append(Sensor(id=s.id, position=s.position,
                                 ref_power_dbm=ref, floor_dbm=floor))
    return SensorArray(tuple(calibrated))
