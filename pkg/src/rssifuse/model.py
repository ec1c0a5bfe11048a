"""Core domain types, scenario configuration, and measurement ingestion.

Everything here is an immutable value object once constructed; the loaders
validate invariants up front so downstream stages can assume well-formed
inputs.
"""

from __future__ import annotations

import csv
import enum
import hashlib
import json
import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_TICK_INTERVAL_S = 0.1
DEFAULT_REF_POWER_DBM = -40.0
DEFAULT_FLOOR_DBM = -95.0


class ConfigError(ValueError):
    """Invalid configuration (scenario schema or invariant violation)."""


class DataError(ValueError):
    """Malformed input data file (CSV rows, inconsistent grids)."""


class ZoneLabel(enum.IntEnum):
    OUTSIDE = 0
    TRANSITION = 1
    INSIDE = 2


@dataclass(frozen=True)
class Sensor:
    id: int
    position: tuple[float, float, float]
    ref_power_dbm: float = DEFAULT_REF_POWER_DBM
    floor_dbm: float = DEFAULT_FLOOR_DBM

    def __post_init__(self):
        if len(self.position) != 3 or not all(math.isfinite(c) for c in self.position):
            raise ConfigError(f"sensor {self.id}: position must be a finite 3-vector")
        if not self.floor_dbm < self.ref_power_dbm:
            raise ConfigError(
                f"sensor {self.id}: floor_dbm ({self.floor_dbm}) must be < "
                f"ref_power_dbm ({self.ref_power_dbm})"
            )


@dataclass(frozen=True)
class SensorArray:
    sensors: tuple[Sensor, ...]

    def __post_init__(self):
        if not self.sensors:
            raise ConfigError("sensor array must contain at least 1 sensor")
        ids = [s.id for s in self.sensors]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"sensor ids must be unique, got {ids}")

    def __len__(self):
        return len(self.sensors)

    @property
    def ids(self) -> list[int]:
        return [s.id for s in self.sensors]

    def by_id(self, sensor_id: int) -> Sensor:
        for s in self.sensors:
            if s.id == sensor_id:
                return s
        raise KeyError(f"unknown sensor_id {sensor_id}")

    def positions(self) -> np.ndarray:
        """Sensor positions as an (m, 3) array, in declaration order."""
        return np.array([s.position for s in self.sensors], dtype=float)


@dataclass(frozen=True)
class CarState:
    p_x: float
    v_x: float  # meters per tick

    def __post_init__(self):
        if not (math.isfinite(self.p_x) and math.isfinite(self.v_x)):
            raise ConfigError(f"car state must be finite, got ({self.p_x}, {self.v_x})")


@dataclass(frozen=True)
class ZoneThresholds:
    inside_max_x: float
    outside_min_x: float

    def __post_init__(self):
        if not self.inside_max_x < self.outside_min_x:
            raise ConfigError(
                f"inside_max_x must be < outside_min_x "
                f"(got {self.inside_max_x} >= {self.outside_min_x})"
            )


@dataclass(frozen=True)
class Frame:
    tick: int
    readings: dict[int, float | None] = field(default_factory=dict)


@dataclass(frozen=True)
class MeasurementSeries:
    tick_interval_s: float
    frames: tuple[Frame, ...]

    def __post_init__(self):
        ticks = [f.tick for f in self.frames]
        if any(b <= a for a, b in zip(ticks, ticks[1:])):
            raise DataError("frame ticks must be strictly increasing")

    def __len__(self):
        return len(self.frames)

    @property
    def ticks(self) -> list[int]:
        return [f.tick for f in self.frames]


@dataclass(frozen=True)
class GroundTruthTrack:
    """Per-tick true car state with derived zone labels."""

    ticks: tuple[int, ...]
    states: tuple[CarState, ...]
    labels: tuple[ZoneLabel, ...]

    def __post_init__(self):
        if not (len(self.ticks) == len(self.states) == len(self.labels)):
            raise DataError("ground truth ticks/states/labels must have equal length")
        if any(b <= a for a, b in zip(self.ticks, self.ticks[1:])):
            raise DataError("ground truth ticks must be strictly increasing")

    def __len__(self):
        return len(self.ticks)

    def p_x(self) -> np.ndarray:
        return np.array([s.p_x for s in self.states])

    def v_x(self) -> np.ndarray:
        return np.array([s.v_x for s in self.states])

    def label_array(self) -> np.ndarray:
        return np.array([int(l) for l in self.labels], dtype=np.int64)


def derive_labels(p_x, thresholds: ZoneThresholds):
    """Map positions to zone labels: inside / transition / outside.

    Inside if p_x <= inside_max_x, outside if p_x >= outside_min_x,
    transition in between.  Pure and per-tick.
    """
    out = []
    for x in np.atleast_1d(np.asarray(p_x, dtype=float)):
        if x <= thresholds.inside_max_x:
            out.append(ZoneLabel.INSIDE)
        elif x >= thresholds.outside_min_x:
            out.append(ZoneLabel.OUTSIDE)
        else:
            out.append(ZoneLabel.TRANSITION)
    return out


# ---------------------------------------------------------------------------
# Scenario file


@dataclass(frozen=True)
class Scenario:
    """Fully resolved scenario configuration.

    `channel` and `filter` are the parameter objects from the modules that
    own them; `transmitter_yz` are the constant off-axis coordinates of the
    transmitter (the car moves purely along x).
    """

    array: SensorArray
    zone: ZoneThresholds
    channel: "object"
    filter: "object"
    transmitter_yz: tuple[float, float]
    tick_interval_s: float
    raw: dict

    def hash(self) -> str:
        """Stable hash of the resolved configuration (for manifests)."""
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _require(cond, msg):
    if not cond:
        raise ConfigError(msg)


def _get_number(obj, key, where, default=None):
    if key not in obj:
        if default is None:
            raise ConfigError(f"{where}: missing required field '{key}'")
        return float(default)
    v = obj[key]
    if not isinstance(v, (int, float)) or isinstance(v, bool) or not math.isfinite(v):
        raise ConfigError(f"{where}.{key}: expected a finite number, got {v!r}")
    return float(v)


def load_scenario(path) -> Scenario:
    """Load and validate a scenario JSON file.

    Optional fields are filled with documented defaults; any schema or
    invariant violation raises ConfigError naming the offending field.
    """
    # Local imports: channel/pf depend on model for their types.
    from . import channel as channel_mod
    from . import pf as pf_mod

    try:
        with open(path) as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read scenario file {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"scenario file {path} is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise ConfigError("scenario document must be a JSON object")

    _require("sensors" in doc and isinstance(doc["sensors"], list) and doc["sensors"],
             "scenario: 'sensors' must be a non-empty list")
    sensors = []
    for i, s in enumerate(doc["sensors"]):
        where = f"sensors[{i}]"
        _require(isinstance(s, dict), f"{where}: expected an object")
        _require("id" in s and isinstance(s["id"], int) and not isinstance(s["id"], bool),
                 f"{where}: 'id' must be an integer")
        pos = s.get("position")
        _require(isinstance(pos, list) and len(pos) == 3,
                 f"{where}: 'position' must be a 3-element list")
        sensors.append(Sensor(
            id=s["id"],
            position=tuple(float(c) for c in pos),
            ref_power_dbm=_get_number(s, "ref_power_dbm", where, DEFAULT_REF_POWER_DBM),
            floor_dbm=_get_number(s, "floor_dbm", where, DEFAULT_FLOOR_DBM),
        ))
    array = SensorArray(tuple(sensors))

    _require("zone" in doc and isinstance(doc["zone"], dict),
             "scenario: 'zone' section is required")
    zone = ZoneThresholds(
        inside_max_x=_get_number(doc["zone"], "inside_max_x", "zone"),
        outside_min_x=_get_number(doc["zone"], "outside_min_x", "zone"),
    )

    channel_params = channel_mod.channel_params_from_dict(doc.get("channel", {}))
    filter_config = pf_mod.filter_config_from_dict(doc.get("filter", {}))

    tx = doc.get("transmitter", {})
    _require(isinstance(tx, dict), "scenario: 'transmitter' must be an object")
    transmitter_yz = (_get_number(tx, "y", "transmitter", 0.0),
                      _get_number(tx, "z", "transmitter", 0.0))

    tick_interval_s = _get_number(doc, "tick_interval_s", "scenario",
                                  DEFAULT_TICK_INTERVAL_S)
    _require(tick_interval_s > 0, "scenario: tick_interval_s must be > 0")

    resolved = {
        "sensors": [
            {"id": s.id, "position": list(s.position),
             "ref_power_dbm": s.ref_power_dbm, "floor_dbm": s.floor_dbm}
            for s in array.sensors
        ],
        "zone": {"inside_max_x": zone.inside_max_x, "outside_min_x": zone.outside_min_x},
        "channel": channel_mod.channel_params_to_dict(channel_params),
        "filter": pf_mod.filter_config_to_dict(filter_config),
        "transmitter": {"y": transmitter_yz[0], "z": transmitter_yz[1]},
        "tick_interval_s": tick_interval_s,
    }
    return Scenario(array=array, zone=zone, channel=channel_params,
                    filter=filter_config, transmitter_yz=transmitter_yz,
                    tick_interval_s=tick_interval_s, raw=resolved)


# ---------------------------------------------------------------------------
# CSV formats
#
# Measurements: tick,sensor_id,rssi_dbm   (empty rssi field = missing reading)
# Ground truth: tick,p_x,v_x              (v_x in meters per tick)


def load_measurements(path, array: SensorArray,
                      tick_interval_s=DEFAULT_TICK_INTERVAL_S) -> MeasurementSeries:
    """Read a measurement CSV, grouping rows into per-tick frames."""
    known = set(array.ids)
    frames: dict[int, dict[int, float | None]] = {}
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read measurement file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["tick", "sensor_id", "rssi_dbm"]:
            raise DataError(f"{path}: expected header 'tick,sensor_id,rssi_dbm'")
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"{path}: malformed row {row_no}: expected 3 fields")
            try:
                tick = int(row[0])
                sensor_id = int(row[1])
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {row_no}: {exc}") from exc
            if sensor_id not in known:
                raise DataError(f"{path}: row {row_no}: unknown sensor_id {sensor_id}")
            field_ = row[2].strip()
            if field_ == "":
                rssi = None
            else:
                try:
                    rssi = float(field_)
                except ValueError as exc:
                    raise DataError(f"{path}: malformed row {row_no}: {exc}") from exc
            frame = frames.setdefault(tick, {})
            if rssi is not None:
                frame[sensor_id] = rssi
            else:
                frame.setdefault(sensor_id, None)
    ordered = sorted(frames)
    series_frames = tuple(
        Frame(tick=t, readings={k: v for k, v in frames[t].items() if v is not None})
        for t in ordered
    )
    return MeasurementSeries(tick_interval_s=tick_interval_s, frames=series_frames)


def save_measurements(path, series: MeasurementSeries, array: SensorArray):
    """Write a measurement CSV; every (tick, sensor) pair gets a row, missing
    readings as an empty field (keeps the file rectangular and round-trippable)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "sensor_id", "rssi_dbm"])
        for frame in series.frames:
            for sensor_id in array.ids:
                v = frame.readings.get(sensor_id)
                writer.writerow([frame.tick, sensor_id, "" if v is None else repr(float(v))])


def load_ground_truth(path, thresholds: ZoneThresholds) -> GroundTruthTrack:
    ticks, states = [], []
    try:
        fh = open(path, newline="")
    except OSError as exc:
        raise DataError(f"cannot read ground truth file {path}: {exc}") from exc
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["tick", "p_x", "v_x"]:
            raise DataError(f"{path}: expected header 'tick,p_x,v_x'")
        for row_no, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 3:
                raise DataError(f"{path}: malformed row {row_no}: expected 3 fields")
            try:
                ticks.append(int(row[0]))
                states.append(CarState(p_x=float(row[1]), v_x=float(row[2])))
            except ValueError as exc:
                raise DataError(f"{path}: malformed row {row_no}: {exc}") from exc
    labels = tuple(derive_labels([s.p_x for s in states], thresholds))
    return GroundTruthTrack(ticks=tuple(ticks), states=tuple(states), labels=labels)


def save_ground_truth(path, track: GroundTruthTrack):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["tick", "p_x", "v_x"])
        for tick, state in zip(track.ticks, track.states):
            writer.writerow([tick, repr(state.p_x), repr(state.v_x)])
