"""Cloakroom world: arena, zones and robot/carrier parameters.

Coordinates are in metres with the origin at the arena centre, x to the
right and y upwards. The fire exit sits in the bottom-left corner and the
deposit area runs along the right wall.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

# tolerance for points that sit on the arena wall up to float noise
_EPS = 1e-9


class ScenarioError(ValueError):
    """Raised for configurations that cannot describe a valid arena."""


class TraceError(ValueError):
    """Raised when trace data is inconsistent with the arena (corrupt input)."""


@dataclass(frozen=True)
class ScenarioConfig:
    arena_width_cm: float = 370.0
    arena_height_cm: float = 370.0
    n_robots: int = 5
    n_carriers: int = 3
    carrier_initial_positions_m: tuple[tuple[float, float], ...] = ((-1.0, 0.0), (0.0, 0.0), (1.0, 0.0))
    robot_diameter_cm: float = 25.0
    carrier_diameter_cm: float = 33.0
    robot_max_speed_cm_s: float = 200.0
    camera_range_cm: float = 100.0
    ir_range_cm: float = 300.0
    avoidance_margin_cm: float = 5.0
    heading_resample_period_s: float = 0.4
    trial_duration_s: float = 200.0
    timesteps_per_trial: int = 10000
    rng_seed: int = 0
    # zone geometry
    red_width_cm: float = 85.0
    red_height_cm: float = 185.0
    amber_margin_cm: float = 50.0
    deposit_width_cm: float = 85.0
    # low-fidelity controller knobs
    dropoff_bias: bool = True
    turn_rate_deg_s: float = 90.0

    def __post_init__(self):
        # JSON round trips hand us lists
        object.__setattr__(
            self,
            "carrier_initial_positions_m",
            tuple((float(x), float(y)) for x, y in self.carrier_initial_positions_m),
        )
        if len(self.carrier_initial_positions_m) < self.n_carriers:
            raise ScenarioError(
                f"{self.n_carriers} carriers requested but only "
                f"{len(self.carrier_initial_positions_m)} initial positions given"
            )
        positive = [
            "arena_width_cm", "arena_height_cm", "robot_diameter_cm", "carrier_diameter_cm",
            "robot_max_speed_cm_s", "camera_range_cm", "ir_range_cm", "avoidance_margin_cm",
            "heading_resample_period_s", "trial_duration_s", "timesteps_per_trial",
            "red_width_cm", "red_height_cm", "deposit_width_cm", "turn_rate_deg_s",
        ]
        for name in positive:
            if not getattr(self, name) > 0:
                raise ScenarioError(f"{name} must be strictly positive")
        if self.n_robots < 1:
            raise ScenarioError("n_robots must be at least 1")
        if self.n_carriers < 0 or self.amber_margin_cm < 0:
            raise ScenarioError("n_carriers and amber_margin_cm must be non-negative")
        hw, hh = self.half_width_m, self.half_height_m
        for x, y in self.carrier_initial_positions_m[: self.n_carriers]:
            if abs(x) > hw or abs(y) > hh:
                raise ScenarioError(f"carrier position ({x}, {y}) lies outside the arena")

    @property
    def dt(self) -> float:
        return self.trial_duration_s / self.timesteps_per_trial

    @property
    def half_width_m(self) -> float:
        return self.arena_width_cm / 200.0

    @property
    def half_height_m(self) -> float:
        return self.arena_height_cm / 200.0

    @property
    def robot_radius_m(self) -> float:
        return self.robot_diameter_cm / 200.0

    @property
    def carrier_radius_m(self) -> float:
        return self.carrier_diameter_cm / 200.0

    @property
    def max_speed_m_s(self) -> float:
        return self.robot_max_speed_cm_s / 100.0

    def replace(self, **changes) -> "ScenarioConfig":
        return dataclasses.replace(self, **changes)

    def to_dict(self) -> dict:
        d = dataclasses.asdict(self)
        d["carrier_initial_positions_m"] = [list(p) for p in self.carrier_initial_positions_m]
        return d

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ScenarioError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)


def default_scenario() -> ScenarioConfig:
    """The cloakroom configuration used throughout the case study."""
    return ScenarioConfig()


def smoke_scenario() -> ScenarioConfig:
    """Reduced 1000-step (20 s) preset for quick end-to-end runs."""
    return ScenarioConfig(trial_duration_s=20.0, timesteps_per_trial=1000)


PRESETS = {"full": default_scenario, "smoke": smoke_scenario}


def save_config(config: ScenarioConfig, path) -> None:
    Path(path).write_text(json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_config(path) -> ScenarioConfig:
    return ScenarioConfig.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Rect:
    """Closed axis-aligned rectangle."""

    x0: float
    y0: float
    x1: float
    y1: float

    def contains(self, x: float, y: float) -> bool:
        return self.x0 <= x <= self.x1 and self.y0 <= y <= self.y1

    @property
    def width(self) -> float:
        return self.x1 - self.x0

    @property
    def height(self) -> float:
        return self.y1 - self.y0

    @property
    def area(self) -> float:
        return self.width * self.height

    def contains_rect(self, other: "Rect") -> bool:
        return (self.x0 <= other.x0 and other.x1 <= self.x1
                and self.y0 <= other.y0 and other.y1 <= self.y1)


class ZoneTag(str, Enum):
    RED = "Red"
    AMBER_ONLY = "AmberOnly"
    DEPOSIT = "Deposit"
    OPEN = "Open"


@dataclass(frozen=True)
class ZoneMap:
    arena: Rect
    red: Rect
    amber: Rect
    deposit: Rect
    fire_exit_marker: tuple[float, float]

    def in_amber(self, x: float, y: float) -> bool:
        return self.amber.contains(x, y)


def build_zone_map(config: ScenarioConfig) -> ZoneMap:
    hw, hh = config.half_width_m, config.half_height_m
    arena = Rect(-hw, -hh, hw, hh)
    rw, rh = config.red_width_cm / 100.0, config.red_height_cm / 100.0
    margin = config.amber_margin_cm / 100.0
    dw = config.deposit_width_cm / 100.0
    if rw > 2 * hw or rh > 2 * hh:
        raise ScenarioError("red zone does not fit in the arena")
    if dw > 2 * hw:
        raise ScenarioError("deposit zone does not fit in the arena")
    red = Rect(-hw, -hh, -hw + rw, -hh + rh)
    amber = Rect(-hw, -hh, min(red.x1 + margin, hw), min(red.y1 + margin, hh))
    deposit = Rect(hw - dw, -hh, hw, hh)
    if deposit.x0 < amber.x1:
        raise ScenarioError("deposit zone overlaps the fire-exit buffer")
    marker = (-hw, -hh + rh / 2.0)
    return ZoneMap(arena=arena, red=red, amber=amber, deposit=deposit, fire_exit_marker=marker)


def classify_point(zones: ZoneMap, p) -> ZoneTag:
    x, y = float(p[0]), float(p[1])
    a = zones.arena
    if not (a.x0 - _EPS <= x <= a.x1 + _EPS and a.y0 - _EPS <= y <= a.y1 + _EPS):
        raise TraceError(f"point ({x:.4f}, {y:.4f}) lies outside the arena")
    if zones.red.contains(x, y):
        return ZoneTag.RED
    if zones.amber.contains(x, y):
        return ZoneTag.AMBER_ONLY
    if zones.deposit.contains(x, y):
        return ZoneTag.DEPOSIT
    return ZoneTag.OPEN


def classify_points(zones: ZoneMap, xy):
    """Vectorised zone membership for an array of points ``(..., 2)``.

    Returns boolean arrays ``(red, amber, deposit)`` where ``amber`` is the
    enclosing amber rectangle (red included). NaN points are in no zone.
    """
    import numpy as np

    xy = np.asarray(xy, dtype=float)
    x, y = xy[..., 0], xy[..., 1]
    a = zones.arena
    finite = np.isfinite(x) & np.isfinite(y)
    outside = finite & ((x < a.x0 - _EPS) | (x > a.x1 + _EPS) | (y < a.y0 - _EPS) | (y > a.y1 + _EPS))
    if outside.any():
        idx = tuple(int(i) for i in np.argwhere(outside)[0])
        raise TraceError(f"point {xy[idx].tolist()} at index {idx} lies outside the arena")

    def inside(r: Rect):
        with np.errstate(invalid="ignore"):
            return (x >= r.x0) & (x <= r.x1) & (y >= r.y0) & (y <= r.y1)

    return inside(zones.red), inside(zones.amber), inside(zones.deposit)
