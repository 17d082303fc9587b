"""Low-fidelity discrete-time simulator of the cloakroom retrieval task.

Each robot runs the six-state controller: SEARCHING random walk, PICKUP
(drive under a detected carrier), DROPOFF (carry it to the deposit wall)
and the paired collision-avoidance states. Avoidance is a proximity rule:
an obstacle ahead whose gap drops below the avoidance margin makes the
robot turn in place, away from the obstacle, by a random 90-180 degrees.

A trial produces four per-timestep datasets (state counts, per-robot
states, positions, kinematics), written as CSV by :func:`write_trial`.
"""

from __future__ import annotations

import hashlib
import logging
import math
import random
import shutil
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from enum import IntEnum
from pathlib import Path

import numpy as np

from .scenario import ScenarioConfig, ZoneMap, build_zone_map

log = logging.getLogger(__name__)

TWO_PI = 2.0 * math.pi
OVERLAP_TOL = 1e-6


class BehaviourState(IntEnum):
    SEARCHING = 0
    PICKUP = 1
    DROPOFF = 2
    AVOIDANCE_S = 3
    AVOIDANCE_P = 4
    AVOIDANCE_D = 5

    @property
    def csv_name(self) -> str:
        return _CSV_NAMES[self]

    @property
    def is_avoidance(self) -> bool:
        return self >= 3

    @property
    def paired(self) -> "BehaviourState":
        return BehaviourState(self - 3 if self >= 3 else self + 3)

    @classmethod
    def from_name(cls, name: str) -> "BehaviourState":
        try:
            return _BY_NAME[name]
        except KeyError:
            raise ValueError(f"unknown behaviour state {name!r}") from None


_CSV_NAMES = {
    BehaviourState.SEARCHING: "Searching",
    BehaviourState.PICKUP: "Pickup",
    BehaviourState.DROPOFF: "Dropoff",
    BehaviourState.AVOIDANCE_S: "AvoidanceS",
    BehaviourState.AVOIDANCE_P: "AvoidanceP",
    BehaviourState.AVOIDANCE_D: "AvoidanceD",
}
_BY_NAME = {v: k for k, v in _CSV_NAMES.items()}

# Edges of the controller state machine (self-loops included).
LEGAL_TRANSITIONS = frozenset({
    (0, 0), (0, 1), (0, 3), (3, 3), (3, 0),
    (1, 1), (1, 2), (1, 4), (4, 4), (4, 1),
    (2, 2), (2, 0), (2, 5), (5, 5), (5, 2),
})

COUNTS_HEADER = "t,searching,pickup,dropoff,avoid_s,avoid_p,avoid_d"
STATES_HEADER = "t,robot_id,state"
POSITIONS_HEADER = "t,robot_id,x_m,y_m"
KINEMATICS_HEADER = "t,robot_id,speed_m_s,in_deposit"
DATASET_FILES = ("counts.csv", "states.csv", "positions.csv", "kinematics.csv")

# carrier status codes
ON_FLOOR, CARRIED, DEPOSITED = 0, 1, 2


@dataclass
class RobotSnapshot:
    robot_id: int
    t: int
    state: BehaviourState
    position: tuple[float, float]
    velocity: tuple[float, float]
    carrying: int | None
    in_deposit: bool


@dataclass
class TrialOutput:
    """Per-timestep record of one trial. Row ``t`` is the world at time ``t * dt``."""

    robot_states: np.ndarray     # (T, N) int8
    positions: np.ndarray        # (T, N, 2) metres
    velocities: np.ndarray       # (T, N, 2) m/s, displacement over the following step
    in_deposit: np.ndarray       # (T, N) bool
    carrying: np.ndarray         # (T, N) int8, -1 when empty
    carrier_status: np.ndarray   # (T, C) int8
    dt: float
    seed: int

    @property
    def n_steps(self) -> int:
        return self.robot_states.shape[0]

    @property
    def speeds(self) -> np.ndarray:
        return np.hypot(self.velocities[..., 0], self.velocities[..., 1])

    @property
    def state_counts(self) -> np.ndarray:
        n = self.robot_states.shape[0]
        counts = np.zeros((n, 6), dtype=np.int64)
        for s in range(6):
            counts[:, s] = (self.robot_states == s).sum(axis=1)
        return counts

    @property
    def kinematics(self) -> tuple[np.ndarray, np.ndarray]:
        return self.speeds, self.in_deposit

    @property
    def deposits(self) -> int:
        if self.carrier_status.size == 0:
            return 0
        return int((self.carrier_status[-1] == DEPOSITED).sum())

    def snapshot(self, t: int, robot_id: int) -> RobotSnapshot:
        c = int(self.carrying[t, robot_id])
        return RobotSnapshot(
            robot_id=robot_id,
            t=t,
            state=BehaviourState(int(self.robot_states[t, robot_id])),
            position=tuple(self.positions[t, robot_id]),
            velocity=tuple(self.velocities[t, robot_id]),
            carrying=None if c < 0 else c,
            in_deposit=bool(self.in_deposit[t, robot_id]),
        )


class _Robot:
    __slots__ = ("x", "y", "heading", "state", "target", "carrying", "turn_left", "hold")

    def __init__(self, x, y, heading):
        self.x = x
        self.y = y
        self.heading = heading
        self.state = BehaviourState.SEARCHING
        self.target = -1
        self.carrying = -1
        self.turn_left = 0.0  # signed radians still to rotate
        self.hold = 0  # steps left on the escape heading after a turn


class _World:
    def __init__(self, config: ScenarioConfig, zones: ZoneMap, seed: int):
        self.cfg = config
        self.zones = zones
        self.rng = random.Random(seed)
        self.rr = config.robot_radius_m
        self.rc = config.carrier_radius_m
        self.margin = config.avoidance_margin_cm / 100.0
        self.camera = config.camera_range_cm / 100.0
        self.step_len = config.max_speed_m_s * config.dt
        self.turn_step = math.radians(config.turn_rate_deg_s) * config.dt
        self.resample_every = max(1, round(config.heading_resample_period_s / config.dt))
        self.attach_dist = 0.05
        a = zones.arena
        self.xmin, self.xmax = a.x0 + self.rr, a.x1 - self.rr
        self.ymin, self.ymax = a.y0 + self.rr, a.y1 - self.rr
        self.carriers = [list(p) for p in config.carrier_initial_positions_m[: config.n_carriers]]
        self.cstatus = [ON_FLOOR] * config.n_carriers
        self.robots = self._place_robots(config.n_robots)

    def _place_robots(self, n):
        dep = self.zones.deposit
        x0, x1 = max(dep.x0 + self.rr, self.xmin), min(dep.x1 - self.rr, self.xmax)
        y0, y1 = max(dep.y0 + self.rr, self.ymin), min(dep.y1 - self.rr, self.ymax)
        if x0 > x1 or y0 > y1:
            raise ValueError("deposit zone too narrow to hold a robot")
        robots = []
        for _ in range(n):
            for _attempt in range(10000):
                x = self.rng.uniform(x0, x1)
                y = self.rng.uniform(y0, y1)
                if all(math.hypot(x - r.x, y - r.y) >= 2 * self.rr for r in robots) and all(
                    math.hypot(x - cx, y - cy) >= self.rr + self.rc for cx, cy in self.carriers
                ):
                    break
            else:
                raise ValueError("could not place robots without overlap in the deposit zone")
            robots.append(_Robot(x, y, self.rng.uniform(-math.pi, math.pi)))
        return robots

    # --- geometry helpers -------------------------------------------------

    def _obstacles(self, i):
        """Circular obstacles seen by robot i as ``(x, y, radius)``; its own target is exempt."""
        me = self.robots[i]
        obs = []
        for j, r in enumerate(self.robots):
            if j != i:
                obs.append((r.x, r.y, self.rr))
        for k, (cx, cy) in enumerate(self.carriers):
            if self.cstatus[k] != ON_FLOOR:
                continue
            if k == me.target:
                continue
            obs.append((cx, cy, self.rc))
        return obs

    def _trigger(self, r: _Robot, obs):
        """Nearest obstacle ahead within the avoidance margin, as a bearing, else None."""
        ch, sh = math.cos(r.heading), math.sin(r.heading)
        best = None
        best_gap = self.margin
        for ox, oy, orad in obs:
            dx, dy = ox - r.x, oy - r.y
            if dx * ch + dy * sh <= 0.0:
                continue
            gap = math.hypot(dx, dy) - self.rr - orad
            if gap < best_gap:
                best_gap = gap
                best = (dx, dy)
        # walls: (gap, outward normal)
        for gap, nx, ny in (
            (r.x - self.xmin, -1.0, 0.0),
            (self.xmax - r.x, 1.0, 0.0),
            (r.y - self.ymin, 0.0, -1.0),
            (self.ymax - r.y, 0.0, 1.0),
        ):
            if gap < best_gap and nx * ch + ny * sh > 0.0:
                best_gap = gap
                best = (nx, ny)
        return best

    def _blocked(self, x, y, obs):
        if not (self.xmin <= x <= self.xmax and self.ymin <= y <= self.ymax):
            return True
        for ox, oy, orad in obs:
            if math.hypot(ox - x, oy - y) < self.rr + orad:
                return True
        return False

    def _visible_carrier(self, r: _Robot):
        """Nearest unclaimed carrier on the floor within camera range, else -1."""
        claimed = {o.target for o in self.robots if o is not r}
        best, best_d = -1, None
        for k, (cx, cy) in enumerate(self.carriers):
            if self.cstatus[k] != ON_FLOOR or k in claimed:
                continue
            d = math.hypot(cx - r.x, cy - r.y)
            if d - self.rr - self.rc <= self.camera and (best_d is None or d < best_d):
                best, best_d = k, d
        return best

    def _random_heading(self, r: _Robot):
        if r.state == BehaviourState.DROPOFF and self.cfg.dropoff_bias:
            return self.rng.uniform(-0.5 * math.pi, 0.5 * math.pi)
        return self.rng.uniform(-math.pi, math.pi)

    def _start_avoidance(self, r: _Robot, bearing):
        dx, dy = bearing
        cross = math.cos(r.heading) * dy - math.sin(r.heading) * dx
        if cross == 0.0:
            sign = 1.0 if self.rng.random() < 0.5 else -1.0
        else:
            # obstacle on the left (cross > 0) -> turn right
            sign = -1.0 if cross > 0 else 1.0
        angle = math.radians(self.rng.uniform(90.0, 180.0))
        r.turn_left = sign * angle
        if not r.state.is_avoidance:
            r.state = r.state.paired

    # --- one timestep -----------------------------------------------------

    def step(self, t: int):
        resample = t % self.resample_every == 0
        dep = self.zones.deposit
        for i, r in enumerate(self.robots):
            st = r.state
            if st == BehaviourState.DROPOFF and dep.contains(r.x, r.y):
                self.cstatus[r.carrying] = DEPOSITED
                r.carrying = -1
                r.state = st = BehaviourState.SEARCHING
                r.heading = self._random_heading(r)
            elif st == BehaviourState.SEARCHING:
                k = self._visible_carrier(r)
                if k >= 0:
                    r.state = st = BehaviourState.PICKUP
                    r.target = k
            if st == BehaviourState.PICKUP and (r.target < 0 or self.cstatus[r.target] != ON_FLOOR):
                r.target = self._visible_carrier(r)

            obs = self._obstacles(i)
            if st.is_avoidance:
                if r.turn_left != 0.0:
                    d = math.copysign(min(abs(r.turn_left), self.turn_step), r.turn_left)
                    r.heading = (r.heading + d + math.pi) % TWO_PI - math.pi
                    r.turn_left -= d
                    continue
                bearing = self._trigger(r, obs)
                if bearing is not None:
                    self._start_avoidance(r, bearing)
                    continue
                r.state = st = st.paired
                r.hold = self.resample_every
                if st == BehaviourState.PICKUP and (r.target < 0 or self.cstatus[r.target] != ON_FLOOR):
                    r.target = self._visible_carrier(r)

            if r.hold > 0:
                r.hold -= 1
            elif st == BehaviourState.PICKUP and r.target >= 0:
                cx, cy = self.carriers[r.target]
                r.heading = math.atan2(cy - r.y, cx - r.x)
            elif resample:
                r.heading = self._random_heading(r)

            bearing = self._trigger(r, obs)
            if bearing is not None:
                self._start_avoidance(r, bearing)
                continue

            step = self.step_len
            if st == BehaviourState.PICKUP and r.target >= 0:
                cx, cy = self.carriers[r.target]
                step = min(step, math.hypot(cx - r.x, cy - r.y))
            nx = r.x + step * math.cos(r.heading)
            ny = r.y + step * math.sin(r.heading)
            if not self._blocked(nx, ny, obs):
                r.x, r.y = nx, ny
            if r.carrying >= 0:
                self.carriers[r.carrying][0] = r.x
                self.carriers[r.carrying][1] = r.y
            if st == BehaviourState.PICKUP and r.target >= 0:
                cx, cy = self.carriers[r.target]
                if math.hypot(cx - r.x, cy - r.y) <= self.attach_dist:
                    k = r.target
                    self.cstatus[k] = CARRIED
                    self.carriers[k][0], self.carriers[k][1] = r.x, r.y
                    r.carrying = k
                    r.target = -1
                    r.state = BehaviourState.DROPOFF

    def check_physics(self):
        for i, a in enumerate(self.robots):
            assert self.xmin - OVERLAP_TOL <= a.x <= self.xmax + OVERLAP_TOL, "robot left the arena"
            assert self.ymin - OVERLAP_TOL <= a.y <= self.ymax + OVERLAP_TOL, "robot left the arena"
            for b in self.robots[i + 1:]:
                assert math.hypot(a.x - b.x, a.y - b.y) >= 2 * self.rr - OVERLAP_TOL, "robots overlap"


def run_trial(config: ScenarioConfig, zones: ZoneMap | None = None, seed: int | None = None,
              check: bool = False) -> TrialOutput:
    """Simulate one trial of ``config.timesteps_per_trial`` steps."""
    zones = zones or build_zone_map(config)
    seed = config.rng_seed if seed is None else seed
    world = _World(config, zones, seed)
    T, N, C = config.timesteps_per_trial, config.n_robots, config.n_carriers
    states = np.empty((T, N), dtype=np.int8)
    pos = np.empty((T, N, 2))
    carrying = np.empty((T, N), dtype=np.int8)
    cstatus = np.empty((T, C), dtype=np.int8)
    dep = zones.deposit
    for t in range(T):
        for i, r in enumerate(world.robots):
            states[t, i] = r.state
            pos[t, i, 0] = r.x
            pos[t, i, 1] = r.y
            carrying[t, i] = r.carrying
        cstatus[t] = world.cstatus
        if t < T - 1:
            world.step(t)
            if check:
                world.check_physics()
    vel = np.zeros_like(pos)
    vel[:-1] = np.diff(pos, axis=0) / config.dt
    in_dep = (pos[..., 0] >= dep.x0) & (pos[..., 0] <= dep.x1) & (pos[..., 1] >= dep.y0) & (pos[..., 1] <= dep.y1)
    return TrialOutput(
        robot_states=states, positions=pos, velocities=vel, in_deposit=in_dep,
        carrying=carrying, carrier_status=cstatus, dt=config.dt, seed=seed,
    )


# --- CSV datasets -------------------------------------------------------------

def _rows_per_robot(T, N):
    t = np.repeat(np.arange(T), N)
    rid = np.tile(np.arange(N), T)
    return t, rid


def write_trial(out: TrialOutput, trial_dir) -> dict[str, str]:
    """Write the four datasets; return ``{filename: sha256}``."""
    trial_dir = Path(trial_dir)
    trial_dir.mkdir(parents=True, exist_ok=True)
    T, N = out.robot_states.shape
    counts = out.state_counts
    t_idx, rid = _rows_per_robot(T, N)
    states = out.robot_states.ravel()
    xy = out.positions.reshape(-1, 2)
    speed = out.speeds.ravel()
    dep = out.in_deposit.ravel()
    names = [BehaviourState(s).csv_name for s in range(6)]

    texts = {
        "counts.csv": [COUNTS_HEADER] + [
            f"{t},{c[0]},{c[1]},{c[2]},{c[3]},{c[4]},{c[5]}" for t, c in enumerate(counts.tolist())
        ],
        "states.csv": [STATES_HEADER] + [
            f"{t},{i},{names[s]}" for t, i, s in zip(t_idx.tolist(), rid.tolist(), states.tolist())
        ],
        "positions.csv": [POSITIONS_HEADER] + [
            f"{t},{i},{x:.6f},{y:.6f}" for t, i, (x, y) in zip(t_idx.tolist(), rid.tolist(), xy.tolist())
        ],
        "kinematics.csv": [KINEMATICS_HEADER] + [
            f"{t},{i},{v:.6f},{int(d)}" for t, i, v, d in zip(t_idx.tolist(), rid.tolist(), speed.tolist(), dep.tolist())
        ],
    }
    digests = {}
    for name, lines in texts.items():
        data = ("\n".join(lines) + "\n").encode("utf-8")
        (trial_dir / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    return digests


@dataclass
class CampaignSummary:
    n_trials: int
    base_seed: int
    out_dir: str
    checksums: dict[str, dict[str, str]] = field(default_factory=dict)
    deposits: list[int] = field(default_factory=list)
    red_entries: list[int] = field(default_factory=list)
    amber_entries: list[int] = field(default_factory=list)

    @property
    def mean_deposits(self) -> float:
        return float(np.mean(self.deposits)) if self.deposits else 0.0

    def to_dict(self) -> dict:
        return {
            "n_trials": self.n_trials,
            "base_seed": self.base_seed,
            "mean_deposits": self.mean_deposits,
            "trials_with_red_entry": sum(1 for n in self.red_entries if n > 0),
            "trials_with_amber_entry": sum(1 for n in self.amber_entries if n > 0),
            "deposits": self.deposits,
            "red_entries": self.red_entries,
            "amber_entries": self.amber_entries,
            "checksums": self.checksums,
        }


def trial_dirname(index: int) -> str:
    return f"trial_{index:04d}"


def _zone_entries(mask: np.ndarray) -> int:
    """Number of robot entries into a zone given a (T, N) membership mask."""
    if mask.shape[0] == 0:
        return 0
    starts = mask[1:] & ~mask[:-1]
    return int(starts.sum() + mask[0].sum())


def _run_one(args):
    config, zones, seed, trial_dir = args
    out = run_trial(config, zones, seed)
    digests = write_trial(out, trial_dir)
    x, y = out.positions[..., 0], out.positions[..., 1]
    red = (x >= zones.red.x0) & (x <= zones.red.x1) & (y >= zones.red.y0) & (y <= zones.red.y1)
    amb = (x >= zones.amber.x0) & (x <= zones.amber.x1) & (y >= zones.amber.y0) & (y <= zones.amber.y1)
    return digests, out.deposits, _zone_entries(red), _zone_entries(amb)


def run_campaign(config: ScenarioConfig, n_trials: int, base_seed: int, out_dir,
                 force: bool = False, jobs: int = 1) -> CampaignSummary:
    """Run ``n_trials`` trials with seeds ``base_seed .. base_seed + n_trials - 1``."""
    out_dir = Path(out_dir)
    if out_dir.exists() and any(out_dir.iterdir()):
        if not force:
            raise FileExistsError(f"{out_dir} already exists; pass force=True to overwrite")
        shutil.rmtree(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    zones = build_zone_map(config)
    tasks = [(config, zones, base_seed + i, out_dir / trial_dirname(i)) for i in range(n_trials)]
    summary = CampaignSummary(n_trials=n_trials, base_seed=base_seed, out_dir=str(out_dir))
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as ex:
            results = list(ex.map(_run_one, tasks))
    else:
        results = [_run_one(t) for t in tasks]
    for i, (digests, deposits, red, amber) in enumerate(results):
        summary.checksums[trial_dirname(i)] = digests
        summary.deposits.append(deposits)
        summary.red_entries.append(red)
        summary.amber_entries.append(amber)
    log.info("campaign of %d trials done: mean deposits %.2f, %d trials with red entries",
             n_trials, summary.mean_deposits, sum(1 for n in summary.red_entries if n))
    return summary
