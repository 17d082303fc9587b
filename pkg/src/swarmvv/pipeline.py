"""Trace cleaning, downsampling, trial averaging and equal-width discretization.

Raw inputs are the simulator's per-trial CSV datasets, position-only
high-fidelity traces (``robot_id,t_s,x_m,y_m`` at 1 Hz) and irregular
physical recordings in the same columns. Everything is reduced to a
:class:`CleanSeries`: per-sample state probabilities plus the unsafe flags
used by the fire-exit and swarm-density requirements.
"""

from __future__ import annotations

import csv
import json
import logging
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lfsim import (
    COUNTS_HEADER, KINEMATICS_HEADER, POSITIONS_HEADER, STATES_HEADER, BehaviourState,
)
from .scenario import ScenarioConfig, ZoneMap, classify_points

log = logging.getLogger(__name__)

FLAG_NAMES = ("red_occupied", "amber_critical", "amber_single", "density_violation")
STATE_CHANNELS = ("searching", "pickup", "dropoff", "avoid_s", "avoid_p", "avoid_d")
STATIONARY_WINDOW_S = 10.0
STATIONARY_EPS_M = 0.01
DENSITY_FRACTION = 0.10
LF_SAMPLE_EVERY = 50


class SchemaError(ValueError):
    """Input file does not match the documented dataset layout."""


@dataclass
class CleanSeries:
    """Per-sample view of one trial (or an average of trials).

    ``p_state`` is ``None`` for position-only sources. ``freq`` holds the
    fraction of trials in which each flag was raised once series have been
    averaged; for single trials it is simply the flag as 0/1.
    """

    p_state: np.ndarray | None
    red_occupied: np.ndarray
    amber_critical: np.ndarray
    amber_single: np.ndarray
    density_violation: np.ndarray
    source: str = "LF"
    dt_s: float = 1.0
    freq: dict[str, np.ndarray] | None = None
    positions: np.ndarray | None = None
    availability: "AvailabilityReport | None" = None
    n_trials: int = 1

    def __post_init__(self):
        n = len(self.red_occupied)
        for name in FLAG_NAMES:
            arr = np.asarray(getattr(self, name), dtype=bool)
            if arr.shape != (n,):
                raise ValueError(f"flag {name} has shape {arr.shape}, expected ({n},)")
            setattr(self, name, arr)
        if self.p_state is not None:
            self.p_state = np.asarray(self.p_state, dtype=float)
            if self.p_state.shape != (n, 6):
                raise ValueError(f"p_state has shape {self.p_state.shape}, expected ({n}, 6)")
        if self.freq is None:
            self.freq = {name: getattr(self, name).astype(float) for name in FLAG_NAMES}

    def __len__(self) -> int:
        return len(self.red_occupied)

    @property
    def t(self) -> np.ndarray:
        return np.arange(len(self))

    def flags(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in FLAG_NAMES}


@dataclass
class DiscreteSeries:
    levels: np.ndarray | None          # (n, 6) ints in 1..n_bins
    edges: list[list[float]] | None    # per channel, n_bins + 1 edges
    flags: dict[str, np.ndarray]
    freq: dict[str, np.ndarray]
    p_state: np.ndarray | None
    source: str = "LF"
    n_bins: int = 5

    def __len__(self) -> int:
        return len(self.flags["red_occupied"])


# --- readers -----------------------------------------------------------------------

def trial_dirs(campaign) -> list[Path]:
    campaign = Path(campaign)
    if (campaign / "counts.csv").exists() or (campaign / "states.csv").exists():
        return [campaign]
    return sorted(p for p in campaign.iterdir() if p.is_dir() and p.name.startswith("trial_"))


def _read_lines(path: Path, header: str) -> list[str]:
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise SchemaError(f"missing dataset {path}") from None
    lines = text.splitlines()
    if not lines or lines[0].strip() != header:
        raise SchemaError(f"{path}: expected header {header!r}, got {lines[0] if lines else ''!r}")
    return lines[1:]


def _robot_table(path: Path, header: str, n_value_cols: int, convert=float):
    """Parse a ``t,robot_id,...`` file into arrays of shape (T, N, k)."""
    lines = _read_lines(path, header)
    rows = [ln.split(",") for ln in lines if ln]
    if any(len(r) != 2 + n_value_cols for r in rows):
        raise SchemaError(f"{path}: wrong column count")
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    t = np.array([int(r[0]) for r in rows])
    rid = np.array([int(r[1]) for r in rows])
    T, N = t.max() + 1, rid.max() + 1
    if len(rows) != T * N:
        raise SchemaError(f"{path}: {len(rows)} rows but expected {T} timesteps x {N} robots")
    seen = np.zeros((T, N), dtype=bool)
    seen[t, rid] = True
    if not seen.all():
        missing = np.argwhere(~seen)[0]
        raise SchemaError(f"{path}: missing timestep {missing[0]} for robot {missing[1]}")
    values = [[convert(v) for v in r[2:]] for r in rows]
    out = np.empty((T, N, n_value_cols), dtype=object if convert is str else float)
    out[t, rid] = values
    return out


def read_counts(trial_dir) -> np.ndarray:
    path = Path(trial_dir) / "counts.csv"
    lines = [ln for ln in _read_lines(path, COUNTS_HEADER) if ln]
    arr = np.array([[int(v) for v in ln.split(",")] for ln in lines])
    if arr.ndim != 2 or arr.shape[1] != 7:
        raise SchemaError(f"{path}: wrong column count")
    if not np.array_equal(arr[:, 0], np.arange(len(arr))):
        raise SchemaError(f"{path}: missing or out-of-order timesteps")
    return arr[:, 1:]


def read_states(trial_dir) -> np.ndarray:
    names = _robot_table(Path(trial_dir) / "states.csv", STATES_HEADER, 1, convert=str)[..., 0]
    lookup = np.vectorize(lambda s: int(BehaviourState.from_name(s)), otypes=[np.int8])
    return lookup(names)


def read_positions(trial_dir) -> np.ndarray:
    return _robot_table(Path(trial_dir) / "positions.csv", POSITIONS_HEADER, 2)


def read_kinematics(trial_dir) -> tuple[np.ndarray, np.ndarray]:
    arr = _robot_table(Path(trial_dir) / "kinematics.csv", KINEMATICS_HEADER, 2)
    return arr[..., 0], arr[..., 1].astype(bool)


def states_to_counts(states: np.ndarray) -> np.ndarray:
    return np.stack([(states == s).sum(axis=1) for s in range(6)], axis=1)


# --- flag computation -------------------------------------------------------------

def _stationary(step_disp: np.ndarray, dt: float) -> np.ndarray:
    """Robots that moved less than 1 cm over the trailing window of more than 10 s.

    ``step_disp[t, i]`` is the distance robot i covered between samples t and
    t+1; NaN marks unknown motion, which never counts as stationary.
    """
    T, N = step_disp.shape
    w = int(np.floor(STATIONARY_WINDOW_S / dt + 1e-9)) + 1
    out = np.zeros((T, N), dtype=bool)
    if T <= w:
        return out
    d = np.nan_to_num(step_disp, nan=1e6)  # unknown motion: never stationary
    csum = np.concatenate([np.zeros((1, N)), np.cumsum(d, axis=0)])
    # displacement over steps t-w .. t-1, i.e. from sample t-w to sample t
    moved = csum[w:T] - csum[: T - w]
    out[w:] = moved < STATIONARY_EPS_M
    return out


def zone_flags(zones: ZoneMap, positions: np.ndarray, stationary: np.ndarray | None = None,
               in_deposit: np.ndarray | None = None):
    """Per-sample unsafe flags from robot positions ``(T, N, 2)`` (NaN = unknown robot)."""
    red, amber, deposit = classify_points(zones, positions)
    known = np.isfinite(positions).all(axis=-1)
    n_known = known.sum(axis=1)
    red_occ = red.any(axis=1)
    n_amber = amber.sum(axis=1)
    if stationary is None:
        density = np.zeros(len(positions), dtype=bool)
    else:
        if in_deposit is None:
            in_deposit = deposit
        outside = stationary & ~in_deposit & known
        density = outside.sum(axis=1) >= DENSITY_FRACTION * np.maximum(n_known, 1) - 1e-12
        density &= outside.any(axis=1)
    return red_occ, n_amber >= 2, n_amber >= 1, density


def clean_trial(trial_dir, zones: ZoneMap, config: ScenarioConfig) -> CleanSeries:
    trial_dir = Path(trial_dir)
    counts = read_counts(trial_dir)
    states = read_states(trial_dir)
    if states.shape[0] != counts.shape[0]:
        raise SchemaError(f"{trial_dir}: counts and states cover different timesteps")
    if not np.array_equal(states_to_counts(states), counts):
        bad = int(np.flatnonzero((states_to_counts(states) != counts).any(axis=1))[0])
        raise SchemaError(f"{trial_dir}: counts.csv disagrees with states.csv at t={bad}")
    n_robots = states.shape[1]
    if n_robots != config.n_robots:
        raise SchemaError(f"{trial_dir}: {n_robots} robots in data, config says {config.n_robots}")
    pos = read_positions(trial_dir)
    speed, in_dep = read_kinematics(trial_dir)
    if pos.shape[:2] != states.shape or speed.shape != states.shape:
        raise SchemaError(f"{trial_dir}: datasets have inconsistent shapes")
    stationary = _stationary(speed * config.dt, config.dt)
    red, crit, single, density = zone_flags(zones, pos, stationary, in_dep)
    return CleanSeries(
        p_state=counts / n_robots, red_occupied=red, amber_critical=crit, amber_single=single,
        density_violation=density, source="LF", dt_s=config.dt,
    )


def clean(campaign, zones: ZoneMap, config: ScenarioConfig) -> list[CleanSeries]:
    dirs = trial_dirs(campaign)
    if not dirs:
        raise SchemaError(f"no trial datasets under {campaign}")
    return [clean_trial(d, zones, config) for d in dirs]


# --- sampling and averaging -------------------------------------------------------

def downsample(series: CleanSeries, every: int) -> CleanSeries:
    """Keep every ``every``-th sample; flags are ORed over each window."""
    n = len(series)
    m = max(1, n // every)
    owner = np.minimum(np.arange(n) // every, m - 1)

    def window_or(a):
        out = np.zeros(m, dtype=bool)
        np.logical_or.at(out, owner, a)
        return out

    def window_max(a):
        out = np.zeros(m)
        np.maximum.at(out, owner, a)
        return out

    p = None if series.p_state is None else series.p_state[np.arange(m) * every]
    flags = {k: window_or(v) for k, v in series.flags().items()}
    freq = {k: window_max(v) for k, v in series.freq.items()}
    return replace(series, p_state=p, freq=freq, dt_s=series.dt_s * every, positions=None, **flags)


def downsample_lf(series: CleanSeries, every: int = LF_SAMPLE_EVERY) -> CleanSeries:
    return downsample(series, every)


def average_trials(series_list: list[CleanSeries]) -> CleanSeries:
    """Average probabilities; a flag is raised where any trial raised it."""
    if not series_list:
        raise ValueError("nothing to average")
    n = len(series_list[0])
    if any(len(s) != n for s in series_list):
        raise ValueError("series have different lengths: " + str(sorted({len(s) for s in series_list})))
    has_p = [s.p_state is not None for s in series_list]
    if any(has_p) and not all(has_p):
        raise ValueError("cannot average series with and without state probabilities")
    weights = np.array([s.n_trials for s in series_list], dtype=float)

    def mean(arrays, w=None):
        # shifted mean: exact when every input equals the first
        base = arrays[0]
        return base + np.average([a - base for a in arrays], axis=0, weights=w)

    p = mean([s.p_state for s in series_list]) if all(has_p) else None
    freq = {k: mean([s.freq[k] for s in series_list], weights) for k in FLAG_NAMES}
    flags = {k: freq[k] > 0 for k in FLAG_NAMES}
    first = series_list[0]
    return CleanSeries(p_state=p, source=first.source, dt_s=first.dt_s, freq=freq,
                       n_trials=int(weights.sum()), **flags)


# --- equal-width discretization ---------------------------------------------------

def ewd_edges(values: np.ndarray, n_bins: int = 5) -> np.ndarray:
    lo, hi = float(np.min(values)), float(np.max(values))
    return np.linspace(lo, hi, n_bins + 1)


def ewd_levels(values: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Level 1..n for each value: bins are right-open except the last."""
    edges = np.asarray(edges, dtype=float)
    if edges[-1] == edges[0]:
        return np.ones(np.shape(values), dtype=np.int64)
    return np.searchsorted(edges[1:-1], values, side="right") + 1


def discretize_ewd(series: CleanSeries, n_bins: int = 5) -> DiscreteSeries:
    if len(series) == 0:
        raise ValueError("cannot discretize an empty series")
    levels = edges = None
    if series.p_state is not None:
        levels = np.empty(series.p_state.shape, dtype=np.int64)
        edges = []
        for c in range(6):
            col = series.p_state[:, c]
            e = ewd_edges(col, n_bins)
            if e[0] == e[-1]:
                warnings.warn(f"channel {STATE_CHANNELS[c]} is constant; all samples assigned L1", stacklevel=2)
            levels[:, c] = ewd_levels(col, e)
            edges.append(e.tolist())
    return DiscreteSeries(
        levels=levels, edges=edges, flags=series.flags(), freq=dict(series.freq),
        p_state=series.p_state, source=series.source, n_bins=n_bins,
    )


# --- position-only sources -------------------------------------------------------

POSITION_HEADER = "robot_id,t_s,x_m,y_m"


def _read_position_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or ",".join(h.strip() for h in header) != POSITION_HEADER:
            raise SchemaError(f"{path}: expected header {POSITION_HEADER!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 4:
                raise SchemaError(f"{path}:{lineno}: expected 4 columns")
            try:
                rows.append((row[0].strip(), float(row[1]), float(row[2]), float(row[3])))
            except ValueError as exc:
                raise SchemaError(f"{path}:{lineno}: {exc}") from None
    if not rows:
        raise SchemaError(f"{path}: no data rows")
    return rows


def _robot_ids(rows):
    ids = sorted({r[0] for r in rows}, key=lambda s: (len(s), s) if s.isdigit() else (0, s))
    return ids, {rid: i for i, rid in enumerate(ids)}


def _series_from_positions(zones: ZoneMap, pos: np.ndarray, dt: float, source: str) -> CleanSeries:
    step = np.full(pos.shape[:2], np.nan)
    step[:-1] = np.linalg.norm(np.diff(pos, axis=0), axis=-1)
    stationary = _stationary(step, dt)
    red, crit, single, density = zone_flags(zones, pos, stationary)
    return CleanSeries(
        p_state=None, red_occupied=red, amber_critical=crit, amber_single=single,
        density_violation=density, source=source, dt_s=dt, positions=pos,
    )


def ingest_hf(path, zones: ZoneMap, duration_s: int = 200) -> CleanSeries:
    """Read a 1 Hz position trace; robots missing at a second are left out of that sample."""
    rows = _read_position_rows(path)
    ids, index = _robot_ids(rows)
    pos = np.full((duration_s, len(ids), 2), np.nan)
    for rid, t, x, y in rows:
        k = int(round(t))
        if abs(t - k) > 1e-6:
            raise SchemaError(f"{path}: timestamp {t} is not a whole second")
        if 0 <= k < duration_s:
            pos[k, index[rid]] = (x, y)
    gaps = int((~np.isfinite(pos[..., 0])).sum())
    if gaps:
        log.warning("%s: %d robot-seconds missing; excluded from flag computation", path, gaps)
    return _series_from_positions(zones, pos, 1.0, "HF")


def ingest_hf_campaign(directory, zones: ZoneMap, duration_s: int = 200) -> list[CleanSeries]:
    files = sorted(Path(directory).glob("*.csv"))
    if not files:
        raise SchemaError(f"no HF trace files in {directory}")
    return [ingest_hf(f, zones, duration_s) for f in files]


@dataclass
class AvailabilityReport:
    coverage: float                      # fraction of robot-seconds with a sample within 0.5 s
    availability: dict[str, float]       # per robot: 1 - (gaps of at least 1 s) / duration
    max_gap_s: float
    max_gap_robot: str | None
    missing: list[tuple[str, int]] = field(default_factory=list)

    @property
    def worst_availability(self) -> float:
        return min(self.availability.values()) if self.availability else 0.0

    @property
    def best_availability(self) -> float:
        return max(self.availability.values()) if self.availability else 0.0

    def to_dict(self) -> dict:
        return {
            "coverage": self.coverage,
            "availability": self.availability,
            "worst_availability": self.worst_availability,
            "best_availability": self.best_availability,
            "max_gap_s": self.max_gap_s,
            "max_gap_robot": self.max_gap_robot,
            "missing": [list(m) for m in self.missing],
        }


def downsample_physical(raw, zones: ZoneMap, duration_s: int = 200) -> CleanSeries:
    """Nearest-sample downsampling of an irregular recording to 1 Hz.

    Second ``s`` takes the sample with the smallest ``|t - s|`` (earliest on
    ties); when none lies within half a second the entry is missing.
    """
    rows = _read_position_rows(raw)
    ids, index = _robot_ids(rows)
    per_robot: dict[str, list] = {rid: [] for rid in ids}
    for rid, t, x, y in rows:
        per_robot[rid].append((t, x, y))
    pos = np.full((duration_s, len(ids), 2), np.nan)
    availability, missing = {}, []
    max_gap, max_gap_robot = 0.0, None
    seconds = np.arange(duration_s, dtype=float)
    for rid in ids:
        samples = sorted(per_robot[rid])
        ts = np.array([s[0] for s in samples])
        xy = np.array([(s[1], s[2]) for s in samples])
        j = np.searchsorted(ts, seconds)
        lo = np.clip(j - 1, 0, len(ts) - 1)
        hi = np.clip(j, 0, len(ts) - 1)
        pick = np.where(np.abs(ts[lo] - seconds) <= np.abs(ts[hi] - seconds), lo, hi)
        ok = np.abs(ts[pick] - seconds) <= 0.5
        col = index[rid]
        pos[ok, col] = xy[pick[ok]]
        missing.extend((rid, int(s)) for s in np.flatnonzero(~ok))
        # gap accounting over the recorded window, edges included
        bounds = np.concatenate(([0.0], ts[(ts >= 0) & (ts <= duration_s)], [float(duration_s)]))
        gaps = np.diff(bounds)
        availability[rid] = float(1.0 - gaps[gaps >= 1.0].sum() / duration_s)
        inner = np.diff(ts)
        if len(inner) and inner.max() > max_gap:
            max_gap, max_gap_robot = float(inner.max()), rid
    coverage = float(np.isfinite(pos[..., 0]).mean())
    report = AvailabilityReport(coverage=coverage, availability=availability, max_gap_s=max_gap,
                                max_gap_robot=max_gap_robot, missing=missing)
    series = _series_from_positions(zones, pos, 1.0, "PHYS")
    series.availability = report
    return series


def write_positions(series: CleanSeries, path, ids=None) -> None:
    """Write 1 Hz positions back out in the ``robot_id,t_s,x_m,y_m`` layout."""
    if series.positions is None:
        raise ValueError("series carries no positions")
    T, N, _ = series.positions.shape
    ids = ids or [str(i) for i in range(N)]
    lines = [POSITION_HEADER]
    for t in range(T):
        for i in range(N):
            x, y = series.positions[t, i]
            if np.isfinite(x):
                lines.append(f"{ids[i]},{t * series.dt_s:.3f},{float(x)!r},{float(y)!r}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# --- zone-time statistics ----------------------------------------------------------

@dataclass(frozen=True)
class ZoneTimeStats:
    red_s: float
    amber_critical_s: float
    amber_single_s: float
    n_trials: int

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.red_s, self.amber_critical_s, self.amber_single_s)


def zone_time_stats(series_list: list[CleanSeries]) -> ZoneTimeStats:
    """Mean seconds per trial with red occupied, 2+ robots in amber, 1+ robot in amber."""
    if not series_list:
        raise ValueError("no series given")

    def mean_time(flag):
        return float(np.mean([getattr(s, flag).sum() * s.dt_s for s in series_list]))

    return ZoneTimeStats(
        red_s=mean_time("red_occupied"),
        amber_critical_s=mean_time("amber_critical"),
        amber_single_s=mean_time("amber_single"),
        n_trials=len(series_list),
    )


# --- files ------------------------------------------------------------------------------

def write_clean(series: CleanSeries, path) -> None:
    cols = ["t"]
    if series.p_state is not None:
        cols += [f"p_{c}" for c in STATE_CHANNELS]
    cols += list(FLAG_NAMES) + [f"freq_{f}" for f in FLAG_NAMES]
    lines = [",".join(cols)]
    for t in range(len(series)):
        vals = [str(t)]
        if series.p_state is not None:
            vals += [repr(float(v)) for v in series.p_state[t]]
        vals += [str(int(getattr(series, f)[t])) for f in FLAG_NAMES]
        vals += [repr(float(series.freq[f][t])) for f in FLAG_NAMES]
        lines.append(",".join(vals))
    meta = {"source": series.source, "dt_s": series.dt_s, "n_trials": series.n_trials}
    Path(path).write_text("# " + json.dumps(meta, sort_keys=True) + "\n" + "\n".join(lines) + "\n", encoding="utf-8")


def read_clean(path) -> CleanSeries:
    text = Path(path).read_text(encoding="utf-8").splitlines()
    if not text or not text[0].startswith("# "):
        raise SchemaError(f"{path}: missing metadata line")
    meta = json.loads(text[0][2:])
    header = text[1].split(",")
    data = [ln.split(",") for ln in text[2:] if ln]
    col = {name: i for i, name in enumerate(header)}
    p = None
    if "p_searching" in col:
        p = np.array([[float(r[col[f"p_{c}"]]) for c in STATE_CHANNELS] for r in data]).reshape(-1, 6)
    flags = {f: np.array([r[col[f]] == "1" for r in data], dtype=bool) for f in FLAG_NAMES}
    freq = {f: np.array([float(r[col[f"freq_{f}"]]) for r in data]) for f in FLAG_NAMES}
    return CleanSeries(p_state=p, freq=freq, source=meta["source"], dt_s=meta["dt_s"],
                       n_trials=meta.get("n_trials", 1), **flags)


def write_discrete(ds: DiscreteSeries, csv_path, bins_path) -> None:
    cols = ["t"]
    if ds.levels is not None:
        cols += [f"l_{c}" for c in STATE_CHANNELS] + [f"p_{c}" for c in STATE_CHANNELS]
    cols += list(FLAG_NAMES) + [f"freq_{f}" for f in FLAG_NAMES]
    lines = [",".join(cols)]
    for t in range(len(ds)):
        vals = [str(t)]
        if ds.levels is not None:
            vals += [str(int(v)) for v in ds.levels[t]] + [repr(float(v)) for v in ds.p_state[t]]
        vals += [str(int(ds.flags[f][t])) for f in FLAG_NAMES]
        vals += [repr(float(ds.freq[f][t])) for f in FLAG_NAMES]
        lines.append(",".join(vals))
    Path(csv_path).write_text("\n".join(lines) + "\n", encoding="utf-8")
    bins = {"n_bins": ds.n_bins, "source": ds.source,
            "edges": None if ds.edges is None else dict(zip(STATE_CHANNELS, ds.edges))}
    Path(bins_path).write_text(json.dumps(bins, indent=2) + "\n", encoding="utf-8")


def read_discrete(csv_path, bins_path) -> DiscreteSeries:
    bins = json.loads(Path(bins_path).read_text(encoding="utf-8"))
    text = Path(csv_path).read_text(encoding="utf-8").splitlines()
    header = text[0].split(",")
    data = [ln.split(",") for ln in text[1:] if ln]
    col = {name: i for i, name in enumerate(header)}
    levels = p = edges = None
    if "l_searching" in col:
        levels = np.array([[int(r[col[f"l_{c}"]]) for c in STATE_CHANNELS] for r in data]).reshape(-1, 6)
        p = np.array([[float(r[col[f"p_{c}"]]) for c in STATE_CHANNELS] for r in data]).reshape(-1, 6)
        edges = [bins["edges"][c] for c in STATE_CHANNELS]
        for c in range(6):
            if not np.array_equal(ewd_levels(p[:, c], edges[c]), levels[:, c]):
                raise SchemaError(f"{csv_path}: levels of {STATE_CHANNELS[c]} disagree with bins")
    flags = {f: np.array([r[col[f]] == "1" for r in data], dtype=bool) for f in FLAG_NAMES}
    freq = {f: np.array([float(r[col[f"freq_{f}"]]) for r in data]) for f in FLAG_NAMES}
    return DiscreteSeries(levels=levels, edges=edges, flags=flags, freq=freq, p_state=p,
                          source=bins.get("source", "LF"), n_bins=bins["n_bins"])
