"""Labelled CTMCs built from discretized swarm series.

The chain is unrolled in time: sample ``t`` of the series becomes state
``t``, linked to ``t + 1`` by a unit-rate transition, so one unit of model
time corresponds to one sampled step. An absorbing terminal state closes the
chain; its rate-1 self-loop is implicit (self-loops do not change CTMC
behaviour) and it is listed under ``ABSORBING`` in the model file.

Model file layout (line oriented, ``#`` starts a comment)::

    swarmvv-ctmc 1
    META {json}
    VARIABLES s:0..5 l:0..5 timestep:0..200 ...
    STATES <n>
    <index> <value> <value> ...
    INIT <index>
    ABSORBING <index> ...
    TRANSITIONS <n>
    <src> <dst> <rate>
    LABELS <n>
    <name>: <index> <index> ...
    REWARDS <n>
    <name>: <index>=<value> ...
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .pipeline import FLAG_NAMES, DiscreteSeries

FORMAT_VERSION = 1
MAGIC = "swarmvv-ctmc"

MAIN_STATES = (0, 1, 2)
AVOID_STATES = (3, 4, 5)
REWARD_CHANNELS = ("searching", "pickup", "dropoff", "avoid_s", "avoid_p", "avoid_d")

# label name -> pipeline flag
LABEL_FLAGS = {
    "unsafe_red": "red_occupied",
    "unsafe_fireexitsblocked": "red_occupied",
    "unsafe_amber": "amber_single",
    "unsafe_amber_critical": "amber_critical",
    "density_violation": "density_violation",
}
FLAG_VARS = {"red_occupied": "red", "amber_single": "amber", "amber_critical": "amber_critical",
             "density_violation": "density"}


class ModelFormatError(ValueError):
    pass


@dataclass
class MarkovModel:
    variables: list[str]
    domains: dict[str, tuple[int, int]]
    valuations: np.ndarray                           # (n_states, n_vars) int
    transitions: list[tuple[int, int, float]]
    initial: int = 0
    absorbing: frozenset[int] = frozenset()
    labels: dict[str, frozenset[int]] = field(default_factory=dict)
    rewards: dict[str, np.ndarray] = field(default_factory=dict)
    meta: dict = field(default_factory=dict)

    @property
    def n_states(self) -> int:
        return self.valuations.shape[0]

    def var_index(self, name: str) -> int:
        return self.variables.index(name)

    def values(self, name: str) -> np.ndarray:
        return self.valuations[:, self.var_index(name)]

    def rate_matrix(self) -> np.ndarray:
        """Off-diagonal rates ``R[i, j]`` (self-loops dropped)."""
        n = self.n_states
        R = np.zeros((n, n))
        for s, d, r in self.transitions:
            if s != d:
                R[s, d] += r
        return R

    def generator(self) -> np.ndarray:
        R = self.rate_matrix()
        return R - np.diag(R.sum(axis=1))

    def successors(self, i: int) -> list[int]:
        succ = sorted({d for s, d, _ in self.transitions if s == i})
        if i in self.absorbing and i not in succ:
            succ.append(i)
        return sorted(succ)

    def label_mask(self, name: str) -> np.ndarray:
        mask = np.zeros(self.n_states, dtype=bool)
        mask[list(self.labels[name])] = True
        return mask

    def __eq__(self, other):
        if not isinstance(other, MarkovModel):
            return NotImplemented
        return (
            self.variables == other.variables
            and self.domains == other.domains
            and np.array_equal(self.valuations, other.valuations)
            and sorted(self.transitions) == sorted(other.transitions)
            and self.initial == other.initial
            and self.absorbing == other.absorbing
            and self.labels == other.labels
            and self.rewards.keys() == other.rewards.keys()
            and all(np.array_equal(self.rewards[k], other.rewards[k]) for k in self.rewards)
            and self.meta == other.meta
        )


def _chain(n_samples: int, variables, domains, rows, labels, rewards, meta) -> MarkovModel:
    terminal = n_samples
    transitions = [(t, t + 1, 1.0) for t in range(n_samples)]
    return MarkovModel(
        variables=list(variables), domains=domains,
        valuations=np.asarray(rows, dtype=np.int64).reshape(n_samples + 1, len(variables)),
        transitions=transitions, initial=0, absorbing=frozenset({terminal}),
        labels=labels, rewards=rewards, meta=meta,
    )


def build_model(series: DiscreteSeries, mode: str = "per_state_chain", state: int = 0) -> MarkovModel:
    """Unrolled time-indexed CTMC for one behavioural state (or all six jointly).

    ``per_state_chain`` carries variables ``s`` (fixed to ``state``) and ``l``
    (that state's probability level); ``joint`` carries ``l0 .. l5``.
    Rewards are the per-sample state probabilities: ``main_states`` is the
    fraction of the swarm in SEARCHING/PICKUP/DROPOFF, ``avoidance_states``
    the fraction avoiding, plus one structure per behavioural state.
    """
    n = len(series)
    if n == 0:
        raise ValueError("cannot build a model from an empty series")
    if mode not in ("per_state_chain", "joint"):
        raise ValueError(f"unknown mode {mode!r}")
    if not 0 <= state <= 5:
        raise ValueError(f"state must be 0..5, got {state}")
    has_levels = series.levels is not None
    nb = series.n_bins
    flag_cols = [FLAG_VARS[f] for f in FLAG_NAMES]
    if mode == "per_state_chain":
        level_vars = ["l"]
        lv = series.levels[:, state] if has_levels else np.zeros(n, dtype=np.int64)
        level_rows = lv.reshape(n, 1)
        head = ["s"]
        head_vals = [state]
    else:
        level_vars = [f"l{c}" for c in range(6)]
        level_rows = series.levels if has_levels else np.zeros((n, 6), dtype=np.int64)
        head, head_vals = [], []
    variables = head + level_vars + ["timestep"] + flag_cols
    domains = {}
    if head:
        domains["s"] = (0, 5)
    for v in level_vars:
        domains[v] = (0, nb)
    domains["timestep"] = (0, n)
    for f in flag_cols:
        domains[f] = (0, 1)

    rows = []
    for t in range(n):
        rows.append(head_vals + [int(v) for v in level_rows[t]] + [t]
                    + [int(series.flags[f][t]) for f in FLAG_NAMES])
    # terminal: no level, no flags
    rows.append(head_vals + [0] * len(level_vars) + [n] + [0] * len(flag_cols))

    labels = {}
    for name, flag in LABEL_FLAGS.items():
        labels[name] = frozenset(int(t) for t in np.flatnonzero(series.flags[flag]))

    rewards = {}
    if series.p_state is not None:
        p = np.vstack([series.p_state, np.zeros((1, 6))])
        rewards["main_states"] = p[:, list(MAIN_STATES)].sum(axis=1)
        rewards["avoidance_states"] = p[:, list(AVOID_STATES)].sum(axis=1)
        for c, name in enumerate(REWARD_CHANNELS):
            rewards[name] = p[:, c].copy()

    meta = {"mode": mode, "source": series.source, "n_samples": n, "n_bins": nb, "state_data": has_levels}
    if mode == "per_state_chain":
        meta["state"] = state
    if series.edges is not None:
        meta["bin_edges"] = series.edges
    return _chain(n, variables, domains, rows, labels, rewards, meta)


def build_models(series: DiscreteSeries) -> dict[int, MarkovModel]:
    """One per-state chain for each behavioural state."""
    return {s: build_model(series, "per_state_chain", s) for s in range(6)}


def validate_model(model: MarkovModel) -> list[str]:
    """Return a list of invariant violations (empty when the model is valid)."""
    problems = []
    n = model.n_states
    if model.valuations.ndim != 2 or model.valuations.shape[1] != len(model.variables):
        problems.append("valuation table does not match the variable list")
    if not 0 <= model.initial < n:
        problems.append(f"initial state {model.initial} does not exist")
    has_out = np.zeros(n, dtype=bool)
    for s, d, r in model.transitions:
        if not (0 <= s < n and 0 <= d < n):
            problems.append(f"transition {s}->{d} references a missing state")
            continue
        if not r > 0:
            problems.append(f"transition {s}->{d} has non-positive rate {r}")
        has_out[s] = True
    for a in model.absorbing:
        if not 0 <= a < n:
            problems.append(f"absorbing state {a} does not exist")
        else:
            has_out[a] = True
    for i in np.flatnonzero(~has_out):
        problems.append(f"state {int(i)} has no outgoing transition and is not absorbing")
    for name, states in model.labels.items():
        bad = [s for s in states if not 0 <= s < n]
        if bad:
            problems.append(f"label {name!r} references missing states {bad[:5]}")
    for name, vec in model.rewards.items():
        vec = np.asarray(vec)
        if vec.shape != (n,):
            problems.append(f"reward {name!r} has shape {vec.shape}, expected ({n},)")
        elif (vec < 0).any() or not np.isfinite(vec).all():
            problems.append(f"reward {name!r} has negative or non-finite entries")
    if model.valuations.ndim == 2 and model.valuations.shape[1] == len(model.variables):
        for k, var in enumerate(model.variables):
            lo, hi = model.domains.get(var, (None, None))
            if lo is None:
                problems.append(f"variable {var!r} has no domain")
                continue
            col = model.valuations[:, k]
            if len(col) and (col.min() < lo or col.max() > hi):
                problems.append(f"variable {var!r} leaves its domain {lo}..{hi}")
    return problems


# --- serialization --------------------------------------------------------------------

def export_model(model: MarkovModel, path) -> None:
    out = [f"{MAGIC} {FORMAT_VERSION}", "META " + json.dumps(model.meta, sort_keys=True)]
    out.append("VARIABLES " + " ".join(f"{v}:{model.domains[v][0]}..{model.domains[v][1]}" for v in model.variables))
    out.append(f"STATES {model.n_states}")
    for i, row in enumerate(model.valuations.tolist()):
        out.append(" ".join(str(x) for x in [i] + row))
    out.append(f"INIT {model.initial}")
    out.append("ABSORBING" + "".join(f" {a}" for a in sorted(model.absorbing)))
    out.append(f"TRANSITIONS {len(model.transitions)}")
    for s, d, r in model.transitions:
        out.append(f"{s} {d} {float(r)!r}")
    out.append(f"LABELS {len(model.labels)}")
    for name in sorted(model.labels):
        out.append(f"{name}:" + "".join(f" {i}" for i in sorted(model.labels[name])))
    out.append(f"REWARDS {len(model.rewards)}")
    for name in sorted(model.rewards):
        vec = np.asarray(model.rewards[name], dtype=float)
        out.append(f"{name}:" + "".join(f" {i}={float(vec[i])!r}" for i in np.flatnonzero(vec)))
    Path(path).write_text("\n".join(out) + "\n", encoding="utf-8")


def import_model(path) -> MarkovModel:
    """Inverse of :func:`export_model`; malformed input raises :class:`ModelFormatError`."""
    try:
        return _parse_model(path)
    except (ValueError, StopIteration, IndexError) as exc:
        if isinstance(exc, ModelFormatError):
            raise
        raise ModelFormatError(f"{path}: {exc or 'unexpected end of file'}") from None


def _parse_model(path) -> MarkovModel:
    lines = [ln for ln in Path(path).read_text(encoding="utf-8").splitlines()
             if ln.strip() and not ln.lstrip().startswith("#")]
    it = iter(lines)

    def expect(keyword):
        try:
            line = next(it)
        except StopIteration:
            raise ModelFormatError(f"unexpected end of file, expected {keyword}") from None
        if not (line == keyword or line.startswith(keyword + " ") or line.startswith(keyword + ":")):
            raise ModelFormatError(f"expected {keyword}, got {line!r}")
        return line[len(keyword):].strip()

    version = expect(MAGIC)
    if version != str(FORMAT_VERSION):
        raise ModelFormatError(f"unsupported format version {version}")
    meta = json.loads(expect("META"))
    variables, domains = [], {}
    for tok in expect("VARIABLES").split():
        name, rng = tok.split(":")
        lo, hi = rng.split("..")
        variables.append(name)
        domains[name] = (int(lo), int(hi))
    n = int(expect("STATES"))
    rows = []
    for i in range(n):
        parts = [int(x) for x in next(it).split()]
        if parts[0] != i or len(parts) != len(variables) + 1:
            raise ModelFormatError(f"malformed state line for state {i}")
        rows.append(parts[1:])
    initial = int(expect("INIT"))
    absorbing = frozenset(int(x) for x in expect("ABSORBING").split())
    transitions = []
    for _ in range(int(expect("TRANSITIONS"))):
        s, d, r = next(it).split()
        transitions.append((int(s), int(d), float(r)))
    labels = {}
    for _ in range(int(expect("LABELS"))):
        name, _, rest = next(it).partition(":")
        labels[name] = frozenset(int(x) for x in rest.split())
    rewards = {}
    for _ in range(int(expect("REWARDS"))):
        name, _, rest = next(it).partition(":")
        vec = np.zeros(n)
        for tok in rest.split():
            i, v = tok.split("=")
            vec[int(i)] = float(v)
        rewards[name] = vec
    valuations = np.asarray(rows, dtype=np.int64).reshape(n, len(variables))
    return MarkovModel(variables=variables, domains=domains, valuations=valuations,
                       transitions=transitions, initial=initial, absorbing=absorbing,
                       labels=labels, rewards=rewards, meta=meta)
