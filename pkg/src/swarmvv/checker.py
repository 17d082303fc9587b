"""Explicit-state model checking of bound properties on a :class:`MarkovModel`.

Transient quantities use uniformization: with ``q`` at least the largest
exit rate, ``P = I + Q/q`` is a DTMC and the state distribution at time
``t`` is a Poisson(``q t``)-weighted mixture of its powers. All quantities
are computed backwards, one value per starting state, so filters reuse the
same vectors. Unbounded reachability goes through the embedded jump chain.
"""

from __future__ import annotations

import csv
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import propspec as ps
from .markov import MarkovModel

log = logging.getLogger(__name__)

TRUNCATION_EPS = 1e-9
BOUND_TOL = 1e-9


class CheckError(ValueError):
    pass


# --- Poisson weights ------------------------------------------------------------------

@dataclass(frozen=True)
class PoissonWeights:
    left: int
    weights: np.ndarray        # weights[k - left] = P(N = k)
    error: float               # probability mass outside [left, right]

    @property
    def right(self) -> int:
        return self.left + len(self.weights) - 1


def poisson_weights(lam: float, eps: float = TRUNCATION_EPS) -> PoissonWeights:
    """Truncated Poisson(``lam``) probabilities with total tail mass below ``eps``.

    Terms are generated outward from the mode by the ratio recurrences, which
    avoids under/overflow for large ``lam``; the geometric decay of each tail
    bounds what is dropped.
    """
    if lam < 0:
        raise ValueError("Poisson rate must be nonnegative")
    if lam == 0:
        return PoissonWeights(0, np.ones(1), 0.0)
    mode = int(math.floor(lam))
    w_mode = math.exp(-lam + mode * math.log(lam) - math.lgamma(mode + 1))
    half = eps / 2.0
    right = [w_mode]
    k, w = mode, w_mode
    while True:
        w *= lam / (k + 1)
        k += 1
        right.append(w)
        nxt = lam / (k + 1)
        right_tail = w * nxt / (1 - nxt) if nxt < 1 else math.inf
        if right_tail < half:
            break
    left = []
    k, w = mode, w_mode
    left_tail = 0.0
    while k > 0:
        w *= k / lam
        k -= 1
        left.append(w)
        nxt = k / lam
        left_tail = w * nxt / (1 - nxt) if k > 0 else 0.0
        if left_tail < half:
            break
    weights = np.array(left[::-1] + right)
    # geometric bounds on the two dropped tails
    return PoissonWeights(k, weights, left_tail + right_tail)


# --- helpers -------------------------------------------------------------------------

def _rates(model: MarkovModel):
    R = model.rate_matrix()
    E = R.sum(axis=1)
    return R, E


def _uniform_dtmc(model: MarkovModel, absorbing_mask=None):
    R, E = _rates(model)
    if absorbing_mask is not None:
        R = R.copy()
        R[absorbing_mask] = 0.0
        E = R.sum(axis=1)
    q = float(E.max())
    if q <= 0:
        q = 1.0
    P = R / q
    P[np.diag_indices_from(P)] += 1.0 - E / q
    return P, q


def _backward(P, q, t, b):
    """``sum_k Poisson(q t; k) P^k b`` and the truncation error."""
    pw = poisson_weights(q * t)
    y = np.asarray(b, dtype=float).copy()
    out = np.zeros_like(y)
    for k in range(pw.right + 1):
        if k >= pw.left:
            out += pw.weights[k - pw.left] * y
        if k < pw.right:
            y = P @ y
    return out, pw.error


def _cumulative(P, q, t, r):
    """``(1/q) sum_k P(N > k) P^k r`` with ``N ~ Poisson(q t)``."""
    if t <= 0:
        return np.zeros(len(r)), 0.0
    pw = poisson_weights(q * t)
    cdf_tail = 1.0 - np.cumsum(pw.weights)      # P(N > k) for k >= left
    y = np.asarray(r, dtype=float).copy()
    out = np.zeros_like(y)
    k = 0
    while True:
        tail = 1.0 if k < pw.left else (cdf_tail[k - pw.left] if k <= pw.right else 0.0)
        if k > pw.right or tail <= 0:
            break
        out += tail * y
        y = P @ y
        k += 1
    return out / q, pw.error * t


def _embedded(model: MarkovModel) -> np.ndarray:
    """Jump-chain matrix; states without exits (absorbing) loop on themselves."""
    R, E = _rates(model)
    P = np.zeros_like(R)
    moving = E > 0
    P[moving] = R[moving] / E[moving, None]
    idle = np.flatnonzero(~moving)
    P[idle, idle] = 1.0
    return P


def _can_reach(model: MarkovModel, targets: np.ndarray, through: np.ndarray | None = None) -> np.ndarray:
    """States that reach ``targets`` along paths staying in ``through``."""
    n = model.n_states
    preds = [[] for _ in range(n)]
    for s, d, r in model.transitions:
        if r > 0:
            preds[d].append(s)
    seen = targets.copy()
    queue = deque(np.flatnonzero(targets))
    while queue:
        j = queue.popleft()
        for i in preds[j]:
            if not seen[i] and (through is None or through[i]):
                seen[i] = True
                queue.append(i)
    return seen


# --- state formulas -----------------------------------------------------------------

_CMP = {
    "=": np.equal, "!=": np.not_equal, "<": np.less,
    "<=": np.less_equal, ">": np.greater, ">=": np.greater_equal,
}


def sat(model: MarkovModel, f) -> np.ndarray:
    """Boolean mask of the states satisfying state formula ``f``."""
    n = model.n_states
    if isinstance(f, ps.BoolConst):
        return np.full(n, f.value)
    if isinstance(f, ps.Label):
        if f.name == "init" and "init" not in model.labels:
            m = np.zeros(n, dtype=bool)
            m[model.initial] = True
            return m
        if f.name not in model.labels:
            raise CheckError(f'unknown label "{f.name}"')
        return model.label_mask(f.name)
    if isinstance(f, ps.Compare):
        if isinstance(f.value, str):
            raise CheckError(f"unbound parameter {f.value!r}")
        return _CMP[f.op](model.values(f.var), f.value)
    if isinstance(f, ps.Not):
        return ~sat(model, f.arg)
    if isinstance(f, ps.And):
        return sat(model, f.left) & sat(model, f.right)
    if isinstance(f, ps.Or):
        return sat(model, f.left) | sat(model, f.right)
    raise CheckError(f"not a state formula: {f!r}")


def _time(t) -> float:
    if isinstance(t, str):
        raise CheckError(f"unbound time parameter {t!r}; supply it with a define")
    return float(t)


# --- path probabilities -------------------------------------------------------------

def _until_bounded(model, phi1, phi2, t):
    """Per-state P(phi1 U<=t phi2)."""
    absorb = phi2 | ~phi1
    P, q = _uniform_dtmc(model, absorb)
    return _backward(P, q, t, phi2.astype(float))


def _until_interval(model, phi1, phi2, a, b):
    """Per-state P(phi1 U[a,b] phi2)."""
    if a > b:
        return np.zeros(model.n_states), 0.0
    if a == 0:
        return _until_bounded(model, phi1, phi2, b)
    x, err1 = _until_bounded(model, phi1, phi2, b - a)
    # before time a the path must stay in phi1
    x = np.where(phi1, x, 0.0)
    P, q = _uniform_dtmc(model, ~phi1)
    v, err2 = _backward(P, q, a, x)
    return v, err1 + err2


def _until_unbounded(model, phi1, phi2):
    n = model.n_states
    yes = phi2.copy()
    maybe = _can_reach(model, phi2, phi1) & ~yes
    x = yes.astype(float)
    idx = np.flatnonzero(maybe)
    if len(idx):
        Pe = _embedded(model)
        A = np.eye(len(idx)) - Pe[np.ix_(idx, idx)]
        rhs = Pe[np.ix_(idx, np.flatnonzero(yes))].sum(axis=1) if yes.any() else np.zeros(len(idx))
        x[idx] = np.linalg.solve(A, rhs)
    return np.clip(x, 0.0, 1.0), 0.0


def path_values(model: MarkovModel, path) -> tuple[np.ndarray, float]:
    """Per-state probability of ``path`` and the numerical error bound."""
    true = np.ones(model.n_states, dtype=bool)
    if isinstance(path, ps.Next):
        return _embedded(model) @ sat(model, path.arg).astype(float), 0.0
    if isinstance(path, (ps.Eventually, ps.Until)):
        if isinstance(path, ps.Eventually):
            phi1, phi2 = true, sat(model, path.arg)
        else:
            phi1, phi2 = sat(model, path.left), sat(model, path.right)
        b = path.bound
        if b is None:
            return _until_unbounded(model, phi1, phi2)
        if b[0] == "<=":
            return _until_bounded(model, phi1, phi2, _time(b[1]))
        return _until_interval(model, phi1, phi2, _time(b[1]), _time(b[2]))
    if isinstance(path, ps.Globally):
        dual = ps.Eventually(ps.Not(path.arg), path.bound)
        v, err = path_values(model, dual)
        return 1.0 - v, err
    raise CheckError(f"not a path formula: {path!r}")


def check_prob_bounded(model: MarkovModel, path) -> float:
    if getattr(path, "bound", None) is None and not isinstance(path, ps.Next):
        return check_prob_unbounded(model, path)
    return float(path_values(model, path)[0][model.initial])


def check_prob_unbounded(model: MarkovModel, path) -> float:
    return float(path_values(model, path)[0][model.initial])


# --- rewards ------------------------------------------------------------------------

def _bsccs(model: MarkovModel) -> list[np.ndarray]:
    from scipy.sparse import csr_matrix
    from scipy.sparse.csgraph import connected_components

    n = model.n_states
    R, _ = _rates(model)
    adj = (R > 0).astype(np.int8)
    ncomp, comp = connected_components(csr_matrix(adj), directed=True, connection="strong")
    out = []
    for c in range(ncomp):
        members = comp == c
        leaves = adj[members][:, ~members].any()
        if not leaves:
            out.append(np.flatnonzero(members))
    return out


def _stationary(model: MarkovModel, members: np.ndarray) -> np.ndarray:
    if len(members) == 1:
        return np.ones(1)
    Q = model.generator()[np.ix_(members, members)]
    A = np.vstack([Q.T, np.ones(len(members))])
    rhs = np.zeros(len(members) + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    return np.clip(pi, 0.0, None) / np.clip(pi, 0.0, None).sum()


def reward_values(model: MarkovModel, structure: str, form) -> tuple[np.ndarray, float]:
    if structure not in model.rewards:
        raise CheckError(f'unknown reward structure "{structure}"')
    r = np.asarray(model.rewards[structure], dtype=float)
    if isinstance(form, ps.Cumulative):
        P, q = _uniform_dtmc(model)
        return _cumulative(P, q, _time(form.t), r)
    if isinstance(form, ps.Instantaneous):
        P, q = _uniform_dtmc(model)
        return _backward(P, q, _time(form.t), r)
    if isinstance(form, ps.SteadyState):
        n = model.n_states
        out = np.zeros(n)
        everywhere = np.ones(n, dtype=bool)
        for members in _bsccs(model):
            avg = float(_stationary(model, members) @ r[members])
            if avg == 0.0:
                continue
            target = np.zeros(n, dtype=bool)
            target[members] = True
            reach, _ = _until_unbounded(model, everywhere, target)
            out += reach * avg
        return out, 0.0
    raise CheckError(f"unknown reward form {form!r}")


def check_reward(model: MarkovModel, structure: str, form) -> float:
    return float(reward_values(model, structure, form)[0][model.initial])


# --- CTL ----------------------------------------------------------------------------

@dataclass
class Trace:
    states: list[int]
    timesteps: list[int | None]

    def __len__(self):
        return len(self.states)

    def describe(self, model: MarkovModel) -> list[dict]:
        return [dict(zip(model.variables, model.valuations[s].tolist()), state=s) for s in self.states]


def shortest_path(model: MarkovModel, start: int, goal: np.ndarray) -> list[int] | None:
    """BFS by transition count; ties go to the smallest successor index."""
    if goal[start]:
        return [start]
    succ = [[] for _ in range(model.n_states)]
    for s, d, r in model.transitions:
        if r > 0 and d != s:
            succ[s].append(d)
    parent = {start: None}
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in sorted(set(succ[i])):
            if j in parent:
                continue
            parent[j] = i
            if goal[j]:
                path = [j]
                while parent[path[-1]] is not None:
                    path.append(parent[path[-1]])
                return path[::-1]
            queue.append(j)
    return None


def _trace(model, path) -> Trace:
    ts = model.values("timestep") if "timestep" in model.variables else None
    return Trace(list(path), [int(ts[s]) if ts is not None else None for s in path])


def _reachable(model: MarkovModel, start: int) -> np.ndarray:
    seen = np.zeros(model.n_states, dtype=bool)
    seen[start] = True
    succ = [[] for _ in range(model.n_states)]
    for s, d, r in model.transitions:
        if r > 0:
            succ[s].append(d)
    queue = deque([start])
    while queue:
        i = queue.popleft()
        for j in succ[i]:
            if not seen[j]:
                seen[j] = True
                queue.append(j)
    return seen


def check_ctl(model: MarkovModel, node, start: int | None = None) -> tuple[bool, Trace | None]:
    """``A[G phi]`` gives a counterexample when false; ``E[F phi]`` a witness when true."""
    start = model.initial if start is None else start
    if isinstance(node, ps.CtlInvariant):
        path = shortest_path(model, start, ~sat(model, node.arg))
        return (True, None) if path is None else (False, _trace(model, path))
    if isinstance(node, ps.CtlReach):
        path = shortest_path(model, start, sat(model, node.arg))
        return (False, None) if path is None else (True, _trace(model, path))
    raise CheckError(f"not a CTL property: {node!r}")


def _ctl_values(model, node) -> np.ndarray:
    if isinstance(node, ps.CtlInvariant):
        bad = ~sat(model, node.arg)
        return ~_can_reach(model, bad)
    return _can_reach(model, sat(model, node.arg))


# --- filters ------------------------------------------------------------------------

@dataclass
class FilterResult:
    kind: str
    count: int
    sum: float
    avg: float | None                 # None when no state satisfies the inner property
    states: list[int]
    values: list[float]
    mean_over_states: float           # sum divided by the number of model states

    @property
    def value(self):
        if self.kind == "count":
            return self.count
        if self.kind == "sum":
            return self.sum
        if self.kind == "avg":
            return self.avg
        return self.states


def _compare(v, op, p):
    if op == ">=":
        return v >= p - BOUND_TOL
    if op == ">":
        return v > p + BOUND_TOL
    if op == "<=":
        return v <= p + BOUND_TOL
    if op == "<":
        return v < p - BOUND_TOL
    raise CheckError(f"unknown bound operator {op!r}")


def state_values(model: MarkovModel, node) -> tuple[np.ndarray, float]:
    """Value of a (non-filter) property from every state as the start state."""
    if isinstance(node, ps.ProbQuery):
        v, err = path_values(model, node.path)
        v = np.clip(v, 0.0, 1.0)
        if node.op == "=?":
            return v, err
        return _compare(v, node.op, node.p), err
    if isinstance(node, ps.RewardQuery):
        return reward_values(model, node.structure, node.form)
    if isinstance(node, (ps.CtlInvariant, ps.CtlReach)):
        return _ctl_values(model, node), 0.0
    if isinstance(node, ps.STATE_NODES):
        return sat(model, node), 0.0
    raise CheckError(f"property {node!r} cannot be evaluated per state")


def check_filter(model: MarkovModel, kind: str, inner) -> FilterResult:
    if kind not in ps.FILTER_KINDS:
        raise CheckError(f"unknown filter kind {kind!r}")
    if isinstance(inner, ps.Filter):
        raise CheckError("nested filters are not state-evaluable")
    v, _ = state_values(model, inner)
    if v.dtype == bool:
        satisfying = np.flatnonzero(v)
        vals = np.ones(len(satisfying))
    else:
        satisfying = np.flatnonzero(v > 0)
        vals = v[satisfying]
    total = float(vals.sum())
    count = len(satisfying)
    return FilterResult(
        kind=kind, count=count, sum=total, avg=(total / count if count else None),
        states=satisfying.tolist(), values=vals.tolist(),
        mean_over_states=total / model.n_states,
    )


# --- top level ----------------------------------------------------------------------

@dataclass
class CheckResult:
    kind: str                          # probability | reward | boolean | filter | ctl
    value: object
    numeric: float | None = None
    trace: Trace | None = None
    filter: FilterResult | None = None
    error_bound: float = 0.0
    warnings: tuple[str, ...] = ()

    def as_text(self) -> str:
        if self.kind == "filter":
            f = self.filter
            if f.kind == "print":
                return " ".join(map(str, f.states))
            return "undefined" if f.value is None else repr(f.value)
        if isinstance(self.value, bool):
            return "true" if self.value else "false"
        return repr(float(self.value))


def check(bound) -> CheckResult:
    """Evaluate a :class:`~swarmvv.propspec.BoundProperty` at the model's initial state."""
    model, node = bound.model, bound.prop
    warn = tuple(bound.warnings)
    if isinstance(node, ps.NamedProperty):
        node = node.prop
    if isinstance(node, ps.Filter):
        fr = check_filter(model, node.kind, node.inner)
        return CheckResult("filter", fr.value, None, filter=fr, warnings=warn)
    if isinstance(node, (ps.CtlInvariant, ps.CtlReach)):
        ok, trace = check_ctl(model, node)
        return CheckResult("ctl", ok, None, trace=trace, warnings=warn)
    if isinstance(node, ps.ProbQuery):
        v, err = path_values(model, node.path)
        p = float(np.clip(v[model.initial], 0.0, 1.0))
        if node.op == "=?":
            return CheckResult("probability", p, p, error_bound=err, warnings=warn)
        return CheckResult("boolean", bool(_compare(p, node.op, node.p)), p, error_bound=err, warnings=warn)
    if isinstance(node, ps.RewardQuery):
        v, err = reward_values(model, node.structure, node.form)
        r = float(v[model.initial])
        return CheckResult("reward", r, r, error_bound=err, warnings=warn)
    if isinstance(node, ps.STATE_NODES):
        b = bool(sat(model, node)[model.initial])
        return CheckResult("boolean", b, None, warnings=warn)
    raise CheckError(f"cannot check {node!r}")


def check_text(model: MarkovModel, text: str, defines: dict | None = None) -> CheckResult:
    return check(ps.bind(ps.parse(text), model, defines))


# --- experiments --------------------------------------------------------------------

@dataclass(frozen=True)
class SweepSpec:
    variable: str
    start: float
    step: float
    stop: float

    def __post_init__(self):
        if not self.step > 0:
            raise ValueError("sweep step must be positive")
        if self.start > self.stop:
            raise ValueError("sweep start exceeds stop")

    @classmethod
    def parse(cls, text: str) -> "SweepSpec":
        """``NAME=start:step:stop`` (or ``NAME=value`` for a single point)."""
        name, _, rng = text.partition("=")
        parts = rng.split(":")
        try:
            if len(parts) == 1:
                v = float(parts[0])
                return cls(name.strip(), v, 1.0, v)
            start, step, stop = (float(x) for x in parts)
        except ValueError:
            raise ValueError(f"malformed sweep {text!r}; expected NAME=start:step:stop") from None
        return cls(name.strip(), start, step, stop)

    def points(self) -> np.ndarray:
        n = int(math.floor((self.stop - self.start) / self.step + 1e-9)) + 1
        return self.start + self.step * np.arange(n)


@dataclass
class ExperimentResult:
    variable: str
    points: np.ndarray
    values: np.ndarray
    results: list[CheckResult] = field(default_factory=list)

    def write_csv(self, path) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow([self.variable, "value"])
            for x, v in zip(self.points, self.values):
                w.writerow([f"{x:g}", repr(float(v))])


def _numeric(res: CheckResult) -> float:
    if res.kind == "filter":
        v = res.filter.value
        return float("nan") if v is None or isinstance(v, list) else float(v)
    return float(res.value)


def run_experiment(model: MarkovModel, prop, sweep: SweepSpec, defines: dict | None = None,
                   csv_path=None, plot_path=None, label: str | None = None) -> ExperimentResult:
    if isinstance(prop, str):
        prop = ps.parse(prop)
    if isinstance(prop, ps.NamedProperty):
        prop = prop.prop
    if sweep.variable not in ps.parameters(prop):
        raise CheckError(f"sweep variable {sweep.variable!r} does not occur in the property")
    pts = sweep.points()
    results = []
    for x in pts:
        d = dict(defines or {})
        d[sweep.variable] = float(x)
        results.append(check(ps.bind(prop, model, d)))
    out = ExperimentResult(sweep.variable, pts, np.array([_numeric(r) for r in results]), results)
    if csv_path is not None:
        out.write_csv(csv_path)
    if plot_path is not None:
        plot_series([(label or ps.unparse(prop), out)], plot_path)
    return out


def plot_series(curves, path, ylabel: str = "value") -> None:
    """Render ``[(label, ExperimentResult), ...]`` as one SVG line chart."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    # fixed salt keeps the SVG element ids, and so the file bytes, reproducible
    plt.rcParams["svg.hashsalt"] = "swarmvv"
    fig, ax = plt.subplots(figsize=(6, 4))
    for lab, res in curves:
        ax.plot(res.points, res.values, marker="o", markersize=3, label=lab)
    ax.set_xlabel(curves[0][1].variable if curves else "")
    ax.set_ylabel(ylabel)
    ax.grid(alpha=0.3)
    ax.legend(fontsize=7)
    fig.tight_layout()
    fig.savefig(Path(path), format="svg", metadata={"Date": None})
    plt.close(fig)
