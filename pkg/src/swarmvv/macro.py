"""Macroscopic population model of the six-state swarm controller.

Robots are counted per (state, sojourn) compartment. ``S[k]``, ``P[k]`` and
``D[k]`` hold the expected number of robots that have been searching,
picking up or dropping off for ``k`` steps; ``AS[m, k]`` (and ``AP``, ``AD``)
hold robots that have been avoiding for ``k`` steps after ``m`` steps of the
paired main state. One call to :func:`step` advances every compartment by
one timestep; the update is linear and conserves the swarm size.

Boundary handling at the sojourn horizon ``Ts``:

* dropoff mass at ``D[Ts-1]`` returns to ``S[0]`` in full;
* searching/pickup mass that neither advances nor avoids saturates at index
  ``Ts-1``;
* avoidance mass re-enters its main chain at ``min(m+1, Ts-1)`` after ``Ts``
  steps, and mass whose ``m`` index would pass ``Ts-1`` re-enters at once.
"""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

CONSERVATION_TOL = 1e-9
STATE_NAMES = ("searching", "pickup", "dropoff", "avoid_s", "avoid_p", "avoid_d")


class ConservationError(RuntimeError):
    pass


class UndefinedParameterError(ValueError):
    def __init__(self, names, detail=""):
        self.names = list(names)
        super().__init__(f"undefined parameter(s) {', '.join(self.names)}{': ' + detail if detail else ''}")


@dataclass(frozen=True)
class MacroParams:
    P_s: float
    P_p: float
    P_a: float
    T_s: int
    N: int

    def __post_init__(self):
        for name in ("P_s", "P_p", "P_a"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name}={v} is not a probability")
        if self.T_s < 1 or self.N < 1:
            raise ValueError("T_s and N must be at least 1")

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(asdict(self), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path) -> "MacroParams":
        d = json.loads(Path(path).read_text(encoding="utf-8"))
        return cls(P_s=float(d["P_s"]), P_p=float(d["P_p"]), P_a=float(d["P_a"]),
                   T_s=int(d["T_s"]), N=int(d["N"]))


@dataclass
class PopulationVector:
    S: np.ndarray
    P: np.ndarray
    D: np.ndarray
    AS: np.ndarray
    AP: np.ndarray
    AD: np.ndarray

    @property
    def T_s(self) -> int:
        return self.S.shape[-1]

    @classmethod
    def zeros(cls, T_s: int, batch: tuple = ()) -> "PopulationVector":
        z1 = lambda: np.zeros(batch + (T_s,))
        z2 = lambda: np.zeros(batch + (T_s, T_s))
        return cls(z1(), z1(), z1(), z2(), z2(), z2())

    @classmethod
    def all_searching(cls, params: MacroParams) -> "PopulationVector":
        pop = cls.zeros(params.T_s)
        pop.S[0] = params.N
        return pop

    def arrays(self):
        return self.S, self.P, self.D, self.AS, self.AP, self.AD

    def total(self):
        return (self.S.sum(-1) + self.P.sum(-1) + self.D.sum(-1)
                + self.AS.sum((-2, -1)) + self.AP.sum((-2, -1)) + self.AD.sum((-2, -1)))

    def aggregate(self) -> np.ndarray:
        """Expected count per behavioural state, shape ``(..., 6)``."""
        return np.stack([
            self.S.sum(-1), self.P.sum(-1), self.D.sum(-1),
            self.AS.sum((-2, -1)), self.AP.sum((-2, -1)), self.AD.sum((-2, -1)),
        ], axis=-1)

    def __add__(self, other):
        return PopulationVector(*(a + b for a, b in zip(self.arrays(), other.arrays())))

    def __rmul__(self, k):
        return PopulationVector(*(k * a for a in self.arrays()))

    def allclose(self, other, atol=1e-12) -> bool:
        return all(np.allclose(a, b, atol=atol) for a, b in zip(self.arrays(), other.arrays()))


def _avoid_shift(A):
    """Advance avoidance compartments one step.

    Returns the shifted array plus the mass re-entering each main-chain index.
    """
    Ts = A.shape[-1]
    new = np.zeros_like(A)
    reentry = np.zeros(A.shape[:-1])
    # finished avoidance: A[m, Ts-1] -> main[min(m+1, Ts-1)]
    done = A[..., :, Ts - 1]
    reentry[..., 1:] += done[..., :-1]
    reentry[..., Ts - 1] += done[..., Ts - 1]
    if Ts > 1:
        new[..., 1:, 1:] = A[..., :-1, :-1]
        # m index would overflow: straight back to the saturated main index
        reentry[..., Ts - 1] += A[..., Ts - 1, :-1].sum(-1)
    return new, reentry


def _step_arrays(S, P, D, AS, AP, AD, Ps, Pp, Pa):
    Ts = S.shape[-1]
    Ps, Pp, Pa = (np.asarray(x, dtype=float)[..., None] for x in (Ps, Pp, Pa))
    stay = 1.0 - Pa

    AS_new, s_back = _avoid_shift(AS)
    AP_new, p_back = _avoid_shift(AP)
    AD_new, d_back = _avoid_shift(AD)
    AS_new[..., :, 0] = Pa * S
    AP_new[..., :, 0] = Pa * P
    AD_new[..., : Ts - 1, 0] = Pa * D[..., : Ts - 1]

    S_keep = stay * (1.0 - Ps) * S
    P_keep = stay * (1.0 - Pp) * P

    S_new = np.zeros_like(S)
    P_new = np.zeros_like(P)
    D_new = np.zeros_like(D)
    S_new[..., 1:] = S_keep[..., :-1]
    S_new[..., Ts - 1] += S_keep[..., Ts - 1]
    S_new[..., 0] += D[..., Ts - 1]
    S_new += s_back

    P_new[..., 1:] = P_keep[..., :-1]
    P_new[..., Ts - 1] += P_keep[..., Ts - 1]
    P_new[..., 0] += (stay * Ps * S).sum(-1)
    P_new += p_back

    if Ts > 1:
        D_new[..., 1:] = stay * D[..., :-1]
    D_new[..., 0] += (stay * Pp * P).sum(-1)
    D_new += d_back
    return S_new, P_new, D_new, AS_new, AP_new, AD_new


def step(pop: PopulationVector, params: MacroParams | None = None, *, Ps=None, Pp=None, Pa=None,
         check: bool = True) -> PopulationVector:
    """One synchronous update of every compartment.

    Probabilities come from ``params`` or, for batched populations, from the
    ``Ps``/``Pp``/``Pa`` keywords (arrays broadcast over the batch axes).
    """
    if params is not None:
        if params.T_s != pop.T_s:
            raise ValueError(f"population has T_s={pop.T_s}, params say {params.T_s}")
        Ps, Pp, Pa = params.P_s, params.P_p, params.P_a
    new = PopulationVector(*_step_arrays(*pop.arrays(), Ps, Pp, Pa))
    if check:
        before, after = pop.total(), new.total()
        scale = np.maximum(1.0, np.abs(before))
        if np.any(np.abs(after - before) > CONSERVATION_TOL * scale):
            raise ConservationError(f"population total drifted from {before} to {after}")
    return new


def evolve(pop0: PopulationVector, params: MacroParams, steps: int) -> list[PopulationVector]:
    traj = [pop0]
    for _ in range(steps):
        traj.append(step(traj[-1], params))
    return traj


def trajectory_table(traj: list[PopulationVector]) -> np.ndarray:
    """Aggregate expected counts per state, shape ``(len(traj), 6)``."""
    return np.array([p.aggregate() for p in traj])


def write_trajectory(traj: list[PopulationVector], path) -> None:
    table = trajectory_table(traj)
    lines = ["k," + ",".join(STATE_NAMES) + ",total"]
    for k, row in enumerate(table):
        lines.append(f"{k}," + ",".join(f"{v:.10g}" for v in row) + f",{row.sum():.10g}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def occupancy_error(traj: list[PopulationVector], observed_fractions: np.ndarray) -> float:
    """Mean absolute difference between model and observed state fractions."""
    model = trajectory_table(traj)
    model = model / model.sum(axis=1, keepdims=True)
    n = min(len(model), len(observed_fractions))
    return float(np.mean(np.abs(model[:n] - np.asarray(observed_fractions)[:n])))


# --- parameter estimation -------------------------------------------------------

def _max_run(seq: np.ndarray) -> int:
    """Longest run of equal values down axis 0, over all columns."""
    best = 0
    for col in seq.T:
        change = np.flatnonzero(np.diff(col) != 0)
        bounds = np.concatenate(([-1], change, [len(col) - 1]))
        best = max(best, int(np.diff(bounds).max()))
    return best


def _transition_pairs(state_seqs, stride):
    pairs = np.zeros((6, 6), dtype=np.int64)
    longest = 0
    for seq in state_seqs:
        seq = np.asarray(seq)[::stride]
        if seq.shape[0] < 2:
            continue
        a, b = seq[:-1].ravel(), seq[1:].ravel()
        np.add.at(pairs, (a, b), 1)
        longest = max(longest, _max_run(seq))
    return pairs, longest


def estimate_rates(state_seqs: list[np.ndarray], stride: int = 1) -> dict[str, float | None]:
    """Frequency estimates of ``P_s``, ``P_p``, ``P_a``; ``None`` where the denominator is zero."""
    if not state_seqs:
        raise ValueError("empty campaign")
    pairs, _ = _transition_pairs(state_seqs, stride)
    main_steps = pairs[:3].sum()
    to_avoid = pairs[0, 3] + pairs[1, 4] + pairs[2, 5]
    s_den = pairs[0, 1] + pairs[0, 0]
    p_den = pairs[1, 2] + pairs[1, 1]
    ratio = lambda num, den: float(num / den) if den else None
    return {"P_s": ratio(pairs[0, 1], s_den), "P_p": ratio(pairs[1, 2], p_den),
            "P_a": ratio(to_avoid, main_steps)}


def estimate_from_states(state_seqs: list[np.ndarray], n_robots: int | None = None,
                         max_sojourn: int = 50, stride: int = 1) -> MacroParams:
    """Frequency (maximum-likelihood) estimates from per-robot state sequences.

    Each element of ``state_seqs`` is a ``(T, N)`` array of state ids. With
    ``stride > 1`` the chain is observed every ``stride`` steps. Raises
    :class:`UndefinedParameterError` when a governing state never occurs.
    """
    rates = estimate_rates(state_seqs, stride)
    undefined = [name for name in ("P_a", "P_s", "P_p") if rates[name] is None]
    if undefined:
        raise UndefinedParameterError(undefined, "the governing state never occurs in the data")
    _, longest = _transition_pairs(state_seqs, stride)
    n = n_robots if n_robots is not None else int(np.asarray(state_seqs[0]).shape[1])
    params = MacroParams(
        P_s=rates["P_s"], P_p=rates["P_p"], P_a=rates["P_a"],
        T_s=int(max(1, min(longest, max_sojourn))), N=n,
    )
    log.info("estimated %s", params)
    return params


def estimate_params(campaign, n_robots: int | None = None, max_sojourn: int = 50,
                    stride: int = 1) -> MacroParams:
    """Estimate macro parameters from every ``states.csv`` under ``campaign``."""
    from .pipeline import read_states, trial_dirs

    dirs = trial_dirs(campaign)
    if not dirs:
        raise ValueError(f"no trials found under {campaign}")
    return estimate_from_states([read_states(d) for d in dirs], n_robots, max_sojourn, stride)
