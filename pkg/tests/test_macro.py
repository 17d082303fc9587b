import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import agent_mc
from swarmvv.lfsim import BehaviourState as B
from swarmvv.macro import (
    MacroParams, PopulationVector, UndefinedParameterError, estimate_from_states, estimate_params,
    estimate_rates,
    evolve, step, trajectory_table, write_trajectory,
)

probs = st.floats(0.0, 1.0)


def random_pop(rng, Ts, scale=5.0):
    pop = PopulationVector.zeros(Ts)
    for a in pop.arrays():
        a[...] = rng.random(a.shape) * scale * (rng.random(a.shape) < 0.5)
    return pop


def test_all_searching_advances_sojourn():
    p = MacroParams(P_s=0.0, P_p=0.0, P_a=0.0, T_s=4, N=5)
    pop = PopulationVector.all_searching(p)
    nxt = step(pop, p)
    expect = PopulationVector.zeros(4)
    expect.S[1] = 5
    assert nxt.allclose(expect)


@pytest.mark.parametrize("m", [0, 1, 2])
def test_full_avoidance(m):
    p = MacroParams(P_s=0.3, P_p=0.3, P_a=1.0, T_s=4, N=5)
    pop = PopulationVector.zeros(4)
    pop.S[m] = 5
    nxt = step(pop, p)
    assert nxt.AS[m, 0] == pytest.approx(5)
    assert nxt.total() == pytest.approx(5)
    assert nxt.AS.sum() == pytest.approx(5)


def test_deterministic_cycle():
    p = MacroParams(P_s=1.0, P_p=1.0, P_a=0.0, T_s=2, N=5)
    traj = evolve(PopulationVector.all_searching(p), p, 3)
    agg = trajectory_table(traj)
    assert agg[0].tolist() == [5, 0, 0, 0, 0, 0]
    assert agg[1].tolist() == [0, 5, 0, 0, 0, 0]
    assert agg[2].tolist() == [0, 0, 5, 0, 0, 0]
    # dropoff lasts the whole horizon and then returns to SEARCHING
    assert agg[3].tolist() == [0, 0, 5, 0, 0, 0]
    assert trajectory_table(evolve(traj[3], p, 1))[1].tolist() == [5, 0, 0, 0, 0, 0]


def test_zero_steps_is_identity():
    p = MacroParams(P_s=0.2, P_p=0.5, P_a=0.1, T_s=3, N=5)
    pop = PopulationVector.all_searching(p)
    traj = evolve(pop, p, 0)
    assert len(traj) == 1 and traj[0] is pop


@settings(max_examples=150, deadline=None)
@given(ps_=probs, pp=probs, pa=probs, Ts=st.integers(1, 7), seed=st.integers(0, 2**32 - 1))
def test_conservation_and_nonnegativity(ps_, pp, pa, Ts, seed):
    rng = np.random.default_rng(seed)
    p = MacroParams(P_s=ps_, P_p=pp, P_a=pa, T_s=Ts, N=5)
    pop = random_pop(rng, Ts)
    total = pop.total()
    for _ in range(30):
        pop = step(pop, p)
        assert abs(pop.total() - total) <= 1e-9 * max(1.0, total)
        assert all((a >= -1e-15).all() for a in pop.arrays())


@settings(max_examples=100, deadline=None)
@given(ps_=probs, pp=probs, pa=probs, Ts=st.integers(1, 6), seed=st.integers(0, 2**32 - 1),
       a=st.floats(-3, 3), b=st.floats(-3, 3))
def test_linearity(ps_, pp, pa, Ts, seed, a, b):
    rng = np.random.default_rng(seed)
    p = MacroParams(P_s=ps_, P_p=pp, P_a=pa, T_s=Ts, N=5)
    x, y = random_pop(rng, Ts), random_pop(rng, Ts)
    lhs = step(a * x + b * y, p, check=False)
    rhs = a * step(x, p) + b * step(y, p)
    assert lhs.allclose(rhs, atol=1e-10)


def test_batched_step_matches_single():
    rng = np.random.default_rng(4)
    Ts, n = 5, 7
    params = [MacroParams(*rng.random(3), T_s=Ts, N=5) for _ in range(n)]
    pops = [random_pop(rng, Ts) for _ in range(n)]
    batch = PopulationVector(*(np.stack(arrs) for arrs in zip(*(p.arrays() for p in pops))))
    out = step(batch, Ps=np.array([p.P_s for p in params]), Pp=np.array([p.P_p for p in params]),
               Pa=np.array([p.P_a for p in params]))
    for i in range(n):
        single = step(pops[i], params[i])
        assert PopulationVector(*(a[i] for a in out.arrays())).allclose(single)


def test_mean_field_matches_agent_simulation_small():
    rng = np.random.default_rng(77)
    p = MacroParams(P_s=0.3, P_p=0.6, P_a=0.2, T_s=3, N=1)
    steps, n = 15, 20000
    occ = agent_mc(p, steps, n, rng)
    mf = trajectory_table(evolve(PopulationVector.all_searching(p), p, steps))
    se = np.sqrt(mf * (1 - mf) / n)
    assert (np.abs(occ - mf) <= 4 * se + 1e-12).all()


def test_estimator_alternating_avoidance():
    seq = np.array([[B.SEARCHING if t % 2 == 0 else B.AVOIDANCE_S] for t in range(100)])
    rates = estimate_rates([np.column_stack([seq[:, 0]] * 2)])
    assert rates["P_a"] == pytest.approx(1.0)
    assert rates["P_s"] is None and rates["P_p"] is None


def test_estimator_without_avoidance_and_recovery():
    rng = np.random.default_rng(8)
    seq = np.zeros((5000, 4), dtype=int)
    for i in range(4):
        s = 0
        for t in range(5000):
            seq[t, i] = s
            if s == 0 and rng.random() < 0.1:
                s = 1
            elif s == 1 and rng.random() < 0.25:
                s = 2
            elif s == 2 and rng.random() < 0.05:
                s = 0
    p = estimate_from_states([seq])
    assert p.P_a == 0.0
    assert p.P_s == pytest.approx(0.1, abs=0.01)
    assert p.P_p == pytest.approx(0.25, abs=0.03)
    assert p.N == 4


def test_estimator_undefined_parameters():
    seq = np.zeros((50, 2), dtype=int)
    with pytest.raises(UndefinedParameterError) as e:
        estimate_from_states([seq])
    assert "P_p" in e.value.names
    with pytest.raises(ValueError):
        estimate_from_states([])


def test_estimate_from_campaign_and_files(tmp_path):
    from swarmvv.lfsim import run_campaign
    from swarmvv.scenario import smoke_scenario

    run_campaign(smoke_scenario(), 2, 1, tmp_path / "c")
    p = estimate_params(tmp_path / "c")
    assert 0 < p.P_a < 1 and p.N == 5 and 1 <= p.T_s <= 50
    p.save(tmp_path / "p.json")
    assert MacroParams.load(tmp_path / "p.json") == p
    traj = evolve(PopulationVector.all_searching(p), p, 10)
    write_trajectory(traj, tmp_path / "t.csv")
    lines = (tmp_path / "t.csv").read_text().splitlines()
    assert lines[0] == "k,searching,pickup,dropoff,avoid_s,avoid_p,avoid_d,total"
    assert len(lines) == 12
    assert all(float(ln.split(",")[-1]) == pytest.approx(5) for ln in lines[1:])


def test_params_validation():
    with pytest.raises(ValueError):
        MacroParams(P_s=1.2, P_p=0, P_a=0, T_s=1, N=1)
    with pytest.raises(ValueError):
        MacroParams(P_s=0, P_p=0, P_a=0, T_s=0, N=1)
