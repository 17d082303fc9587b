import filecmp

import numpy as np
import pytest

from swarmvv.lfsim import (
    CARRIED, DATASET_FILES, DEPOSITED, LEGAL_TRANSITIONS, ON_FLOOR, BehaviourState,
    run_campaign, run_trial,
)
from swarmvv.scenario import build_zone_map, default_scenario, smoke_scenario


@pytest.fixture(scope="module")
def trial():
    return run_trial(default_scenario(), seed=3, check=True)


def test_trial_shape_and_counts(trial):
    assert trial.robot_states.shape == (10000, 5)
    assert trial.positions.shape == (10000, 5, 2)
    assert (trial.state_counts.sum(axis=1) == 5).all()


def test_determinism():
    cfg = smoke_scenario()
    a, b = run_trial(cfg, seed=21), run_trial(cfg, seed=21)
    assert np.array_equal(a.positions, b.positions)
    assert np.array_equal(a.robot_states, b.robot_states)
    c = run_trial(cfg, seed=22)
    assert not np.array_equal(a.positions, c.positions)


def test_speed_bound_and_containment(trial):
    cfg = default_scenario()
    step = np.linalg.norm(np.diff(trial.positions, axis=0), axis=-1)
    assert step.max() <= cfg.max_speed_m_s * cfg.dt + 1e-9
    assert trial.speeds.max() <= cfg.max_speed_m_s + 1e-6
    lim = cfg.half_width_m - cfg.robot_radius_m + 1e-9
    assert np.abs(trial.positions).max() <= lim


def test_state_machine_legality(trial):
    s = trial.robot_states
    pairs = set(zip(s[:-1].ravel().tolist(), s[1:].ravel().tolist()))
    assert pairs <= LEGAL_TRANSITIONS


def test_carrier_conservation(trial):
    st = trial.carrier_status
    assert st.shape == (10000, 3)
    on_floor = (st == ON_FLOOR).sum(axis=1)
    carried = (st == CARRIED).sum(axis=1)
    deposited = (st == DEPOSITED).sum(axis=1)
    assert (on_floor + carried + deposited == 3).all()
    # deposits are permanent
    assert (np.diff(deposited) >= 0).all()
    # a carried carrier has exactly one robot carrying it
    n_carrying = (trial.carrying >= 0).sum(axis=1)
    assert np.array_equal(n_carrying, carried)


def test_carrying_iff_dropoff(trial):
    s = trial.robot_states
    carrying = trial.carrying >= 0
    in_drop = (s == BehaviourState.DROPOFF) | (s == BehaviourState.AVOIDANCE_D)
    assert np.array_equal(carrying, in_drop)


def test_robots_start_in_deposit_zone(trial):
    z = build_zone_map(default_scenario())
    x, y = trial.positions[0, :, 0], trial.positions[0, :, 1]
    assert ((x >= z.deposit.x0) & (x <= z.deposit.x1) & (y >= z.deposit.y0) & (y <= z.deposit.y1)).all()
    assert trial.in_deposit[0].all()


def test_no_carriers_means_no_pickup():
    cfg = smoke_scenario().replace(n_carriers=0)
    out = run_trial(cfg, seed=5, check=True)
    assert set(np.unique(out.robot_states)) <= {BehaviourState.SEARCHING, BehaviourState.AVOIDANCE_S}
    assert out.carrier_status.shape == (1000, 0)


def test_single_robot_only_avoids_walls():
    cfg = default_scenario().replace(n_robots=1, n_carriers=0, timesteps_per_trial=3000, trial_duration_s=60)
    out = run_trial(cfg, seed=2, check=True)
    s = out.robot_states[:, 0]
    assert s[0] == BehaviourState.SEARCHING
    assert set(np.unique(s)) == {BehaviourState.SEARCHING, BehaviourState.AVOIDANCE_S}
    # every avoidance episode starts next to a wall
    starts = np.flatnonzero((s[1:] == 3) & (s[:-1] == 0)) + 1
    assert len(starts) > 0
    wall_gap = cfg.half_width_m - np.abs(out.positions[starts, 0]).max(axis=-1)
    wall_gap = np.minimum(wall_gap, cfg.half_height_m - np.abs(out.positions[starts, 0, 1]))
    assert (wall_gap <= cfg.robot_radius_m + cfg.avoidance_margin_cm / 100 + cfg.max_speed_m_s * cfg.dt).all()


def test_campaign_files_and_byte_identical_rerun(tmp_path):
    cfg = smoke_scenario()
    s1 = run_campaign(cfg, 2, 40, tmp_path / "a")
    s2 = run_campaign(cfg, 2, 40, tmp_path / "b")
    assert s1.checksums == s2.checksums
    for trial in ("trial_0000", "trial_0001"):
        for name in DATASET_FILES:
            assert filecmp.cmp(tmp_path / "a" / trial / name, tmp_path / "b" / trial / name, shallow=False)
    head = (tmp_path / "a" / "trial_0000" / "counts.csv").read_bytes()
    assert head.startswith(b"t,searching,pickup,dropoff,avoid_s,avoid_p,avoid_d\n")
    assert b"\r\n" not in head
    with pytest.raises(FileExistsError):
        run_campaign(cfg, 1, 40, tmp_path / "a")
    run_campaign(cfg, 1, 40, tmp_path / "a", force=True)
    assert not (tmp_path / "a" / "trial_0001").exists()


def test_parallel_campaign_matches_serial(tmp_path):
    cfg = smoke_scenario()
    serial = run_campaign(cfg, 2, 9, tmp_path / "s")
    parallel = run_campaign(cfg, 2, 9, tmp_path / "p", jobs=2)
    assert serial.checksums == parallel.checksums


def test_avoidance_outweighs_main_states_on_default_config():
    cfg = default_scenario()
    fr = np.zeros(6)
    for seed in range(3):
        out = run_trial(cfg, seed=100 + seed)
        fr += out.state_counts.sum(axis=0)
    fr /= fr.sum()
    assert fr[3:].sum() > fr[:3].sum()


@pytest.mark.parametrize("bias", [True, False])
def test_dropoff_bias_flag(bias):
    cfg = default_scenario().replace(dropoff_bias=bias)
    out = run_trial(cfg, seed=11, check=True)
    s = out.robot_states
    assert set(zip(s[:-1].ravel().tolist(), s[1:].ravel().tolist())) <= LEGAL_TRANSITIONS
    vx = out.velocities[..., 0][s == BehaviourState.DROPOFF]
    if bias:
        # transport heads toward the deposit wall on the +x side
        assert len(vx) > 0 and vx.mean() > 0
