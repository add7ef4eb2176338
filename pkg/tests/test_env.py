"""Coupling stage and MDP contracts."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from numpy.testing import assert_allclose

from qalign.env import (
    AlignmentEnv,
    CouplingModel,
    CouplingStage,
    MdpConfig,
    MeasurementRecord,
    RewardConfig,
    TrajectoryRow,
    sample_start_pose,
    trajectory_to_csv,
    true_rate,
)

MODEL = CouplingModel()


# =====================================================================
# Static rate model
# =====================================================================


def test_rate_peak_closed_form():
    assert true_rate(MODEL, 0.0, 0.0, 1580.0) == 20050.0


def test_rate_half_at_one_rayleigh_range():
    # 1/(1 + u^2) with u = 1 halves the signal exactly on the axis.
    assert true_rate(MODEL, 0.0, 0.0, 1980.0) == 50.0 + 10000.0
    assert true_rate(MODEL, 0.0, 0.0, 1180.0) == 50.0 + 10000.0


def test_rate_lateral_waist_closed_form():
    assert_allclose(
        true_rate(MODEL, 50.0, 0.0, 1580.0), 50.0 + 20000.0 * math.exp(-1.0)
    )
    # Only r = sqrt(x^2 + y^2) matters.
    assert_allclose(
        true_rate(MODEL, 30.0, 40.0, 1580.0), true_rate(MODEL, 50.0, 0.0, 1580.0)
    )


def test_rate_global_max_unique():
    rng = np.random.default_rng(1)
    pts = rng.uniform([-300, -300, 380], [300, 300, 2780], size=(5000, 3))
    rates = true_rate(MODEL, pts[:, 0], pts[:, 1], pts[:, 2])
    assert np.all(rates < 20050.0)
    # far poses underflow to exactly the background floor
    assert np.all(rates >= 50.0)


def test_defocus_ridge():
    """At fixed lateral offset r > w the rate peaks where the widened
    effective waist balances the axial loss: 1 + u^2 = (r/w)^2.  The
    ridge is symmetric in defocus, so restrict to z above focus."""
    r = 100.0
    z = np.linspace(1580.0, 2780.0, 10001)
    rates = true_rate(MODEL, r, 0.0, z)
    u_star = math.sqrt((r / 50.0) ** 2 - 1.0)
    z_star = 1580.0 + u_star * 400.0
    assert abs(z[np.argmax(rates)] - z_star) < 0.25
    expected_peak = 50.0 + 20000.0 * (50.0 / r) ** 2 * math.exp(-1.0)
    assert_allclose(rates.max(), expected_peak, rtol=1e-6)


def test_success_basin_boundary():
    """The 90%-of-peak basin reaches just past 16 um laterally."""
    threshold = 0.9 * 20050.0
    assert true_rate(MODEL, 16.0, 0.0, 1580.0) >= threshold
    assert true_rate(MODEL, 17.0, 0.0, 1580.0) < threshold


def test_model_validation():
    with pytest.raises(ValueError):
        CouplingModel(lateral_waist_um=0.0)
    with pytest.raises(ValueError):
        CouplingModel(max_rate_cps=-1.0)


# =====================================================================
# Stage measurements
# =====================================================================


def test_measurement_record():
    rec = MeasurementRecord.from_counts(500, 10.0)
    assert rec.rate_cps == 50.0
    with pytest.raises(ValueError):
        MeasurementRecord.from_counts(5, 0.0)


def test_poisson_statistics():
    stage = CouplingStage(MODEL, seed=42)
    stage.move_to(x_um=60.0, y_um=0.0, z_um=1580.0)
    lam = stage.true_rate_here()
    n = 3000
    counts = np.array([stage.measure(1.0).counts for _ in range(n)])
    sem = math.sqrt(lam / n)
    assert abs(counts.mean() - lam) < 4 * sem
    # Poisson: variance equals the mean.
    assert 0.9 < counts.var() / lam < 1.1
    assert stage.clock_s == n * 1.0


def test_noise_free_mode():
    stage = CouplingStage(MODEL, seed=0, noise=False)
    rec = stage.measure(31.0)
    assert rec.counts == 20050.0 * 31.0
    assert rec.rate_cps == 20050.0


def test_stage_polar_round_trip():
    stage = CouplingStage(MODEL, seed=0)
    stage.set_polar(100.0, 1.0, 1200.0)
    assert_allclose(stage.r_um, 100.0)
    assert_allclose(stage.theta_rad, 1.0)
    assert stage.z_um == 1200.0
    with pytest.raises(ValueError):
        stage.set_polar(-5.0, 0.0, 1000.0)


def test_stage_measure_validates_time():
    stage = CouplingStage(MODEL, seed=0)
    with pytest.raises(ValueError):
        stage.measure(0.0)


# =====================================================================
# Reward shaping
# =====================================================================


def test_reward_bands():
    env = AlignmentEnv(seed=0)
    band = env.c_max_cps / 20  # 1002.5 cps
    # 2.5 bands of improvement: bonus 2 * 0.6 = 1.2, minus penalty,
    # clipped at +1.
    assert env._reward(2.5 * band) == 1.0
    # One full band: 0.6 - 0.05.
    assert_allclose(env._reward(1.0 * band), 0.55)
    # Below one band (including any loss): penalty only.
    assert env._reward(0.99 * band) == -0.05
    assert env._reward(0.0) == -0.05
    assert env._reward(-5000.0) == -0.05


def test_reward_config_resolution():
    assert RewardConfig().resolve_c_max(MODEL) == 20050.0
    assert RewardConfig(c_max_cps=12345.0).resolve_c_max(MODEL) == 12345.0
    with pytest.raises(ValueError):
        RewardConfig(bonus_levels=0)


# =====================================================================
# MDP mechanics
# =====================================================================


def test_action_scaling_exact():
    env = AlignmentEnv(seed=1)
    env.reset(start_pose=(100.0, 0.0, 1580.0))
    env.step([1.0, 0.0, 0.0])
    assert_allclose(env.stage.r_um, 172.0, atol=1e-9)
    env2 = AlignmentEnv(seed=1)
    env2.reset(start_pose=(100.0, 0.0, 1580.0))
    env2.step([0.0, 0.0, 1.0])
    assert_allclose(env2.stage.z_um, 1580.0 + 563.0, atol=1e-9)


def test_radius_clipped_at_zero():
    env = AlignmentEnv(seed=1)
    env.reset(start_pose=(30.0, 0.5, 1580.0))
    env.step([-1.0, 0.0, 0.0])
    assert env.stage.r_um == 0.0


def test_theta_wraps():
    env = AlignmentEnv(seed=1)
    env.reset(start_pose=(100.0, 5.5, 1580.0))
    env.step([0.0, 1.0, 0.0])  # +pi
    assert 0.0 <= env.stage.theta_rad < 2.0 * math.pi
    assert_allclose(env.stage.theta_rad, (5.5 + math.pi) % (2 * math.pi), atol=1e-9)


def test_action_components_clipped():
    e1 = AlignmentEnv(seed=3)
    e1.reset(start_pose=(100.0, 1.0, 1500.0))
    e2 = AlignmentEnv(seed=3)
    e2.reset(start_pose=(100.0, 1.0, 1500.0))
    o1, r1, d1, i1 = e1.step([2.0, -3.0, 0.5])
    o2, r2, d2, i2 = e2.step([1.0, -1.0, 0.5])
    assert np.array_equal(o1, o2)
    assert r1 == r2 and i1["counts"] == i2["counts"]


def test_observation_stacking_and_bounds():
    mdp = MdpConfig(obs_frames=5)
    env = AlignmentEnv(mdp=mdp, seed=7)
    obs = env.reset()
    assert obs.shape == (20,)
    # All frames identical right after reset (history back-filled).
    frames = obs.reshape(5, 4)
    assert np.all(frames == frames[0])
    # Normalized components stay in sane ranges at the start pose.
    assert 0.0 <= frames[0, 0] <= 1.0  # r / (10 r_step)
    assert -1.0 <= frames[0, 1] < 1.0  # theta mapped to [-1, 1)
    assert 0.0 <= frames[0, 2] <= 1.0  # z / (10 z_step)
    assert 0.0 <= frames[0, 3] <= 1.2  # c / c_max
    # After one step the newest frame enters at the end.
    obs2, _, _, _ = env.step([0.1, 0.1, 0.1])
    frames2 = obs2.reshape(5, 4)
    assert np.array_equal(frames2[:4], frames.reshape(5, 4)[1:])


def test_success_termination():
    env = AlignmentEnv(seed=5)
    env.reset(start_pose=(80.0, 0.3, 1580.0))
    # Jump straight to the optimum: success on the next measurement.
    obs, reward, done, info = env.step([-1.0, 0.0, 0.0])
    assert done and info["success"]
    assert reward == 1.0
    assert info["time_s"] == 2 * 31.0  # reset measurement + one step
    with pytest.raises(RuntimeError):
        env.step([0.0, 0.0, 0.0])


def test_budget_truncation():
    mdp = MdpConfig(episode_steps=3)
    env = AlignmentEnv(mdp=mdp, seed=9)
    env.reset(start_pose=(500.0, 0.0, 2500.0))
    done = False
    steps = 0
    while not done:
        _, _, done, info = env.step([0.0, 0.0, 0.0])
        steps += 1
    assert steps == 3
    assert info["truncated"] and not info["success"]


def test_seeded_trajectories_identical():
    rows = []
    for _ in range(2):
        env = AlignmentEnv(seed=123)
        obs = env.reset()
        traj = [obs.copy()]
        rewards = []
        rng = np.random.default_rng(99)
        for _ in range(15):
            a = rng.uniform(-1, 1, 3)
            obs, r, done, info = env.step(a)
            traj.append(obs.copy())
            rewards.append(r)
            if done:
                break
        rows.append((np.array(traj), np.array(rewards)))
    assert np.array_equal(rows[0][0], rows[1][0])
    assert np.array_equal(rows[0][1], rows[1][1])


def test_trajectory_csv_bytes_deterministic(tmp_path):
    paths = []
    for i in range(2):
        env = AlignmentEnv(seed=2024)
        env.reset()
        rows = [
            TrajectoryRow(0, env.state.r_um, env.state.theta_rad, env.state.z_um,
                          0.0, env.state.rate_cps, 0.0, False)
        ]
        for k in range(10):
            _, r, done, info = env.step([0.2, -0.1, 0.05])
            rows.append(
                TrajectoryRow(info["step"], info["r_um"], info["theta_rad"],
                              info["z_um"], info["counts"], info["rate_cps"], r, done)
            )
            if done:
                break
        p = tmp_path / f"traj{i}.csv"
        trajectory_to_csv(rows, p)
        paths.append(p)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    header = paths[0].read_text().splitlines()[0]
    assert header == "step,r_um,theta_rad,z_um,counts,rate_cps,reward,done"


def test_start_pose_sampling():
    mdp = MdpConfig()
    rng = np.random.default_rng(5)
    poses = np.array([sample_start_pose(mdp, MODEL, rng) for _ in range(2000)])
    r, theta, z = poses[:, 0], poses[:, 1], poses[:, 2]
    assert np.all((r >= 0) & (r <= 120.0))
    assert np.all((theta >= 0) & (theta < 2 * math.pi))
    assert np.all((z >= 1580.0 - 1200.0) & (z <= 1580.0 + 1200.0))
    # Area-uniform lateral sampling has mean radius 2/3 of the maximum.
    assert abs(r.mean() - 80.0) < 2.5


@settings(max_examples=30, deadline=None)
@given(
    st.floats(min_value=0.0, max_value=700.0),
    st.floats(min_value=0.0, max_value=2 * math.pi - 1e-9),
    st.floats(min_value=380.0, max_value=2780.0),
    st.lists(st.floats(min_value=-1.0, max_value=1.0), min_size=3, max_size=3),
)
def test_pose_invariants_property(r0, theta0, z0, action):
    env = AlignmentEnv(seed=0)
    env.reset(start_pose=(r0, theta0, z0))
    env.step(action)
    assert env.stage.r_um >= 0.0
    assert 0.0 <= env.stage.theta_rad < 2.0 * math.pi


def test_reset_clock_and_time():
    env = AlignmentEnv(seed=4)
    env.reset()
    env.step([0.1, 0.0, 0.0])
    assert env.time_s == 62.0
    env.reset()
    assert env.time_s == 31.0  # fresh episode clock, one reset measurement
