import numpy as np
import pytest

from vhjlab.control import ControlRun, Policy, heat_value, pde_value, simulate_gain
from vhjlab.core import Params, TruncationLevel, TruncationVariant
from vhjlab.grid import make_grid
from vhjlab.solver import SolveConfig, evolve_truncated


@pytest.fixture(scope="module")
def p3():
    return Params(3.0)


@pytest.fixture(scope="module")
def grid():
    return make_grid(1025, h_min=4e-5)


@pytest.fixture(scope="module")
def smooth_setup(p3, grid):
    reward = grid.sample(lambda x: 0.3 * np.sin(np.pi * x) ** 2)
    cfg = SolveConfig(k_schedule=(25.0, 100.0), variant=TruncationVariant.SMOOTH,
                      t_end=0.02, n_diag=30, time_tol=1e-7)
    traj = evolve_truncated(reward, TruncationLevel(100.0, TruncationVariant.SMOOTH), cfg, p3)
    return reward, traj


def test_run_validation():
    with pytest.raises(ValueError):
        ControlRun(x0=1.5, horizon=0.01)
    with pytest.raises(ValueError):
        ControlRun(x0=0.5, horizon=0.01, n_paths=10)


def test_zero_reward_zero_control_gain(p3, grid):
    reward = grid.sample(lambda x: np.zeros_like(x))
    run = ControlRun(x0=0.4, horizon=0.005, n_paths=2000, seed=1)
    done = simulate_gain(run, reward, None, p3)
    assert done.mean_gain == 0.0


def test_zero_reward_feedback_gain_nonpositive(p3, grid, smooth_setup):
    _, traj = smooth_setup
    reward = grid.sample(lambda x: np.zeros_like(x))
    run = ControlRun(x0=0.4, horizon=0.005, n_paths=2000, seed=1, policy=Policy.PDE_FEEDBACK)
    done = simulate_gain(run, reward, traj, p3)
    assert done.mean_gain <= 0.0


def test_zero_control_matches_heat_semigroup(p3, grid, smooth_setup):
    reward, _ = smooth_setup
    t = 0.01
    run = ControlRun(x0=0.5, horizon=t, n_paths=20000, seed=3)
    done = simulate_gain(run, reward, None, p3)
    oracle = heat_value(reward, 0.5, t)
    assert abs(done.mean_gain - oracle) <= 3 * done.ci_halfwidth


def test_policies_bounded_by_value(p3, grid, smooth_setup):
    reward, traj = smooth_setup
    x0, t = 0.5, 0.01
    val = pde_value(traj, x0, t)
    budget = 5e-3
    for policy in Policy:
        run = ControlRun(x0=x0, horizon=t, n_paths=8000, seed=5, policy=policy)
        done = simulate_gain(run, reward, traj, p3)
        assert done.mean_gain <= val + 3 * done.ci_halfwidth + budget


def test_feedback_at_least_zero_control(p3, grid, smooth_setup):
    reward, traj = smooth_setup
    x0, t = 0.5, 0.01
    runs = {}
    for policy in Policy:
        run = ControlRun(x0=x0, horizon=t, n_paths=20000, seed=7, policy=policy)
        runs[policy] = simulate_gain(run, reward, traj, p3)
    zc, fb = runs[Policy.ZERO_CONTROL], runs[Policy.PDE_FEEDBACK]
    assert fb.mean_gain >= zc.mean_gain - 3 * fb.ci_halfwidth


def test_reproducible_given_seed(p3, grid, smooth_setup):
    reward, _ = smooth_setup
    run = ControlRun(x0=0.3, horizon=0.004, n_paths=4000, seed=11)
    a = simulate_gain(run, reward, None, p3)
    b = simulate_gain(run, reward, None, p3)
    assert a.mean_gain == b.mean_gain and a.ci_halfwidth == b.ci_halfwidth


def test_overshoot_warning_for_coarse_steps(p3, grid, smooth_setup):
    reward, _ = smooth_setup
    run = ControlRun(x0=0.03, horizon=0.02, n_paths=2000, seed=2, dt_mc=2e-3)
    done = simulate_gain(run, reward, None, p3)
    assert done.exit_overshoot_frac is not None
    # a step this coarse next to the boundary must trip the warning
    assert done.accuracy_warning


def test_heat_value_analytic_mode():
    # single sine mode decays exactly like exp(-pi^2 t) under the full-Laplacian generator
    from vhjlab.grid import Grading

    grid = make_grid(257, grading=Grading.UNIFORM)
    reward = grid.sample(lambda x: np.sin(np.pi * x))
    t = 0.05
    val = heat_value(reward, 0.5, t, n=1501, n_steps=600)
    assert val == pytest.approx(np.exp(-np.pi**2 * t), rel=2e-3)
