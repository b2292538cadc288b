import numpy as np
import pytest

from vhjlab.bumps import BumpSpec, make_bump
from vhjlab.core import Params, TruncationLevel, TruncationVariant, regular_steady, singular_steady
from vhjlab.grid import Grading, make_grid
from vhjlab.kernels import available_backends
from vhjlab.solver import (
    SolveConfig,
    boundary_trace,
    evolve_truncated,
    gradient_singularity_indicator,
    viscosity_solve,
)


@pytest.fixture(scope="module")
def p3():
    return Params(p=3.0)


@pytest.fixture(scope="module")
def grid():
    return make_grid(2049, h_min=8e-6)


def short_cfg(**kw):
    base = dict(
        k_schedule=(25.0, 100.0),
        variant=TruncationVariant.SMOOTH,
        t_end=0.01,
        n_diag=25,
        time_tol=1e-8,
    )
    base.update(kw)
    return SolveConfig(**base)


def test_zero_data_stays_zero(p3, grid):
    phi = grid.sample(lambda x: np.zeros_like(x))
    traj = evolve_truncated(phi, TruncationLevel(25.0), short_cfg(), p3)
    assert np.max(np.abs(traj.fields)) == 0.0


def test_config_validation():
    with pytest.raises(ValueError):
        SolveConfig(k_schedule=(25.0,))
    with pytest.raises(ValueError):
        SolveConfig(k_schedule=(100.0, 25.0))


def test_rejects_negative_or_nonzero_boundary(p3, grid):
    bad = grid.sample(lambda x: -np.sin(np.pi * x))
    with pytest.raises(ValueError):
        evolve_truncated(bad, TruncationLevel(25.0), short_cfg(), p3)


def test_steady_state_preserved(p3, grid):
    ua = regular_steady(p3, 1.0, grid.nodes)
    bc = (0.0, float(ua[-1]))
    phi = grid.sample(lambda x: regular_steady(p3, 1.0, x), bc=bc)
    cfg = short_cfg(t_end=1.0, n_diag=12, time_tol=1e-6)
    traj = evolve_truncated(phi, TruncationLevel(25.0), cfg, p3, bc=bc)
    err = np.max(np.abs(traj.fields - ua[None, :]))
    assert err <= 10 * cfg.space_tol


@pytest.mark.parametrize("seed", range(4))
def test_maximum_principle_random_smooth(p3, grid, seed):
    rng = np.random.default_rng(seed)
    coeffs = rng.normal(size=5) / (1.0 + np.arange(5)) ** 2

    def phi_fn(x):
        v = sum(abs(c) * np.sin((j + 1) * np.pi * x) ** 2 for j, c in enumerate(coeffs))
        return 0.5 * np.sin(np.pi * x) * v / max(abs(coeffs).sum(), 1e-9)

    phi = grid.sample(phi_fn)
    traj = evolve_truncated(phi, TruncationLevel(100.0), short_cfg(), p3)
    assert traj.sup_norm_series().max() <= phi.sup() + 1e-8


def test_monotone_in_k_and_richardson(p3, grid):
    bump = make_bump(BumpSpec(epsilon=0.1, amplitude=1.7 * p3.c_p), p3)
    phi = grid.sample(bump)
    cfg = SolveConfig(
        k_schedule=(6400.0, 25600.0, 102400.0),
        variant=TruncationVariant.SMOOTH,
        t_end=2e-3,
        n_diag=40,
        time_tol=1e-6,
        lbc_ref_scale=0.1,
    )
    traj = viscosity_solve(phi, cfg, p3)
    assert traj.convergence["worst_monotonicity_violation"] <= cfg.monotonicity_tol
    assert traj.converged


def test_continuous_dependence(p3, grid):
    rng = np.random.default_rng(3)
    base = lambda x: 0.4 * np.sin(np.pi * x) ** 2
    delta = 0.01

    cfg = short_cfg(t_end=5e-3, n_diag=15)
    t1 = evolve_truncated(grid.sample(base), TruncationLevel(100.0), cfg, p3)
    t2 = evolve_truncated(
        grid.sample(lambda x: base(x) + delta * np.sin(np.pi * x)),
        TruncationLevel(100.0), cfg, p3,
    )
    gap = np.max(np.abs(t1.fields - t2.fields))
    assert gap <= delta + 2 * cfg.richardson_tol


def test_small_data_truncation_never_activates(p3, grid):
    phi = grid.sample(lambda x: 0.1 * p3.c_p * np.sin(np.pi * x))
    cfg = short_cfg(k_schedule=(25.0, 100.0, 400.0))
    trajs = [
        evolve_truncated(phi, TruncationLevel(k, TruncationVariant.SMOOTH), cfg, p3)
        for k in cfg.k_schedule
    ]
    for traj in trajs:
        assert np.all(traj.saturation == 0.0)
    # beyond the first level the trajectories are identical: the truncation
    # never engages, so every level solves the same discrete system
    assert np.array_equal(trajs[1].fields, trajs[2].fields)


def test_backend_parity(p3, grid):
    if "compiled" not in available_backends():
        pytest.skip("compiled kernel not built")
    # strict parity on a smooth problem (identical controller decisions)
    ua = regular_steady(p3, 1.0, grid.nodes)
    bc = (0.0, float(ua[-1]))
    phi_s = grid.sample(lambda x: regular_steady(p3, 1.0, x), bc=bc)
    smooth = {}
    for backend in ("compiled", "python"):
        cfg = short_cfg(t_end=0.05, n_diag=8, time_tol=1e-6, backend=backend)
        smooth[backend] = evolve_truncated(phi_s, TruncationLevel(25.0), cfg, p3, bc=bc)
    assert smooth["compiled"].steps_accepted == smooth["python"].steps_accepted
    assert np.max(np.abs(smooth["compiled"].fields - smooth["python"].fields)) < 1e-12

    # qualitative parity through a blow-up formation (roundoff separates the
    # adaptive paths once the dynamics are singular)
    bump = make_bump(BumpSpec(epsilon=0.1, amplitude=1.7 * p3.c_p), p3)
    phi = grid.sample(bump)
    out = {}
    for backend in ("compiled", "python"):
        cfg = short_cfg(t_end=3e-4, n_diag=10, k_schedule=(1600.0, 6400.0), backend=backend)
        out[backend] = evolve_truncated(
            phi, TruncationLevel(6400.0, TruncationVariant.SMOOTH), cfg, p3
        )
    assert np.max(np.abs(out["compiled"].fields - out["python"].fields)) < 1e-6


def test_time_lipschitz_away_from_zero(p3, grid):
    bump = make_bump(BumpSpec(epsilon=0.15, amplitude=1.7 * p3.c_p), p3)
    phi = grid.sample(lambda x: 0.5 * bump(x))
    cfg = short_cfg(t_end=0.02, n_diag=40)
    traj = evolve_truncated(phi, TruncationLevel(100.0, TruncationVariant.SMOOTH), cfg, p3)
    t0_idx = np.argmax(traj.times > 0.002)
    sel = slice(t0_idx, None)
    diffs = np.max(np.abs(np.diff(traj.fields[sel], axis=0)), axis=1)
    dts = np.diff(traj.times[sel])
    M = np.max(diffs / dts)
    # stability of the constant under refinement
    cfg2 = short_cfg(t_end=0.02, n_diag=40, time_tol=2.5e-9)
    traj2 = evolve_truncated(phi, TruncationLevel(100.0, TruncationVariant.SMOOTH), cfg2, p3)
    diffs2 = np.max(np.abs(np.diff(traj2.fields[sel], axis=0)), axis=1)
    M2 = np.max(diffs2 / dts)
    assert M2 <= 1.5 * M + 1e-9


# --- boundary trace ---


def test_trace_of_singular_steady(p3, grid):
    fld = grid.sample(lambda x: singular_steady(p3, np.maximum(x, grid.nodes[1])))
    est = boundary_trace(fld, p3)
    assert est.singular
    assert est.value == pytest.approx(0.0, abs=2e-4)


def test_trace_of_shifted_singular_steady(p3, grid):
    shift = 0.05
    fld = grid.sample(lambda x: singular_steady(p3, np.maximum(x, grid.nodes[1])) + shift)
    est = boundary_trace(fld, p3)
    assert est.singular
    assert est.value == pytest.approx(shift, abs=2e-3)


def test_trace_of_regular_steady_is_zero(p3, grid):
    fld = grid.sample(lambda x: regular_steady(p3, 1.0, x))
    est = boundary_trace(fld, p3)
    assert not est.singular
    assert est.value == 0.0


def test_indicator_small_data_never_fires(p3, grid):
    phi = grid.sample(lambda x: 0.1 * p3.c_p * np.sin(np.pi * x))
    cfg = short_cfg()
    traj = evolve_truncated(phi, TruncationLevel(100.0, TruncationVariant.SMOOTH), cfg, p3)
    for t in traj.times[:: max(1, traj.times.size // 6)]:
        assert not gradient_singularity_indicator(traj, float(t))
    with pytest.raises(ValueError):
        gradient_singularity_indicator(traj, traj.times[-1] * 2.5)


def test_indicator_fires_at_loss_episode(p3, grid):
    bump = make_bump(BumpSpec(epsilon=0.1, amplitude=1.7 * p3.c_p), p3)
    phi = grid.sample(bump)
    cfg = SolveConfig(
        k_schedule=(16384.0, 65536.0),
        variant=TruncationVariant.SMOOTH,
        t_end=2.5e-3,
        n_diag=60,
        time_tol=1e-6,
        lbc_ref_scale=0.1,
    )
    traj = evolve_truncated(phi, TruncationLevel(65536.0, TruncationVariant.SMOOTH), cfg, p3)
    thr = traj.lbc_thresholds()
    i_peak = int(np.argmax(traj.trace - thr))
    assert traj.trace[i_peak] > thr[i_peak]
    assert gradient_singularity_indicator(traj, float(traj.times[i_peak]))
