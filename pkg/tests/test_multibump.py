import numpy as np
import pytest

from vhjlab.analysis import banded_sign_changes, default_band
from vhjlab.core import singular_steady
from vhjlab.multibump import (
    DeformationPoint,
    PlanError,
    behavior_indices,
    deform,
    plan_multibump,
)


def test_behavior_indices_single_loss():
    kappa, xi, m, q, deformed = behavior_indices((1,))
    assert kappa == (1, 2) and m == 1 and xi == (1,) and q == 0


def test_behavior_indices_paper_example():
    # (1, 3, 0): kappa 1,2,5,6 with deformation indices 1,2,2,1,0
    kappa, xi, m, q, deformed = behavior_indices((1, 3, 0))
    assert kappa == (1, 2, 5, 6)
    assert m == 5
    assert xi == (1, 2, 2, 1, 0)
    assert deformed == (2, 3, 5)
    assert q == 3


def test_behavior_indices_bounce():
    kappa, xi, m, q, deformed = behavior_indices((2,))
    assert kappa == (1, 3) and m == 2 and xi == (2, 1) and deformed == (1,)


def test_behavior_indices_rejects_bad_input():
    with pytest.raises(ValueError):
        behavior_indices(())
    with pytest.raises(ValueError):
        behavior_indices((1, -1))


@pytest.fixture(scope="module")
def plans(params3, synthetic_calibration):
    def build(sigma, **kw):
        return plan_multibump(sigma, params3, synthetic_calibration, **kw)

    return build


def test_plan_scale_ladder(plans):
    plan = plans((1, 1))
    eps = plan.epsilons
    assert np.all(eps[:-1] <= eps[1:] / 8.0 + 1e-15)
    assert plan.m == 2 and plan.q == 0


def test_time_marks_interleave(plans):
    plan = plans((1, 1))
    chain = []
    for i in range(plan.m):
        chain.extend(plan.shat_marks[i])
        chain.extend(plan.s_marks[i])
    chain.extend(plan.shat_marks[plan.m])
    assert np.all(np.diff(chain) > 0)


def test_disjoint_supports_and_envelopes(plans):
    plan = plans((1, 1))
    for lo, hi in zip(plan.bumps[:-1], plan.bumps[1:]):
        assert lo.support[1] < hi.support[0]
    assert plan.verification["sup_H1"] < plan.verification["sup_H1_budget"]
    # H_i equals bump i below its inner window
    a1 = plan.calibration.a1
    for i in range(plan.m):
        e = plan.epsilons[i]
        xs = np.linspace(1e-9, (1 + a1) * e, 201)
        assert plan.envelopes[i](xs) == pytest.approx(plan.bumps[i](xs), abs=1e-10)


def test_plan_resolution_guard(params3, synthetic_calibration):
    with pytest.raises(PlanError, match="finer grid or fewer bumps"):
        plan_multibump((1, 1), params3, synthetic_calibration, grid_h_at=lambda x: 1e-3)


def test_plan_bump_guard(params3, synthetic_calibration):
    with pytest.raises(PlanError, match="guard"):
        plan_multibump((1,) * 9, params3, synthetic_calibration)


def test_deform_identity_on_undeformed_plan(plans, params3):
    plan = plans((1,))
    phi = deform(plan, DeformationPoint(()))
    base = plan.base_data()
    xs = np.linspace(1e-6, 1.0, 2001)
    assert phi(xs) == pytest.approx(base(xs), abs=1e-15)


def test_deform_amplitude_zero_removes_bump(plans, params3):
    plan = plans((0,))
    assert plan.xi == (0,)
    phi = deform(plan, DeformationPoint((0.0,)))
    lo, hi = plan.bumps[0].support
    xs = np.linspace(lo, hi, 301)
    assert np.max(np.abs(phi(xs))) == pytest.approx(0.0, abs=1e-14)


def test_deform_link_zero_recovers_base(plans, params3):
    plan = plans((2,))
    phi = deform(plan, DeformationPoint((0.0,)))
    base = plan.base_data()
    xs = np.linspace(1e-6, 1.0, 2001)
    assert phi(xs) == pytest.approx(base(xs), abs=1e-14)


def test_deform_crossing_budget(plans, params3):
    plan = plans((2,))
    for mu in (0.0, 0.3, 0.7, 1.0):
        phi = deform(plan, DeformationPoint((mu,)))
        xs = np.linspace(1e-5, 1.0, 5001)
        v = phi(xs) - singular_steady(params3, xs)
        assert banded_sign_changes(v, default_band(v)).count <= 2 * plan.m
        assert float(np.max(phi(xs))) < params3.c_p


def test_deform_dimension_check(plans):
    plan = plans((2,))
    with pytest.raises(ValueError):
        deform(plan, DeformationPoint((0.5, 0.5)))
    with pytest.raises(ValueError):
        DeformationPoint((1.2,))


def test_intersections_of_deformation_pairs(plans, params3):
    # sign changes of Phi_mu - Phi_lambda: coordinates agreeing above j leave
    # at most j-1 changes
    plan = plans((2, 2))
    assert plan.q == 2
    rng = np.random.default_rng(1)
    xs = np.linspace(1e-6, 1.0, 4001)
    for _ in range(6):
        tail = rng.uniform(0, 1)
        mu = (rng.uniform(0, 1), tail)
        lam = (rng.uniform(0, 1), tail)
        v = deform(plan, DeformationPoint(mu))(xs) - deform(plan, DeformationPoint(lam))(xs)
        j = 1
        assert banded_sign_changes(v, default_band(v)).count <= max(j - 1, 0)


def test_windows_follow_marks(plans):
    plan = plans((2,))
    lo, hi = plan.window(1)
    i = plan.deformed[0]
    assert lo == pytest.approx(plan.s_marks[i - 1, 1])
    assert hi == pytest.approx(plan.s_marks[i, 1])
    plan0 = plans((0,))
    lo0, hi0 = plan0.window(1)
    assert lo0 == pytest.approx(plan0.shat_marks[0, 1])
    assert hi0 == pytest.approx(plan0.shat_marks[1, 1])
