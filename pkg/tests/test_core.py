import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import minimize_scalar

from vhjlab.core import (
    Params,
    TruncationLevel,
    TruncationVariant,
    control_constants,
    cost_normalization,
    regular_steady,
    regular_steady_deriv,
    singular_steady,
    singular_steady_deriv,
    truncated_nonlinearity,
)


@pytest.fixture
def p3():
    return Params(p=3.0)


def test_exponents_p3(p3):
    assert p3.alpha == pytest.approx(0.5)
    assert p3.c_p == pytest.approx(math.sqrt(2.0))


def test_params_rejects_subquadratic():
    with pytest.raises(ValueError):
        Params(p=2.0)


@given(st.floats(min_value=2.01, max_value=12.0))
def test_alpha_in_unit_interval(p):
    params = Params(p=p)
    assert 0.0 < params.alpha < 1.0


def test_singular_steady_examples(p3):
    assert singular_steady(p3, 0.25) == pytest.approx(0.707107, abs=1e-6)
    assert singular_steady(p3, 1.0) == pytest.approx(1.414214, abs=1e-6)


@given(st.floats(min_value=2.1, max_value=9.0))
def test_singular_steady_at_one_equals_cp(p):
    params = Params(p=p)
    assert float(singular_steady(params, 1.0)) == pytest.approx(params.c_p, rel=1e-14)


def test_singular_steady_domain_error(p3):
    with pytest.raises(ValueError):
        singular_steady(p3, 0.0)
    with pytest.raises(ValueError):
        singular_steady_deriv(p3, -0.1)


def test_singular_deriv_closed_form(p3):
    x = np.array([0.01, 0.2, 0.9])
    expected = ((p3.p - 1.0) * x) ** (-1.0 / (p3.p - 1.0))
    assert singular_steady_deriv(p3, x) == pytest.approx(expected, rel=1e-13)


def test_regular_steady_examples(p3):
    # shift k = 1/2 for a=1: sqrt(2) (sqrt(x+1/2) - sqrt(1/2))
    assert float(regular_steady(p3, 1.0, 0.04)) == pytest.approx(0.039230, abs=1e-5)
    assert float(regular_steady(p3, 1.0, 0.0)) == 0.0
    assert float(regular_steady_deriv(p3, 1.0, 0.0)) == pytest.approx(1.0, rel=1e-12)


def test_regular_steady_domain_error(p3):
    with pytest.raises(ValueError):
        regular_steady(p3, 0.0, 0.3)


@pytest.mark.parametrize("a", [1.0, 10.0, 100.0, 1000.0])
def test_regular_below_singular_and_monotone(p3, a):
    x = np.linspace(0.01, 1.0, 57)
    ua = regular_steady(p3, a, x)
    assert np.all(ua < singular_steady(p3, x))
    ua_next = regular_steady(p3, 4.0 * a, x)
    assert np.all(ua_next > ua)


def test_regular_converges_to_singular(p3):
    x = np.linspace(0.05, 1.0, 21)
    gap = [np.max(singular_steady(p3, x) - regular_steady(p3, a, x)) for a in (1, 10, 100, 1000)]
    assert all(g2 < g1 for g1, g2 in zip(gap, gap[1:]))
    assert gap[-1] < 2e-3


def test_truncation_examples(p3):
    lvl = TruncationLevel(k=4.0)
    assert float(truncated_nonlinearity(lvl, p3, 1.0)) == pytest.approx(1.0)
    assert float(truncated_nonlinearity(lvl, p3, 9.0)) == pytest.approx(18.0)
    # both variants agree at the threshold
    smooth = TruncationLevel(k=4.0, variant=TruncationVariant.SMOOTH)
    assert float(truncated_nonlinearity(lvl, p3, 4.0)) == pytest.approx(8.0)
    assert float(truncated_nonlinearity(smooth, p3, 4.0)) == pytest.approx(8.0)


@given(
    st.floats(min_value=2.1, max_value=8.0),
    st.floats(min_value=0.0, max_value=100.0),
    st.floats(min_value=0.05, max_value=50.0),
)
@settings(max_examples=200)
def test_truncation_below_power_law(p, s, k):
    params = Params(p=p)
    for variant in TruncationVariant:
        lvl = TruncationLevel(k=k, variant=variant)
        val = float(truncated_nonlinearity(lvl, params, s))
        assert val <= s ** (p / 2.0) + 1e-12 * max(1.0, s ** (p / 2.0))
        if s <= k:
            assert val == pytest.approx(s ** (p / 2.0), rel=1e-12)
        else:
            assert val < s ** (p / 2.0)


def test_smooth_variant_elasticity_bound(p3):
    # 2 s F'(s) >= F(s) for the smooth variant
    from vhjlab.core import truncated_nonlinearity_deriv

    lvl = TruncationLevel(k=3.0, variant=TruncationVariant.SMOOTH)
    s = np.linspace(0.01, 30.0, 500)
    F = truncated_nonlinearity(lvl, p3, s)
    Fp = truncated_nonlinearity_deriv(lvl, p3, s)
    assert np.all(2.0 * s * Fp >= F - 1e-12)


def test_control_constants_values(p3):
    c = control_constants(p3)
    assert c.kappa == pytest.approx(1.0)
    assert c.c1_hopf == pytest.approx(0.25)
    assert c.K3 == pytest.approx(1.0)
    assert c.K2 == pytest.approx(0.5)
    assert c.L == pytest.approx(2.0)


def test_torsion_function_identities():
    from vhjlab.core import AnalyticConstants1D

    x = np.linspace(0.0, 1.0, 101)
    psi = AnalyticConstants1D.psi_torsion(x)
    assert psi[0] == 0.0 and psi[-1] == 0.0
    # -psi'' = 1 exactly (second difference of a quadratic)
    h = x[1] - x[0]
    d2 = (psi[2:] - 2 * psi[1:-1] + psi[:-2]) / h**2
    assert d2 == pytest.approx(-np.ones_like(d2), abs=1e-9)
    # c1_hopf is the infimum of psi / min(x, 1-x)
    xs = np.linspace(1e-4, 1 - 1e-4, 4001)
    ratio = AnalyticConstants1D.psi_torsion(xs) / np.minimum(xs, 1 - xs)
    assert np.min(ratio) == pytest.approx(0.25, abs=1e-4)


def test_cost_normalization_p2_sanity():
    # sup_a (a z - a^2/4) = z^2, so k_2 = 1/4 (outside the model range,
    # used only as a formula check)
    assert cost_normalization(2.0) == pytest.approx(0.25)


def test_legendre_transform_oracle(p3):
    # numerically maximizing a z - k_p a^q over a recovers |z|^p
    k_p = control_constants(p3).k_p
    q = p3.q
    rng = np.random.default_rng(7)
    for z in rng.uniform(0.1, 5.0, size=100):
        res = minimize_scalar(
            lambda a: -(a * z - k_p * abs(a) ** q), bounds=(0.0, 1e4), method="bounded",
            options={"xatol": 1e-12},
        )
        assert -res.fun == pytest.approx(z**p3.p, rel=1e-8)


def test_singular_steady_solves_steady_equation(p3):
    # c_p a (a-1) x^(a-2) + |c_p a x^(a-1)|^p = 0 at sampled x
    a, cp, p = p3.alpha, p3.c_p, p3.p
    x = np.linspace(0.05, 1.0, 37)
    lhs = cp * a * (a - 1.0) * x ** (a - 2.0) + np.abs(cp * a * x ** (a - 1.0)) ** p
    assert np.max(np.abs(lhs)) < 1e-10 * np.max(np.abs(cp * a * (a - 1.0) * x ** (a - 2.0)))
