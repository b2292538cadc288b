import numpy as np
import pytest

from vhjlab.analysis import banded_sign_changes, default_band
from vhjlab.bumps import (
    BumpSpec,
    ConstructionError,
    convexify,
    make_bump,
    make_link,
)
from vhjlab.core import Params, singular_steady


@pytest.fixture(scope="module")
def p3():
    return Params(p=3.0)


@pytest.fixture(scope="module")
def bump(p3):
    return make_bump(BumpSpec(epsilon=0.1, amplitude=1.7 * p3.c_p), p3)


def test_spec_validation():
    with pytest.raises(ValueError):
        BumpSpec(epsilon=0.7)
    with pytest.raises(ValueError):
        BumpSpec(epsilon=0.1, a1=0.3, a2=0.2)
    with pytest.raises(ValueError):
        make_bump(BumpSpec(epsilon=0.1), Params(3.0))  # neither K nor amplitude


def test_support_boundary_and_peak(bump):
    lo, hi = bump.support
    assert lo == pytest.approx((1 - 0.22) * 0.1)
    assert hi == pytest.approx((1 + 0.22) * 0.1)
    assert float(bump(np.array([lo]))[0]) == pytest.approx(0.0, abs=1e-14)
    xs = np.linspace(lo, hi, 2001)
    vals = bump(xs)
    assert np.argmax(vals) == pytest.approx(1000, abs=2)  # symmetric peak at eps
    assert np.max(vals) == pytest.approx(bump.sup(), rel=1e-9)


def test_two_crossings_of_singular_state(bump, p3):
    xs = np.linspace(1e-4, 1.0, 6001)
    v = bump(xs) - singular_steady(p3, xs)
    assert banded_sign_changes(v, default_band(v)).count == 2


@pytest.mark.parametrize("lam", [0.05, 0.3, 0.7, 1.0])
def test_scaled_bump_at_most_two_crossings(bump, p3, lam):
    xs = np.linspace(1e-4, 1.0, 6001)
    v = lam * bump(xs) - singular_steady(p3, xs)
    assert banded_sign_changes(v, default_band(v)).count <= 2


def test_dominates_kxalpha_on_inner_window(bump, p3):
    lo, hi = bump.inner
    xs = np.linspace(lo, hi, 501)
    assert np.all(bump(xs) > bump.spec.K * xs**p3.alpha)


def test_scaling_identity(bump, p3):
    # psi_eps(x) = eps^alpha * psi_unit(x / eps) pointwise
    eps = bump.spec.epsilon
    xs = np.linspace(0.05, 0.15, 301)
    expected = eps**p3.alpha * bump.unit(xs / eps)
    assert bump(xs) == pytest.approx(expected, rel=1e-13)


def test_two_scales_related_by_rescaling(p3):
    b1 = make_bump(BumpSpec(epsilon=0.1, amplitude=2.0), p3)
    b2 = make_bump(BumpSpec(epsilon=0.05, amplitude=2.0), p3)
    xs = np.linspace(0.039, 0.061, 101)
    assert b2(xs) == pytest.approx(0.5**p3.alpha * b1(2 * xs), rel=1e-12)


# --- convexification ---


def test_convexify_already_convex_example():
    g = lambda x: np.asarray(x) ** 2 - np.asarray(x) + 0.3
    gp = lambda x: 2.0 * np.asarray(x) - 1.0
    bar = convexify(g, 0.2, 0.8, gprime=gp)
    xs = np.linspace(0.0, 1.0, 1501)
    outside = (xs <= 0.2) | (xs >= 0.8)
    assert np.max(np.abs(bar(xs)[outside] - g(xs)[outside])) == 0.0
    assert np.min(bar(xs) - g(xs)) > -1e-12
    mid = (xs > 0.2) & (xs < 0.8)
    d2 = np.gradient(np.gradient(bar(xs)[mid], xs[mid]), xs[mid])
    assert np.min(d2[3:-3]) > -1e-7
    # the collar balance equation was solved to quadrature accuracy
    scale = float(np.max(np.abs(g(xs))))
    assert abs(bar.balance_residual) < 1e-10 * scale


def test_convexify_rejects_bad_hypotheses():
    with pytest.raises(ValueError):
        convexify(lambda x: np.asarray(x) - 0.5, 0.2, 0.8, gprime=lambda x: np.ones_like(np.asarray(x)))
    with pytest.raises(ValueError):
        # concave
        convexify(lambda x: 1.0 - (np.asarray(x) - 0.5) ** 2, 0.3, 0.7,
                  gprime=lambda x: -2.0 * (np.asarray(x) - 0.5))


# --- links ---


@pytest.fixture(scope="module")
def linked(p3):
    lo = make_bump(BumpSpec(epsilon=0.025, K=2.3), p3)
    hi = make_bump(BumpSpec(epsilon=0.2, K=2.3), p3)
    return lo, hi, make_link(lo, hi, p3)


def test_link_requires_scale_gap(p3):
    b1 = make_bump(BumpSpec(epsilon=0.12, amplitude=2.0), p3)
    b2 = make_bump(BumpSpec(epsilon=0.2, amplitude=2.0), p3)
    with pytest.raises(ValueError):
        make_link(b1, b2, p3)


def test_link_matches_bumps_outside(linked, p3):
    lo, hi, h = linked
    xs = np.linspace(1e-5, lo.inner[1], 301)
    assert h(xs) == pytest.approx(lo(xs), abs=1e-10)
    xs = np.linspace(hi.inner[0], 1.0, 301)
    assert h(xs) == pytest.approx(hi(xs), abs=1e-10)


def test_link_dominates_pair_and_kxalpha(linked, p3):
    lo, hi, h = linked
    xs = np.linspace(lo.support[0], hi.support[1], 2001)
    assert np.min(h(xs) - (lo(xs) + hi(xs))) > -1e-10
    mid = np.linspace(lo.inner[1], hi.inner[0], 1001)
    assert np.all(h(mid) > h.K * mid**p3.alpha)


def test_link_sup_bound(linked, p3):
    lo, hi, h = linked
    K1 = max(lo.spec.K1, hi.spec.K1)
    assert h.sup() <= K1 * hi.spec.epsilon**p3.alpha * (1 + 1e-9)


@pytest.mark.parametrize("lam", [0.0, 0.25, 0.5, 0.75, 1.0])
def test_link_blend_crossings(linked, p3, lam):
    lo, hi, h = linked
    e_lo, e_hi = lo.spec.epsilon, hi.spec.epsilon
    xs = np.linspace(e_lo, e_hi, 3001)
    v = lam * h(xs) + (1 - lam) * (lo(xs) + hi(xs)) - singular_steady(p3, xs)
    assert banded_sign_changes(v, default_band(v)).count <= 2
