import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vhjlab.analysis import (
    banded_sign_changes,
    default_band,
    intersection_number,
    sign_changes,
)
from vhjlab.core import Params, singular_steady
from vhjlab.grid import make_grid


@pytest.fixture(scope="module")
def p3():
    return Params(p=3.0)


@pytest.fixture(scope="module")
def grid():
    return make_grid(513, grading="uniform")


def make_grid_uniform(n=513):
    from vhjlab.grid import Grading, make_grid

    return make_grid(n, grading=Grading.UNIFORM)


def test_sine_has_two_changes():
    x = np.linspace(0, 1, 401)[1:-1]
    out = sign_changes(np.sin(3 * np.pi * x), band=0.0)
    assert out.count == 2


def test_constant_has_none():
    assert sign_changes(np.full(50, 0.3), band=0.0).count == 0


def test_dead_band_semantics():
    v = np.array([1.0, -1.0, 1.0])
    assert banded_sign_changes(v, 0.5).count == 2
    assert banded_sign_changes(v, 1.5).count == 0


def test_count_matches_locations():
    v = np.array([1.0, -0.5, 2.0, -3.0])
    out = banded_sign_changes(v, 0.1, x=np.array([0.0, 0.1, 0.2, 0.3]))
    assert out.count == len(out.locations) == 3
    assert all(a < b for a, b in zip(out.locations, out.locations[1:]))


def test_negative_band_rejected():
    with pytest.raises(ValueError):
        banded_sign_changes(np.ones(3), -1.0)


@given(st.integers(min_value=0, max_value=2**31 - 1))
@settings(max_examples=60)
def test_banded_count_stable_under_small_perturbation(seed):
    # perturbing below half the band never changes the banded count when all
    # excursions clear twice the band
    rng = np.random.default_rng(seed)
    x = np.linspace(0, 1, 257)
    freq = rng.integers(1, 6)
    v = np.sin(freq * np.pi * x + rng.uniform(0, 2 * np.pi))
    band = 0.05
    keepable = np.abs(v) > 2 * band
    base = banded_sign_changes(np.where(keepable, v, 0.0), band).count
    delta = rng.uniform(-band / 2, band / 2, size=v.size)
    pert = banded_sign_changes(np.where(keepable, v, 0.0) + delta, band).count
    assert pert == base


def test_intersection_number_examples(p3):
    g = make_grid_uniform()
    half_star = g.sample(lambda x: 0.5 * singular_steady(p3, np.maximum(x, 1e-12)))
    assert intersection_number(half_star, p3) == 0

    from vhjlab.bumps import BumpSpec, make_bump

    bump = make_bump(BumpSpec(epsilon=0.1, amplitude=1.7 * p3.c_p), p3)
    fld = g.sample(bump)
    assert intersection_number(fld, p3) == 2


def test_intersection_number_restriction(p3):
    g = make_grid_uniform()
    from vhjlab.bumps import BumpSpec, make_bump

    bump = make_bump(BumpSpec(epsilon=0.2, amplitude=1.7 * p3.c_p), p3)
    fld = g.sample(bump)
    # restricting below the bump's support sees no crossing
    assert intersection_number(fld, p3, b=0.1) == 0
    with pytest.raises(ValueError):
        intersection_number(fld, p3, b=0.0)


def test_default_band_floor():
    assert default_band(np.zeros(4)) == pytest.approx(1e-12)
