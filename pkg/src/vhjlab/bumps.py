"""Bump profiles, the convexification lemma, and linking functions.

The building blocks of multibump initial data:

* ``make_bump``: a C^2 compactly supported bump at distance eps from x=0,
  symmetric about its center, exceeding K x^alpha on an inner window and
  crossing U* exactly once on each side. The construction fixes properties,
  not a formula; every property is verified numerically at construction and
  violation raises.

* ``convexify``: given g positive at X, Y with g'' > 0 on [X,Y], produces
  gbar in C^2 equal to g outside (X,Y) with gbar >= g, gbar > 0 and
  gbar'' >= 0 on [X,Y], by replacing g' with L + zeta (g'-L) for a chord
  slope L and a C^1 cutoff zeta supported in two collars whose widths solve
  int zeta (g'-L) = 0.

* ``make_link``: joins two neighboring bumps above K x^alpha by convexifying
  psi_lo + psi_hi - K x^alpha between their inner windows.

Profiles are exact piecewise polynomials (PPoly) wherever possible; the
convexified middle is a dense cumulative quadrature wrapped in a C^1
interpolant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
from scipy.integrate import quad
from scipy.interpolate import CubicHermiteSpline, PPoly
from scipy.optimize import brentq

from .analysis import banded_sign_changes, default_band
from .core import Params, singular_steady

__all__ = [
    "BumpSpec",
    "BumpProfile",
    "LinkProfile",
    "ConstructionError",
    "unit_bump_shape",
    "make_bump",
    "convexify",
    "make_link",
]


class ConstructionError(RuntimeError):
    """A verified property of a constructed profile failed."""


@dataclass(frozen=True)
class BumpSpec:
    """Geometry of one bump: center scale and window fractions.

    The realized bump is supported on [(1-a2) eps, (1+a2) eps], exceeds
    K x^alpha on [(1-a1) eps, (1+a1) eps], and has sup <= K1 eps^alpha.
    """

    epsilon: float
    a1: float = 0.10
    a2: float = 0.22
    K: float = 0.0  # derived from the amplitude when left at 0
    K1: float = 0.0
    amplitude: float = 0.0  # unit-scale peak height; 0 means "derive from K"

    def __post_init__(self):
        if not 0 < self.epsilon < 0.5:
            raise ValueError("bump scale must lie in (0, 1/2)")
        if not 0 < self.a1 < self.a2 < 0.25:
            raise ValueError("window fractions must satisfy 0 < a1 < a2 < 1/4")


def _shape_ppoly(a1: float, a2: float) -> PPoly:
    """Normalized unit-scale bump shape with peak height 1 at x=1.

    Built by integrating a continuous piecewise-linear second derivative
    twice: a positive tent on the convex foot [1-a2, 1-a1], then a sharp
    negative lobe just inside the window followed by a long shallow tail,
    mirrored about x=1. The sharp lobe bleeds off most of the slope right
    after the window edge, so the top is nearly flat and the height over the
    inner window stays close to the peak (the height-to-K ratio governs how
    hard the amplitude caps bite). The slope stays strictly positive up to
    the center and the profile is rescaled to peak height 1.
    """
    xl, xi = 1.0 - a2, 1.0 - a1
    xm = xl + 0.2 * (xi - xl)  # tent peak sits early so the rise front-loads
    x_lobe = xi + 0.2 * a1  # end of the sharp negative lobe
    x_tail = xi + 0.45 * a1  # start of the shallow tail
    tail = 0.05  # tail depth relative to the lobe
    pos_area = 0.5 * (xi - xl)
    # negative area pieces for a lobe of depth 1: ramp down, ramp to the
    # tail depth, then flat tail to the center
    ramp1 = 0.5 * (x_lobe - xi)
    ramp2 = 0.5 * (x_tail - x_lobe) * (1.0 + tail)
    flat = (1.0 - x_tail) * tail
    B = pos_area / (ramp1 + ramp2 + flat)
    xs_l = np.array([xl, xm, xi, x_lobe, x_tail, 1.0])
    vs_l = np.array([0.0, 1.0, 0.0, -B, -tail * B, -tail * B])
    xs_r = 2.0 - xs_l[::-1][1:]
    vs_r = vs_l[::-1][1:]
    bx = np.concatenate([xs_l, xs_r])
    bv = np.concatenate([vs_l, vs_r])
    coeffs = np.vstack([(bv[1:] - bv[:-1]) / (bx[1:] - bx[:-1]), bv[:-1]])
    d2 = PPoly(coeffs, bx)
    d1 = d2.antiderivative()
    psi = d1.antiderivative()
    peak = float(psi(1.0))
    scaled = PPoly(psi.c / peak, psi.x)
    return scaled


@dataclass
class BumpProfile:
    """Realized bump psi_eps; exact piecewise cubic, evaluable anywhere."""

    spec: BumpSpec
    params: Params
    shape: PPoly = field(repr=False)
    amplitude: float = 0.0

    @property
    def support(self) -> tuple:
        e, a2 = self.spec.epsilon, self.spec.a2
        return ((1.0 - a2) * e, (1.0 + a2) * e)

    @property
    def inner(self) -> tuple:
        e, a1 = self.spec.epsilon, self.spec.a1
        return ((1.0 - a1) * e, (1.0 + a1) * e)

    def unit(self, y):
        y = np.asarray(y, dtype=float)
        lo, hi = 1.0 - self.spec.a2, 1.0 + self.spec.a2
        out = np.zeros_like(y)
        m = (y >= lo) & (y <= hi)
        out[m] = self.amplitude * self.shape(y[m])
        return out

    def unit_deriv(self, y, nu: int = 1):
        y = np.asarray(y, dtype=float)
        lo, hi = 1.0 - self.spec.a2, 1.0 + self.spec.a2
        out = np.zeros_like(y)
        m = (y >= lo) & (y <= hi)
        out[m] = self.amplitude * self.shape.derivative(nu)(y[m])
        return out

    def __call__(self, x):
        e, a = self.spec.epsilon, self.params.alpha
        return e**a * self.unit(np.asarray(x, dtype=float) / e)

    def deriv(self, x, nu: int = 1):
        e, a = self.spec.epsilon, self.params.alpha
        return e ** (a - nu) * self.unit_deriv(np.asarray(x, dtype=float) / e, nu)

    def sup(self) -> float:
        return self.spec.epsilon**self.params.alpha * self.amplitude


def _scan_lambda_crossings(profile_call, params: Params, lam: float, xs: np.ndarray) -> int:
    v = lam * profile_call(xs) - singular_steady(params, xs)
    return banded_sign_changes(v, default_band(v)).count


def make_bump(spec: BumpSpec, params: Params) -> BumpProfile:
    """Construct and verify a bump for ``spec``.

    If ``spec.amplitude`` is set it fixes the unit-scale peak height and K is
    derived; otherwise K must be set and the amplitude is chosen as the
    smallest one keeping the profile 5% above K x^alpha on the inner window.
    Verified properties (construction fails loudly, naming the violation):
    support and symmetry, psi > K x^alpha on the inner window, sup bound,
    monotone rise, convexity outside the inner window, exactly one crossing
    of U* in each half, and <= 2 sign changes of lam psi - U* for a grid of
    lam in [0,1].
    """
    shape = _shape_ppoly(spec.a1, spec.a2)
    # unit-scale minimum of shape / x^alpha over the inner window
    ys = np.linspace(1.0 - spec.a1, 1.0 + spec.a1, 2001)
    ratio_min = float(np.min(shape(ys) / ys**params.alpha))
    if spec.amplitude > 0:
        amplitude = spec.amplitude
        K = spec.K if spec.K > 0 else amplitude * ratio_min / 1.05
    else:
        if not spec.K > 0:
            raise ValueError("BumpSpec needs either amplitude or K")
        K = spec.K
        amplitude = 1.05 * K / ratio_min
    K1 = spec.K1 if spec.K1 > 0 else amplitude
    bump = BumpProfile(
        spec=BumpSpec(spec.epsilon, spec.a1, spec.a2, K=K, K1=K1, amplitude=amplitude),
        params=params,
        shape=shape,
        amplitude=amplitude,
    )
    _verify_bump(bump, params)
    return bump


def _verify_bump(bump: BumpProfile, params: Params):
    spec = bump.spec
    ys = np.linspace(1.0 - spec.a2, 1.0 + spec.a2, 4001)
    vals = bump.unit(ys)
    if abs(vals[0]) > 1e-13 or abs(vals[-1]) > 1e-13:
        raise ConstructionError("bump support: nonzero value at the support boundary")
    if np.max(np.abs(vals - bump.unit(2.0 - ys))) > 1e-11 * np.max(vals):
        raise ConstructionError("bump symmetry about the center failed")
    if abs(np.max(vals) - bump.amplitude) > 1e-9 * bump.amplitude:
        raise ConstructionError("bump peak is not the prescribed amplitude")
    inner = np.linspace(1.0 - spec.a1, 1.0 + spec.a1, 2001)
    if np.any(bump.unit(inner) <= spec.K * inner**params.alpha):
        raise ConstructionError("bump does not dominate K x^alpha on the inner window")
    if np.max(vals) > spec.K1 * 1.0 + 1e-12:
        raise ConstructionError("bump sup exceeds K1")
    rise = np.linspace(1.0 - spec.a2 + 1e-9, 1.0 - 1e-9, 1001)
    if np.any(bump.unit_deriv(rise) <= 0):
        raise ConstructionError("bump is not strictly increasing on the left half")
    outer = np.concatenate(
        [
            np.linspace(1.0 - spec.a2 + 1e-9, 1.0 - spec.a1 - 1e-9, 801),
            np.linspace(1.0 + spec.a1 + 1e-9, 1.0 + spec.a2 - 1e-9, 801),
        ]
    )
    if np.any(bump.unit_deriv(outer, nu=2) < -1e-9 * bump.amplitude):
        raise ConstructionError("bump convexity outside the inner window failed")
    # crossings of U*: exactly one in each open half of the support (scale
    # invariance x -> eps x makes the unit-scale scan equivalent)
    for lo, hi, name in [
        (1.0 - spec.a2, 1.0, "left"),
        (1.0, 1.0 + spec.a2, "right"),
    ]:
        xs = np.linspace(lo + 1e-9, hi - 1e-9, 3001)
        v = bump.unit(xs) - params.c_p * xs**params.alpha
        if banded_sign_changes(v, default_band(v)).count != 1:
            raise ConstructionError(f"bump must cross U* exactly once in the {name} half")
    xs = np.linspace(1e-4, 1.6, 6001)
    for lam in np.linspace(0.0, 1.0, 21):
        if _scan_lambda_crossings(bump.unit, params, lam, xs) > 2:
            raise ConstructionError(f"lam*bump - U* has more than 2 sign changes at lam={lam:.2f}")


@dataclass
class _Chord:
    """Cumulative integral of zeta (g'-L) over a collar, C^1-interpolated."""

    x0: float
    x1: float
    interp: Callable

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.interp(np.clip(x, self.x0, self.x1))


def _smoothstep_theta(y):
    """Decreasing C^1 cutoff: theta(0)=1, theta(1)=0, theta'(0)=theta'(1)=0."""
    y = np.clip(y, 0.0, 1.0)
    return 1.0 - y * y * (3.0 - 2.0 * y)


class LinkProfile:
    """Convexified profile gbar (optionally + K x^alpha), C^2 on [0,1]."""

    def __init__(self, g, gprime, X, Y, L, eps1, eps2, collar_lo, collar_hi, mid_val_at):
        self.g = g
        self.gprime = gprime
        self.X, self.Y, self.L = X, Y, L
        self.eps1, self.eps2 = eps1, eps2
        self._lo = collar_lo
        self._hi = collar_hi
        self._gX = float(g(np.array([X]))[0])
        self._gY = float(g(np.array([Y]))[0])
        self._lo_total = float(collar_lo(np.array([X + eps1]))[0])

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.array(self.g(x), dtype=float, copy=True)
        inside = (x > self.X) & (x < self.Y)
        if np.any(inside):
            xi = x[inside]
            base = self._gX + self.L * (xi - self.X)
            corr = np.where(
                xi <= self.X + self.eps1,
                self._lo(xi),
                np.where(
                    xi < self.Y - self.eps2,
                    self._lo_total,
                    self._lo_total + self._hi(xi),
                ),
            )
            out[inside] = base + corr
        return out


def convexify(g, X: float, Y: float, gprime=None, samples: int = 4001):
    """Lemma-style convexification of g on [X, Y].

    ``g`` is a callable (vectorized) or a Field; a derivative callable may be
    supplied, otherwise it is taken by spline differentiation. Returns a
    callable equal to g outside (X, Y) and >= g, > 0, convex inside.
    Preconditions g(X) > 0, g(Y) > 0, g'' > 0 on [X, Y] are checked.
    """
    from .grid import Field as _Field

    if isinstance(g, _Field):
        from scipy.interpolate import CubicSpline

        cs = CubicSpline(g.x, g.values)
        base, dbase = (lambda x: cs(x)), (lambda x: cs(x, 1))
    else:
        base = g
        if gprime is not None:
            dbase = gprime
        else:
            xs = np.linspace(X, Y, samples)
            from scipy.interpolate import CubicSpline

            cs = CubicSpline(xs, base(xs))
            dbase = lambda x: cs(np.asarray(x, dtype=float), 1)

    gX = float(base(np.array([X]))[0])
    gY = float(base(np.array([Y]))[0])
    if gX <= 0 or gY <= 0:
        raise ValueError("convexify requires g > 0 at both endpoints")
    xs = np.linspace(X, Y, samples)
    d1 = np.asarray(dbase(xs), dtype=float)
    d2 = np.gradient(d1, xs)
    if np.any(d2[2:-2] <= 0):
        raise ValueError("convexify requires strictly positive curvature on [X, Y]")

    L = (gY - gX) / (Y - X)
    # crossing point of g' through L (unique by convexity)
    below = d1 < L
    if not below[0] or below[-1]:
        raise ValueError("chord slope does not separate g' at the endpoints")
    xc = xs[np.argmin(below)]
    eta = 0.9 * min(xc - X, Y - xc)

    def collar_int(eps1, eps2, absval=False):
        f1 = lambda x: _smoothstep_theta((x - X) / eps1) * (dbase(np.array([x]))[0] - L)
        f2 = lambda x: _smoothstep_theta((Y - x) / eps2) * (dbase(np.array([x]))[0] - L)
        if absval:
            f1v, f2v = (lambda x: abs(f1(x))), (lambda x: abs(f2(x)))
        else:
            f1v, f2v = f1, f2
        i1 = quad(f1v, X, X + eps1, limit=200)[0]
        i2 = quad(f2v, Y - eps2, Y, limit=200)[0]
        return i1, i2

    bound = min(gX, gY)
    eps1 = 0.5 * eta
    for _ in range(60):
        i1, _ = collar_int(eps1, eps1)

        def root_fn(e2):
            _, i2 = collar_int(eps1, e2)
            return i1 + i2

        lo_val = root_fn(1e-3 * eta)
        hi_val = root_fn(eta)
        if lo_val < 0.0 < hi_val:
            eps2 = brentq(root_fn, 1e-3 * eta, eta, xtol=1e-14, rtol=1e-13)
            a1, a2 = collar_int(eps1, eps2, absval=True)
            if a1 + a2 < bound:
                break
        eps1 *= 0.5
    else:
        raise ConstructionError("convexify could not bracket the collar balance equation")

    def make_cum(x0, x1, theta_arg):
        grid_x = np.linspace(x0, x1, 3001)
        vals = theta_arg(grid_x) * (np.asarray(dbase(grid_x), dtype=float) - L)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (vals[1:] + vals[:-1]) * np.diff(grid_x))])
        return _Chord(x0, x1, CubicHermiteSpline(grid_x, cum, vals))

    lo = make_cum(X, X + eps1, lambda x: _smoothstep_theta((x - X) / eps1))
    hi = make_cum(Y - eps2, Y, lambda x: _smoothstep_theta((Y - x) / eps2))
    prof = LinkProfile(base, dbase, X, Y, L, eps1, eps2, lo, hi, None)
    # record the solved balance residual for audit
    prof.balance_residual = root_fn(eps2)
    prof.abs_bound = (a1 + a2, bound)
    _verify_convexify(prof)
    return prof


def _verify_convexify(prof: LinkProfile, tol_curvature: float = 1e-7):
    X, Y = prof.X, prof.Y
    xs = np.linspace(X, Y, 4001)
    gb = prof(xs)
    gv = np.asarray(prof.g(xs), dtype=float)
    scale = max(float(np.max(np.abs(gv))), 1e-30)
    if np.min(gb - gv) < -1e-9 * scale:
        raise ConstructionError("convexified profile dips below g on [X, Y]")
    if np.min(gb) <= 0:
        raise ConstructionError("convexified profile is not positive on [X, Y]")
    d2 = np.gradient(np.gradient(gb, xs), xs)
    if np.min(d2[4:-4]) < -tol_curvature * scale / (Y - X) ** 2:
        raise ConstructionError("convexified profile lost convexity on [X, Y]")


class CompositeLink:
    """h = convexify(psi_lo + psi_hi - K x^alpha) + K x^alpha."""

    def __init__(self, bump_lo: BumpProfile, bump_hi: BumpProfile, params: Params, K: float):
        self.lo = bump_lo
        self.hi = bump_hi
        self.params = params
        self.K = K
        X = bump_lo.inner[1]
        Y = bump_hi.inner[0]
        self.bar = convexify(self._g, X, Y, gprime=self._g_deriv)
        self.X, self.Y = X, Y

    def _g(self, x):
        x = np.asarray(x, dtype=float)
        return self.lo(x) + self.hi(x) - self.K * np.abs(x) ** self.params.alpha

    def _g_deriv(self, x):
        x = np.asarray(x, dtype=float)
        a = self.params.alpha
        return self.lo.deriv(x) + self.hi.deriv(x) - self.K * a * np.abs(x) ** (a - 1.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        return self.bar(x) + self.K * np.abs(x) ** self.params.alpha

    def sup(self) -> float:
        xs = np.linspace(self.lo.support[0], self.hi.support[1], 6001)
        return float(np.max(self(xs)))


def make_link(bump_lo: BumpProfile, bump_hi: BumpProfile, params: Params, K: Optional[float] = None):
    """Link two bumps above K x^alpha; verifies the joining properties.

    Requires eps_lo <= eps_hi / 2. The link equals psi_lo below its inner
    window, equals psi_hi above the other window, dominates psi_lo + psi_hi,
    stays above K x^alpha with convex difference in between, and every convex
    combination with psi_lo + psi_hi meets U* at most twice on [eps_lo,
    eps_hi].
    """
    e_lo, e_hi = bump_lo.spec.epsilon, bump_hi.spec.epsilon
    if e_lo > e_hi / 2.0:
        raise ValueError("link requires eps_lo <= eps_hi / 2")
    K = K if K is not None else min(bump_lo.spec.K, bump_hi.spec.K)
    link = CompositeLink(bump_lo, bump_hi, params, K)
    _verify_link(link, params)
    return link


def _verify_link(link: CompositeLink, params: Params):
    lo, hi = link.lo, link.hi
    e_lo, e_hi = lo.spec.epsilon, hi.spec.epsilon
    xs_l = np.linspace(1e-6, lo.inner[1], 501)
    if np.max(np.abs(link(xs_l) - lo(xs_l))) > 1e-9 * max(lo.sup(), 1e-30):
        raise ConstructionError("link must equal the lower bump below its inner window")
    xs_r = np.linspace(hi.inner[0], 1.0, 501)
    if np.max(np.abs(link(xs_r) - hi(xs_r))) > 1e-9 * hi.sup():
        raise ConstructionError("link must equal the upper bump above its inner window")
    xs_m = np.linspace(link.X, link.Y, 2001)
    both = lo(xs_m) + hi(xs_m)
    if np.min(link(xs_m) - both) < -1e-9 * hi.sup():
        raise ConstructionError("link dips below the bump sum")
    diff = link(xs_m) - link.K * xs_m**params.alpha
    if np.min(diff) <= 0:
        raise ConstructionError("link does not dominate K x^alpha")
    d2 = np.gradient(np.gradient(diff, xs_m), xs_m)
    if np.min(d2[4:-4]) < -1e-6 * hi.sup() / (link.Y - link.X) ** 2:
        raise ConstructionError("link minus K x^alpha lost convexity")
    xs = np.linspace(0.75 * e_lo, 1.25 * e_hi, 4001)
    hv = link(xs)
    bv = lo(xs) + hi(xs)
    for lam in (0.0, 0.25, 0.5, 0.75, 1.0):
        v = lam * hv + (1.0 - lam) * bv - singular_steady(params, xs)
        sel = (xs >= e_lo) & (xs <= e_hi)
        if banded_sign_changes(v[sel], default_band(v[sel])).count > 2:
            raise ConstructionError(
                f"link blend at lam={lam} has more than 2 crossings of U* between the bumps"
            )
