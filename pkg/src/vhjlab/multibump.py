"""Recursive multibump plans and their q-parameter deformations.

Given a target behavior sequence sigma_bar (one entry per planned interval:
0 = blow-up without boundary-condition loss, 1 = one loss/recovery episode,
m >= 2 = m episodes joined by m-1 bounces), the plan

* computes the bump count m and deformation indices via
      kappa_1 = 1,  kappa_{i+1} = kappa_i + max(1, sigma_i),  m = kappa_{d+1}-1,
  with xi_j = sigma_i for single bumps, and runs of 2s ending in a 1 for the
  bounce chains;
* runs the backward scale recursion from eps_{m+1}: each gamma_i bounds the
  classicality window before bump i wakes up, and eps_{i-1} is chosen so the
  previous episode is over (and its debris quiescent) well before that
  window:
      gamma_i  = min( gamma_0(eps_i/2, |H_i|) / 4,  c1 eps_i^2 / (2L) ),
      eps_{i-1} = min( eps_i/8,  sqrt(L gamma_i / c_rec),
                       sqrt(L gamma_i / c2) / 2 );
* materializes bumps, links and envelopes and records the time marks
      s_i^-,s_i,s_i^+ = (c1, c0, c2) eps_i^2,
      shat_i^-,shat_i,shat_i^+ = (1, 1.5, 2) L gamma_i,
  which interleave as ... shat_i^- < shat_i < shat_i^+ < s_i^- < s_i < s_i^+
  < shat_{i+1}^- ...

The deformation family is
    Phi_mu = phihat + sum_{xi=0} (mu_l - 1) phi_{i_l}
                    + sum_{xi=2} mu_l (h_{i_l} - phi_{i_l} - phi_{i_l+1}),
verified at construction to stay below c_p, be supported in (0, 1/2), and
meet U* at most 2m times.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import banded_sign_changes, default_band
from .bumps import BumpProfile, BumpSpec, CompositeLink, ConstructionError, make_bump, make_link
from .calibration import CalibrationConstants
from .core import Params, singular_steady

__all__ = [
    "PlanError",
    "MultibumpPlan",
    "DeformationPoint",
    "behavior_indices",
    "plan_multibump",
    "deform",
]


class PlanError(RuntimeError):
    pass


def behavior_indices(sigma_bar: Sequence[int]) -> tuple:
    """(kappa, xi, m, q, deformed) from the target behavior sequence."""
    sigma = [int(s) for s in sigma_bar]
    if not sigma or any(s < 0 for s in sigma):
        raise ValueError("sigma_bar must be a nonempty sequence of nonnegative integers")
    kappa = [1]
    for s in sigma:
        kappa.append(kappa[-1] + max(1, s))
    m = kappa[-1] - 1
    xi = [1] * m
    for i, s in enumerate(sigma):
        j = kappa[i] - 1
        if s <= 1:
            xi[j] = s
        else:
            for r in range(s - 1):
                xi[j + r] = 2
            xi[j + s - 1] = 1
    deformed = [j + 1 for j, x in enumerate(xi) if x != 1]  # 1-based bump indices
    return tuple(kappa), tuple(xi), m, len(deformed), tuple(deformed)


def _gamma0(eps: float, M: float, p: float) -> float:
    """Classicality-window scale: gamma_0(eps, M) = (eps/16) min(1, 1/lambda(M))."""
    lam = M + M**p
    return (eps / 16.0) * min(1.0, 1.0 / lam) if lam > 0 else eps / 16.0


class EnvelopeProfile:
    """Pointwise maximum of a family of profiles."""

    def __init__(self, parts):
        self.parts = list(parts)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        if not self.parts:
            return np.zeros_like(x)
        vals = np.stack([np.asarray(pfn(x), dtype=float) for pfn in self.parts])
        return np.max(vals, axis=0)


class SumProfile:
    def __init__(self, parts, coeffs=None):
        self.parts = list(parts)
        self.coeffs = list(coeffs) if coeffs is not None else [1.0] * len(self.parts)

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros_like(x)
        for c, pfn in zip(self.coeffs, self.parts):
            if c != 0.0:
                out = out + c * np.asarray(pfn(x), dtype=float)
        return out


@dataclass
class MultibumpPlan:
    sigma_bar: tuple
    link_profile: str
    kappa: tuple
    xi: tuple
    m: int
    q: int
    deformed: tuple  # 1-based indices i_l with xi != 1
    epsilons: np.ndarray  # eps_1 .. eps_{m+1}
    gammas: np.ndarray  # gamma_1 .. gamma_{m+1}
    bumps: list
    links: list  # h_1 .. h_m (h_m is bump m itself)
    envelopes: list  # H_1 .. H_{m+1}
    calibration: CalibrationConstants
    params: Params
    s_marks: np.ndarray  # rows: (s_i^-, s_i, s_i^+), i = 1..m
    shat_marks: np.ndarray  # rows: (shat_i^-, shat_i, shat_i^+), i = 1..m+1
    verification: dict = field(default_factory=dict)

    def base_data(self) -> SumProfile:
        """phihat: the undeformed sum of bumps."""
        return SumProfile(self.bumps)

    def window(self, ell: int) -> tuple:
        """Objective window J_ell for the ell-th deformed bump (1-based)."""
        i = self.deformed[ell - 1]
        if self.xi[i - 1] == 0:
            return (float(self.shat_marks[i - 1, 1]), float(self.shat_marks[i, 1]))
        return (float(self.s_marks[i - 1, 1]), float(self.s_marks[i, 1]))

    def behavior_intervals(self) -> list:
        """(t_lo, t_hi) per sigma_bar entry: (shat_{kappa_i}, shat_{kappa_{i+1}})."""
        out = []
        for j in range(len(self.sigma_bar)):
            lo = float(self.shat_marks[self.kappa[j] - 1, 1])
            hi = float(self.shat_marks[self.kappa[j + 1] - 1, 1])
            out.append((lo, hi))
        return out

    @property
    def last_mark(self) -> float:
        return float(self.shat_marks[-1, 2])


def plan_multibump(
    sigma_bar: Sequence[int],
    params: Params,
    calib: CalibrationConstants,
    eps_top: Optional[float] = None,
    grid_h_at: Optional[Callable[[float], float]] = None,
    min_nodes_per_bump: int = 24,
    max_bumps: int = 6,
    link_profile: str = "light",
) -> MultibumpPlan:
    """Build and verify the full multibump plan for ``sigma_bar``."""
    kappa, xi, m, q, deformed = behavior_indices(sigma_bar)
    if m > max_bumps:
        raise PlanError(f"plan needs m={m} bumps, above the guard {max_bumps}")
    needs_links = any(x == 2 for x in xi)
    # light plans build links at the plain amplitude: whether the link holds
    # the trace across its window at mu=1 is then checked empirically by the
    # search preconditions, and the strict (plateau-calibrated) profile is
    # the fallback; its amplitude shrinks every scale by ~10x
    prof = calib.profile(needs_links=needs_links and link_profile == "strict")
    L, c1, c2, c_rec = calib.L, prof.c1, prof.c2, prof.c_rec
    # the eps_{m+1} cap only has to make the verified |H_1| < 2^-alpha c_p
    # budget attainable (eps_m <= eps_{m+1}/8 gives the factor 8)
    budget = 2.0 ** (-params.alpha) * params.c_p
    eps_cap = min(0.225, (8.0 / 1.3) * (budget / prof.K1) ** (1.0 / params.alpha))
    eps_top = eps_top if eps_top is not None else eps_cap
    if eps_top > 0.25:
        raise PlanError(f"eps_{m+1} = {eps_top:.3g} must stay below 1/4")

    # backward recursion: scales first (envelope norms use the sup scale)
    eps = np.zeros(m + 1)
    gam = np.zeros(m + 1)
    eps[m] = eps_top
    sup_scale = prof.K1 * (eps_top / 8.0) ** params.alpha  # ~ |H_i| sup scale
    # the classicality window before bump i must close before bump i can
    # blow up, i.e. 2 L gamma_i < c_gbu eps_i^2 (c_gbu carries its own margin
    # below the earliest pilot onset, which also keeps the mark chain strict)
    c_gbu = prof.c_gbu
    for i in range(m, 0, -1):
        gam[i] = min(
            0.25 * _gamma0(eps[i] / 2.0, sup_scale, params.p),
            (c_gbu / (2.0 * L)) * eps[i] ** 2,
        )
        eps[i - 1] = min(
            eps[i] / 8.0,
            math.sqrt(L * gam[i] / c_rec),
            0.5 * math.sqrt(L * gam[i] / c2),
        )
    gam[0] = min(
        0.25 * _gamma0(eps[0] / 2.0, sup_scale, params.p),
        (c_gbu / (2.0 * L)) * eps[0] ** 2,
    )

    if grid_h_at is not None:
        width = (calib.a2 - (-calib.a2)) * eps[0]
        h_local = grid_h_at(eps[0])
        if width / h_local < min_nodes_per_bump:
            raise PlanError(
                f"smallest bump (eps_1={eps[0]:.3e}) spans ~{width / h_local:.0f} grid cells; "
                "use a finer grid or fewer bumps"
            )

    bumps = [
        make_bump(
            BumpSpec(epsilon=float(eps[i]), a1=calib.a1, a2=calib.a2, amplitude=prof.amplitude),
            params,
        )
        for i in range(m)
    ]
    links: list = []
    for i in range(m - 1):
        links.append(make_link(bumps[i], bumps[i + 1], params, K=prof.K))
    if m >= 1:
        links.append(bumps[m - 1])

    envelopes: list = []
    for i in range(m):
        envelopes.append(EnvelopeProfile(links[i:]))
    envelopes.append(SumProfile([]))  # H_{m+1} = 0

    s_marks = np.array([[c1 * e**2, prof.c0 * e**2, c2 * e**2] for e in eps[:m]])
    shat_marks = np.array([[L * g, 1.5 * L * g, 2.0 * L * g] for g in gam])

    plan = MultibumpPlan(
        sigma_bar=tuple(int(s) for s in sigma_bar),
        link_profile=link_profile,
        kappa=kappa,
        xi=xi,
        m=m,
        q=q,
        deformed=deformed,
        epsilons=eps,
        gammas=gam,
        bumps=bumps,
        links=links,
        envelopes=envelopes,
        calibration=calib,
        params=params,
        s_marks=s_marks,
        shat_marks=shat_marks,
    )
    _verify_plan(plan)
    return plan


def _verify_plan(plan: MultibumpPlan):
    params = plan.params
    eps = plan.epsilons
    report = {}
    # geometric ladder
    if plan.m >= 1 and np.any(eps[:-1] > eps[1:] / 8.0 + 1e-15):
        raise PlanError("scale recursion violated eps_{i-1} <= eps_i / 8")
    # time mark interleaving:
    # shat_i^- < shat_i < shat_i^+ < s_i^- < s_i < s_i^+ < shat_{i+1}^-
    chain = []
    for i in range(plan.m):
        chain.extend(plan.shat_marks[i])
        chain.extend(plan.s_marks[i])
    chain.extend(plan.shat_marks[plan.m])
    if np.any(np.diff(np.asarray(chain)) <= 0):
        raise PlanError("time marks failed to interleave")
    report["time_marks_ordered"] = True
    # disjoint supports
    for lo, hi in zip(plan.bumps[:-1], plan.bumps[1:]):
        if lo.support[1] >= hi.support[0]:
            raise PlanError("bump supports are not pairwise disjoint")
    # h_i >= phi_i + phi_{i+1} (checked again at plan level, on the real scales)
    for i in range(plan.m - 1):
        xs = np.linspace(plan.bumps[i].support[0], plan.bumps[i + 1].support[1], 2001)
        gap = plan.links[i](xs) - (plan.bumps[i](xs) + plan.bumps[i + 1](xs))
        if np.min(gap) < -1e-9 * plan.bumps[i + 1].sup():
            raise PlanError("link dips below its bump pair")
    # envelope properties: H_i = phi_i on [0, (1+a1) eps_i], H_i >= phi_i, and
    # |H_1| below the deformation budget with support in (0, 1/2)
    for i in range(plan.m):
        e = float(eps[i])
        xs = np.linspace(1e-9, (1.0 + plan.calibration.a1) * e, 401)
        if np.max(np.abs(plan.envelopes[i](xs) - plan.bumps[i](xs))) > 1e-9 * plan.bumps[i].sup():
            raise PlanError(f"envelope H_{i+1} does not reduce to bump {i+1} below its window")
        xs = np.linspace(1e-9, 1.0, 2001)
        if np.min(plan.envelopes[i](xs) - plan.bumps[i](xs)) < -1e-9 * plan.bumps[i].sup():
            raise PlanError(f"envelope H_{i+1} dips below bump {i+1}")
    xs = np.linspace(1e-9, 1.0, 4001)
    h1 = plan.envelopes[0](xs) if plan.m >= 1 else np.zeros_like(xs)
    sup_h1 = float(np.max(h1))
    budget = 2.0 ** (-params.alpha) * params.c_p
    if not sup_h1 < budget:
        raise PlanError(f"|H_1| = {sup_h1:.4f} is not below the budget 2^-alpha c_p = {budget:.4f}")
    if np.any(h1[xs >= 0.5] > 0):
        raise PlanError("H_1 support leaks outside (0, 1/2)")
    report["sup_H1"] = sup_h1
    report["sup_H1_budget"] = budget
    # sup bound of links against K1
    profv = plan.calibration.profile(needs_links=plan.link_profile == "strict" and any(x == 2 for x in plan.xi))
    for i in range(plan.m - 1):
        e_hi = float(eps[i + 1])
        s = plan.links[i].sup() if isinstance(plan.links[i], CompositeLink) else plan.bumps[i].sup()
        if s > profv.K1 * e_hi**params.alpha * (1.0 + 1e-9):
            raise PlanError(f"link {i+1} sup exceeds K1 eps^alpha")
    plan.verification = report


@dataclass(frozen=True)
class DeformationPoint:
    mu: tuple

    def __post_init__(self):
        mu = tuple(float(v) for v in self.mu)
        if any(not 0.0 <= v <= 1.0 for v in mu):
            raise ValueError("deformation parameters must lie in [0, 1]")
        object.__setattr__(self, "mu", mu)


class DeformedData:
    """Phi_mu as a callable, with its construction-time verification report."""

    def __init__(self, plan: MultibumpPlan, point: DeformationPoint):
        if len(point.mu) != plan.q:
            raise ValueError(f"deformation point has {len(point.mu)} coordinates, plan needs {plan.q}")
        self.plan = plan
        self.point = point
        parts = list(plan.bumps)
        coeffs = [1.0] * plan.m
        extra_parts = []
        extra_coeffs = []
        for ell, i in enumerate(plan.deformed):
            mu = point.mu[ell]
            if plan.xi[i - 1] == 0:
                coeffs[i - 1] += mu - 1.0
            else:  # xi == 2: add mu*(h_i - phi_i - phi_{i+1})
                extra_parts.append(plan.links[i - 1])
                extra_coeffs.append(mu)
                coeffs[i - 1] -= mu
                coeffs[i] -= mu
        self._sum = SumProfile(parts + extra_parts, coeffs + extra_coeffs)
        self._verify()

    def __call__(self, x):
        return self._sum(x)

    def _verify(self):
        plan, params = self.plan, self.plan.params
        xs = np.linspace(1e-9, 1.0, 6001)
        v = self(xs)
        if float(np.max(v)) >= params.c_p:
            raise ConstructionError("deformed data reaches c_p")
        if np.any(v[xs >= 0.5] > 1e-12):
            raise ConstructionError("deformed data leaks outside (0, 1/2)")
        if np.min(v) < -1e-10:
            raise ConstructionError("deformed data went negative")
        diff = v - singular_steady(params, xs)
        crossings = banded_sign_changes(diff, default_band(diff)).count
        if crossings > 2 * plan.m:
            raise ConstructionError(
                f"deformed data meets U* {crossings} times, above the 2m = {2 * plan.m} budget"
            )
        self.crossings = crossings


def deform(plan: MultibumpPlan, point: DeformationPoint) -> DeformedData:
    """Materialize Phi_mu (verified)."""
    return DeformedData(plan, point)
