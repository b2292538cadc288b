"""Critical-parameter searches and scenario orchestration.

``bisect_critical`` locates the boundary of the positivity set
E = { mu : objective(mu) > 0 } reachable from mu = 1 by bisection, where the
objective is max (or min) of the boundary trace over a planned time window
minus the loss threshold. The set need not be an interval; the audit trail
records every evaluation so a non-monotone sign pattern is visible rather
than hidden.

``nested_critical`` iterates the construction level by level: evaluating the
level-j objective at a trial mu_j requires the solved inner problem for the
coordinates below, so the recursion solves inward and memoizes inner
critical values keyed by rounded outer parameters.

``run_scenario`` is the full pipeline: plan -> (nested search if deformed)
-> sweep the truncation schedule -> classify -> verify the report against
the requested behavior sequence.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional, Sequence

import numpy as np

from .analysis import ClassificationReport, classify
from .calibration import CalibrationConstants, schedule_for_slope
from .core import Params, TruncationLevel
from .grid import Field, Grid, make_grid
from .multibump import DeformationPoint, MultibumpPlan, PlanError, deform, plan_multibump
from .solver import SolveConfig, Trajectory, lbc_threshold, viscosity_solve

__all__ = [
    "ObjectiveMode",
    "ObjectiveWindow",
    "CriticalResult",
    "SearchError",
    "BudgetExhausted",
    "SolveBudget",
    "bisect_critical",
    "nested_critical",
    "ScenarioResult",
    "run_scenario",
    "scenario_config",
]


class SearchError(RuntimeError):
    pass


class BudgetExhausted(SearchError):
    pass


@dataclass
class SolveBudget:
    """Cap on the number of full PDE sweeps a pipeline may spend."""

    limit: int = 10**9
    used: int = 0

    def spend(self, n: int = 1):
        self.used += n
        if self.used > self.limit:
            raise BudgetExhausted(f"PDE solve budget exhausted ({self.used}/{self.limit})")


@dataclass(frozen=True)
class ObjectiveWindow:
    """Time window J and sense of the trace objective over it.

    mode ``max_positive`` (an amplitude-reduced bump, xi=0) asks whether any
    trace appears in J; ``min_positive`` (a link, xi=2) asks whether the
    trace stays positive throughout J.
    """

    t_lo: float
    t_hi: float
    mode: str  # "max_positive" | "min_positive"

    def __post_init__(self):
        if not self.t_hi > self.t_lo >= 0.0:
            raise ValueError("objective window must be a nonempty interval")
        if self.mode not in ("max_positive", "min_positive"):
            raise ValueError(f"unknown objective mode {self.mode!r}")

    def evaluate(self, traj: Trajectory) -> float:
        """Signed objective: trace extremum over J minus the loss threshold."""
        sel = (traj.times >= self.t_lo) & (traj.times <= self.t_hi)
        if not np.any(sel):
            raise SearchError("trajectory has no diagnostic points inside the window")
        thr = traj.lbc_thresholds()[sel]
        tr = traj.trace[sel]
        vals = tr - thr
        return float(np.max(vals)) if self.mode == "max_positive" else float(np.min(vals))


@dataclass
class CriticalResult:
    mu_star: float
    bracket: tuple
    evaluations: int
    audit: list  # (mu, objective) in evaluation order

    def __post_init__(self):
        lo, hi = self.bracket
        if not lo <= self.mu_star <= hi:
            raise ValueError("critical value must lie inside its bracket")


def bisect_critical(
    family: Callable[[float], Trajectory],
    window: ObjectiveWindow,
    tol: float = 1e-3,
    mu_lo: float = 0.0,
    mu_hi: float = 1.0,
    budget: Optional[SolveBudget] = None,
) -> CriticalResult:
    """Bisect the objective sign over mu in [mu_lo, mu_hi].

    ``family`` maps mu to a solved trajectory. Requires objective(mu_hi) > 0
    and objective(mu_lo) <= 0; monotonicity in between is NOT assumed - the
    returned value estimates inf{mu: objective > 0 reachable from mu_hi} and
    the audit preserves any anomalous sign pattern encountered.
    """
    budget = budget or SolveBudget()
    audit = []

    def evaluate(mu: float) -> float:
        budget.spend()
        val = window.evaluate(family(mu))
        audit.append((mu, val))
        return val

    f_hi = evaluate(mu_hi)
    if not f_hi > 0:
        raise SearchError(f"objective at mu={mu_hi:g} is {f_hi:.3e}, not positive")
    f_lo = evaluate(mu_lo)
    if f_lo > 0:
        raise SearchError(f"objective at mu={mu_lo:g} is {f_lo:.3e} > 0; no sign change to bracket")
    lo, hi = mu_lo, mu_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if evaluate(mid) > 0:
            hi = mid
        else:
            lo = mid
    return CriticalResult(
        mu_star=0.5 * (lo + hi), bracket=(lo, hi), evaluations=len(audit), audit=audit
    )


def _plan_slope_scale(plan: MultibumpPlan, grid: Grid) -> float:
    fld = grid.sample(plan.base_data())
    return float(np.max(np.abs(fld.gradient())))


def scenario_config(
    plan: MultibumpPlan,
    grid: Grid,
    t_end: Optional[float] = None,
    n_diag: int = 420,
    levels: int = 2,
    headroom: float = 1.25,
) -> SolveConfig:
    """Solve configuration adapted to a plan's scales.

    The truncation schedule clears the steepest bump's initial slope; the
    diagnostic grid is geometric from below the first bump's time marks and
    is densified inside every objective window.
    """
    slope0 = _plan_slope_scale(plan, grid)
    schedule = schedule_for_slope(slope0, levels=levels, headroom=headroom)
    t_end = t_end if t_end is not None else 10.0 * plan.last_mark
    extra = []
    for ell in range(1, plan.q + 1):
        lo, hi = plan.window(ell)
        extra.extend(np.linspace(lo, hi, 80))
    for i in range(plan.m):
        extra.extend(np.linspace(plan.s_marks[i, 0] * 0.8, plan.s_marks[i, 2] * 1.2, 40))
        extra.extend(np.linspace(plan.shat_marks[i, 0] * 0.8, plan.shat_marks[i, 2] * 1.2, 24))
    extra.extend(np.linspace(plan.shat_marks[plan.m, 0] * 0.8, plan.shat_marks[plan.m, 2] * 1.2, 24))
    eps1 = float(plan.epsilons[0])
    prof = plan.calibration.profile(plan.link_profile == "strict" and any(x == 2 for x in plan.xi))
    return SolveConfig(
        k_schedule=schedule,
        t_end=t_end,
        n_diag=n_diag,
        diag_t_min=0.02 * prof.c1 * eps1**2,
        extra_diag_times=tuple(float(t) for t in extra),
        time_tol=1e-6 * max(eps1 ** plan.params.alpha, 0.05),
        lbc_ref_scale=eps1,
        # during singular eras both levels run at the estimator's error
        # floor, so their ordering is only clean to that scale
        mono_tol=0.5e-3,
    )


def _mu_key(mu: Sequence[float], tol: float) -> tuple:
    step = tol / 4.0
    return tuple(int(round(v / step)) for v in mu)


@dataclass
class NestedResult:
    Lambda: tuple
    results: list  # CriticalResult per level, outermost last
    data: object  # the deformed initial data at Lambda
    trajectory: Trajectory
    evaluations: int
    partial: bool = False
    deepest_level: int = 0


def nested_critical(
    plan: MultibumpPlan,
    grid: Grid,
    config: Optional[SolveConfig] = None,
    tol: float = 1e-3,
    budget: Optional[SolveBudget] = None,
    params: Optional[Params] = None,
) -> NestedResult:
    """Iteratively select the critical deformation parameters Lambda.

    Level j's objective at a trial mu_j is evaluated on the solution whose
    inner coordinates are already critical: evaluating it requires solving
    the level-(j-1) nested problem for (mu_j, outer...). Inner solutions are
    memoized on outer parameters rounded to tol/4.
    """
    params = params or plan.params
    if plan.q == 0:
        raise SearchError("plan has no deformed bumps; nothing to search")
    if plan.q > 3:
        raise SearchError(f"nested search capped at q=3, plan needs q={plan.q}")
    cfg = config if config is not None else scenario_config(plan, grid)
    budget = budget or SolveBudget()
    memo: dict = {}

    def solve_at(mu: tuple) -> Trajectory:
        key = _mu_key(mu, tol)
        if key not in memo:
            budget.spend()
            data = deform(plan, DeformationPoint(mu))
            memo[key] = viscosity_solve(grid.sample(data), cfg, params)
        return memo[key]

    def critical_inner(j: int, outer: tuple) -> tuple:
        """Lambda_1..Lambda_j given fixed outer coordinates (j+1..q)."""
        if j == 0:
            return ()
        lo, hi = plan.window(j)
        mode = "max_positive" if plan.xi[plan.deformed[j - 1] - 1] == 0 else "min_positive"
        window = ObjectiveWindow(lo, hi, mode)
        inner_memo: dict = {}

        def family(mu_j: float) -> Trajectory:
            key = _mu_key((mu_j,) + outer, tol)
            if key not in inner_memo:
                inner = critical_inner(j - 1, (mu_j,) + outer)
                inner_memo[key] = solve_at(inner + (mu_j,) + outer)
            return inner_memo[key]

        res = bisect_critical(family, window, tol=tol, budget=budget)
        results_per_level[j - 1] = res
        return critical_inner(j - 1, (res.mu_star,) + outer) + (res.mu_star,)

    results_per_level: list = [None] * plan.q
    partial = False
    deepest = 0
    try:
        Lambda = critical_inner(plan.q, ())
        deepest = plan.q
    except BudgetExhausted:
        partial = True
        done = [r for r in results_per_level if r is not None]
        deepest = len(done)
        Lambda = tuple(r.mu_star for r in done) + (1.0,) * (plan.q - len(done))
    data = deform(plan, DeformationPoint(Lambda))
    traj = solve_at(Lambda) if not partial else viscosity_solve(grid.sample(data), cfg, params)
    return NestedResult(
        Lambda=tuple(Lambda),
        results=results_per_level,
        data=data,
        trajectory=traj,
        evaluations=budget.used,
        partial=partial,
        deepest_level=deepest,
    )


@dataclass
class ScenarioResult:
    sigma_bar: tuple
    plan: MultibumpPlan
    Lambda: tuple
    trajectory: Trajectory
    report: ClassificationReport
    verdict: bool
    mismatches: list
    evaluations: int
    partial: bool = False


def _verify_report(plan: MultibumpPlan, report: ClassificationReport) -> list:
    """Check the classified behavior inside each planned interval."""
    mismatches = []
    intervals = plan.behavior_intervals()
    for j, (sig, (lo, hi)) in enumerate(zip(plan.sigma_bar, intervals)):
        inside = [tr for tr in report.transitions if lo < tr.t < hi]
        l_runs = [iv for iv in report.intervals if iv[2] == "L" and iv[0] >= lo and iv[1] <= hi]
        bounces = [tr for tr in inside if tr.kind == "bouncing"]
        no_lbc = [tr for tr in inside if tr.kind == "GBU_no_LBC"]
        if sig == 0:
            ok = len(no_lbc) == 1 and not l_runs
            want = "one blow-up without loss, no L interval"
        elif sig == 1:
            ok = len(l_runs) == 1 and not bounces and not no_lbc
            want = "exactly one L interval"
        else:
            ok = len(l_runs) == sig and len(bounces) == sig - 1 and not no_lbc
            want = f"{sig} L intervals joined by {sig - 1} bounces"
        if not ok:
            mismatches.append(
                f"interval {j + 1} ({lo:.3e}, {hi:.3e}): wanted {want}, got "
                f"{len(l_runs)} L runs, {len(bounces)} bounces, {len(no_lbc)} no-loss events"
            )
    outside_L = [
        iv for iv in report.intervals
        if iv[2] == "L" and (iv[1] <= intervals[0][0] or iv[0] >= intervals[-1][1])
    ]
    if outside_L:
        mismatches.append(f"{len(outside_L)} L intervals outside the planned windows")
    return mismatches


def run_scenario(
    sigma_bar: Sequence[int],
    params: Params,
    calib: CalibrationConstants,
    grid: Optional[Grid] = None,
    config: Optional[SolveConfig] = None,
    tol: float = 1e-3,
    budget: Optional[SolveBudget] = None,
    classify_kwargs: Optional[dict] = None,
) -> ScenarioResult:
    """Full pipeline for one behavior sequence; raises PlanError/SearchError
    on construction failures, returns verdict=False on a classified mismatch."""
    grid = grid if grid is not None else make_grid()
    budget = budget or SolveBudget()

    def build(profile):
        return plan_multibump(
            sigma_bar, params, calib, link_profile=profile,
            grid_h_at=lambda x: float(np.interp(x, grid.nodes[:-1], np.diff(grid.nodes))),
        )

    plan = build("light")
    cfg = config if config is not None else scenario_config(plan, grid)
    partial = False
    if plan.q > 0:
        try:
            nested = nested_critical(plan, grid, cfg, tol=tol, budget=budget)
        except SearchError as err:
            if isinstance(err, BudgetExhausted) or not any(x == 2 for x in plan.xi):
                raise
            # the light link did not hold its window; rebuild strictly
            plan = build("strict")
            cfg = config if config is not None else scenario_config(plan, grid)
            nested = nested_critical(plan, grid, cfg, tol=tol, budget=budget)
        Lambda = nested.Lambda
        traj = nested.trajectory
        partial = nested.partial
    else:
        Lambda = ()
        budget.spend()
        traj = viscosity_solve(grid.sample(plan.base_data()), cfg, params)
    report = classify(traj, params, **(classify_kwargs or {}))
    mismatches = _verify_report(plan, report)
    return ScenarioResult(
        sigma_bar=tuple(int(s) for s in sigma_bar),
        plan=plan,
        Lambda=Lambda,
        trajectory=traj,
        report=report,
        verdict=not mismatches and not partial,
        mismatches=mismatches,
        evaluations=budget.used,
        partial=partial,
    )
