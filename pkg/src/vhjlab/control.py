"""Monte Carlo verification of the stochastic-control reading of the model.

A controlled particle dX = alpha ds + sqrt(2) dW starts at x0 in (0,1), is
absorbed on exit, collects the reward u0(X_t) if still alive at the horizon,
and pays k_p |alpha|^q per unit time while alive (q = p/(p-1)). The value of
the game is the solution of the equation evolved from the reward as initial
data, so every simulated policy's mean gain must sit below the PDE value
(within CI and solver budget), and the feedback policy

    alpha(x, s) = p |w_x|^(p-2) w_x   at remaining time (horizon - s)

read off the stored value field should approach it from below.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np
from scipy.linalg import solve_banded

from .core import Params, control_constants
from .grid import Field
from .solver import Trajectory

__all__ = ["Policy", "ControlRun", "simulate_gain", "heat_value", "pde_value"]


class Policy(enum.Enum):
    ZERO_CONTROL = "zero_control"
    PDE_FEEDBACK = "pde_feedback"


@dataclass
class ControlRun:
    x0: float
    horizon: float
    n_paths: int = 10000
    dt_mc: Optional[float] = None
    policy: Policy = Policy.ZERO_CONTROL
    seed: int = 0
    n_shards: int = 8
    slope_clip: float = 80.0
    # results
    mean_gain: Optional[float] = None
    ci_halfwidth: Optional[float] = None
    exit_overshoot_frac: Optional[float] = None
    accuracy_warning: bool = False

    def __post_init__(self):
        if not 0.0 < self.x0 < 1.0:
            raise ValueError("start point must lie in (0, 1)")
        if self.n_paths < 1000:
            raise ValueError("need at least 1000 paths")

    def resolved_dt(self) -> float:
        if self.dt_mc is not None:
            return self.dt_mc
        edge = min(self.x0, 1.0 - self.x0)
        return min(self.horizon / 400.0, (0.05 * edge) ** 2)


def _feedback_table(value_traj: Trajectory, horizon: float, n_times: int = 129):
    """Gradient of the value field sampled on a regular remaining-time grid."""
    x = value_traj.grid.nodes
    taus = np.linspace(0.0, horizon, n_times)
    grads = np.empty((n_times, x.size))
    for j, tau in enumerate(taus):
        fld = value_traj.field_at(max(tau, float(value_traj.times[0])))
        grads[j] = fld.gradient()
    return x, taus, grads


def simulate_gain(
    run: ControlRun,
    reward: Field,
    value_traj: Optional[Trajectory],
    params: Params,
) -> ControlRun:
    """Estimate the expected net gain of ``run.policy``; returns a completed copy.

    Paths advance by Euler-Maruyama with absorption at the first grid exit;
    an exit-overshoot fraction above 5% flags the accuracy warning (the step
    was too coarse for the boundary).
    """
    consts = control_constants(params)
    q = params.q
    p = params.p
    dt = run.resolved_dt()
    n_steps = int(math.ceil(run.horizon / dt))
    dt = run.horizon / n_steps
    sq2dt = math.sqrt(2.0 * dt)
    reward_x = reward.x
    reward_v = reward.values

    feedback = None
    if run.policy is Policy.PDE_FEEDBACK:
        if value_traj is None:
            raise ValueError("pde_feedback needs the solved value trajectory")
        fx, ftaus, fgrads = _feedback_table(value_traj, run.horizon)

    per_shard = run.n_paths // run.n_shards
    counts = [per_shard] * run.n_shards
    counts[-1] += run.n_paths - per_shard * run.n_shards
    gains = []
    overshoot = 0
    for shard, n_sh in enumerate(counts):
        rng = np.random.default_rng([run.seed, shard])
        X = np.full(n_sh, run.x0)
        alive = np.ones(n_sh, dtype=bool)
        cost = np.zeros(n_sh)
        for j in range(n_steps):
            if not np.any(alive):
                break
            xi = rng.standard_normal(n_sh)
            if run.policy is Policy.PDE_FEEDBACK:
                tau = run.horizon - j * dt
                jt = int(np.clip(round(tau / run.horizon * (ftaus.size - 1)), 0, ftaus.size - 1))
                wx = np.interp(X[alive], fx, fgrads[jt])
                wx = np.clip(wx, -run.slope_clip, run.slope_clip)
                alpha = p * np.abs(wx) ** (p - 2.0) * wx
            else:
                alpha = 0.0
            dX = np.zeros(n_sh)
            dX[alive] = (alpha * dt if np.ndim(alpha) else 0.0) + sq2dt * xi[alive]
            Xn = X + dX
            if run.policy is Policy.PDE_FEEDBACK:
                cost[alive] += consts.k_p * np.abs(alpha) ** q * dt
            exited = alive & ((Xn <= 0.0) | (Xn >= 1.0))
            overshoot += int(np.count_nonzero(np.abs(Xn[exited] - np.clip(Xn[exited], 0.0, 1.0)) > 0.25 * math.sqrt(2.0 * dt)))
            alive = alive & ~exited
            X = np.where(alive, Xn, X)
        G = np.where(alive, np.interp(X, reward_x, reward_v), 0.0) - cost
        gains.append(G)
    G = np.concatenate(gains)
    mean = float(np.mean(G))
    ci = 1.96 * float(np.std(G, ddof=1)) / math.sqrt(G.size)
    frac = overshoot / run.n_paths
    return replace(
        run,
        dt_mc=dt,
        mean_gain=mean,
        ci_halfwidth=ci,
        exit_overshoot_frac=frac,
        accuracy_warning=frac > 0.05,
    )


def heat_value(reward: Field, x0: float, t: float, n: int = 2001, n_steps: int = 400) -> float:
    """Dirichlet-heat-semigroup value E[chi_{tau>t} u0(X_t)] by Crank-Nicolson.

    Independent dense-grid oracle for the uncontrolled gain: an absorbed
    Brownian particle with generator d^2/dx^2 prices the reward by the
    Dirichlet heat flow (note the sqrt(2) diffusion makes the generator the
    full second derivative, matching the equation's Laplacian).
    """
    x = np.linspace(0.0, 1.0, n)
    h = x[1] - x[0]
    u = np.interp(x, reward.x, reward.values)
    u[0] = u[-1] = 0.0
    dt = t / n_steps
    r = dt / h**2  # generator is the full Laplacian (diffusion sqrt(2))
    ab = np.zeros((3, n))
    ab[1] = 1.0 + r
    ab[1, 0] = ab[1, -1] = 1.0
    ab[0, 2:] = -r / 2.0
    ab[2, :-2] = -r / 2.0
    for _ in range(n_steps):
        rhs = u.copy()
        rhs[1:-1] = u[1:-1] + 0.5 * r * (u[2:] - 2.0 * u[1:-1] + u[:-2])
        rhs[0] = rhs[-1] = 0.0
        u = solve_banded((1, 1), ab, rhs)
    return float(np.interp(x0, x, u))


def pde_value(value_traj: Trajectory, x0: float, horizon: float) -> float:
    """Interpolated PDE value at (x0, horizon) from the stored trajectory."""
    fld = value_traj.field_at(horizon)
    return float(np.interp(x0, fld.x, fld.values))
