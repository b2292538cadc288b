"""Pure NumPy/SciPy time-stepping backend.

Backward Euler on

    u_t = u_xx + F_k(s),   u(0)=u(1)=0,

with a semismooth Newton iteration per step; diffusion and source are both
implicit (the source Jacobian is tridiagonal under 3-point differencing, so
every Newton pass is one banded solve and the step is unconditionally
stable).

The argument s fed to F_k blends two gradient discretizations:

* central second-order differences while the local slope is below the
  truncation threshold (the classical regime, where accuracy matters), and
* the minmod-limited one-sided difference once the threshold is crossed.

In the saturated regime the equation is quadratic in u_x (Burgers-like) and
its boundary layer at a loss-of-boundary-conditions event has an
exp(-c*trace) inner scale that no grid resolves; central differencing of
that layer feeds back unstably, while the limited gradient makes the climb a
stable one-cell jump, which is exactly the monotone-approximation picture of
the boundary layer. The blend weight is a smoothstep in s/k, so the switch
is differentiable for Newton.

The step controller uses the doubly J^-1-filtered backward-Euler defect
(stiff layer modes otherwise throttle dt), never shrinks dt on accepted
steps, and steps over singular instants whose error floor is dt-independent.
"""

from __future__ import annotations

import numpy as np
from scipy.linalg import solve_banded

STATUS_OK = 0
STATUS_DT_UNDERFLOW = 1
STATUS_DIVERGED = 2

DT_FLOOR = 1e-14
FORCE_DT = 1e-11  # below this, accept rather than chase a singular instant
W_LO = 0.8  # blend starts at s = W_LO * k
W_HI = 1.6  # fully limited at s = W_HI * k


class StepperWorkspace:
    """Precomputed stencils for one (grid, p, k, variant) combination."""

    def __init__(self, x: np.ndarray, p: float, k: float, smooth_variant: bool,
                 k_blend: float | None = None):
        self.x = np.asarray(x, dtype=float)
        self.p = float(p)
        self.k = float(k)
        # the limiter blend threshold is shared across a k-sweep (tied to the
        # schedule's bottom level) so every level uses the same spatial
        # operator and the discrete monotone-in-k comparison stays clean
        self.k_blend = float(k_blend) if k_blend is not None else float(k)
        self.smooth = bool(smooth_variant)
        hl = self.x[1:-1] - self.x[:-2]
        hr = self.x[2:] - self.x[1:-1]
        self.hl = hl
        self.hr = hr
        # second-derivative stencil (interior nodes)
        self.aW = 2.0 / (hl * (hl + hr))
        self.aE = 2.0 / (hr * (hl + hr))
        self.aC = -(self.aW + self.aE)
        # central first-derivative stencil (interior nodes)
        self.bW = -hr / (hl * (hl + hr))
        self.bE = hl / (hr * (hl + hr))
        self.bC = -(self.bW + self.bE)
        self.klin = self.k ** ((self.p - 2.0) / 2.0)

    def _pow_half(self, s: np.ndarray, half: float) -> np.ndarray:
        # fast path for the common p=3 case (half-integer powers)
        if half == 1.5:
            return s * np.sqrt(s)
        if half == 0.5:
            return np.sqrt(s)
        return s**half

    def source(self, s: np.ndarray) -> np.ndarray:
        if self.smooth:
            return np.where(
                s <= self.k,
                self._pow_half(s, self.p / 2.0),
                self.k ** (self.p / 2.0) + (self.p / 2.0) * self.klin * (s - self.k),
            )
        return np.minimum(self._pow_half(s, self.p / 2.0), self.klin * s)

    def source_deriv(self, s: np.ndarray) -> np.ndarray:
        inner = (self.p / 2.0) * self._pow_half(s, (self.p - 2.0) / 2.0)
        outer = (self.p / 2.0) * self.klin if self.smooth else self.klin
        return np.where(s <= self.k, inner, outer)

    def _gradient_parts(self, u: np.ndarray):
        gc = self.bW * u[:-2] + self.bC * u[1:-1] + self.bE * u[2:]
        dm = (u[1:-1] - u[:-2]) / self.hl
        dp = (u[2:] - u[1:-1]) / self.hr
        same = dm * dp > 0.0
        use_m = np.abs(dm) <= np.abs(dp)
        gmm = np.where(same, np.where(use_m, dm, dp), 0.0)
        sc = gc * gc
        t = np.clip((sc / self.k_blend - W_LO) / (W_HI - W_LO), 0.0, 1.0)
        w = t * t * (3.0 - 2.0 * t)
        seff = (1.0 - w) * sc + w * gmm * gmm
        return gc, gmm, same, use_m, sc, t, w, seff

    def effective_s(self, u: np.ndarray) -> np.ndarray:
        return self._gradient_parts(u)[-1]

    def rhs(self, u: np.ndarray) -> np.ndarray:
        """u_xx + F_k(s_eff) at interior nodes."""
        lap = self.aW * u[:-2] + self.aC * u[1:-1] + self.aE * u[2:]
        return lap + self.source(self.effective_s(u))

    def source_jacobian(self, u: np.ndarray):
        """(dF/du_{i-1}, dF/du_i, dF/du_{i+1}) rows of the source term."""
        gc, gmm, same, use_m, sc, t, w, seff = self._gradient_parts(u)
        fp = self.source_deriv(seff)
        dsc_W = 2.0 * gc * self.bW
        dsc_C = 2.0 * gc * self.bC
        dsc_E = 2.0 * gc * self.bE
        two_g = 2.0 * gmm
        dmm_W = np.where(same & use_m, -two_g / self.hl, 0.0)
        dmm_C = np.where(same, np.where(use_m, two_g / self.hl, -two_g / self.hr), 0.0)
        dmm_E = np.where(same & ~use_m, two_g / self.hr, 0.0)
        dw_ds = np.where((t > 0.0) & (t < 1.0), 6.0 * t * (1.0 - t) / (self.k_blend * (W_HI - W_LO)), 0.0)
        pref = (gmm * gmm - sc) * dw_ds
        dW = fp * ((1.0 - w + pref) * dsc_W + w * dmm_W)
        dC = fp * ((1.0 - w + pref) * dsc_C + w * dmm_C)
        dE = fp * ((1.0 - w + pref) * dsc_E + w * dmm_E)
        return dW, dC, dE


def _newton_step(ws: StepperWorkspace, uold: np.ndarray, dt: float, max_iter: int):
    """Solve the backward-Euler system; returns (u, converged, res, jac_bands)."""
    n = uold.size
    u = uold.copy()
    sup = max(1.0, float(np.max(np.abs(uold))))
    tol = max(1e-14, 1e-12 * sup)
    utol = max(1e-13, 1e-12 * sup)
    eps = np.finfo(float).eps
    prev_res = np.inf
    bad = 0
    ab = np.zeros((3, n))
    rhsvec = np.zeros(n)
    for _ in range(max_iter):
        lap = ws.aW * u[:-2] + ws.aC * u[1:-1] + ws.aE * u[2:]
        R_int = u[1:-1] - uold[1:-1] - dt * (lap + ws.source(ws.effective_s(u)))
        dW, dC, dE = ws.source_jacobian(u)
        # banded layout for solve_banded: row 0 upper, row 1 diag, row 2 lower
        ab[1, 0] = 1.0
        ab[1, -1] = 1.0
        ab[1, 1:-1] = 1.0 - dt * (ws.aC + dC)
        ab[0, 2:] = -dt * (ws.aE + dE)
        ab[0, 1] = 0.0
        ab[2, :-2] = -dt * (ws.aW + dW)
        ab[2, -2] = 0.0
        # componentwise roundoff floor of this residual evaluation: the
        # stencil products cancel from |a||u| size down to the result
        noise = dt * eps * (
            np.abs(ws.aW) * np.abs(u[:-2])
            + np.abs(ws.aC) * np.abs(u[1:-1])
            + np.abs(ws.aE) * np.abs(u[2:])
        )
        over = np.abs(R_int) - (tol + 8.0 * noise)
        res = float(np.max(np.abs(R_int))) if n > 2 else 0.0
        if np.all(over <= 0.0):
            return u, True, res, ab
        if res > 2.0 * prev_res:
            bad += 1
            if bad >= 3:
                return u, False, res, ab
        prev_res = res
        rhsvec[1:-1] = R_int
        rhsvec[0] = 0.0
        rhsvec[-1] = 0.0
        delta = solve_banded((1, 1), ab, rhsvec, overwrite_ab=False, overwrite_b=False)
        u = u - delta
        u[0] = uold[0]
        u[-1] = uold[-1]
        if not np.all(np.isfinite(u)):
            return u, False, np.inf, ab
        if float(np.max(np.abs(delta))) <= utol:
            return u, True, res, ab
    return u, False, prev_res, ab


def advance(
    ws: StepperWorkspace,
    u: np.ndarray,
    t: float,
    t_target: float,
    dt: float,
    dt_max: float,
    lte_tol: float,
    newton_max_iter: int = 30,
):
    """Advance ``u`` from ``t`` to ``t_target``.

    Returns (u, t_reached, dt_next, n_accepted, status).
    """
    u = np.asarray(u, dtype=float).copy()
    n_accepted = 0
    dt = min(dt, dt_max)
    err_prev_reject = np.inf
    while t < t_target - 1e-15 * max(1.0, t_target):
        if t_target - t <= max(1e-9 * t_target, 2.0 * DT_FLOOR):
            t = t_target  # segment-end crumb below resolvable step size
            break
        dt = min(dt, dt_max, t_target - t)
        if dt < DT_FLOOR:
            return u, t, dt, n_accepted, STATUS_DT_UNDERFLOW
        rhs_old = ws.rhs(u)
        unew, converged, _, ab = _newton_step(ws, u, dt, newton_max_iter)
        if not converged:
            if not np.all(np.isfinite(unew)):
                dt *= 0.2
            else:
                dt *= 0.35
            continue
        # stiffly damped error estimate: filter the raw backward-Euler defect
        # twice through J^{-1} so layer equilibration does not throttle dt
        raw = np.zeros_like(unew)
        raw[1:-1] = unew[1:-1] - u[1:-1] - dt * rhs_old
        est = solve_banded((1, 1), ab, raw, overwrite_ab=False, overwrite_b=False)
        est[0] = est[-1] = 0.0
        est = solve_banded((1, 1), ab, est, overwrite_ab=False, overwrite_b=False)
        err = 0.5 * float(np.max(np.abs(est)))
        forced = False
        if err > lte_tol and dt > DT_FLOOR * 4.0:
            if err > 0.7 * err_prev_reject or dt < FORCE_DT:
                # the estimate is not shrinking with dt: a quasi-static layer
                # holds it at a dt-independent floor. Step over it and probe
                # dt UPWARD: against a floor, larger steps cost no accuracy,
                # and if the error turns dt-dependent again the ordinary
                # rejection path takes back over.
                forced = True
            else:
                err_prev_reject = err
                dt *= max(0.25, 0.9 * np.sqrt(lte_tol / err))
                continue
        u = unew
        t = t + dt
        n_accepted += 1
        if not np.all(np.isfinite(u)) or np.max(np.abs(u)) > 1e6:
            return u, t, dt, n_accepted, STATUS_DIVERGED
        if forced:
            dt = dt * 1.3  # keep err_prev_reject: still in floor mode
        else:
            err_prev_reject = np.inf
            # accepted steps never shrink dt: a dt-insensitive error floor
            # must not ratchet the step to zero
            grow = 0.85 * np.sqrt(lte_tol / max(err, 1e-300))
            dt = dt * min(1.4, max(1.0, grow))
    return u, t, dt, n_accepted, STATUS_OK
