# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled twin of kernels.reference: fused backward-Euler Newton loop.

Same discretization, blending, stepping logic, and controller arithmetic as
the pure backend; the tridiagonal solve is an in-place Thomas sweep instead
of LAPACK.
"""

from libc.math cimport pow, sqrt, fabs, isfinite
from libc.stdlib cimport malloc, free

STATUS_OK = 0
STATUS_DT_UNDERFLOW = 1
STATUS_DIVERGED = 2

DEF DT_FLOOR = 1e-14
DEF FORCE_DT = 1e-11
DEF W_LO = 0.8
DEF W_HI = 1.6
DEF C_OK = 0
DEF C_DT_UNDERFLOW = 1
DEF C_DIVERGED = 2


cdef inline double _pow_half(double s, double half_p) noexcept nogil:
    # s**half_p with a fast path for the common p=3 case (half-integer powers)
    if half_p == 1.5:
        return s * sqrt(s)
    if half_p == 0.5:
        return sqrt(s)
    return pow(s, half_p)


cdef inline double _src(double s, double p, double k, double klin, bint smooth) noexcept nogil:
    if smooth:
        if s <= k:
            return _pow_half(s, 0.5 * p)
        return _pow_half(k, 0.5 * p) + 0.5 * p * klin * (s - k)
    cdef double a = _pow_half(s, 0.5 * p)
    cdef double b = klin * s
    return a if a < b else b


cdef inline double _src_d(double s, double p, double k, double klin, bint smooth) noexcept nogil:
    if s <= k:
        return 0.5 * p * _pow_half(s, 0.5 * (p - 2.0))
    if smooth:
        return 0.5 * p * klin
    return klin


cdef int _thomas(double* lo, double* di, double* up, double* rr,
                 double* cp, double* dp, int n) noexcept nogil:
    """Solve the tridiagonal system in place (Dirichlet identity end rows);
    solution lands in dp. Returns 0 on a zero pivot."""
    cdef int i
    cdef double m
    di[0] = 1.0
    up[0] = 0.0
    rr[0] = 0.0
    lo[n - 1] = 0.0
    di[n - 1] = 1.0
    rr[n - 1] = 0.0
    cp[0] = up[0] / di[0]
    dp[0] = rr[0] / di[0]
    for i in range(1, n):
        m = di[i] - lo[i] * cp[i - 1]
        if m == 0.0:
            return 0
        cp[i] = (up[i] / m) if i < n - 1 else 0.0
        dp[i] = (rr[i] - lo[i] * dp[i - 1]) / m
    for i in range(n - 2, -1, -1):
        dp[i] = dp[i] - cp[i] * dp[i + 1]
    return 1


cdef inline double _rhs_at(double* u, int i,
                           double* hl, double* hr,
                           double* aW, double* aC, double* aE,
                           double* bW, double* bC, double* bE,
                           double p, double k, double k_blend, double klin, bint smooth) noexcept nogil:
    """u_xx + F_k(s_eff) at interior node i (stencil arrays 0-based at i-1)."""
    cdef int j = i - 1
    cdef double lap = aW[j] * u[i - 1] + aC[j] * u[i] + aE[j] * u[i + 1]
    cdef double gc = bW[j] * u[i - 1] + bC[j] * u[i] + bE[j] * u[i + 1]
    cdef double dm = (u[i] - u[i - 1]) / hl[j]
    cdef double dp_ = (u[i + 1] - u[i]) / hr[j]
    cdef double gmm = 0.0
    cdef double sc, t, w, seff
    if dm * dp_ > 0.0:
        gmm = dm if fabs(dm) <= fabs(dp_) else dp_
    sc = gc * gc
    t = (sc / k_blend - W_LO) / (W_HI - W_LO)
    if t < 0.0:
        t = 0.0
    if t > 1.0:
        t = 1.0
    w = t * t * (3.0 - 2.0 * t)
    seff = (1.0 - w) * sc + w * gmm * gmm
    return lap + _src(seff, p, k, klin, smooth)


cdef int _newton(double* u, double* uold, int n, double dt, double tol, double utol,
                 double* hl, double* hr,
                 double* aW, double* aC, double* aE,
                 double* bW, double* bC, double* bE,
                 double p, double k, double k_blend, double klin, bint smooth,
                 int max_iter,
                 double* lo, double* di, double* up, double* rr,
                 double* cp, double* dp) noexcept nogil:
    """Backward-Euler Newton solve; u holds the iterate. Returns 1 on success."""
    cdef int i, j, it, all_ok
    cdef double gc, dm, dpl, gmm, sc, t, w, seff, lap, res, prev_res, m, noise, fp
    cdef double dsc_W, dsc_C, dsc_E, dmm_W, dmm_C, dmm_E, dw_ds, pref, two_g, blend
    cdef double eps = 2.220446049250313e-16
    cdef int bad = 0
    prev_res = 1e308
    for it in range(max_iter):
        res = 0.0
        all_ok = 1
        for i in range(1, n - 1):
            j = i - 1
            gc = bW[j] * u[i - 1] + bC[j] * u[i] + bE[j] * u[i + 1]
            dm = (u[i] - u[i - 1]) / hl[j]
            dpl = (u[i + 1] - u[i]) / hr[j]
            gmm = 0.0
            if dm * dpl > 0.0:
                gmm = dm if fabs(dm) <= fabs(dpl) else dpl
            sc = gc * gc
            t = (sc / k_blend - W_LO) / (W_HI - W_LO)
            if t < 0.0:
                t = 0.0
            if t > 1.0:
                t = 1.0
            w = t * t * (3.0 - 2.0 * t)
            seff = (1.0 - w) * sc + w * gmm * gmm
            lap = aW[j] * u[i - 1] + aC[j] * u[i] + aE[j] * u[i + 1]
            rr[i] = u[i] - uold[i] - dt * (lap + _src(seff, p, k, klin, smooth))
            if fabs(rr[i]) > res:
                res = fabs(rr[i])
            noise = dt * eps * (fabs(aW[j]) * fabs(u[i - 1])
                                + fabs(aC[j]) * fabs(u[i])
                                + fabs(aE[j]) * fabs(u[i + 1]))
            if fabs(rr[i]) > tol + 8.0 * noise:
                all_ok = 0
            fp = _src_d(seff, p, k, klin, smooth)
            dsc_W = 2.0 * gc * bW[j]
            dsc_C = 2.0 * gc * bC[j]
            dsc_E = 2.0 * gc * bE[j]
            two_g = 2.0 * gmm
            dmm_W = 0.0
            dmm_C = 0.0
            dmm_E = 0.0
            if dm * dpl > 0.0:
                if fabs(dm) <= fabs(dpl):
                    dmm_W = -two_g / hl[j]
                    dmm_C = two_g / hl[j]
                else:
                    dmm_C = -two_g / hr[j]
                    dmm_E = two_g / hr[j]
            dw_ds = 0.0
            if 0.0 < t < 1.0:
                dw_ds = 6.0 * t * (1.0 - t) / (k_blend * (W_HI - W_LO))
            pref = (gmm * gmm - sc) * dw_ds
            blend = 1.0 - w + pref
            lo[i] = -dt * (aW[j] + fp * (blend * dsc_W + w * dmm_W))
            di[i] = 1.0 - dt * (aC[j] + fp * (blend * dsc_C + w * dmm_C))
            up[i] = -dt * (aE[j] + fp * (blend * dsc_E + w * dmm_E))
        if all_ok:
            return 1
        if res > 2.0 * prev_res:
            bad += 1
            if bad >= 3:
                return 0
        prev_res = res
        if _thomas(lo, di, up, rr, cp, dp, n) == 0:
            return 0
        for i in range(n):
            u[i] -= dp[i]
        u[0] = uold[0]
        u[n - 1] = uold[n - 1]
        m = 0.0
        for i in range(n):
            if not isfinite(u[i]):
                return 0
            if fabs(dp[i]) > m:
                m = fabs(dp[i])
        if m <= utol:
            return 1
    return 0


def advance(double[::1] u, double t, double t_target,
            double[::1] hl, double[::1] hr,
            double[::1] aW, double[::1] aC, double[::1] aE,
            double[::1] bW, double[::1] bC, double[::1] bE,
            double p, double k, double k_blend, bint smooth,
            double dt, double dt_max, double lte_tol, int newton_max_iter):
    """Advance u in place from t to t_target; returns (t, dt_next, n_accepted, status)."""
    cdef int n = u.shape[0]
    cdef double klin = pow(k, 0.5 * (p - 2.0))
    cdef double* buf = <double*> malloc(8 * n * sizeof(double))
    if buf == NULL:
        raise MemoryError()
    cdef double* uold = buf
    cdef double* utry = buf + n
    cdef double* rhs_old = buf + 2 * n
    cdef double* lo = buf + 3 * n
    cdef double* di = buf + 4 * n
    cdef double* up = buf + 5 * n
    cdef double* cp = buf + 6 * n
    cdef double* dp = buf + 7 * n
    cdef double* uv = &u[0]
    cdef int n_accepted = 0
    cdef int status = C_OK
    cdef int i, ok, forced
    cdef double err_prev_reject = 1e308
    cdef double err, e, tol, utol, grow, sup
    cdef double* rr = dp  # residual buffer shared with dp inside _newton
    with nogil:
        if dt > dt_max:
            dt = dt_max
        while t < t_target - 1e-15 * (1.0 if t_target < 1.0 else t_target):
            e = 1e-9 * t_target
            if e < 2.0 * DT_FLOOR:
                e = 2.0 * DT_FLOOR
            if t_target - t <= e:
                t = t_target  # segment-end crumb below resolvable step size
                break
            if dt > dt_max:
                dt = dt_max
            if dt > t_target - t:
                dt = t_target - t
            if dt < DT_FLOOR:
                status = C_DT_UNDERFLOW
                break
            sup = 0.0
            for i in range(n):
                uold[i] = uv[i]
                utry[i] = uv[i]
                if fabs(uv[i]) > sup:
                    sup = fabs(uv[i])
            rhs_old[0] = 0.0
            rhs_old[n - 1] = 0.0
            for i in range(1, n - 1):
                rhs_old[i] = _rhs_at(uold, i, &hl[0], &hr[0], &aW[0], &aC[0], &aE[0],
                                     &bW[0], &bC[0], &bE[0], p, k, k_blend, klin, smooth)
            tol = 1e-12 * (1.0 if sup < 1.0 else sup)
            if tol < 1e-14:
                tol = 1e-14
            utol = 1e-12 * (1.0 if sup < 1.0 else sup)
            if utol < 1e-13:
                utol = 1e-13
            ok = _newton(utry, uold, n, dt, tol, utol, &hl[0], &hr[0],
                         &aW[0], &aC[0], &aE[0], &bW[0], &bC[0], &bE[0],
                         p, k, k_blend, klin, smooth, newton_max_iter, lo, di, up, rr, cp, dp)
            if not ok:
                dt *= 0.35
                continue
            # stiffly damped error estimate: filter the raw defect twice
            # through J^{-1} so layer equilibration does not throttle dt
            for i in range(1, n - 1):
                rr[i] = utry[i] - uold[i] - dt * rhs_old[i]
            if _thomas(lo, di, up, rr, cp, dp, n) == 0:
                dt *= 0.35
                continue
            if _thomas(lo, di, up, rr, cp, dp, n) == 0:
                dt *= 0.35
                continue
            err = 0.0
            for i in range(1, n - 1):
                e = fabs(dp[i])
                if e > err:
                    err = e
            err *= 0.5
            forced = 0
            if err > lte_tol and dt > DT_FLOOR * 4.0:
                if err > 0.7 * err_prev_reject or dt < FORCE_DT:
                    # estimate not shrinking with dt: a quasi-static layer
                    # holds it at a dt-independent floor. Step over it and
                    # probe dt UPWARD: against a floor, larger steps cost no
                    # accuracy, and if the error turns dt-dependent again
                    # the ordinary rejection path takes back over.
                    forced = 1
                else:
                    err_prev_reject = err
                    grow = 0.9 * sqrt(lte_tol / err)
                    dt *= grow if grow > 0.25 else 0.25
                    continue
            for i in range(n):
                uv[i] = utry[i]
            t = t + dt
            n_accepted += 1
            sup = 0.0
            for i in range(n):
                if fabs(uv[i]) > sup:
                    sup = fabs(uv[i])
                if not isfinite(uv[i]):
                    sup = 1e308
                    break
            if sup > 1e6:
                status = C_DIVERGED
                break
            if forced:
                dt *= 1.3  # keep err_prev_reject: still in floor mode
            else:
                err_prev_reject = 1e308
                # accepted steps never shrink dt: a dt-insensitive error
                # floor must not ratchet the step to zero
                grow = 0.85 * sqrt(lte_tol / (err if err > 1e-300 else 1e-300))
                if grow > 1.4:
                    grow = 1.4
                if grow < 1.0:
                    grow = 1.0
                dt *= grow
    free(buf)
    return t, dt, n_accepted, status
