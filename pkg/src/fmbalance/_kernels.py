"""Compiled inner loops: SDOF spectra, shear-building integration, filtered noise."""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sdof_peak_displacement(ag, dt, periods, xi, steps_per_period):
    """Peak relative displacement of unit-mass linear oscillators.

    Newmark constant-average-acceleration; each record step is split so the
    integration step never exceeds T / steps_per_period. Ground acceleration is
    linearly interpolated inside a record step.
    """
    n = ag.shape[0]
    out = np.zeros(periods.shape[0])
    for j in range(periods.shape[0]):
        w = 2.0 * math.pi / periods[j]
        c = 2.0 * xi * w
        k = w * w
        nsub = int(math.ceil(dt * steps_per_period / periods[j] - 1e-12))
        if nsub < 1:
            nsub = 1
        h = dt / nsub
        keff = k + 2.0 * c / h + 4.0 / (h * h)
        u = 0.0
        v = 0.0
        a = -ag[0]
        peak = 0.0
        for i in range(n - 1):
            a0 = ag[i]
            da = (ag[i + 1] - a0) / nsub
            for s in range(nsub):
                p = -(a0 + da * (s + 1))
                rhs = p + (4.0 / (h * h)) * u + (4.0 / h) * v + a + c * ((2.0 / h) * u + v)
                un = rhs / keff
                vn = (2.0 / h) * (un - u) - v
                an = (4.0 / (h * h)) * (un - u) - (4.0 / h) * v - a
                u = un
                v = vn
                a = an
                au = abs(u)
                if au > peak:
                    peak = au
        out[j] = peak
    return out


@njit(cache=True, nogil=True)
def _bilinear(d, d0, f0, k, fy, alpha):
    # kinematic hardening: force bounded by the two hardening lines through +-fy
    ft = f0 + k * (d - d0)
    hi = alpha * k * d + (1.0 - alpha) * fy
    lo = alpha * k * d - (1.0 - alpha) * fy
    if ft > hi:
        return hi, alpha * k
    if ft < lo:
        return lo, alpha * k
    return ft, k


@njit(cache=True, nogil=True)
def _tridiag_solve(lower, diag, upper, rhs):
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0] if n > 1 else 0.0
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - lower[i] * cp[i - 1]
        if i < n - 1:
            cp[i] = upper[i] / den
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / den
    x = np.empty(n)
    x[n - 1] = dp[n - 1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


@njit(cache=True, nogil=True)
def _stiff_mul(kk, x):
    # shear-chain stiffness (story stiffnesses kk) times x
    n = x.shape[0]
    y = np.empty(n)
    for i in range(n):
        di = x[i] - (x[i - 1] if i > 0 else 0.0)
        y[i] = kk[i] * di
        if i < n - 1:
            y[i] -= kk[i + 1] * (x[i + 1] - x[i])
    return y


@njit(cache=True, nogil=True)
def _substep(u, v, a, d, f, m, k0, fy, alpha, a0, a1, h, ag_new, tol, max_iter):
    n = u.shape[0]
    ut = u + h * v
    lower = np.empty(n)
    diag = np.empty(n)
    upper = np.empty(n)
    dn = np.empty(n)
    fn = np.empty(n)
    kt = np.empty(n)
    vn = np.empty(n)
    an = np.empty(n)
    for it in range(max_iter):
        for i in range(n):
            dn[i] = ut[i] - (ut[i - 1] if i > 0 else 0.0)
            fn[i], kt[i] = _bilinear(dn[i], d[i], f[i], k0[i], fy[i], alpha)
        for i in range(n):
            vn[i] = (2.0 / h) * (ut[i] - u[i]) - v[i]
            an[i] = (4.0 / (h * h)) * (ut[i] - u[i]) - (4.0 / h) * v[i] - a[i]
        cv = _stiff_mul(k0, vn)
        res = np.empty(n)
        rmax = 0.0
        for i in range(n):
            fint = fn[i] - (fn[i + 1] if i < n - 1 else 0.0)
            res[i] = -m[i] * ag_new - m[i] * an[i] - (a0 * m[i] * vn[i] + a1 * cv[i]) - fint
            if abs(res[i]) > rmax:
                rmax = abs(res[i])
        if rmax <= tol:
            return True, ut, vn, an, dn, fn
        cfac = 2.0 / h
        mfac = 4.0 / (h * h)
        for i in range(n):
            kd = kt[i] + (kt[i + 1] if i < n - 1 else 0.0)
            cd = k0[i] + (k0[i + 1] if i < n - 1 else 0.0)
            diag[i] = kd + cfac * (a0 * m[i] + a1 * cd) + mfac * m[i]
            if i < n - 1:
                off = -kt[i + 1] - cfac * a1 * k0[i + 1]
                upper[i] = off
                lower[i + 1] = off
        lower[0] = 0.0
        upper[n - 1] = 0.0
        du = _tridiag_solve(lower, diag, upper, res)
        ut = ut + du
    return False, ut, vn, an, dn, fn


@njit(cache=True, nogil=True)
def shear_building_response(ag, dt, m, k0, fy, alpha, a0, a1, max_step, max_halvings, tol):
    """Integrate the bilinear shear chain under ground acceleration ``ag``.

    Returns ``(status, u, v, acc, story_force)`` histories sampled at the record
    steps; ``status`` is 0 on success, otherwise 1 + the failing record step.
    """
    nt = ag.shape[0]
    n = m.shape[0]
    uh = np.zeros((nt, n))
    vh = np.zeros((nt, n))
    ah = np.zeros((nt, n))
    fh = np.zeros((nt, n))
    u = np.zeros(n)
    v = np.zeros(n)
    d = np.zeros(n)
    f = np.zeros(n)
    a = np.empty(n)
    for i in range(n):
        a[i] = -ag[0]
    ah[0, :] = a
    nsub0 = int(math.ceil(dt / max_step - 1e-12))
    if nsub0 < 1:
        nsub0 = 1
    for step in range(nt - 1):
        ok = False
        for level in range(max_halvings + 1):
            nsub = nsub0 * (2 ** level)
            h = dt / nsub
            uu = u.copy()
            vv = v.copy()
            aa = a.copy()
            dd = d.copy()
            ff = f.copy()
            good = True
            for s in range(nsub):
                agn = ag[step] + (ag[step + 1] - ag[step]) * (s + 1) / nsub
                conv, uu, vv, aa, dd, ff = _substep(uu, vv, aa, dd, ff, m, k0, fy, alpha, a0, a1, h, agn, tol, 40)
                if not conv:
                    good = False
                    break
            if good:
                ok = True
                u = uu
                v = vv
                a = aa
                d = dd
                f = ff
                break
        if not ok:
            return step + 1, uh, vh, ah, fh
        uh[step + 1, :] = u
        vh[step + 1, :] = v
        ah[step + 1, :] = a
        fh[step + 1, :] = f
    return 0, uh, vh, ah, fh


@njit(cache=True, nogil=True)
def filtered_noise(noise, dt, omega, zeta):
    """Velocity response of an SDOF filter driven by unit-intensity white noise.

    ``omega`` holds the (time-varying) filter circular frequency per sample. The
    output is scaled by sqrt(4 zeta omega) so its stationary variance is one.
    """
    n = noise.shape[0]
    out = np.zeros(n)
    x = 0.0
    v = 0.0
    sq = math.sqrt(dt)
    for i in range(n):
        w = omega[i]
        wd = w * math.sqrt(1.0 - zeta * zeta)
        e = math.exp(-zeta * w * dt)
        c = math.cos(wd * dt)
        s = math.sin(wd * dt)
        v = v + sq * noise[i]
        x1 = e * (x * c + (v + zeta * w * x) / wd * s)
        v1 = e * (v * c - (zeta * w * v + w * w * x) / wd * s)
        x = x1
        v = v1
        out[i] = v * math.sqrt(4.0 * zeta * w)
    return out
