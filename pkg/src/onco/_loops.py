"""Compiled stencils and time loops.

The public functions in :mod:`onco.grid` call the stencils here directly, so
the single-step API and the production loops share one implementation of
each spatial operator. The loops apply the nonlocal convolution through the
band-limited tap vector stored on :class:`onco.grid.Kernel` instead of a
per-step FFT; the taps are sampled from the same kernel and the dropped
tail is below double-precision resolution.

Coefficient vector layout (``coef``)::

    0 kappa  1 r_growth  2 K_cap  3 delta  4 diff  5 gamma_ex  6 lambda_cl
"""

import numpy as np
from numba import njit

OK = 0
NONFINITE = 1
VELOCITY = 2
NEGATIVE = 3

NEG_TOL = 1e-8


@njit(cache=True)
def lf_advection(p, vel, dx, out):
    """-(vel p)_x with local Lax-Friedrichs fluxes and zero-inflow ends."""
    n = p.size
    # left face: only outflow (vel < 0) may cross
    f_left = min(vel[0], 0.0) * p[0]
    for i in range(n - 1):
        a = max(abs(vel[i]), abs(vel[i + 1]))
        f_right = 0.5 * (vel[i] * p[i] + vel[i + 1] * p[i + 1]) - 0.5 * a * (p[i + 1] - p[i])
        out[i] = -(f_right - f_left) / dx
        f_left = f_right
    f_right = max(vel[n - 1], 0.0) * p[n - 1]
    out[n - 1] = -(f_right - f_left) / dx
    return out


@njit(cache=True)
def neumann_laplacian(u, dx, out):
    """Second difference with mirrored ghost nodes (zero normal derivative)."""
    n = u.size
    inv = 1.0 / (dx * dx)
    out[0] = 2.0 * (u[1] - u[0]) * inv
    for i in range(1, n - 1):
        out[i] = (u[i - 1] - 2.0 * u[i] + u[i + 1]) * inv
    out[n - 1] = 2.0 * (u[n - 2] - u[n - 1]) * inv
    return out


@njit(cache=True)
def centered_gradient(u, dx, out):
    n = u.size
    out[0] = (u[1] - u[0]) / dx
    for i in range(1, n - 1):
        out[i] = (u[i + 1] - u[i - 1]) / (2.0 * dx)
    out[n - 1] = (u[n - 1] - u[n - 2]) / dx
    return out


@njit(cache=True)
def banded_convolve(f, wts, taps, out, work):
    """out_i = sum_j taps[j - i + b] * wts_j * f_j over the band |i - j| <= b."""
    n = f.size
    b = (taps.size - 1) // 2
    for j in range(n):
        work[j] = wts[j] * f[j]
    c0 = taps[b]
    for i in range(n):
        out[i] = c0 * work[i]
    for m in range(1, min(b, n - 1) + 1):
        c = taps[b + m]
        for i in range(n - m):
            out[i] += c * work[i + m]
            out[i + m] += c * work[i]
    return out


@njit(cache=True)
def trapezoid(f, wts, dx):
    acc = 0.0
    for i in range(f.size):
        acc += wts[i] * f[i]
    return dx * acc


@njit(cache=True)
def forward_segment(
    p, d, control, n0, n1, dt, dx, wts, taps, coef, v_ref,
    store_levels, store_p, store_d, mass, drug_mass, peak, min_p, min_d,
):
    """Advance (p, d) in place from level n0 to n1 with explicit Euler.

    Levels listed in ``store_levels`` (ascending) are copied into the store
    arrays; per-level diagnostics are written for every level in [n0, n1].
    Returns ``(status, level, clamp_count)``.
    """
    n = p.size
    kappa, rg, kc, delta, diff, gex, lam = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5], coef[6]
    w = np.empty(n)
    vel = np.empty(n)
    adv = np.empty(n)
    lap = np.empty(n)
    work = np.empty(n)
    clamps = 0

    ptr = 0
    while ptr < store_levels.size and store_levels[ptr] < n0:
        ptr += 1

    for level in range(n0, n1 + 1):
        if level > n0:
            i_now = control[level - 1]
            banded_convolve(p, wts, taps, w, work)
            vmax = 0.0
            for i in range(n):
                vel[i] = kappa * w[i]
                if abs(vel[i]) > vmax:
                    vmax = abs(vel[i])
            if vmax > v_ref:
                return VELOCITY, level - 1, clamps
            lf_advection(p, vel, dx, adv)
            neumann_laplacian(d, dx, lap)
            for i in range(n):
                pi = p[i]
                di = d[i]
                p[i] = pi + dt * (adv[i] + rg * pi * (1.0 - pi / kc) - delta * di * pi)
                d[i] = di + dt * (diff * lap[i] + gex * (i_now - di) - lam * di)
            pmin = np.inf
            dmin = np.inf
            for i in range(n):
                if not (np.isfinite(p[i]) and np.isfinite(d[i])):
                    return NONFINITE, level, clamps
                pmin = min(pmin, p[i])
                dmin = min(dmin, d[i])
            min_p[level] = pmin
            min_d[level] = dmin
            if pmin < 0.0 or dmin < 0.0:
                if pmin <= -NEG_TOL or dmin <= -NEG_TOL:
                    return NEGATIVE, level, clamps
                for i in range(n):
                    if p[i] < 0.0:
                        p[i] = 0.0
                        clamps += 1
                    if d[i] < 0.0:
                        d[i] = 0.0
                        clamps += 1
        else:
            min_p[level] = p.min()
            min_d[level] = d.min()

        mass[level] = trapezoid(p, wts, dx)
        drug_mass[level] = trapezoid(d, wts, dx)
        peak[level] = p.max()
        if ptr < store_levels.size and store_levels[ptr] == level:
            store_p[ptr, :] = p
            store_d[ptr, :] = d
            ptr += 1
    return OK, n1, clamps


@njit(cache=True)
def adjoint_segment(
    p_seg, d_seg, n0, n1, q, r, dt, dx, wts, taps, coef, alpha,
    store_levels, store_q, store_r, r_int,
):
    """March (q, r) in place from level n1 back to n0.

    ``p_seg[k]``/``d_seg[k]`` hold the state at level ``n0 + k``. The state
    at level n drives the update that produces the adjoint at level n.
    ``r_int[n]`` receives the quadrature of r at every level visited.
    Returns ``(status, level)``.
    """
    n = q.size
    kappa, rg, kc, delta, diff, gex, lam = coef[0], coef[1], coef[2], coef[3], coef[4], coef[5], coef[6]
    w = np.empty(n)
    qx = np.empty(n)
    pqx = np.empty(n)
    nl = np.empty(n)
    lap = np.empty(n)
    work = np.empty(n)

    ptr = store_levels.size - 1
    while ptr >= 0 and store_levels[ptr] > n1:
        ptr -= 1
    if ptr >= 0 and store_levels[ptr] == n1:
        store_q[ptr, :] = q
        store_r[ptr, :] = r
        ptr -= 1
    r_int[n1] = trapezoid(r, wts, dx)

    for level in range(n1 - 1, n0 - 1, -1):
        p = p_seg[level - n0]
        d = d_seg[level - n0]
        banded_convolve(p, wts, taps, w, work)
        centered_gradient(q, dx, qx)
        for i in range(n):
            pqx[i] = p[i] * qx[i]
        banded_convolve(pqx, wts, taps, nl, work)
        neumann_laplacian(r, dx, lap)
        for i in range(n):
            qi = q[i]
            ri = r[i]
            g = rg * (1.0 - 2.0 * p[i] / kc) - delta * d[i]
            q[i] = qi + dt * (kappa * w[i] * qx[i] + kappa * nl[i] + g * qi + alpha)
            r[i] = ri + dt * (diff * lap[i] - (gex + lam) * ri - delta * p[i] * qi)
        for i in range(n):
            if not (np.isfinite(q[i]) and np.isfinite(r[i])):
                return NONFINITE, level
        r_int[level] = trapezoid(r, wts, dx)
        if ptr >= 0 and store_levels[ptr] == level:
            store_q[ptr, :] = q
            store_r[ptr, :] = r
            ptr -= 1
    return OK, n0
