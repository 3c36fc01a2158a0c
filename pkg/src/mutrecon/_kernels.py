"""Compiled inner loops of the local-model solver.

The reconstruction workload is dominated by repeated forward solves (one per
trial-space coefficient per optimiser iteration), so the local-model time
loop and a batched variant parallelised over independent coefficient
perturbations are compiled with numba.  The math mirrors the reference
implementation in ``forward_local``; the two are cross-checked by tests.

Layout per step, chosen so the stencil pass stays auto-vectorisable:
  1. mutation-flux pass: q = omega(t) * law(c1, v), scalar loop (carries the
     trial-law clamp count and node-touch marks);
  2. update pass: raw Euler update from the read buffer into the write
     buffer, fastmath, no branches with side effects;
  3. floor/check pass: strict IEEE — floors negatives (recording clipped
     mass), tracks extrema, detects non-finite values (NaN detection must
     not sit in fastmath-compiled code);
  4. ghost refresh on the write buffer (mirror about the boundary node),
     then buffer swap.

Stats vector layout (float64[8]):
  0..3  running extrema c1_min, c1_max, v_min, v_max
  4     accumulated clipped negative mass (raw node sum, unweighted)
  5     out-of-range trial-law evaluations (clamped)
  6     first step index that produced a non-finite value, -1 if none
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit, prange

from .mutation_space import (
    LAW_TRIAL_1D_CELLS,
    LAW_TRIAL_1D_ECM,
    LAW_TRIAL_2D,
    LAW_TRUE_LINEAR,
    LAW_TRUE_WINDOW,
    LAW_ZERO,
)

STAT_C1MIN, STAT_C1MAX, STAT_VMIN, STAT_VMAX = 0, 1, 2, 3
STAT_CLIP, STAT_OOB, STAT_BAD_STEP = 4, 5, 6
STATS_LEN = 8

_FAST = dict(cache=True, fastmath=True, error_model="numpy")


@njit(inline="always", **_FAST)
def _window_factor(v, kappa):
    if v == 1.0:
        return 1.0
    if v <= 1.0 - kappa or v > 1.0:
        return 0.0
    gap = kappa * kappa - (1.0 - v) * (1.0 - v)
    return math.exp(-1.0 / gap + 1.0 / (kappa * kappa))


@njit(inline="always", **_FAST)
def _interp1(coeffs, m, k_max, x):
    s = x * ((m - 1) / k_max)
    lo = int(s)
    if lo > m - 2:
        lo = m - 2
    w = s - lo
    return (1.0 - w) * coeffs[lo] + w * coeffs[lo + 1]


@njit(**_FAST)
def _q_pass(q, pc1, pv, w, kind, coeffs, m, delta0, kappa, k_max, touched, mark):
    """Fill q with omega(t)*law(c1, v); returns the clamp count."""
    n = q.shape[0]
    oob = 0
    for i in range(n):
        ii = i + 1
        for j in range(n):
            a = pc1[ii, j + 1]
            e = pv[ii, j + 1]
            if kind == LAW_ZERO:
                val = 0.0
            elif kind == LAW_TRUE_LINEAR:
                val = delta0 * a
            elif kind == LAW_TRUE_WINDOW:
                val = delta0 * a * _window_factor(e, kappa)
            elif kind == LAW_TRIAL_1D_CELLS:
                x = a
                if x < 0.0:
                    x = 0.0
                    oob += 1
                elif x > k_max:
                    x = k_max
                    oob += 1
                if mark:
                    s = x * ((m - 1) / k_max)
                    lo = min(int(s), m - 2)
                    touched[lo] = 1
                    touched[lo + 1] = 1
                val = _interp1(coeffs, m, k_max, x)
            elif kind == LAW_TRIAL_1D_ECM:
                x = e
                if x < 0.0:
                    x = 0.0
                    oob += 1
                elif x > k_max:
                    x = k_max
                    oob += 1
                if mark:
                    s = x * ((m - 1) / k_max)
                    lo = min(int(s), m - 2)
                    touched[lo] = 1
                    touched[lo + 1] = 1
                val = delta0 * a * _interp1(coeffs, m, k_max, x)
            else:
                x = a
                y = e
                if x < 0.0:
                    x = 0.0
                    oob += 1
                elif x > k_max:
                    x = k_max
                    oob += 1
                if y < 0.0:
                    y = 0.0
                    oob += 1
                elif y > k_max:
                    y = k_max
                    oob += 1
                sx = x * ((m - 1) / k_max)
                sy = y * ((m - 1) / k_max)
                lx = min(int(sx), m - 2)
                ly = min(int(sy), m - 2)
                wx = sx - lx
                wy = sy - ly
                base = lx * m + ly
                if mark:
                    touched[base] = 1
                    touched[base + 1] = 1
                    touched[base + m] = 1
                    touched[base + m + 1] = 1
                val = (
                    (1.0 - wx) * (1.0 - wy) * coeffs[base]
                    + (1.0 - wx) * wy * coeffs[base + 1]
                    + wx * (1.0 - wy) * coeffs[base + m]
                    + wx * wy * coeffs[base + m + 1]
                )
            q[i, j] = w * val
    return oob


@njit(**_FAST)
def _advance(bc1, bc2, bv, p1, p2, pv, q, dt, inv_dx2,
             d1, d2, hfac1, hfac2,
             mu_c, k_c, rho, mu_v, gom_floor, rule1, rule2):
    """Raw Euler update reading padded buffers, writing interior of b*."""
    n = q.shape[0]
    for i in range(n):
        ii = i + 1
        for j in range(n):
            jj = j + 1
            a = p1[ii, jj]
            b = p2[ii, jj]
            e = pv[ii, jj]

            lap1 = (p1[ii - 1, jj] + p1[ii + 1, jj] + p1[ii, jj - 1] + p1[ii, jj + 1] - 4.0 * a) * inv_dx2
            lap2 = (p2[ii - 1, jj] + p2[ii + 1, jj] + p2[ii, jj - 1] + p2[ii, jj + 1] - 4.0 * b) * inv_dx2

            vxp = pv[ii + 1, jj] - e
            vxm = e - pv[ii - 1, jj]
            vyp = pv[ii, jj + 1] - e
            vym = e - pv[ii, jj - 1]
            h1 = hfac1 * (
                (a + p1[ii + 1, jj]) * vxp
                - (a + p1[ii - 1, jj]) * vxm
                + (a + p1[ii, jj + 1]) * vyp
                - (a + p1[ii, jj - 1]) * vym
            )
            h2 = hfac2 * (
                (b + p2[ii + 1, jj]) * vxp
                - (b + p2[ii - 1, jj]) * vxm
                + (b + p2[ii, jj + 1]) * vyp
                - (b + p2[ii, jj - 1]) * vym
            )

            total = a + b + e
            if rule1 == 0:
                prol1 = mu_c * a * (1.0 - total / k_c)
            else:
                prol1 = mu_c * a * math.log(k_c / max(total, gom_floor))
            if rule2 == 0:
                prol2 = mu_c * b * (1.0 - total / k_c)
            else:
                prol2 = mu_c * b * math.log(k_c / max(total, gom_floor))

            qv = q[i, j]
            free = k_c - total
            remodel = mu_v * free if free > 0.0 else 0.0

            bc1[ii, jj] = a + dt * (d1 * lap1 - h1 + prol1 - qv)
            bc2[ii, jj] = b + dt * (d2 * lap2 - h2 + prol2 + qv)
            bv[ii, jj] = e + dt * (-rho * (a + b) * e + remodel)


@njit(cache=True)
def _floor_and_check(bc1, bc2, bv, stats, track_extremes):
    """Floor negatives inside padded write buffers, update extrema, detect
    non-finite values.  Strict IEEE semantics; returns True when clean."""
    n = bc1.shape[0] - 2
    clip = 0.0
    ok = True
    for i in range(1, n + 1):
        for j in range(1, n + 1):
            a = bc1[i, j]
            b = bc2[i, j]
            e = bv[i, j]
            if not (math.isfinite(a) and math.isfinite(b) and math.isfinite(e)):
                ok = False
            if a < 0.0:
                clip -= a
                a = 0.0
                bc1[i, j] = 0.0
            if b < 0.0:
                clip -= b
                b = 0.0
                bc2[i, j] = 0.0
            if e < 0.0:
                clip -= e
                e = 0.0
                bv[i, j] = 0.0
            if track_extremes:
                if a < stats[STAT_C1MIN]:
                    stats[STAT_C1MIN] = a
                if a > stats[STAT_C1MAX]:
                    stats[STAT_C1MAX] = a
                if e < stats[STAT_VMIN]:
                    stats[STAT_VMIN] = e
                if e > stats[STAT_VMAX]:
                    stats[STAT_VMAX] = e
    stats[STAT_CLIP] += clip
    return ok


@njit(inline="always", **_FAST)
def _refresh_ghosts(p):
    n = p.shape[0] - 2
    p[0, 1 : n + 1] = p[2, 1 : n + 1]
    p[n + 1, 1 : n + 1] = p[n - 1, 1 : n + 1]
    p[1 : n + 1, 0] = p[1 : n + 1, 2]
    p[1 : n + 1, n + 1] = p[1 : n + 1, n - 1]


@njit(cache=True)
def run_local(
    c1, c2, v, t0, n_steps, dt, dx,
    d1, d2, eta1, eta2,
    mu_c, k_c, rho, mu_v, t_switch, t_steep,
    rule1, rule2,
    law_kind, law_coeffs, law_m, delta0, kappa, law_k_max,
    stats, touched, mark_touched, track_extremes,
):
    """March the local model ``n_steps`` Euler steps, updating ``c1``/``c2``/
    ``v`` in place.  Returns early, recording the offending step index in
    ``stats``, if a non-finite value appears."""
    n = c1.shape[0]
    a1 = np.zeros((n + 2, n + 2))
    a2 = np.zeros((n + 2, n + 2))
    av = np.zeros((n + 2, n + 2))
    b1 = np.zeros((n + 2, n + 2))
    b2 = np.zeros((n + 2, n + 2))
    bv = np.zeros((n + 2, n + 2))
    q = np.empty((n, n))

    a1[1 : n + 1, 1 : n + 1] = c1
    a2[1 : n + 1, 1 : n + 1] = c2
    av[1 : n + 1, 1 : n + 1] = v
    _refresh_ghosts(a1)
    _refresh_ghosts(a2)
    _refresh_ghosts(av)

    inv_dx2 = 1.0 / (dx * dx)
    hfac1 = 0.5 * eta1 * inv_dx2
    hfac2 = 0.5 * eta2 * inv_dx2
    gom_floor = 1e-10 * k_c

    for step in range(n_steps):
        t = t0 + step * dt
        w = 0.5 * (1.0 + math.tanh((t - t_switch) / t_steep))
        oob = _q_pass(q, a1, av, w, law_kind, law_coeffs, law_m, delta0, kappa, law_k_max,
                      touched, mark_touched)
        stats[STAT_OOB] += oob
        _advance(b1, b2, bv, a1, a2, av, q, dt, inv_dx2,
                 d1, d2, hfac1, hfac2,
                 mu_c, k_c, rho, mu_v, gom_floor, rule1, rule2)
        if not _floor_and_check(b1, b2, bv, stats, track_extremes):
            stats[STAT_BAD_STEP] = step
            c1[:, :] = b1[1 : n + 1, 1 : n + 1]
            c2[:, :] = b2[1 : n + 1, 1 : n + 1]
            v[:, :] = bv[1 : n + 1, 1 : n + 1]
            return
        _refresh_ghosts(b1)
        _refresh_ghosts(b2)
        _refresh_ghosts(bv)
        a1, b1 = b1, a1
        a2, b2 = b2, a2
        av, bv = bv, av

    c1[:, :] = a1[1 : n + 1, 1 : n + 1]
    c2[:, :] = a2[1 : n + 1, 1 : n + 1]
    v[:, :] = av[1 : n + 1, 1 : n + 1]


@njit(cache=True, parallel=True)
def run_local_batch(
    c1_batch, c2_batch, v_batch, t0, n_steps, dt, dx,
    d1, d2, eta1, eta2,
    mu_c, k_c, rho, mu_v, t_switch, t_steep,
    rule1, rule2,
    law_kind, coeff_batch, law_m, delta0, kappa, law_k_max,
    stats_batch,
):
    """Independent local-model runs, one per coefficient row, in parallel."""
    for b in prange(c1_batch.shape[0]):
        dummy = np.zeros(1, dtype=np.uint8)
        run_local(
            c1_batch[b], c2_batch[b], v_batch[b], t0, n_steps, dt, dx,
            d1, d2, eta1, eta2,
            mu_c, k_c, rho, mu_v, t_switch, t_steep,
            rule1, rule2,
            law_kind, coeff_batch[b], law_m, delta0, kappa, law_k_max,
            stats_batch[b], dummy, False, False,
        )
