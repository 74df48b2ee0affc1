"""Dormand-Prince 5(4) integrator with dense output, compiled with numba.

Uses the standard DOPRI5 tableau and its fourth-order continuous extension.
The vector field is passed in as a jitted function ``rhs(t, y, p, seg) -> dy`` where ``seg`` is
the index of the integration segment (number of switch times already
crossed), so piecewise-defined fields never straddle a branch change.
"""
import numpy as np
from numba import njit

STATUS_OK = 0
STATUS_UNDERFLOW = 1
STATUS_MAXSTEPS = 2
STATUS_NONFINITE = 3

C2, C3, C4, C5 = 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0
A21 = 1.0 / 5.0
A31, A32 = 3.0 / 40.0, 9.0 / 40.0
A41, A42, A43 = 44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0
A51, A52, A53, A54 = 19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0
A61, A62, A63, A64, A65 = (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0,
                           49.0 / 176.0, -5103.0 / 18656.0)
A71, A73, A74, A75, A76 = (35.0 / 384.0, 500.0 / 1113.0, 125.0 / 192.0,
                           -2187.0 / 6784.0, 11.0 / 84.0)
E1, E3, E4, E5, E6, E7 = (71.0 / 57600.0, -71.0 / 16695.0, 71.0 / 1920.0,
                          -17253.0 / 339200.0, 22.0 / 525.0, -1.0 / 40.0)
D1, D3, D4, D5, D6, D7 = (-12715105075.0 / 11282082432.0, 87487479700.0 / 32700410799.0,
                          -10690763975.0 / 1880347072.0, 701980252875.0 / 199316789632.0,
                          -1453857185.0 / 822651844.0, 69997945.0 / 29380423.0)

SAFETY = 0.9
FAC_MIN = 0.2
FAC_MAX = 10.0
MAX_STEPS = 200_000


@njit(cache=True, nogil=True)
def _err_norm(y, y_new, err, rtol, atol):
    total = 0.0
    n = y.shape[0]
    for k in range(n):
        sc = atol + rtol * max(abs(y[k]), abs(y_new[k]))
        total += (err[k] / sc) ** 2
    return np.sqrt(total / n)


@njit(nogil=True)
def _initial_step(rhs, t, y, f0, p, seg, direction_span, rtol, atol):
    n = y.shape[0]
    d0 = 0.0
    d1 = 0.0
    for k in range(n):
        sc = atol + rtol * abs(y[k])
        d0 += (y[k] / sc) ** 2
        d1 += (f0[k] / sc) ** 2
    d0 = np.sqrt(d0 / n)
    d1 = np.sqrt(d1 / n)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = y + h0 * f0
    f1 = rhs(t + h0, y1, p, seg)
    d2 = 0.0
    for k in range(n):
        sc = atol + rtol * abs(y[k])
        d2 += ((f1[k] - f0[k]) / sc) ** 2
    d2 = np.sqrt(d2 / n) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** 0.2
    return min(100.0 * h0, h1, direction_span)


@njit(nogil=True)
def integrate_segments(rhs, p, y0, breaks, t_out, rtol, atol):
    """Integrate from ``breaks[0]`` through each break point, filling ``t_out``.

    ``breaks`` holds the segment endpoints (start time, interior switch
    times, final time).  Returns ``(states, status, t_fail)``.
    """
    n = y0.shape[0]
    m = t_out.shape[0]
    out = np.empty((m, n))
    y = y0.copy()
    j = 0
    # outputs sitting exactly at the start time
    while j < m and t_out[j] <= breaks[0]:
        out[j, :] = y
        j += 1
    n_steps = 0
    for seg in range(breaks.shape[0] - 1):
        t = breaks[seg]
        t_end = breaks[seg + 1]
        if t_end <= t:
            continue
        f = rhs(t, y, p, seg)
        h = _initial_step(rhs, t, y, f, p, seg, t_end - t, rtol, atol)
        last = False
        while not last:
            if n_steps >= MAX_STEPS:
                return out, STATUS_MAXSTEPS, t
            if h < 16.0 * 2.220446049250313e-16 * max(abs(t), 1.0):
                return out, STATUS_UNDERFLOW, t
            if t + 1.01 * h >= t_end:
                h = t_end - t
                last = True
            k1 = f
            k2 = rhs(t + C2 * h, y + h * (A21 * k1), p, seg)
            k3 = rhs(t + C3 * h, y + h * (A31 * k1 + A32 * k2), p, seg)
            k4 = rhs(t + C4 * h, y + h * (A41 * k1 + A42 * k2 + A43 * k3), p, seg)
            k5 = rhs(t + C5 * h, y + h * (A51 * k1 + A52 * k2 + A53 * k3 + A54 * k4), p, seg)
            k6 = rhs(t + h, y + h * (A61 * k1 + A62 * k2 + A63 * k3 + A64 * k4 + A65 * k5),
                     p, seg)
            y_new = y + h * (A71 * k1 + A73 * k3 + A74 * k4 + A75 * k5 + A76 * k6)
            k7 = rhs(t + h, y_new, p, seg)
            n_steps += 1
            err_vec = h * (E1 * k1 + E3 * k3 + E4 * k4 + E5 * k5 + E6 * k6 + E7 * k7)
            err = _err_norm(y, y_new, err_vec, rtol, atol)
            if not np.isfinite(err):
                if h < 1e-12:
                    return out, STATUS_NONFINITE, t
                h *= 0.25
                last = False
                continue
            if err <= 1.0:
                t_new = t_end if last else t + h
                # dense output on (t, t_new]
                if j < m and t_out[j] <= t_new:
                    ydiff = y_new - y
                    bspl = h * k1 - ydiff
                    r4 = ydiff - h * k7 - bspl
                    r5 = h * (D1 * k1 + D3 * k3 + D4 * k4 + D5 * k5 + D6 * k6 + D7 * k7)
                    while j < m and t_out[j] <= t_new:
                        if t_out[j] == t_new:
                            out[j, :] = y_new
                        else:
                            th = (t_out[j] - t) / h
                            th1 = 1.0 - th
                            out[j, :] = y + th * (ydiff + th1 * (bspl + th * (r4 + th1 * r5)))
                        j += 1
                t = t_new
                y = y_new
                f = k7
                if err == 0.0:
                    fac = FAC_MAX
                else:
                    fac = min(FAC_MAX, max(FAC_MIN, SAFETY * err ** -0.2))
                h = h * fac
            else:
                last = False
                h = h * max(FAC_MIN, SAFETY * err ** -0.2)
    for k in range(j, m):
        out[k, :] = y
    return out, STATUS_OK, t


@njit(nogil=True)
def rk4_fixed(rhs, p, y0, breaks, t_out, h):
    """Classic fixed-step RK4 on each segment, with outputs by step alignment.

    Used as an independent reference; ``t_out`` must lie on the step lattice.
    """
    n = y0.shape[0]
    m = t_out.shape[0]
    out = np.empty((m, n))
    y = y0.copy()
    j = 0
    while j < m and t_out[j] <= breaks[0]:
        out[j, :] = y
        j += 1
    for seg in range(breaks.shape[0] - 1):
        t0 = breaks[seg]
        t1 = breaks[seg + 1]
        n_steps = int(np.round((t1 - t0) / h))
        hh = (t1 - t0) / n_steps
        for s in range(n_steps):
            t = t0 + s * hh
            k1 = rhs(t, y, p, seg)
            k2 = rhs(t + 0.5 * hh, y + 0.5 * hh * k1, p, seg)
            k3 = rhs(t + 0.5 * hh, y + 0.5 * hh * k2, p, seg)
            k4 = rhs(t + hh, y + hh * k3, p, seg)
            y = y + hh / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            t_next = t0 + (s + 1) * hh
            while j < m and t_out[j] <= t_next + 1e-9 * hh:
                out[j, :] = y
                j += 1
    return out
