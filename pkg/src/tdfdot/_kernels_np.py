"""Pure-numpy counterparts of the compiled kernels.

The inner integral is first attempted for all times at once with a fixed
composite Kronrod rule; times whose error estimate misses the tolerance are
redone one by one with the adaptive integrator.
"""

import math

import numpy as np
from scipy import special

from .errors import QuadratureFailure
from .quadrature import adaptive_gk15, gk15_panels

_PANELS_PER_SIDE = 4


def erfcx(x):
    return special.erfcx(x)


def k3_hat(depth, t, beta, vD):
    t = np.asarray(t, dtype=float)
    if beta == 0.0:
        return np.ones_like(t)
    arg = (depth + 2.0 * beta * vD * t) / np.sqrt(4.0 * vD * t)
    return 1.0 - beta * np.sqrt(np.pi * vD * t) * special.erfcx(arg)


def _integrand(s, t, a, b, depth, beta, vD):
    s = np.asarray(s, dtype=float)
    t = np.broadcast_to(t, s.shape) if np.ndim(t) else t
    r = t - s
    ok = (r > 0.0) & (s > 0.0)
    out = np.zeros(s.shape)
    rr = np.where(ok, r, 1.0)
    ss = np.where(ok, s, 1.0)
    e = -a / rr - b / ss - 1.5 * np.log(rr * ss)
    ok &= e >= -745.0
    if not ok.any():
        return out
    rr, ss, e = rr[ok], ss[ok], e[ok]
    out[ok] = np.exp(e) * k3_hat(depth, rr, beta, vD) * k3_hat(depth, ss, beta, vD)
    return out


def kernel_integral_many(times, a, b, depth, beta, vD, rel_tol, ln_floor, max_sub):
    times = np.asarray(times, dtype=float)
    out = np.zeros(times.shape)
    lo = b / ln_floor
    hi = times - a / ln_floor
    live = hi > lo
    if not live.any():
        return out, 0
    t = times[live]
    h = hi[live]
    sa, sb = math.sqrt(a), math.sqrt(b)
    mode = t * sb / (sa + sb) if sa + sb > 0 else 0.5 * t
    mode = np.clip(mode, lo, h)
    frac = np.arange(_PANELS_PER_SIDE + 1) / _PANELS_PER_SIDE
    left = lo + (mode - lo)[:, None] * frac
    right = mode[:, None] + (h - mode)[:, None] * frac
    edges = np.concatenate([left, right[:, 1:]], axis=1)
    p_lo, p_hi = edges[:, :-1], edges[:, 1:]
    tt = t[:, None, None]
    val, err = gk15_panels(lambda x: _integrand(x, tt, a, b, depth, beta, vD), p_lo, p_hi)
    res = val.sum(axis=1)
    est = err.sum(axis=1)
    bad = est > rel_tol * np.abs(res)
    failed = 0
    for i in np.flatnonzero(bad):
        ti = float(t[i])
        try:
            res[i], _ = adaptive_gk15(
                lambda x: _integrand(x, ti, a, b, depth, beta, vD),
                lo, float(h[i]), rel_tol=rel_tol, max_subdivisions=max_sub, points=(float(mode[i]),),
            )
        except QuadratureFailure:
            failed += 1
    out[live] = res
    return out, failed


def um_batch(times, a, b, depth, strength, beta, vD, k, prefactor, rel_tol, ln_floor, max_sub):
    times = np.asarray(times, dtype=float)
    acc = np.zeros(times.shape)
    failed = 0
    pos = times > 0
    for j in range(len(a)):
        v, f = kernel_integral_many(
            times[pos], float(a[j]), float(b[j]), float(depth[j]), beta, vD, rel_tol, ln_floor, max_sub
        )
        acc[pos] += strength[j] * v
        failed += f
    out = np.zeros(times.shape)
    out[pos] = prefactor * np.exp(-k * times[pos]) * acc[pos]
    return out, failed


def erfcx_array(x):
    return special.erfcx(np.asarray(x, dtype=float))
