"""Forward model: emission intensities at a boundary detector.

The zero-lifetime emission ``u_m`` is the time convolution of the
source-to-target and target-to-detector half-space Green functions, reduced
to a one-dimensional integral.  The finite-lifetime response ``U_m`` is
``u_m`` convolved with the exponential decay of the fluorophore.

Two discretizations of that last convolution are offered when sampling a
curve on a uniform grid:

``"exact"``
    each grid step is integrated with a 3-point Gauss rule and the
    exponential kernel is propagated exactly, so samples equal ``U_m`` to
    quadrature accuracy;
``"rectangle"``
    right-endpoint rectangle sums with the grid step, i.e. the plain
    cumulative discretization.  Its samples track ``U_m(t + dt/2)`` up to a
    constant factor, which shifts discrete peaks by about half a step.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.signal import lfilter

from . import _backend
from .errors import ConfigurationError, QuadratureFailure, Unpeaked, WindowTooShort
from .model import (
    OpticalMedium,
    PointTarget,
    SdPair,
    TargetSet,
    as_target_set,
    lambda_param,
    squared_distances,
)
from .quadrature import QuadratureConfig, adaptive_gk15

RULES = ("exact", "rectangle")
DEFAULT_QUAD = QuadratureConfig()

_GL3_X, _GL3_W = np.polynomial.legendre.leggauss(3)
# Relative level below which early-time emission is ignored by the peak finder.
_SKIP_LOG = 60.0


@dataclass(frozen=True, eq=False)
class TemporalResponse:
    """Uniformly sampled response curve; sample i sits at ``t0 + i*dt``."""

    t0: float
    dt: float
    values: np.ndarray
    peak_index: int = field(default=-1)
    peaked: bool = field(default=False)

    def __post_init__(self):
        vals = np.asarray(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise ConfigurationError("values must be a non-empty 1-D sequence")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        idx = int(np.argmax(vals))
        object.__setattr__(self, "peak_index", idx)
        object.__setattr__(self, "peaked", 0 < idx < vals.size - 1)

    @property
    def times(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.values.size)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["t_ps", "intensity"])
            for t, u in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(u))])

    @classmethod
    def from_csv(cls, path) -> "TemporalResponse":
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t, u = data[:, 0], data[:, 1]
        dt = float(t[1] - t[0]) if t.size > 1 else 1.0
        return cls(t0=float(t[0]), dt=dt, values=u)


@dataclass(frozen=True)
class WindowPolicy:
    """When to stop extending a sampled curve.

    Sampling stops at the first sample below ``stop_fraction`` of the running
    maximum once that maximum is strictly interior.  ``cap_factor`` scales the
    hard cap ``cap_factor * (lambda_max / sqrt(k) + lifetime)``.
    """

    stop_fraction: float = 0.1
    cap_factor: float = 20.0
    chunk: int = 2048


def _prefactor(medium: OpticalMedium) -> float:
    return 1.0 / (16.0 * math.pi**3 * medium.D**2 * medium.v)


def _target_arrays(pair: SdPair, targets: TargetSet, medium: OpticalMedium):
    four_vd = 4.0 * medium.vD
    a, b, d, c = [], [], [], []
    for tg in targets:
        rd2, rs2 = squared_distances(pair, tg.position)
        a.append(rd2 / four_vd)
        b.append(rs2 / four_vd)
        d.append(tg.depth)
        c.append(tg.strength)
    return np.array(a), np.array(b), np.array(d), np.array(c)


def _um_values(pair, targets: TargetSet, times, medium, quad: QuadratureConfig) -> np.ndarray:
    times = np.ascontiguousarray(np.atleast_1d(np.asarray(times, dtype=float)))
    a, b, d, c = _target_arrays(pair, targets, medium)
    vals, failed = _backend.kernels().um_batch(
        times, a, b, d, c, medium.beta, medium.vD, medium.k, _prefactor(medium),
        quad.rel_tol, -math.log(quad.abs_floor), quad.max_subdivisions,
    )
    if failed:
        raise QuadratureFailure(f"{failed} kernel integrals missed rel_tol={quad.rel_tol:g}")
    return vals


def _scalar_or_array(t, vals):
    return float(vals[0]) if np.ndim(t) == 0 else vals.reshape(np.shape(t))


def k3_hat(depth: float, t, medium: OpticalMedium):
    """Robin boundary factor ``1 - beta sqrt(pi v D t) erfcx(...)``.

    Equals 1 for beta = 0 and lies in (0, 1) for beta > 0.
    """
    if np.ndim(t) == 0:
        return float(_backend.kernels().k3_hat(float(depth), float(t), medium.beta, medium.vD))
    tt = np.asarray(t, dtype=float)
    return np.array([
        _backend.kernels().k3_hat(float(depth), float(x), medium.beta, medium.vD) for x in tt.ravel()
    ]).reshape(tt.shape)


def u_m_point(pair: SdPair, target: PointTarget, t, medium: OpticalMedium,
              quad: QuadratureConfig = DEFAULT_QUAD):
    """Zero-lifetime emission of a single point target at time(s) ``t``."""
    return _scalar_or_array(t, _um_values(pair, TargetSet((target,)), t, medium, quad))


def u_m_multi(pair: SdPair, targets, t, medium: OpticalMedium, quad: QuadratureConfig = DEFAULT_QUAD):
    """Superposition of :func:`u_m_point` over a target set."""
    return _scalar_or_array(t, _um_values(pair, as_target_set(targets), t, medium, quad))


def zero_lifetime_peak_estimate(pair: SdPair, targets: TargetSet, medium: OpticalMedium) -> float:
    """Location of the maximum of the dominant exponential factor of u_m."""
    best = math.inf
    for tg in targets:
        rd2, rs2 = squared_distances(pair, tg.position)
        s = (math.sqrt(rd2) + math.sqrt(rs2)) / math.sqrt(4.0 * medium.vD)
        best = min(best, s / math.sqrt(medium.k))
    return best


def U_m(pair: SdPair, targets, t, medium: OpticalMedium, quad: QuadratureConfig = DEFAULT_QUAD):
    """Finite-lifetime emission at time(s) ``t`` by adaptive convolution.

    With ``medium.lifetime == 0`` the zero-lifetime emission is returned.
    """
    targets = as_target_set(targets)
    if medium.lifetime == 0:
        return u_m_multi(pair, targets, t, medium, quad)
    ell = medium.lifetime
    inner = QuadratureConfig(max(quad.rel_tol * 1e-2, 1e-13), quad.abs_floor, quad.max_subdivisions)
    t_ref = zero_lifetime_peak_estimate(pair, targets, medium)
    out = []
    for ti in np.atleast_1d(np.asarray(t, dtype=float)).ravel():
        if ti <= 0:
            raise ConfigurationError("U_m needs t > 0")

        def f(s, ti=ti):
            flat = s.ravel()
            return (np.exp(-(ti - flat) / ell) / ell * _um_values(pair, targets, flat, medium, inner)).reshape(s.shape)

        val, _ = adaptive_gk15(f, 0.0, float(ti), rel_tol=quad.rel_tol,
                               max_subdivisions=quad.max_subdivisions, points=(t_ref,))
        out.append(val)
    vals = np.array(out)
    return float(vals[0]) if np.ndim(t) == 0 else vals.reshape(np.shape(t))


class _Marcher:
    """Sample U_m on the grid n*dt, n = n0, n0+1, ..., chunk by chunk."""

    def __init__(self, pair, targets, medium, dt, rule, quad, n0=1):
        if rule not in RULES:
            raise ConfigurationError(f"rule must be one of {RULES}")
        self.pair, self.targets, self.medium = pair, targets, medium
        self.dt, self.rule, self.quad = dt, rule, quad
        self.n = n0
        self.U = 0.0
        ell = medium.lifetime
        self.q = math.exp(-dt / ell) if ell > 0 else 0.0

    def advance(self, count: int):
        n = np.arange(self.n, self.n + count)
        t = n * self.dt
        ell = self.medium.lifetime
        if ell == 0:
            vals = _um_values(self.pair, self.targets, t, self.medium, self.quad)
        else:
            if self.rule == "rectangle":
                inc = (self.dt / ell) * _um_values(self.pair, self.targets, t, self.medium, self.quad)
            else:
                half = 0.5 * self.dt
                s = (t - half)[:, None] + half * _GL3_X[None, :]
                u = _um_values(self.pair, self.targets, s.ravel(), self.medium, self.quad).reshape(s.shape)
                kern = np.exp(-(t[:, None] - s) / ell) / ell
                inc = half * (u * kern) @ _GL3_W
            vals, _ = lfilter([1.0], [1.0, -self.q], inc, zi=[self.q * self.U])
            self.U = float(vals[-1])
        self.n += count
        return t, vals


def sample_response(
    pair: SdPair,
    targets,
    medium: OpticalMedium,
    dt: float = 0.1,
    window: WindowPolicy = WindowPolicy(),
    quad: QuadratureConfig = DEFAULT_QUAD,
    rule: str = "exact",
) -> TemporalResponse:
    """Sample U_m at t = dt, 2 dt, ... until the window policy terminates.

    Raises
    ------
    WindowTooShort
        If the curve has not dropped below the stop fraction by the hard cap.
    """
    if not dt > 0:
        raise ConfigurationError("dt must be positive")
    targets = as_target_set(targets)
    lam_max = max(lambda_param(pair, tg, medium) for tg in targets)
    cap = window.cap_factor * (lam_max / math.sqrt(medium.k) + medium.lifetime)
    n_cap = int(math.ceil(cap / dt))
    m = _Marcher(pair, targets, medium, dt, rule, quad)
    chunks = []
    best, best_i, total = -math.inf, -1, 0
    while total < n_cap:
        _, vals = m.advance(min(window.chunk, n_cap - total))
        for j, v in enumerate(vals):
            i = total + j
            if v > best:
                best, best_i = v, i
            elif best > 0 and 0 < best_i < i and v < window.stop_fraction * best:
                chunks.append(vals[: j + 1])
                return TemporalResponse(t0=dt, dt=dt, values=np.concatenate(chunks))
        chunks.append(vals)
        total += vals.size
    raise WindowTooShort(f"response still above {window.stop_fraction:g} of its maximum at t={cap:.1f} ps")


def peak_time(response: TemporalResponse) -> float:
    """Grid time of the largest sample (no sub-sample interpolation)."""
    if not response.peaked:
        raise Unpeaked("maximum sits on the first or last sample")
    return response.t0 + response.peak_index * response.dt


def discrete_peak_time(
    pair: SdPair,
    targets,
    medium: OpticalMedium,
    dt: float = 0.1,
    quad: QuadratureConfig = DEFAULT_QUAD,
    rule: str = "exact",
    chunk: int = 256,
) -> float:
    """Peak time of the sampled curve without sampling its whole tail.

    Samples exactly as :func:`sample_response` would (same grid and rule)
    but skips the leading stretch where the emission is below e^-60 of its
    eventual scale and stops once the curve has clearly turned over.
    """
    targets = as_target_set(targets)
    k = medium.k
    # log of the dominant factor exp(-s^2/t - k t) peaks at t = s/sqrt(k) with value -2 s sqrt(k)
    s_min = zero_lifetime_peak_estimate(pair, targets, medium) * math.sqrt(k)
    t_skip = 0.0
    if s_min > 0:
        # smallest root of s^2/t + k t = 2 s sqrt(k) + _SKIP_LOG
        c = 2.0 * s_min * math.sqrt(k) + _SKIP_LOG
        t_skip = (c - math.sqrt(c * c - 4.0 * k * s_min * s_min)) / (2.0 * k)
    n0 = max(1, int(t_skip / dt))
    m = _Marcher(pair, targets, medium, dt, rule, quad, n0=n0)
    lam_max = max(lambda_param(pair, tg, medium) for tg in targets)
    n_cap = n0 + int(math.ceil(20.0 * (lam_max / math.sqrt(k) + medium.lifetime) / dt))
    best, best_n, since = -math.inf, -1, 0
    while m.n < n_cap:
        t, vals = m.advance(chunk)
        for tn, v in zip(t, vals):
            if v > best:
                best, best_n, since = v, int(round(tn / dt)), 0
            elif best > 0:
                since += 1
        if best > 0 and since >= 2:
            if best_n <= n0:
                raise Unpeaked("sampled curve decreases from its first computed sample")
            return best_n * dt
    raise WindowTooShort("no turning point found before the time cap")


def u_m_asymptotic(pair: SdPair, target: PointTarget, t, medium: OpticalMedium):
    """Closed-form deep-target profile of the zero-lifetime emission."""
    t = np.asarray(t, dtype=float)
    rd2, rs2 = squared_distances(pair, target.position)
    v, D, d = medium.v, medium.D, target.depth
    pre = target.strength / (8.0 * math.pi**2.5 * math.sqrt(v) * D**1.5)
    geo = 1.0 / math.sqrt(rd2) + 1.0 / math.sqrt(rs2)
    val = (
        pre * np.exp(-medium.k * t) * geo * t**-1.5
        * np.exp(-(rd2 + rs2) / (2.0 * medium.vD * t))
        * (d / (d + medium.beta * medium.vD * t)) ** 2
    )
    return float(val) if val.ndim == 0 else val


def integral_asymptotic_rhs(pair: SdPair, target: PointTarget, medium: OpticalMedium) -> float:
    """Leading-order value of the time integral of :func:`u_m_asymptotic` for large lambda."""
    lam = lambda_param(pair, target, medium)
    k = medium.k
    return k**-0.75 * math.sqrt(math.pi * lam) * u_m_asymptotic(pair, target, lam / math.sqrt(k), medium)


def integral_u_m_asymptotic(pair: SdPair, target: PointTarget, t: float, medium: OpticalMedium,
                            rel_tol: float = 1e-10) -> float:
    """Time integral of :func:`u_m_asymptotic` over (0, t) by adaptive quadrature."""
    lam = lambda_param(pair, target, medium)
    t_ref = lam / math.sqrt(medium.k)
    val, _ = adaptive_gk15(lambda s: u_m_asymptotic(pair, target, np.maximum(s, 1e-300), medium),
                           0.0, float(t), rel_tol=rel_tol, max_subdivisions=400, points=(t_ref,))
    return val


def expansion_U_m(pair: SdPair, targets, t: Sequence[float], medium: OpticalMedium,
                  quad: QuadratureConfig = DEFAULT_QUAD) -> np.ndarray:
    """Two-term large-lifetime expansion of U_m at each time in ``t``.

    ``l^-1 int_0^t u_m - l^-2 int_0^t (t - s) u_m``.
    """
    targets = as_target_set(targets)
    ell = medium.lifetime
    inner = QuadratureConfig(max(quad.rel_tol * 1e-2, 1e-13), quad.abs_floor, quad.max_subdivisions)
    t_ref = zero_lifetime_peak_estimate(pair, targets, medium)
    out = []
    for ti in np.atleast_1d(np.asarray(t, dtype=float)):
        def f(s, ti=ti):
            flat = s.ravel()
            u = _um_values(pair, targets, flat, medium, inner)
            return ((1.0 / ell - (ti - flat) / ell**2) * u).reshape(s.shape)

        val, _ = adaptive_gk15(f, 0.0, float(ti), rel_tol=quad.rel_tol,
                               max_subdivisions=quad.max_subdivisions, points=(t_ref,))
        out.append(val)
    return np.array(out)
