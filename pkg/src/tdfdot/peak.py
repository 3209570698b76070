"""The approximate peak-time equation and its two inverse solves.

For a distance parameter ``lam`` the residual

    P(t; lam) = lam * exp(-(sqrt(k) t - lam)^2 / t) - sqrt(pi) / lifetime * t^1.5

is strictly decreasing in t on (lam / sqrt(k), inf) and strictly increasing
in lam on (0, t sqrt(k)).  Its root in t is the approximate peak time; its
root in lam recovers the distance parameter from a measured peak time.
Both are found by bisection on a guaranteed bracket.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

from scipy.optimize import bisect

from .errors import BracketFailure, ConfigurationError, DomainError, NoRoot, ValidityViolation
from .model import OpticalMedium, PointTarget, SdPair, as_target_set, lambda_param, squared_distances

_SQRT_PI = math.sqrt(math.pi)
ROOT_RTOL = 1e-10


@dataclass(frozen=True)
class PeakEquationParams:
    """Inputs of the peak-time residual.  ``valid`` flags the existence condition."""

    lam: float
    k: float
    lifetime: float

    def __post_init__(self):
        if not (self.lam > 0 and self.k > 0 and self.lifetime > 0):
            raise ConfigurationError("lam, k and lifetime must be positive")

    @classmethod
    def from_geometry(cls, pair: SdPair, target: PointTarget, medium: OpticalMedium) -> "PeakEquationParams":
        return cls(lambda_param(pair, target, medium), medium.k, medium.lifetime)

    @property
    def t_min(self) -> float:
        """Left end lam / sqrt(k) of the residual's domain."""
        return self.lam / math.sqrt(self.k)

    @property
    def valid(self) -> bool:
        return self.lifetime > _SQRT_PI * self.k**-0.75 * math.sqrt(self.lam)


def _residual(t, lam, k, lifetime):
    return lam * math.exp(-((math.sqrt(k) * t - lam) ** 2) / t) - _SQRT_PI / lifetime * t**1.5


def peak_residual(t: float, params: PeakEquationParams) -> float:
    """P(t; lam).  Raises DomainError for t <= lam / sqrt(k)."""
    if not t > params.t_min:
        raise DomainError(f"t={t:.6g} not above lam/sqrt(k)={params.t_min:.6g}")
    return _residual(t, params.lam, params.k, params.lifetime)


def approximate_peak_time(params: PeakEquationParams) -> float:
    """Unique root of :func:`peak_residual` in t.

    Raises
    ------
    ValidityViolation
        If the lifetime is too short for a root to exist.
    """
    if not params.valid:
        raise ValidityViolation(
            f"lifetime {params.lifetime:g} <= sqrt(pi) k^-3/4 lam^1/2 for lam={params.lam:.6g}",
            measurement=params,
        )
    lam, k, ell = params.lam, params.k, params.lifetime
    lo = params.t_min * (1.0 + 1e-12)
    hi = 2.0 * params.t_min
    for _ in range(200):
        if _residual(hi, lam, k, ell) < 0.0:
            break
        lo, hi = hi, 2.0 * hi
    else:  # pragma: no cover - excluded by validity
        raise BracketFailure(f"no sign change up to t={hi:.6g}")
    return bisect(_residual, lo, hi, args=(lam, k, ell), xtol=1e-300, rtol=ROOT_RTOL, maxiter=400)


def solve_lambda_from_peak(t_peak: float, k: float, lifetime: float) -> float:
    """Distance parameter whose approximate peak time equals ``t_peak``.

    Raises
    ------
    NoRoot
        When P(t_peak; lam) has no sign change on (0, t_peak sqrt(k)).
    ValidityViolation
        When the recovered lam violates the existence condition.
    """
    if not (t_peak > 0 and k > 0 and lifetime > 0):
        raise ConfigurationError("t_peak, k and lifetime must be positive")
    hi = t_peak * math.sqrt(k)
    if not _residual(t_peak, hi, k, lifetime) > 0.0:
        raise NoRoot(
            f"no lam in (0, {hi:.6g}) reproduces t_peak={t_peak:.6g}",
            measurement={"t_peak": t_peak, "k": k, "lifetime": lifetime},
        )
    lam = bisect(lambda x: _residual(t_peak, x, k, lifetime), 0.0, hi,
                 xtol=1e-300, rtol=ROOT_RTOL, maxiter=400)
    if not PeakEquationParams(lam, k, lifetime).valid:
        raise ValidityViolation(f"recovered lam={lam:.6g} violates the existence condition",
                                measurement={"t_peak": t_peak, "lam": lam})
    return lam


class MultiPeak(NamedTuple):
    t_peak_a: float
    dominant_index: int
    degenerate: bool


def multi_target_approx_peak(pair: SdPair, targets, medium: OpticalMedium) -> MultiPeak:
    """Approximate peak time of the target closest to the pair.

    The dominant target minimizes the summed squared distances to source and
    detector.  Ties within 1e-9 relative go to the lower index and set
    ``degenerate``.
    """
    targets = as_target_set(targets)
    sums = [sum(squared_distances(pair, tg.position)) for tg in targets]
    best = min(range(len(sums)), key=lambda j: (sums[j], j))
    degenerate = any(
        j != best and abs(sums[j] - sums[best]) <= 1e-9 * sums[best] for j in range(len(sums))
    )
    params = PeakEquationParams.from_geometry(pair, targets[best], medium)
    return MultiPeak(approximate_peak_time(params), best, degenerate)


def peak_relative_error(t_peak: float, t_peak_a: float) -> float:
    """|t_peak - t_peak_a| / t_peak."""
    if not t_peak > 0:
        raise ConfigurationError("t_peak must be positive")
    return abs(t_peak - t_peak_a) / t_peak
