"""Gauss-Kronrod (7/15) rules and a globally adaptive integrator.

The integrator here takes a vectorized callable and is used for the outer
convolution integral and as the pure-numpy path of the inner kernel.  The
numba kernels in :mod:`tdfdot._kernels_nb` carry their own compiled copy of
the same algorithm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigurationError, QuadratureFailure

# QUADPACK qk15 abscissae (positive half, descending) and weights.
_XGK = np.array([
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.000000000000000000000000000000000,
])
_WGK = np.array([
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
])
_WG = np.array([
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
])

#: 15 nodes on [-1, 1] in ascending order.
GK_NODES = np.concatenate([-_XGK[:-1], _XGK[::-1]])
#: Kronrod weights matching GK_NODES.
GK_WEIGHTS = np.concatenate([_WGK[:-1], _WGK[::-1]])
#: Gauss (7-point) weights embedded on the Kronrod grid, zero at Kronrod-only nodes.
G_WEIGHTS = np.zeros(15)
G_WEIGHTS[[1, 3, 5]] = _WG[:3]
G_WEIGHTS[7] = _WG[3]
G_WEIGHTS[[13, 11, 9]] = _WG[:3]


@dataclass(frozen=True)
class QuadratureConfig:
    """Accuracy controls for every adaptive integral in the forward model.

    ``abs_floor`` is the magnitude below which the exponential damping of
    the kernel integrand is treated as zero; the integration range is clipped
    where the damping factor alone falls under it.
    """

    rel_tol: float = 1e-8
    abs_floor: float = 1e-300
    max_subdivisions: int = 200

    def __post_init__(self):
        if not (0.0 < self.rel_tol <= 1e-3):
            raise ConfigurationError("rel_tol must lie in (0, 1e-3]")
        if self.max_subdivisions < 64:
            raise ConfigurationError("max_subdivisions must be at least 64")
        if not (0.0 < self.abs_floor < 1.0):
            raise ConfigurationError("abs_floor must lie in (0, 1)")


def gk15_panels(f: Callable[[np.ndarray], np.ndarray], lo: np.ndarray, hi: np.ndarray):
    """Apply the 15-point Kronrod rule to each panel [lo_i, hi_i].

    Returns (kronrod, |kronrod - gauss|) arrays with the panel shape.
    """
    lo = np.asarray(lo, dtype=float)
    hi = np.asarray(hi, dtype=float)
    half = 0.5 * (hi - lo)
    mid = 0.5 * (hi + lo)
    x = mid[..., None] + half[..., None] * GK_NODES
    fx = f(x)
    k = half * (fx @ GK_WEIGHTS)
    g = half * (fx @ G_WEIGHTS)
    return k, np.abs(k - g)


def adaptive_gk15(
    f: Callable[[np.ndarray], np.ndarray],
    lo: float,
    hi: float,
    rel_tol: float = 1e-8,
    abs_tol: float = 0.0,
    max_subdivisions: int = 200,
    points: Sequence[float] = (),
) -> tuple[float, float]:
    """Globally adaptive Gauss-Kronrod integration of ``f`` over [lo, hi].

    ``f`` must accept an array of abscissae and return values of the same
    shape.  The interval with the largest error estimate is bisected until
    the summed estimate is below ``max(abs_tol, rel_tol * |result|)``.

    Raises
    ------
    QuadratureFailure
        When ``max_subdivisions`` intervals are in use and the tolerance is
        still not met.
    """
    if hi <= lo:
        return 0.0, 0.0
    edges = [lo] + sorted(p for p in points if lo < p < hi) + [hi]
    a = np.array(edges[:-1])
    b = np.array(edges[1:])
    val, err = gk15_panels(f, a, b)
    a, b, val, err = list(a), list(b), list(val), list(err)
    while True:
        total = float(np.sum(val))
        total_err = float(np.sum(err))
        if total_err <= max(abs_tol, rel_tol * abs(total)):
            return total, total_err
        if len(a) >= max_subdivisions:
            raise QuadratureFailure(
                f"no convergence on [{lo:.6g}, {hi:.6g}] after {len(a)} subdivisions "
                f"(estimate {total:.6e}, error {total_err:.3e})"
            )
        i = int(np.argmax(err))
        m = 0.5 * (a[i] + b[i])
        if not (a[i] < m < b[i]):
            raise QuadratureFailure(f"interval collapsed near {m:.17g}")
        v2, e2 = gk15_panels(f, np.array([a[i], m]), np.array([m, b[i]]))
        a[i:i + 1] = [a[i], m]
        b[i:i + 1] = [m, b[i]]
        val[i:i + 1] = list(v2)
        err[i:i + 1] = list(e2)
