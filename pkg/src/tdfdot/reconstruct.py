"""Target localization from peak times.

Single targets are found by shrinking a region of interest with four probe
pairs (a 2-D bisection, then a 1-D bisection once one direction has
converged) and recovering the depth from one more measurement.  Several
well-separated targets are found by scanning a grid of pairs and reading
off the local minima of the peak-time map.
"""

from __future__ import annotations

import copy
import csv
import json
import logging
import math
import threading
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage
from scipy.optimize import linear_sum_assignment

from .errors import (
    CardinalityMismatch,
    ConfigurationError,
    DegeneratePair,
    InconsistentMeasurement,
    MaxIterations,
    NoMinimaFound,
    NumericalFailure,
    OracleFailure,
)
from .forward import DEFAULT_QUAD, discrete_peak_time
from .model import OpticalMedium, Roi, SdPair, TargetSet, as_target_set, depth_from_lambda
from .peak import multi_target_approx_peak, solve_lambda_from_peak
from .quadrature import QuadratureConfig

log = logging.getLogger(__name__)

MAX_ITERATIONS = 64
LAYOUTS = ("corner", "literal")


# --------------------------------------------------------------------------
# noise


@dataclass(frozen=True)
class NoiseModel:
    """Multiplicative uniform noise ``t * (1 + level * (2u - 1))``."""

    level: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not self.level >= 0:
            raise ConfigurationError("noise level must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ConfigurationError("seed must fit in 64 unsigned bits")


def _pair_key(pair: SdPair) -> tuple[int, ...]:
    coords = np.array(pair.source[:2] + pair.detector[:2], dtype=np.float64)
    return tuple(int(x) for x in coords.view(np.uint64))


def perturb_peak(t_peak: float, noise: NoiseModel, key: Sequence[int] = ()) -> float:
    """Apply ``noise`` to one peak time.

    The uniform draw comes from a generator seeded with ``noise.seed`` and the
    integer ``key``, so each measurement owns an independent, reproducible
    stream no matter in which order measurements are taken.
    """
    if not t_peak > 0:
        raise ConfigurationError("t_peak must be positive")
    if noise.level == 0:
        return t_peak
    rng = np.random.default_rng(np.random.SeedSequence(noise.seed, spawn_key=tuple(key)))
    u = rng.random()
    return (1.0 + noise.level * (2.0 * u - 1.0)) * t_peak


# --------------------------------------------------------------------------
# oracles


class PeakTimeOracle(ABC):
    """Maps a source-detector pair to a measured peak time (ps)."""

    noise_level: float = 0.0

    @abstractmethod
    def peak_time(self, pair: SdPair) -> float:
        ...


class _CachedOracle(PeakTimeOracle):
    """Memoizes clean peak times; noise is applied per query from a per-pair stream.

    Oracles derived with :meth:`with_noise` share the clean cache, so runs
    over many seeds pay for each forward solve once.
    """

    def __init__(self, noise: Optional[NoiseModel] = None):
        self.noise = noise or NoiseModel()
        self.noise_level = self.noise.level
        self._cache: dict[SdPair, float] = {}
        self._lock = threading.Lock()

    def with_noise(self, noise: NoiseModel):
        other = copy.copy(self)
        other.noise, other.noise_level = noise, noise.level
        return other

    @property
    def solves(self) -> int:
        return len(self._cache)

    def clean_peak_time(self, pair: SdPair) -> float:
        with self._lock:
            hit = self._cache.get(pair)
        if hit is None:
            hit = self._measure(pair)
            with self._lock:
                hit = self._cache.setdefault(pair, hit)
        return hit

    def peak_time(self, pair: SdPair) -> float:
        return perturb_peak(self.clean_peak_time(pair), self.noise, _pair_key(pair))

    @abstractmethod
    def _measure(self, pair: SdPair) -> float:
        ...


class SyntheticOracle(_CachedOracle):
    """Discrete peak times from the forward model, optionally perturbed."""

    def __init__(
        self,
        targets,
        medium: OpticalMedium = OpticalMedium(),
        dt: float = 0.1,
        rule: str = "exact",
        quad: QuadratureConfig = DEFAULT_QUAD,
        noise: Optional[NoiseModel] = None,
    ):
        super().__init__(noise)
        self.targets = as_target_set(targets)
        self.medium, self.dt, self.rule, self.quad = medium, dt, rule, quad

    def _measure(self, pair: SdPair) -> float:
        try:
            return discrete_peak_time(pair, self.targets, self.medium, self.dt, self.quad, self.rule)
        except NumericalFailure as exc:
            raise OracleFailure(f"forward solve failed for {pair}: {exc}") from exc


class ApproximateOracle(_CachedOracle):
    """Peak times from the approximate peak-time equation of the dominant target."""

    def __init__(self, targets, medium: OpticalMedium = OpticalMedium(), noise: Optional[NoiseModel] = None):
        super().__init__(noise)
        self.targets = as_target_set(targets)
        self.medium = medium

    def _measure(self, pair: SdPair) -> float:
        return multi_target_approx_peak(pair, self.targets, self.medium).t_peak_a


class FileOracle(PeakTimeOracle):
    """Tabulated measurements from CSV rows ``xs1,xs2,xd1,xd2,t_peak_ps``."""

    TOL = 1e-9

    def __init__(self, path):
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        try:
            self._coords = np.array(
                [[float(r[c]) for c in ("xs1", "xs2", "xd1", "xd2")] for r in rows], dtype=float
            ).reshape(-1, 4)
            self._times = np.array([float(r["t_peak_ps"]) for r in rows])
        except (KeyError, ValueError) as exc:
            raise ConfigurationError(f"malformed measurement file {path}: {exc}") from exc

    def peak_time(self, pair: SdPair) -> float:
        q = np.array(pair.source[:2] + pair.detector[:2])
        if self._coords.size:
            dev = np.max(np.abs(self._coords - q), axis=1)
            i = int(np.argmin(dev))
            if dev[i] <= self.TOL:
                return float(self._times[i])
        raise OracleFailure(f"no tabulated measurement for source {pair.source[:2]}, detector {pair.detector[:2]}")


# --------------------------------------------------------------------------
# configuration and results


@dataclass(frozen=True)
class BisectionConfig:
    """Inputs of the single-target bisection.

    ``layout`` chooses the second probe pair: ``"corner"`` centres it on the
    lower-right corner like the other three, ``"literal"`` spans the bottom
    edge from ``x_l + L/2`` to ``x_r - L/2``.
    """

    roi: Roi = Roi(0.0, 20.0, 0.0, 20.0)
    sd_separation: float = 8.0
    eps1: float = 0.1
    eps2: float = 0.1
    equality_tol: float = 1e-6
    layout: str = "corner"

    def __post_init__(self):
        if not (self.eps1 > 0 and self.eps2 > 0 and self.sd_separation > 0):
            raise ConfigurationError("eps1, eps2 and sd_separation must be positive")
        if self.equality_tol < 0:
            raise ConfigurationError("equality_tol must be non-negative")
        if self.layout not in LAYOUTS:
            raise ConfigurationError(f"layout must be one of {LAYOUTS}")


@dataclass(frozen=True)
class ScanConfig:
    """Inputs of the boundary scan.

    ``smoothing`` is True/False, or None to smooth only when the oracle is
    noisy or the raw map has more minima than ``expected_count``.
    """

    roi: Roi = Roi(0.0, 20.0, 0.0, 20.0)
    grid_m: int = 20
    grid_n: int = 20
    sd_separation: float = 2.0
    smoothing: Optional[bool] = None
    expected_count: Optional[int] = None

    def __post_init__(self):
        if self.grid_m < 2 or self.grid_n < 2:
            raise ConfigurationError("grid_m and grid_n must be at least 2")
        if not self.sd_separation > 0:
            raise ConfigurationError("sd_separation must be positive")

    def midpoint(self, m: int, n: int) -> tuple[float, float]:
        r = self.roi
        return (r.x_l + m * (r.x_r - r.x_l) / self.grid_m, r.x_b + n * (r.x_t - r.x_b) / self.grid_n)

    def pair(self, m: int, n: int) -> SdPair:
        return SdPair.centered(self.midpoint(m, n), self.sd_separation)


@dataclass
class ReconstructionResult:
    recovered: list[tuple[float, float, float]]
    final_roi: Optional[Roi] = None
    iterations: list[dict] = field(default_factory=list)
    rel_err: Optional[float] = None
    shrinks: int = 0
    planar: list[tuple[float, float]] = field(default_factory=list)
    depth_pairs: list[dict] = field(default_factory=list)
    failures: list[dict] = field(default_factory=list)
    minima: list[tuple[int, int]] = field(default_factory=list)
    smoothed: bool = False

    def __post_init__(self):
        if any(not p[2] > 0 for p in self.recovered):
            raise ConfigurationError("recovered depths must be positive")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["final_roi"] = None if self.final_roi is None else list(self.final_roi.as_tuple())
        return d

    def to_json(self, path=None) -> str:
        text = json.dumps(self.to_dict(), indent=2, default=_json_default)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, Roi):
        return list(o.as_tuple())
    if isinstance(o, SdPair):
        return {"source": list(o.source), "detector": list(o.detector)}
    raise TypeError(f"cannot serialize {type(o).__name__}")


# --------------------------------------------------------------------------
# single target: bisection


def four_probe_pairs(roi: Roi, L: float, layout: str = "corner") -> list[SdPair]:
    """Probe pairs at the ROI corners, offset by +-L/2 along the first axis.

    Order: lower-left, lower-right, upper-right, upper-left.  With
    ``layout="literal"`` the second pair instead joins ``x_l + L/2`` and
    ``x_r - L/2`` on the bottom edge, which is degenerate when the ROI width
    equals L.
    """
    if layout not in LAYOUTS:
        raise ConfigurationError(f"layout must be one of {LAYOUTS}")
    h = L / 2.0
    xl, xr, xb, xt = roi.as_tuple()
    p1 = SdPair.centered((xl, xb), L)
    if layout == "corner":
        p2 = SdPair.centered((xr, xb), L)
    else:
        if xl + h == xr - h:
            raise DegeneratePair(f"second probe pair collapses at x={xl + h}")
        p2 = SdPair(source=(xr - h, xb, 0.0), detector=(xl + h, xb, 0.0))
    p3 = SdPair.centered((xr, xt), L)
    p4 = SdPair.centered((xl, xt), L)
    return [p1, p2, p3, p4]


def _line_probe_pairs(lo: float, hi: float, fixed: float, L: float, axis: int, layout: str) -> list[SdPair]:
    """Two probes at the ends of a 1-D interval; axis 1 mirrors axis 0."""
    if axis == 0:
        return four_probe_pairs(Roi(lo, hi, fixed, fixed + 1.0), L, layout)[:2]
    pts = four_probe_pairs(Roi(lo, hi, fixed, fixed + 1.0), L, layout)[:2]
    return [SdPair(source=(p.source[1], p.source[0], 0.0), detector=(p.detector[1], p.detector[0], 0.0)) for p in pts]


def _eq(a: float, b: float, tol: float) -> bool:
    return abs(a - b) <= tol * max(abs(a), abs(b))


def _classify(t: Sequence[float], tol: float) -> str:
    t1, t2, t3, t4 = t
    if _eq(t1, t2, tol) and _eq(t1, t3, tol) and _eq(t1, t4, tol):
        return "1a"
    if _eq(t1, t2, tol) and _eq(t3, t4, tol):
        return "2a" if t1 < t3 else "2b"
    if _eq(t1, t4, tol) and _eq(t2, t3, tol):
        return "2c" if t1 < t2 else "2d"
    # strict minimum; ties fall to the first listed pair
    return "3" + "abcd"[int(np.argmin(t))]


def bisect_planar(oracle: PeakTimeOracle, cfg: BisectionConfig):
    """Shrink ``cfg.roi`` around the target's planar location.

    Returns
    -------
    (x1, x2, final_roi, log)
        ``log`` holds one dict per comparison with the ROI before and after,
        the compared peak times and the branch taken.

    Raises
    ------
    MaxIterations
        After 64 comparisons without meeting the tolerances.
    """
    xl, xr, xb, xt = cfg.roi.as_tuple()
    L, tol = cfg.sd_separation, cfg.equality_tol
    steps: list[dict] = []

    def record(phase, before, times, case):
        steps.append({"phase": phase, "roi_before": list(before), "peak_times": list(times),
                      "case": case, "roi_after": [xl, xr, xb, xt]})
        if len(steps) >= MAX_ITERATIONS:
            raise MaxIterations(f"no convergence after {MAX_ITERATIONS} comparisons")

    line_axis = None
    while True:
        before = (xl, xr, xb, xt)
        times = [oracle.peak_time(p) for p in four_probe_pairs(Roi(xl, xr, xb, xt), L, cfg.layout)]
        case = _classify(times, tol)
        mx, my = 0.5 * (xl + xr), 0.5 * (xb + xt)
        if case == "1a":
            record("2d", before, times, case)
            break
        if case in ("2a", "2b"):
            xt, xb = (my, xb) if case == "2a" else (xt, my)
            record("2d", before, times, case)
            line_axis = 1
            break
        if case in ("2c", "2d"):
            xr, xl = (mx, xl) if case == "2c" else (xr, mx)
            record("2d", before, times, case)
            line_axis = 0
            break
        if case == "3a":
            xr, xt = mx, my
        elif case == "3b":
            xl, xt = mx, my
        elif case == "3c":
            xl, xb = mx, my
        else:
            xr, xb = mx, my
        record("2d", before, times, case)
        done1, done2 = xr - xl <= cfg.eps1, xt - xb <= cfg.eps2
        if done1 and done2:
            break
        if done1 != done2:
            line_axis = 1 if done1 else 0
            break

    if line_axis is not None:
        eps = cfg.eps1 if line_axis == 0 else cfg.eps2
        while True:
            before = (xl, xr, xb, xt)
            lo, hi, fixed = (xl, xr, xb) if line_axis == 0 else (xb, xt, xl)
            t1, t2 = (oracle.peak_time(p) for p in _line_probe_pairs(lo, hi, fixed, L, line_axis, cfg.layout))
            mid = 0.5 * (lo + hi)
            if _eq(t1, t2, tol):
                record("1d", before, (t1, t2), "equal")
                break
            if t1 < t2:
                hi = mid
            else:
                lo = mid
            if line_axis == 0:
                xl, xr = lo, hi
            else:
                xb, xt = lo, hi
            record("1d", before, (t1, t2), "low" if t1 < t2 else "high")
            if hi - lo <= eps:
                break

    roi = Roi(xl, xr, xb, xt)
    x1, x2 = roi.center
    return x1, x2, roi, steps


def recover_depth(oracle: PeakTimeOracle, planar: Sequence[float], pair: SdPair, medium: OpticalMedium) -> float:
    """Depth from the measured peak time of ``pair`` at a known planar location.

    Raises NoRoot, ValidityViolation or NoPhysicalDepth with the offending
    measurement attached.
    """
    return _depth_from_time(oracle.peak_time(pair), planar, pair, medium)


def _depth_from_time(t_peak, planar, pair, medium):
    try:
        lam = solve_lambda_from_peak(t_peak, medium.k, medium.lifetime)
        return depth_from_lambda(lam, pair, planar, medium)
    except InconsistentMeasurement as exc:
        info = dict(exc.measurement) if isinstance(exc.measurement, dict) else {}
        info.update({"t_peak": t_peak, "pair": pair, "planar": tuple(planar)})
        exc.measurement = info
        raise


def reconstruction_rel_err(truth, recovered: Sequence[Sequence[float]]) -> float:
    """Sum over targets of |x_true - x_rec| / |x_true| under optimal matching."""
    truth = as_target_set(truth)
    if len(truth) != len(recovered):
        raise CardinalityMismatch(f"{len(truth)} true targets but {len(recovered)} recovered")
    a = truth.positions
    b = np.asarray(recovered, dtype=float).reshape(-1, 3)
    cost = np.linalg.norm(a[:, None, :] - b[None, :, :], axis=2)
    rows, cols = linear_sum_assignment(cost)
    return float(sum(cost[i, j] / np.linalg.norm(a[i]) for i, j in zip(rows, cols)))


def bisection_reconstruct(
    oracle: PeakTimeOracle, cfg: BisectionConfig, medium: OpticalMedium, truth=None
) -> ReconstructionResult:
    """Planar bisection followed by a depth solve at a pair centred on the estimate."""
    x1, x2, roi, steps = bisect_planar(oracle, cfg)
    pair = SdPair.centered((x1, x2), cfg.sd_separation)
    t = oracle.peak_time(pair)
    depth = _depth_from_time(t, (x1, x2), pair, medium)
    rec = [(x1, x2, depth)]
    return ReconstructionResult(
        recovered=rec,
        final_roi=roi,
        iterations=steps,
        rel_err=None if truth is None else reconstruction_rel_err(truth, rec),
        shrinks=sum(1 for s in steps if s["roi_after"] != s["roi_before"]),
        planar=[(x1, x2)],
        depth_pairs=[{"pair": pair, "t_peak": t}],
    )


# --------------------------------------------------------------------------
# several targets: boundary scan


@dataclass
class PeakMap:
    """Peak times on the scan grid; ``values[m, n]`` is NaN where ``valid`` is False."""

    cfg: ScanConfig
    values: np.ndarray
    valid: np.ndarray
    errors: dict = field(default_factory=dict)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["m", "n", "midpoint_x", "midpoint_y", "t_peak_ps", "valid"])
            for m in range(self.values.shape[0]):
                for n in range(self.values.shape[1]):
                    x, y = self.cfg.midpoint(m, n)
                    v = self.values[m, n]
                    w.writerow([m, n, repr(x), repr(y), repr(float(v)) if self.valid[m, n] else "",
                                int(self.valid[m, n])])

    def with_values(self, values: np.ndarray) -> "PeakMap":
        return PeakMap(self.cfg, values, self.valid.copy(), dict(self.errors))


def scan_grid(oracle: PeakTimeOracle, cfg: ScanConfig, threads: int = 1) -> PeakMap:
    """Peak time of every pair on the (M+1) x (N+1) scan grid."""
    shape = (cfg.grid_m + 1, cfg.grid_n + 1)
    values = np.full(shape, np.nan)
    valid = np.zeros(shape, dtype=bool)
    errors = {}
    cells = [(m, n) for m in range(shape[0]) for n in range(shape[1])]

    def work(cell):
        try:
            return cell, oracle.peak_time(cfg.pair(*cell)), None
        except OracleFailure as exc:
            return cell, math.nan, str(exc)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, cells))
    else:
        results = [work(c) for c in cells]
    for (m, n), t, err in results:
        if err is None:
            values[m, n], valid[m, n] = t, True
        else:
            errors[(m, n)] = err
            log.warning("scan cell (%d, %d) invalid: %s", m, n, err)
    return PeakMap(cfg, values, valid, errors)


def smooth_map(pmap: PeakMap) -> PeakMap:
    """3x3 moving average over valid cells, truncated at the grid edges."""
    v = np.where(pmap.valid, pmap.values, 0.0)
    w = pmap.valid.astype(float)
    kernel = np.ones((3, 3))
    total = ndimage.convolve(v, kernel, mode="constant", cval=0.0)
    count = ndimage.convolve(w, kernel, mode="constant", cval=0.0)
    out = np.where(pmap.valid & (count > 0), total / np.maximum(count, 1.0), np.nan)
    return pmap.with_values(out)


def find_local_minima(pmap: PeakMap, diagnostics: Optional[dict] = None) -> list[tuple[int, int]]:
    """Cells strictly below every valid 8-neighbour, by ascending peak time.

    Cells that tie with their lowest neighbour and have none below are
    plateaus; they are not minima but are listed in ``diagnostics["plateau"]``.
    """
    vals, valid = pmap.values, pmap.valid
    M, N = vals.shape
    minima, plateau = [], []
    for m in range(M):
        for n in range(N):
            if not valid[m, n]:
                continue
            nb = [
                vals[i, j]
                for i in range(max(m - 1, 0), min(m + 2, M))
                for j in range(max(n - 1, 0), min(n + 2, N))
                if (i, j) != (m, n) and valid[i, j]
            ]
            if not nb:
                continue
            low = min(nb)
            if vals[m, n] < low:
                minima.append((m, n))
            elif vals[m, n] == low:
                plateau.append((m, n))
    if diagnostics is not None:
        diagnostics["plateau"] = plateau
    if plateau:
        log.info("%d plateau cells in peak-time map", len(plateau))
    return sorted(minima, key=lambda c: (vals[c], c))


def boundary_scan_reconstruct(
    oracle: PeakTimeOracle,
    cfg: ScanConfig,
    medium: OpticalMedium,
    truth=None,
    threads: int = 1,
    raw_map: Optional[PeakMap] = None,
) -> tuple[ReconstructionResult, PeakMap, Optional[PeakMap]]:
    """Scan, optionally smooth, take local minima and solve for each depth.

    Returns the result together with the raw and (if used) smoothed maps.
    The peak time used for each depth is read from the map the minima were
    taken from.

    Raises
    ------
    NoMinimaFound
        If the (smoothed) map has no strict local minimum.
    """
    raw = raw_map if raw_map is not None else scan_grid(oracle, cfg, threads)
    minima = find_local_minima(raw)
    smooth = cfg.smoothing
    if smooth is None:
        smooth = oracle.noise_level > 0 or (
            cfg.expected_count is not None and len(minima) > cfg.expected_count
        )
    used, smoothed = raw, None
    if smooth:
        smoothed = smooth_map(raw)
        used = smoothed
        minima = find_local_minima(smoothed)
    if not minima:
        raise NoMinimaFound("peak-time map has no strict local minimum")
    recovered, planar, pairs, failures = [], [], [], []
    for m, n in minima:
        pair = cfg.pair(m, n)
        xy = cfg.midpoint(m, n)
        t = float(used.values[m, n])
        planar.append(xy)
        pairs.append({"cell": [m, n], "pair": pair, "t_peak": t})
        try:
            recovered.append((xy[0], xy[1], _depth_from_time(t, xy, pair, medium)))
        except InconsistentMeasurement as exc:
            failures.append({"cell": [m, n], "error": type(exc).__name__, "message": str(exc)})
    rel = None
    if truth is not None and len(as_target_set(truth)) == len(recovered):
        rel = reconstruction_rel_err(truth, recovered)
    result = ReconstructionResult(
        recovered=recovered, rel_err=rel, planar=planar, depth_pairs=pairs,
        failures=failures, minima=minima, smoothed=bool(smooth),
    )
    return result, raw, smoothed
