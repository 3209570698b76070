"""Acceptance suite: one test per criterion, each at its stated tolerance.

Every test prints a single ``PASS criterion N`` or ``FAIL criterion N`` line;
the lines are repeated in the terminal summary.  Peak times are sampled with
the rectangle-rule convolution used by the CLI presets.  Runs over many noise
seeds share one clean forward-solve cache per configuration.
"""

import csv
import math
import time
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.optimize import brentq

from acceptance_report import report
from oracles import U_m_nested, u_m_trapezoid
from tdfdot import cli
from tdfdot import forward as F
from tdfdot.model import OpticalMedium, PointTarget, SdPair, TargetSet, lambda_param
from tdfdot.peak import PeakEquationParams, approximate_peak_time, peak_residual, solve_lambda_from_peak
from tdfdot.reconstruct import (
    BisectionConfig,
    NoiseModel,
    ScanConfig,
    SyntheticOracle,
    bisection_reconstruct,
    boundary_scan_reconstruct,
    find_local_minima,
    scan_grid,
)

MEDIUM = OpticalMedium()
RULE = "rectangle"
T1 = (7.0, 17.0, 20.0)
T3 = (6.0, 11.0, 30.0)
T4 = TargetSet.of((3.3, 5.2, 16.0), (17.4, 16.7, 18.0))
SEEDS = range(20)

# median RelErr of the noisy rows as printed in the four tables
NOISY_SINGLE = {
    ("table1", 0.001): 1.62e-2, ("table1", 0.01): 2.31e-2, ("table1", 0.05): 4.74e-2,
    ("table2", 0.001): 8.06e-3, ("table2", 0.01): 4.38e-2, ("table2", 0.05): 4.65e-2,
    ("table3", 0.001): 1.62e-2, ("table3", 0.01): 5.63e-2, ("table3", 0.05): 2.02e-1,
}
NOISY_MULTI = {0.001: 4.51e-2, 0.01: 7.58e-2}

pytestmark = pytest.mark.slow


def close(got, want, tol):
    return all(abs(g - w) <= tol for g, w in zip(got, want))


@pytest.fixture(scope="module")
def oracle_t1():
    return SyntheticOracle([T1], MEDIUM, rule=RULE)


@pytest.fixture(scope="module")
def oracle_t3():
    return SyntheticOracle([T3], MEDIUM, rule=RULE)


@pytest.fixture(scope="module")
def oracle_t4():
    return SyntheticOracle(T4, MEDIUM, rule=RULE)


@pytest.fixture(scope="module")
def table4_clean(oracle_t4):
    return boundary_scan_reconstruct(oracle_t4, ScanConfig(), MEDIUM, truth=T4)


def test_criterion_1_table1_clean(oracle_t1):
    start = time.perf_counter()
    res = bisection_reconstruct(oracle_t1, BisectionConfig(eps1=0.1, eps2=0.1), MEDIUM, truth=[T1])
    elapsed = time.perf_counter() - start
    rec = res.recovered[0]
    ok = close(rec, (7.03, 17.03, 19.83), 0.05) and abs(res.rel_err / 6.46e-3 - 1) <= 0.2 and elapsed < 600
    msg = (f"recovered ({rec[0]:.4f}, {rec[1]:.4f}, {rec[2]:.4f}), RelErr {res.rel_err:.3e} "
           f"(target 6.46e-03 +-20%), {elapsed:.0f} s")
    assert report(1, ok, msg), msg


def test_criterion_2_table2_clean(oracle_t1):
    res = bisection_reconstruct(oracle_t1, BisectionConfig(eps1=1.25, eps2=1.25), MEDIUM, truth=[T1])
    rec = res.recovered[0]
    ok = close(rec, (6.88, 16.88, 19.81), 0.05) and res.shrinks == 4
    msg = f"recovered ({rec[0]:.4f}, {rec[1]:.4f}, {rec[2]:.4f}), {res.shrinks} shrinks"
    assert report(2, ok, msg), msg


def test_criterion_3_table3_clean(oracle_t3):
    res = bisection_reconstruct(oracle_t3, BisectionConfig(eps1=0.1, eps2=0.1), MEDIUM, truth=[T3])
    rec = res.recovered[0]
    ok = close(rec, (6.09, 10.78, 30.17), 0.05)
    msg = f"recovered ({rec[0]:.4f}, {rec[1]:.4f}, {rec[2]:.4f})"
    assert report(3, ok, msg), msg


def test_criterion_4_table4_clean(table4_clean):
    res, _, smoothed = table4_clean
    rec = sorted(res.recovered)
    ok = (smoothed is None and len(rec) == 2
          and close(rec[0], (3.00, 5.00, 15.67), 0.05) and close(rec[1], (17.00, 17.00, 17.72), 0.05)
          and abs(res.rel_err / 4.75e-2 - 1) <= 0.2)
    msg = (f"recovered {[tuple(round(c, 4) for c in r) for r in rec]}, "
           f"RelErr {res.rel_err if res.rel_err is None else f'{res.rel_err:.3e}'} (target 4.75e-02 +-20%)")
    assert report(4, ok, msg), msg


def test_criterion_5_scan_minima(table4_clean):
    res, raw, _ = table4_clean
    v35, v1717 = raw.values[3, 5], raw.values[17, 17]
    ok = sorted(res.minima) == [(3, 5), (17, 17)] and abs(v35 - 546.1) <= 0.2 and abs(v1717 - 603.5) <= 0.2
    msg = f"minima {sorted(res.minima)} with {v35:.1f} ps and {v1717:.1f} ps"
    assert report(5, ok, msg), msg


def _median_single(base, eps, truth, level):
    errs = []
    for seed in SEEDS:
        try:
            res = bisection_reconstruct(base.with_noise(NoiseModel(level, seed)),
                                        BisectionConfig(eps1=eps, eps2=eps), MEDIUM, truth=[truth])
            errs.append(res.rel_err)
        except Exception:  # a failed reconstruction counts as unbounded error
            errs.append(math.inf)
    return float(np.median(errs))


def _multi_run(oracle, raw, level, seed):
    noisy = oracle.with_noise(NoiseModel(level, seed))
    res, _, _ = boundary_scan_reconstruct(noisy, ScanConfig(), MEDIUM, truth=T4)
    err = res.rel_err if res.rel_err is not None else math.inf
    return len(res.minima), err


def test_criterion_6_noisy_rows(oracle_t1, oracle_t3, oracle_t4, table4_clean):
    detail, ok = [], True
    singles = {"table1": (oracle_t1, 0.1, T1), "table2": (oracle_t1, 1.25, T1), "table3": (oracle_t3, 0.1, T3)}
    for (name, level), printed in NOISY_SINGLE.items():
        base, eps, truth = singles[name]
        med = _median_single(base, eps, truth, level)
        good = printed / 3 <= med <= 3 * printed
        ok &= good
        detail.append(f"{name}@{level:g}: {med:.3g}/{printed:.3g}{'' if good else ' (out)'}")
    two_minima = 0
    for level, printed in NOISY_MULTI.items():
        runs = [_multi_run(oracle_t4, None, level, s) for s in SEEDS]
        med = float(np.median([e for _, e in runs]))
        good = printed / 3 <= med <= 3 * printed
        ok &= good
        detail.append(f"table4@{level:g}: {med:.3g}/{printed:.3g}{'' if good else ' (out)'}")
        if level == 0.001:
            two_minima = sum(1 for n, _ in runs if n == 2)
    ok &= two_minima >= 18
    msg = "median RelErr / printed value: " + ", ".join(detail) + f"; two minima at 0.1% in {two_minima}/20 seeds"
    assert report(6, ok, msg), msg


def test_noisy_scan_recovers_two_targets(oracle_t4, table4_clean):
    noisy = oracle_t4.with_noise(NoiseModel(0.001, 0))
    res, _, smoothed = boundary_scan_reconstruct(noisy, ScanConfig(), MEDIUM, truth=T4)
    assert smoothed is not None and len(res.minima) == 2
    assert res.rel_err < 0.1


@pytest.mark.xfail(strict=True, reason="0.1% noise leaves the raw map with exactly two minima for seeds 0-19")
def test_noisy_raw_map_has_spurious_minima(oracle_t4, table4_clean):
    raw = scan_grid(oracle_t4.with_noise(NoiseModel(0.001, 0)), ScanConfig())
    assert len(find_local_minima(raw)) > 2


def _read_sweep(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    return {k: np.array([float(r[k]) for r in rows]) for k in ("value", "t_peak", "t_peak_a", "rel_err")}


def test_criterion_7_figure1_trends(tmp_path):
    cfg = cli.PRESETS["fig1"]()
    cfg = replace(cfg, output_dir=str(tmp_path))
    cli.run_peaktime_sweep(cfg)
    ell = _read_sweep(tmp_path / "sweep_lifetime.csv")
    mua = _read_sweep(tmp_path / "sweep_mu_a.csv")
    depth = _read_sweep(tmp_path / "sweep_depth.csv")

    def inc(a):
        return bool(np.all(np.diff(a) > 0))

    def dec(a):
        return bool(np.all(np.diff(a) < 0))

    fit = np.polyfit(depth["value"], depth["t_peak"], 1)
    resid = depth["t_peak"] - np.polyval(fit, depth["value"])
    r2 = 1 - resid @ resid / np.sum((depth["t_peak"] - depth["t_peak"].mean()) ** 2)
    checks = {
        "peaks up with lifetime": inc(ell["t_peak"]) and inc(ell["t_peak_a"]),
        "peaks up with depth": inc(depth["t_peak"]) and inc(depth["t_peak_a"]),
        "peaks down with mu_a": dec(mua["t_peak"]) and dec(mua["t_peak_a"]),
        "rel_err down with lifetime": dec(ell["rel_err"]),
        "rel_err down with mu_a": dec(mua["rel_err"]),
        "depth fit R2 > 0.99": r2 > 0.99,
    }
    ok = all(checks.values())
    msg = (", ".join(f"{k}: {'yes' if v else 'NO'}" for k, v in checks.items())
           + f"; rel_err(lifetime)={np.round(ell['rel_err'], 4).tolist()}"
           + f", rel_err(mu_a)={np.round(mua['rel_err'], 4).tolist()}, R2={r2:.5f}")
    assert report(7, ok, msg), msg


def test_criterion_8_asymptotics(tmp_path):
    cfg = replace(cli.PRESETS["asymptotics"](), output_dir=str(tmp_path))
    slopes = cli.run_verify_asymptotics(cfg)
    a, b, c = slopes["integral_vs_lambda"], slopes["profile_vs_depth"], slopes["expansion_vs_lifetime"]
    ok = -2.5 <= a <= -1.0 and abs(b + 1) <= 0.3 and abs(c + 3) <= 0.3
    msg = (f"integral ratio slope {a:.4f} (need [-2.5, -1.0]), profile slope {b:.4f} (need -1 +-0.3), "
           f"expansion slope {c:.4f} (need -3 +-0.3)")
    assert report(8, ok, msg), msg


K, ELL = MEDIUM.k, MEDIUM.lifetime
LAM_MAX = (ELL / math.sqrt(math.pi)) ** 2 * K**1.5
_failures: list[str] = []


@settings(max_examples=1000, deadline=None, database=None)
@given(lam=st.floats(1.0, 0.99 * LAM_MAX), a=st.floats(1e-6, 5.0), b=st.floats(1e-6, 5.0))
def _decreasing_in_t(lam, a, b):
    p = PeakEquationParams(lam, K, ELL)
    t1, t2 = p.t_min * (1 + min(a, b)), p.t_min * (1 + max(a, b) + 1e-3)
    if not peak_residual(t2, p) < peak_residual(t1, p):
        _failures.append(f"P not decreasing in t at lam={lam}")


@settings(max_examples=1000, deadline=None, database=None)
@given(t=st.floats(100.0, 3000.0), a=st.floats(1e-3, 0.999), b=st.floats(1e-3, 0.999))
def _increasing_in_lambda(t, a, b):
    hi = t * math.sqrt(K)
    l1, l2 = hi * min(a, b), hi * max(a, b)
    if l2 - l1 < 1e-9 * hi:
        return
    # at fixed t the two residuals differ only in their lambda term; comparing
    # those terms avoids cancellation against the common t^1.5 term
    def lam_term(lam):
        return lam * math.exp(-((math.sqrt(K) * t - lam) ** 2) / t)

    if not lam_term(l2) > lam_term(l1):
        _failures.append(f"P not increasing in lambda at t={t}")


@settings(max_examples=1000, deadline=None, database=None)
@given(a=st.floats(1.0, 0.99 * LAM_MAX), b=st.floats(1.0, 0.99 * LAM_MAX))
def _order_equivalence(a, b):
    ta = approximate_peak_time(PeakEquationParams(a, K, ELL))
    tb = approximate_peak_time(PeakEquationParams(b, K, ELL))
    if abs(ta - tb) <= 1e-10 * ta:
        if abs(a - b) > 1e-8 * a:
            _failures.append(f"equal roots for distinct lambdas {a}, {b}")
    elif (ta >= tb) != (a >= b):
        _failures.append(f"order mismatch for {a}, {b}")


def test_criterion_9_property_suite():
    _failures.clear()
    _decreasing_in_t()
    _increasing_in_lambda()
    _order_equivalence()

    rng = np.random.default_rng(9)
    for lam in rng.uniform(1.0, 0.99 * LAM_MAX, 100):
        p = PeakEquationParams(lam, K, ELL)
        grid = p.t_min * np.geomspace(1 + 1e-9, 1e4, 200_001)
        vals = lam * np.exp(-((np.sqrt(K) * grid - lam) ** 2) / grid) - np.sqrt(np.pi) / ELL * grid**1.5
        if np.count_nonzero(np.diff(np.sign(vals))) != 1:
            _failures.append(f"root count != 1 at lam={lam}")
        t = approximate_peak_time(p)
        lams = np.linspace(1e-9, t * np.sqrt(K), 200_001)[1:]
        pv = lams * np.exp(-((np.sqrt(K) * t - lams) ** 2) / t) - np.sqrt(np.pi) / ELL * t**1.5
        if np.count_nonzero(np.diff(np.sign(pv))) != 1:
            _failures.append(f"lambda-inverse not unique at t={t}")
        if abs(solve_lambda_from_peak(t, K, ELL) / lam - 1) > 1e-8:
            _failures.append(f"inverse round trip at lam={lam}")

    tg = PointTarget((10.0, 10.0, 20.0))
    xs = np.linspace(0, 20, 41)
    grid = np.array([[approximate_peak_time(PeakEquationParams.from_geometry(SdPair.centered((x, y), 8.0), tg, MEDIUM))
                      for y in xs] for x in xs])
    i, j = np.unravel_index(np.argmin(grid), grid.shape)
    if (xs[i], xs[j]) != (10.0, 10.0) or np.count_nonzero(grid == grid.min()) != 1:
        _failures.append("minimum not unique at the target centre")

    for axis in (0, 1):
        L = 3.0
        base = [[4.0, 12.0, 0.0], [10.0, 12.0, 0.0]]
        if axis == 1:
            base = [[p[1], p[0], 0.0] for p in base]
        shifted = [list(p) for p in base]
        for p in shifted:
            p[axis] += L
        p2, p1 = SdPair(*map(tuple, base)), SdPair(*map(tuple, shifted))

        def gap(x):
            pos = [9.0, 9.0, 18.0]
            pos[axis] = x
            tgt = PointTarget(tuple(pos))
            return (approximate_peak_time(PeakEquationParams.from_geometry(p1, tgt, MEDIUM))
                    - approximate_peak_time(PeakEquationParams.from_geometry(p2, tgt, MEDIUM)))

        xc = brentq(gap, -10.0, 30.0, xtol=1e-12)
        if abs(xc - (p1.source[axis] + p2.detector[axis]) / 2) > 1e-6:
            _failures.append(f"midpoint solvability along axis {axis + 1}: {xc}")

    ok = not _failures
    msg = "all property checks hold" if ok else "; ".join(_failures[:5])
    assert report(9, ok, msg), msg


def test_criterion_10_oracle_equivalence():
    rng = np.random.default_rng(10)
    worst = 0.0
    for _ in range(50):
        pair = SdPair.centered(rng.uniform(0, 20, 2), rng.uniform(2, 10), axis=int(rng.integers(2)))
        tg = PointTarget((*rng.uniform(0, 20, 2), rng.uniform(5, 35)))
        lam = lambda_param(pair, tg, MEDIUM)
        t = rng.uniform(0.7, 2.0) * lam / math.sqrt(MEDIUM.k)
        ref = u_m_trapezoid(pair, tg.position, t, MEDIUM)
        worst = max(worst, abs(F.u_m_point(pair, tg, t, MEDIUM) / ref - 1))
    pair = SdPair((6.0, 10.0, 0.0), (14.0, 10.0, 0.0))
    tg = PointTarget((10.0, 10.0, 20.0))
    nested = abs(F.U_m(pair, [tg], 670.0, MEDIUM) / U_m_nested(pair, tg.position, 670.0, MEDIUM) - 1)
    ok = worst <= 1e-6 and nested <= 1e-5
    msg = f"u_m worst relative deviation {worst:.2e} over 50 configurations, U_m deviation {nested:.2e}"
    assert report(10, ok, msg), msg


if __name__ == "__main__":
    import sys

    sys.exit(pytest.main([__file__, "-v", "-s"]))
