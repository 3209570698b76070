"""Command-line experiment runner.

Every experiment is described by one JSON document (see
:class:`ExperimentConfig`); presets cover the standard configurations so
``tdfdot --example table1`` needs no file.  Output is CSV and JSON only.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 inconsistent measurement.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path
from typing import Optional

import numpy as np

from . import forward as fwd
from .errors import ConfigurationError, InconsistentMeasurement, TdfdotError, ValidityViolation, WindowTooShort
from .model import OpticalMedium, PointTarget, Roi, SdPair, TargetSet, lambda_param
from .peak import PeakEquationParams, approximate_peak_time, multi_target_approx_peak, peak_relative_error
from .quadrature import QuadratureConfig
from .reconstruct import (
    BisectionConfig,
    NoiseModel,
    ScanConfig,
    SyntheticOracle,
    bisection_reconstruct,
    boundary_scan_reconstruct,
    scan_grid,
)

log = logging.getLogger("tdfdot")

MODES = ("forward", "peaktime-sweep", "reconstruct-single", "reconstruct-multi", "verify-asymptotics")
SWEEP_PARAMETERS = ("lifetime", "mu_a", "depth", "grid-index")
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INCONSISTENT = 0, 2, 3, 4


@dataclass(frozen=True)
class Sweep:
    """One swept parameter.  ``values`` is unused for ``grid-index``, which walks the scan grid."""

    parameter: str
    values: tuple[float, ...] = ()

    def __post_init__(self):
        if self.parameter not in SWEEP_PARAMETERS:
            raise ConfigurationError(f"sweep parameter must be one of {SWEEP_PARAMETERS}")
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        if self.parameter != "grid-index" and not self.values:
            raise ConfigurationError(f"sweep over {self.parameter} needs values")


@dataclass(frozen=True)
class AsymptoticsConfig:
    integral_depths: tuple[float, ...] = (20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0)
    profile_depths: tuple[float, ...] = (20.0, 30.0, 40.0, 50.0, 60.0)
    lifetimes: tuple[float, ...] = (2000.0, 4000.0, 8000.0)
    times: tuple[float, ...] = tuple(float(t) for t in range(200, 2001, 200))
    # upper limit of the time integral, in units of lambda / sqrt(k)
    horizon: float = 3.0


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one CLI run needs.

    The probe pair of the lifetime/mu_a/depth sweeps and of the asymptotic
    checks is ``sweep_pair``; forward curves are written for ``cells`` of the
    scan grid.  ``rule`` selects the discretization of the lifetime
    convolution used for every sampled peak time.
    """

    mode: str = "forward"
    medium: OpticalMedium = OpticalMedium()
    targets: TargetSet = TargetSet.of((10.0, 10.0, 20.0))
    dt: float = 0.1
    rule: str = "rectangle"
    quad: QuadratureConfig = QuadratureConfig()
    noise: NoiseModel = NoiseModel()
    bisection: BisectionConfig = BisectionConfig()
    scan: ScanConfig = ScanConfig()
    sweeps: tuple[Sweep, ...] = ()
    sweep_pair: SdPair = SdPair(source=(6.0, 10.0, 0.0), detector=(14.0, 10.0, 0.0))
    cells: tuple[tuple[int, int], ...] = ((10, 10),)
    asymptotics: AsymptoticsConfig = AsymptoticsConfig()
    output_dir: str = "out"
    threads: int = 1

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}")
        if self.rule not in fwd.RULES:
            raise ConfigurationError(f"rule must be one of {fwd.RULES}")
        if not self.dt > 0:
            raise ConfigurationError("dt must be positive")
        if self.threads < 1:
            raise ConfigurationError("threads must be at least 1")

    # -- JSON ------------------------------------------------------------

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
        kw = {}
        try:
            for key, val in d.items():
                if key == "medium":
                    kw[key] = OpticalMedium(**val)
                elif key == "targets":
                    kw[key] = TargetSet(tuple(
                        PointTarget(**t) if isinstance(t, dict) else PointTarget(tuple(t)) for t in val
                    ))
                elif key == "quad":
                    kw[key] = QuadratureConfig(**val)
                elif key == "noise":
                    kw[key] = NoiseModel(**val)
                elif key in ("bisection", "scan"):
                    block = dict(val)
                    if "roi" in block:
                        block["roi"] = Roi(*block["roi"])
                    kw[key] = (BisectionConfig if key == "bisection" else ScanConfig)(**block)
                elif key == "sweeps":
                    kw[key] = tuple(Sweep(s["parameter"], tuple(s.get("values", ()))) for s in val)
                elif key == "sweep_pair":
                    kw[key] = SdPair(tuple(val["source"]), tuple(val["detector"]))
                elif key == "cells":
                    kw[key] = tuple((int(m), int(n)) for m, n in val)
                elif key == "asymptotics":
                    kw[key] = AsymptoticsConfig(**{k: tuple(v) if isinstance(v, list) else v for k, v in val.items()})
                else:
                    kw[key] = val
        except (TypeError, KeyError, ValueError) as exc:
            if isinstance(exc, ConfigurationError):
                raise
            raise ConfigurationError(f"bad config block: {exc}") from exc
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            with open(path) as fh:
                data = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigurationError(f"cannot read config {path}: {exc}") from exc
        return cls.from_dict(data)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["targets"] = [{"position": list(t.position), "strength": t.strength} for t in self.targets]
        d["bisection"]["roi"] = list(self.bisection.roi.as_tuple())
        d["scan"]["roi"] = list(self.scan.roi.as_tuple())
        d["sweep_pair"] = {"source": list(self.sweep_pair.source), "detector": list(self.sweep_pair.detector)}
        return d


def _single(xc, eps):
    return ExperimentConfig(
        mode="reconstruct-single",
        targets=TargetSet.of(xc),
        bisection=BisectionConfig(Roi(0, 20, 0, 20), sd_separation=8.0, eps1=eps, eps2=eps),
    )


PRESETS = {
    "table1": lambda: _single((7.0, 17.0, 20.0), 0.1),
    "table2": lambda: _single((7.0, 17.0, 20.0), 1.25),
    "table3": lambda: _single((6.0, 11.0, 30.0), 0.1),
    "table4": lambda: ExperimentConfig(
        mode="reconstruct-multi",
        targets=TargetSet.of((3.3, 5.2, 16.0), (17.4, 16.7, 18.0)),
        scan=ScanConfig(Roi(0, 20, 0, 20), grid_m=20, grid_n=20, sd_separation=2.0),
    ),
    "fig1": lambda: ExperimentConfig(
        mode="peaktime-sweep",
        sweeps=(
            Sweep("lifetime", (500, 750, 1000, 1250, 1500, 1750, 2000)),
            Sweep("mu_a", (0.05, 0.075, 0.1, 0.125, 0.15, 0.175, 0.2)),
            Sweep("depth", (10, 15, 20, 25, 30, 35, 40)),
        ),
    ),
    "fig2": lambda: ExperimentConfig(
        mode="peaktime-sweep",
        targets=TargetSet.of((5.0, 10.0, 20.0), (15.0, 10.0, 20.0)),
        scan=ScanConfig(Roi(0, 20, 0, 20), grid_m=20, grid_n=20, sd_separation=2.0),
        sweeps=(Sweep("grid-index"),),
    ),
    "fig3": lambda: ExperimentConfig(
        mode="peaktime-sweep",
        targets=TargetSet.of((10.0, 10.0, 20.0)),
        scan=ScanConfig(Roi(0, 20, 0, 20), grid_m=20, grid_n=20, sd_separation=8.0),
        sweeps=(Sweep("grid-index"),),
    ),
    "forward": lambda: ExperimentConfig(
        mode="forward",
        targets=TargetSet.of((3.3, 5.2, 16.0), (17.4, 16.7, 18.0)),
        scan=ScanConfig(Roi(0, 20, 0, 20), grid_m=20, grid_n=20, sd_separation=2.0),
        cells=((3, 5), (17, 17)),
    ),
    "asymptotics": lambda: ExperimentConfig(mode="verify-asymptotics"),
}


# --------------------------------------------------------------------------
# output helpers


def _outdir(cfg: ExperimentConfig) -> Path:
    p = Path(cfg.output_dir)
    p.mkdir(parents=True, exist_ok=True)
    return p


def _write_csv(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow(["" if v is None else (repr(v) if isinstance(v, float) else v) for v in r])


def _write_json(path: Path, obj) -> None:
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_jsonable)
        fh.write("\n")


def _jsonable(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, SdPair):
        return {"source": list(o.source), "detector": list(o.detector)}
    if isinstance(o, Roi):
        return list(o.as_tuple())
    if isinstance(o, tuple):
        return list(o)
    raise TypeError(f"cannot serialize {type(o).__name__}")


def _map(cfg: ExperimentConfig, fn, items):
    if cfg.threads > 1:
        with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
            return list(pool.map(fn, items))
    return [fn(x) for x in items]


def _fit_slope(x, y) -> float:
    return float(np.polyfit(np.log(np.asarray(x, float)), np.log(np.asarray(y, float)), 1)[0])


# --------------------------------------------------------------------------
# runners


def run_forward(cfg: ExperimentConfig) -> list[Path]:
    """Sampled response curve and peak-time sidecar for each configured cell."""
    out = _outdir(cfg)
    written = []
    window = fwd.WindowPolicy()
    for m, n in cfg.cells:
        pair = cfg.scan.pair(m, n)
        try:
            resp = fwd.sample_response(pair, cfg.targets, cfg.medium, cfg.dt, window, cfg.quad, cfg.rule)
        except WindowTooShort as exc:
            raise WindowTooShort(f"cell ({m}, {n}) pair {pair}: {exc}") from exc
        path = out / f"trf_{m}_{n}.csv"
        resp.to_csv(path)
        _write_json(out / f"trf_{m}_{n}.json", {
            "cell": [m, n],
            "pair": pair,
            "peak_time_ps": fwd.peak_time(resp) if resp.peaked else None,
            "peaked": resp.peaked,
            "dt": cfg.dt,
            "rule": cfg.rule,
            "samples": int(resp.values.size),
            "window": asdict(window),
        })
        written.append(path)
    return written


def _sweep_row(cfg: ExperimentConfig, param: str, value: float):
    medium, target = cfg.medium, cfg.targets[0]
    if param == "lifetime":
        medium = medium.replace(lifetime=value)
    elif param == "mu_a":
        medium = medium.replace(mu_a=value)
    else:
        target = PointTarget((target.position[0], target.position[1], value), target.strength)
    t = fwd.discrete_peak_time(cfg.sweep_pair, [target], medium, cfg.dt, cfg.quad, cfg.rule)
    try:
        ta = approximate_peak_time(PeakEquationParams.from_geometry(cfg.sweep_pair, target, medium))
    except ValidityViolation:
        return [param, value, t, None, None, 0]
    return [param, value, t, ta, peak_relative_error(t, ta), 1]


def run_peaktime_sweep(cfg: ExperimentConfig) -> list[Path]:
    """Exact and approximate peak times over each configured sweep."""
    out = _outdir(cfg)
    if not cfg.sweeps:
        raise ConfigurationError("peaktime-sweep needs at least one sweep")
    written = []
    for sw in cfg.sweeps:
        if sw.parameter == "grid-index":
            cells = [(m, n) for m in range(cfg.scan.grid_m + 1) for n in range(cfg.scan.grid_n + 1)]

            def row(cell):
                pair = cfg.scan.pair(*cell)
                t = fwd.discrete_peak_time(pair, cfg.targets, cfg.medium, cfg.dt, cfg.quad, cfg.rule)
                try:
                    ta, dom, degen = multi_target_approx_peak(pair, cfg.targets, cfg.medium)
                except ValidityViolation:
                    return [cell[0], cell[1], t, None, None, None, 0]
                return [cell[0], cell[1], t, ta, peak_relative_error(t, ta), dom, int(not degen)]

            rows = _map(cfg, row, cells)
            path = out / "sweep_grid-index.csv"
            _write_csv(path, ["m", "n", "t_peak", "t_peak_a", "rel_err", "dominant", "valid"], rows)
        else:
            rows = _map(cfg, lambda v, p=sw.parameter: _sweep_row(cfg, p, v), sw.values)
            path = out / f"sweep_{sw.parameter}.csv"
            _write_csv(path, ["parameter", "value", "t_peak", "t_peak_a", "rel_err", "valid"], rows)
        written.append(path)
    return written


def _oracle(cfg: ExperimentConfig) -> SyntheticOracle:
    return SyntheticOracle(cfg.targets, cfg.medium, cfg.dt, cfg.rule, cfg.quad, cfg.noise)


def run_reconstruct_single(cfg: ExperimentConfig):
    """Bisection plus depth solve; writes result.json and iterations.csv."""
    out = _outdir(cfg)
    result = bisection_reconstruct(_oracle(cfg), cfg.bisection, cfg.medium, truth=cfg.targets)
    result.to_json(out / "result.json")
    rows = [
        [i, s["phase"], s["case"], *s["roi_before"], *s["roi_after"], ";".join(repr(float(t)) for t in s["peak_times"])]
        for i, s in enumerate(result.iterations)
    ]
    _write_csv(out / "iterations.csv",
               ["step", "phase", "case", "x_l", "x_r", "x_b", "x_t",
                "new_x_l", "new_x_r", "new_x_b", "new_x_t", "peak_times"], rows)
    return result


def run_reconstruct_multi(cfg: ExperimentConfig):
    """Boundary scan; writes raw/smoothed peak maps and result.json."""
    out = _outdir(cfg)
    oracle = _oracle(cfg)
    raw = scan_grid(oracle, cfg.scan, cfg.threads)
    raw.to_csv(out / "peak_map_raw.csv")
    result, _, smoothed = boundary_scan_reconstruct(oracle, cfg.scan, cfg.medium, truth=cfg.targets, raw_map=raw)
    if smoothed is not None:
        smoothed.to_csv(out / "peak_map_smoothed.csv")
    result.to_json(out / "result.json")
    return result


def run_verify_asymptotics(cfg: ExperimentConfig) -> dict:
    """Convergence of the three asymptotic forms; writes asymptotics.csv and the fitted slopes."""
    out = _outdir(cfg)
    ac, pair, medium = cfg.asymptotics, cfg.sweep_pair, cfg.medium
    x1, x2 = cfg.targets[0].position[:2]
    sqk = math.sqrt(medium.k)
    rows, slopes = [], {}

    lam, err = [], []
    for d in ac.integral_depths:
        tg = PointTarget((x1, x2, d))
        lm = lambda_param(pair, tg, medium)
        ratio = fwd.integral_u_m_asymptotic(pair, tg, ac.horizon * lm / sqk, medium) / fwd.integral_asymptotic_rhs(pair, tg, medium)
        lam.append(lm)
        err.append(abs(ratio - 1.0))
        rows.append(["integral", "lambda", lm, ratio, abs(ratio - 1.0)])
    slopes["integral_vs_lambda"] = _fit_slope(lam, err)

    err = []
    for d in ac.profile_depths:
        tg = PointTarget((x1, x2, d))
        t = lambda_param(pair, tg, medium) / sqk
        ratio = fwd.u_m_point(pair, tg, t, medium, cfg.quad) / fwd.u_m_asymptotic(pair, tg, t, medium)
        err.append(abs(ratio - 1.0))
        rows.append(["profile", "depth", d, ratio, abs(ratio - 1.0)])
    slopes["profile_vs_depth"] = _fit_slope(ac.profile_depths, err)

    err = []
    tg = cfg.targets[0]
    for ell in ac.lifetimes:
        med = medium.replace(lifetime=ell)
        exact = fwd.U_m(pair, [tg], list(ac.times), med, cfg.quad)
        approx = fwd.expansion_U_m(pair, [tg], list(ac.times), med, cfg.quad)
        e = float(np.max(np.abs(exact - approx)))
        err.append(e)
        rows.append(["lifetime_expansion", "lifetime", ell, None, e])
    slopes["expansion_vs_lifetime"] = _fit_slope(ac.lifetimes, err)

    _write_csv(out / "asymptotics.csv", ["claim", "variable", "value", "ratio", "error"], rows)
    _write_csv(out / "asymptotics_slopes.csv", ["claim", "slope"], sorted(slopes.items()))
    return slopes


RUNNERS = {
    "forward": run_forward,
    "peaktime-sweep": run_peaktime_sweep,
    "reconstruct-single": run_reconstruct_single,
    "reconstruct-multi": run_reconstruct_multi,
    "verify-asymptotics": run_verify_asymptotics,
}


# --------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="tdfdot", description=__doc__.splitlines()[0])
    src = p.add_mutually_exclusive_group()
    src.add_argument("--config", type=Path, help="experiment JSON document")
    src.add_argument("--example", choices=sorted(PRESETS), help="built-in preset")
    p.add_argument("--seed", type=int, help="noise RNG seed (unsigned 64-bit)")
    p.add_argument("--noise", type=float, help="relative noise level, e.g. 0.001")
    p.add_argument("--out", type=Path, help="output directory")
    p.add_argument("--threads", type=int, help="worker threads for scans and sweeps")
    p.add_argument("--rule", choices=fwd.RULES, help="lifetime convolution rule for sampled curves")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args: argparse.Namespace) -> ExperimentConfig:
    if args.config is not None:
        cfg = ExperimentConfig.load(args.config)
    elif args.example is not None:
        cfg = PRESETS[args.example]()
    else:
        raise ConfigurationError("one of --config or --example is required")
    noise = cfg.noise
    if args.noise is not None or args.seed is not None:
        noise = NoiseModel(
            level=cfg.noise.level if args.noise is None else args.noise,
            seed=cfg.noise.seed if args.seed is None else args.seed,
        )
    changes = {"noise": noise}
    if args.out is not None:
        changes["output_dir"] = str(args.out)
    if args.threads is not None:
        changes["threads"] = args.threads
    if args.rule is not None:
        changes["rule"] = args.rule
    return replace(cfg, **changes)


def _error_doc(exc: Exception) -> dict:
    doc = {"error": type(exc).__name__, "message": str(exc)}
    meas = getattr(exc, "measurement", None)
    if meas is not None:
        doc["measurement"] = meas if isinstance(meas, dict) else repr(meas)
    return doc


def main(argv: Optional[list[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out_dir = None
    try:
        cfg = resolve_config(args)
        out_dir = _outdir(cfg)
        _write_json(out_dir / "config.json", cfg.to_dict())
        result = RUNNERS[cfg.mode](cfg)
    except TdfdotError as exc:
        failure = exc
    else:
        print(json.dumps(_summary(result), default=_jsonable))
        return EXIT_OK
    if isinstance(failure, ConfigurationError):
        code = EXIT_CONFIG
    elif isinstance(failure, InconsistentMeasurement):
        code = EXIT_INCONSISTENT
    else:
        code = EXIT_NUMERICAL
    log.error("%s: %s", type(failure).__name__, failure)
    if out_dir is not None:
        _write_json(out_dir / "error.json", _error_doc(failure))
    print(json.dumps(_error_doc(failure), default=_jsonable), file=sys.stderr)
    return code


def _summary(result):
    if hasattr(result, "recovered"):
        return {"recovered": result.recovered, "rel_err": result.rel_err}
    if isinstance(result, list):
        return {"written": [str(p) for p in result]}
    return result


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
