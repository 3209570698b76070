"""Compare the numba and pure-numpy kernel backends.

Times three workloads on the reference geometry: a vector of zero-lifetime
emission values, one finite-lifetime response value, and the discrete peak
time of a sampled curve.  Each workload also reports the largest relative
difference between backends.

    python3 benchmarks/bench_kernels.py --repeat 5
"""

import argparse
import time

import numpy as np

from tdfdot import _backend
from tdfdot import forward as F
from tdfdot.model import OpticalMedium, PointTarget, SdPair


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--points", type=int, default=2000, help="time points in the u_m workload")
    p.add_argument("--skip-peak", action="store_true", help="omit the slow discrete-peak workload")
    args = p.parse_args(argv)

    medium = OpticalMedium()
    pair = SdPair(source=(6.0, 10.0, 0.0), detector=(14.0, 10.0, 0.0))
    target = PointTarget((10.0, 10.0, 20.0))
    t = np.linspace(200.0, 3000.0, args.points)

    workloads = {
        f"u_m x{args.points}": lambda: F.u_m_point(pair, target, t, medium),
        "U_m at 670 ps": lambda: F.U_m(pair, [target], 670.0, medium),
    }
    if not args.skip_peak:
        workloads["discrete peak"] = lambda: F.discrete_peak_time(pair, [target], medium, rule="rectangle")

    backends = _backend.available()
    previous = _backend.name()
    results = {}
    try:
        for name in backends:
            _backend.set_backend(name)
            for label, fn in workloads.items():
                fn()  # warm-up, includes JIT compilation
                results[name, label] = best_of(fn, args.repeat)
    finally:
        _backend.set_backend(previous)

    print(f"{'workload':<18}" + "".join(f"{b:>12}" for b in backends) + f"{'speedup':>10}{'max rel diff':>14}")
    for label in workloads:
        row = f"{label:<18}" + "".join(f"{results[b, label][0] * 1e3:>10.2f}ms" for b in backends)
        if len(backends) == 2:
            a, b = (results[k, label] for k in backends)
            diff = np.max(np.abs(np.asarray(a[1]) / np.asarray(b[1]) - 1))
            row += f"{b[0] / a[0]:>9.1f}x{diff:>14.2e}"
        print(row)


if __name__ == "__main__":
    main()
