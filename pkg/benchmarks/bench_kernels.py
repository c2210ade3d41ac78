#!/usr/bin/env python3
"""Time the numba kernels against their pure-numpy twins.

Both backends are called directly, so the ``EVLOAD_DISABLE_NUMBA`` flag does
not matter here. Each kernel is checked for agreement before it is timed.

    python benchmarks/bench_kernels.py [--repeat 5] [--scale 1.0]
"""

import argparse
import time

import numpy as np

from evload import _kernels


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def rasterize_case(rng, scale):
    # one simulated year for a 144-EV fleet: two phases per charging day
    fleet, days = 144, 365
    n = int(2 * fleet * days * 0.9 * scale)
    rows = np.sort(rng.integers(0, fleet, n))
    starts = rng.uniform(0, days * 24.0, n)
    ends = starts + rng.uniform(0.1, 6.0, n)
    powers = rng.uniform(5, 18, n)
    args = (rows, starts, ends, powers, fleet, days * 96 + 96, 0.25)
    return args, lambda a, b: np.allclose(a, b, rtol=1e-12, atol=1e-9)


def segment_case(rng, scale):
    n = int(20 * 30 * 96 * scale)
    residual = np.where(rng.random(n) < 0.15, rng.uniform(5, 12, n), rng.normal(0, 0.4, n))
    args = (residual, 1.0, 2, 2)
    return args, lambda a, b: all(np.array_equal(x, y) for x, y in zip(a, b))


def kde_case(rng, scale):
    samples = np.column_stack([rng.normal(10, 3, 2000), rng.lognormal(3, 0.4, 2000)])
    pts = np.column_stack([rng.uniform(0, 20, int(5000 * scale)), rng.uniform(0, 80, int(5000 * scale))])
    args = (pts, samples, np.array([0.6, 3.0]), np.array([False, False]), 24.0)
    return args, lambda a, b: np.allclose(a, b, rtol=1e-10)


CASES = {
    "rasterize": (rasterize_case, _kernels.rasterize_numpy, "rasterize_numba"),
    "segment_runs": (segment_case, _kernels.segment_runs_numpy, "segment_runs_numba"),
    "kde_pdf": (kde_case, _kernels.kde_pdf_numpy, "kde_pdf_numba"),
}


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=5)
    parser.add_argument("--scale", type=float, default=1.0, help="multiply problem sizes")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)
    rng = np.random.default_rng(args.seed)

    print(f"numba available: {_kernels.HAS_NUMBA}; package backend: {_kernels.BACKEND}")
    print(f"{'kernel':<14}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}  agree")
    for name, (make, np_fn, nb_name) in CASES.items():
        kargs, agree = make(rng, args.scale)
        t_np = best_of(lambda: np_fn(*kargs), args.repeat)
        if not _kernels.HAS_NUMBA:
            print(f"{name:<14}{t_np * 1e3:12.2f}{'-':>12}{'-':>10}  -")
            continue
        nb_fn = getattr(_kernels, nb_name)
        ok = agree(np_fn(*kargs), nb_fn(*kargs))  # also triggers compilation
        t_nb = best_of(lambda: nb_fn(*kargs), args.repeat)
        print(f"{name:<14}{t_np * 1e3:12.2f}{t_nb * 1e3:12.2f}{t_np / t_nb:10.1f}x  {ok}")


if __name__ == "__main__":
    main()
