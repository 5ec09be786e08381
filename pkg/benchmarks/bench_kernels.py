"""Throughput of the compiled and pure-Python event kernels.

Usage::

    python benchmarks/bench_kernels.py [--events 200000] [--repeat 3]

Both backends receive identical pre-drawn inputs, so the script also checks
that their outputs agree bit for bit.
"""
import argparse
import time

import numpy as np

from pchaos import _kernels
from pchaos.rng import make_stream, uniform_pairs, unit_vectors3


def _inputs(n_events, N=1000, seed=0):
    rng = make_stream(seed)
    i, j = uniform_pairs(N, n_events, rng)
    th = rng.uniform(-np.pi, np.pi, n_events)
    return {
        "kac_events": (rng.standard_normal(N), i, j, np.cos(th), np.sin(th)),
        "averaging_events": (rng.standard_normal(N), i, j, rng.standard_normal(n_events), rng.standard_normal(n_events)),
        "circle_events": (rng.uniform(-np.pi, np.pi, N), i, j, rng.normal(0, 0.3, n_events), rng.normal(0, 0.3, n_events)),
        "boltzmann_events": (np.ascontiguousarray(rng.standard_normal((N, 3))), i, j, rng.random(n_events),
                             unit_vectors3(n_events, rng), 1, np.array([1.0, 2.0]), 2.0, -1.0,
                             np.zeros(n_events, dtype=np.int8)),
    }


def _time(fn, args, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        a = [x.copy() if isinstance(x, np.ndarray) else x for x in args]
        t = time.perf_counter()
        fn(*a)
        best = min(best, time.perf_counter() - t)
        out = a[0]
    return best, out


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--events", type=int, default=200_000)
    ap.add_argument("--pure-events", type=int, default=None, help="events for the slow backend (default events/10)")
    ap.add_argument("--repeat", type=int, default=3)
    a = ap.parse_args(argv)
    if _kernels.compiled is None:
        raise SystemExit("compiled extension not built; run `pip install -e . --no-build-isolation`")
    n_fast = a.events
    n_slow = a.pure_events or max(1, a.events // 10)
    fast_in = _inputs(n_fast)
    slow_in = _inputs(n_slow)
    print(f"{'kernel':<18}{'cython ev/s':>14}{'python ev/s':>14}{'speedup':>10}  identical")
    for name in fast_in:
        tc, _ = _time(getattr(_kernels.compiled, name), fast_in[name], a.repeat)
        tp, out_p = _time(getattr(_kernels.pure, name), slow_in[name], 1)
        _, out_c = _time(getattr(_kernels.compiled, name), slow_in[name], 1)
        rc, rp = n_fast / tc, n_slow / tp
        print(f"{name:<18}{rc:>14.3g}{rp:>14.3g}{rc / rp:>10.1f}  {np.array_equal(out_c, out_p)}")


if __name__ == "__main__":
    main()
