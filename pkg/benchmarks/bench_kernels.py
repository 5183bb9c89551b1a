"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N]

Both backends are run on identical inputs; the script also confirms that the
simulation kernels return identical arrays.
"""

from __future__ import annotations

import argparse
import time
import warnings

import numpy as np

from fragrate import UniformBinary
from fragrate import _kernels
from fragrate.errors import DegenerateWeights
from fragrate import simulator as sim
from fragrate.scalefn import LevyDescriptor, _tail_weights


def _best(fn, repeat):
    best, out = float("inf"), None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _cases():
    u = UniformBinary()
    alpha, beta = _tail_weights(LevyDescriptor(u, 0.5), 1e-3, 4000)
    yield ("volterra march, 4000 nodes",
           lambda name: _kernels.get_backend(name).volterra_march(alpha, beta, 0.5),
           lambda x, y: np.allclose(x, y, rtol=1e-12, atol=0))
    yield ("tree, classical, 2000 replicas to t=6",
           lambda name: sim.simulate_tree_batch(u, 0.5, 0.5, 2.0, [2.0, 4.0, 6.0], 2000, seed=1,
                                                mode=sim.CLASSICAL, backend=name).n_window,
           np.array_equal)
    yield ("tree, confined, 20000 replicas to t=8",
           lambda name: sim.simulate_tree_batch(u, 0.5, 0.5, 4.0, [2.0, 4.0, 8.0], 20000, seed=1,
                                                backend=name).n_good,
           np.array_equal)
    yield ("spine exits, 200000 paths to t=8",
           lambda name: sim.many_to_one_confined(u, 0.5, 0.5, 2.0, [2.0, 4.0, 8.0], 200_000, seed=1,
                                                 backend=name).mean,
           np.array_equal)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    warnings.simplefilter("ignore", DegenerateWeights)
    if "compiled" not in _kernels.available_backends():
        print("compiled extension not built; only the fallback is available")
        return 1
    print(f"{'kernel':42} {'python [s]':>11} {'compiled [s]':>13} {'speed-up':>9}  same")
    for label, fn, same in _cases():
        tp, xp = _best(lambda: fn("python"), args.repeat)
        tc, xc = _best(lambda: fn("compiled"), args.repeat)
        print(f"{label:42} {tp:11.4f} {tc:13.4f} {tp / tc:9.1f}  {bool(same(xp, xc))}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
