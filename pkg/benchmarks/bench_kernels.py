"""Compare the numba and numpy kernels.

Kernel timings call both implementations directly in one process. The
end-to-end timings grow a tree and a forest in subprocesses with
CIRCFOREST_NUMBA=1 and CIRCFOREST_NUMBA=0.

    python3 benchmarks/bench_kernels.py [--quick]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from circforest import _kernels as K
from circforest._accel import HAS_NUMBA


def best_of(fn, repeat, number):
    return min(timeit.repeat(fn, repeat=repeat, number=number)) / number


def scan_case(n, seed=0):
    rng = np.random.default_rng(seed)
    x = np.sort(rng.normal(size=n))
    s = rng.normal(size=(n, 2))
    return x, s, np.ones(n - 1, dtype=bool), 7.0, np.eye(2), s.mean(axis=0)


def route_case(n, depth=8, seed=0):
    # complete numeric tree of the given depth over 4 covariates
    rng = np.random.default_rng(seed)
    n_inner = 2**depth - 1
    n_nodes = 2 * n_inner + 1
    kind = np.full(n_nodes, K.LEAF, dtype=np.int64)
    kind[:n_inner] = K.NUMERIC
    var = np.full(n_nodes, -1, dtype=np.int64)
    var[:n_inner] = rng.integers(0, 4, n_inner)
    thr = np.zeros(n_nodes)
    thr[:n_inner] = rng.normal(size=n_inner)
    left = np.full(n_nodes, -1, dtype=np.int64)
    right = np.full(n_nodes, -1, dtype=np.int64)
    idx = np.arange(n_inner)
    left[:n_inner], right[:n_inner] = 2 * idx + 1, 2 * idx + 2
    catmask = np.zeros((n_nodes, 1), dtype=bool)
    X = rng.normal(size=(n, 4))
    return X, kind, var, thr, left, right, catmask


END_TO_END = """
import time
from circforest.simulate import smooth
from circforest.tree import grow
from circforest.forest import grow_forest, ForestControl
d = smooth({n}, seed=1)
grow(smooth(200, seed=0))  # compile outside the timing
t0 = time.perf_counter(); grow(d); t1 = time.perf_counter()
f = grow_forest(d, ForestControl(n_trees={trees}, seed=1)); t2 = time.perf_counter()
f.predict_data(d); t3 = time.perf_counter()
print(t1 - t0, t2 - t1, t3 - t2)
"""


def end_to_end(flag, n, trees):
    env = {**os.environ, "CIRCFOREST_NUMBA": flag}
    out = subprocess.run([sys.executable, "-c", END_TO_END.format(n=n, trees=trees)],
                         env=env, capture_output=True, text=True, check=True).stdout
    return [float(v) for v in out.split()]


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--quick", action="store_true", help="small sizes, few repeats")
    args = p.parse_args(argv)
    if not HAS_NUMBA:
        print("numba is not installed; only the numpy path can run")
        return 1
    sizes = (1_000, 10_000) if args.quick else (1_000, 10_000, 100_000)
    repeat = 3 if args.quick else 7

    print(f"{'kernel':<10}{'n':>9}{'numpy [ms]':>13}{'numba [ms]':>13}{'speedup':>9}")
    for n in sizes:
        a = scan_case(n)
        K._scan_numeric_numba(*a)  # compile
        assert K._scan_numeric_numpy(*a)[0] == K._scan_numeric_numba(*a)[0]
        number = max(1, 20_000 // n)
        t_np = best_of(lambda: K._scan_numeric_numpy(*a), repeat, number)
        t_nb = best_of(lambda: K._scan_numeric_numba(*a), repeat, number)
        print(f"{'scan':<10}{n:>9}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>9.1f}")
    for n in sizes:
        a = route_case(n)
        K._route_rows_numba(*a)
        assert np.array_equal(K._route_rows_numpy(*a)[0], K._route_rows_numba(*a)[0])
        number = max(1, 20_000 // n)
        t_np = best_of(lambda: K._route_rows_numpy(*a), repeat, number)
        t_nb = best_of(lambda: K._route_rows_numba(*a), repeat, number)
        print(f"{'route':<10}{n:>9}{1e3 * t_np:>13.3f}{1e3 * t_nb:>13.3f}{t_np / t_nb:>9.1f}")

    n, trees = (2_000, 10) if args.quick else (10_000, 50)
    print(f"\nend to end, smooth DGP n={n}, forest of {trees} trees [s]")
    print(f"{'path':<8}{'tree':>9}{'forest':>9}{'predict':>9}")
    for flag, name in (("0", "numpy"), ("1", "numba")):
        tree, forest, pred = end_to_end(flag, n, trees)
        print(f"{name:<8}{tree:>9.2f}{forest:>9.2f}{pred:>9.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
