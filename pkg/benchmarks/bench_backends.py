"""Time the compiled kernels against the NumPy fallback.

Usage: python benchmarks/bench_backends.py [--repeat N]
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from dyadic_tb._backend import compiled_impl, python_impl

CASES = [
    ("maximal_function", 1, 10, lambda m, a, n, L: m.maximal_function(a, n, L)),
    ("maximal_function", 2, 6, lambda m, a, n, L: m.maximal_function(a, n, L)),
    ("assemble hilbert midpoint", 1, 9, lambda m, a, n, L: m.assemble_named("truncated_hilbert", n, L, "midpoint", 2.0**-6, 0)),
    ("assemble hilbert gauss2", 1, 8, lambda m, a, n, L: m.assemble_named("truncated_hilbert", n, L, "gauss2", 2.0**-6, 0)),
    ("assemble riesz midpoint", 2, 5, lambda m, a, n, L: m.assemble_named("truncated_riesz", n, L, "midpoint", 2.0**-5, 0)),
]


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args(argv)
    if compiled_impl is None:
        print("compiled kernels unavailable; build with `python setup.py build_ext --inplace`")
    rng = np.random.default_rng(0)
    print(f"{'case':<28}{'n':>2}{'L':>4}{'python [s]':>13}{'cython [s]':>13}{'speedup':>9}{'max diff':>11}")
    for label, n, L, fn in CASES:
        a = np.abs(rng.standard_normal((1 << L,) * n))
        t_py = min(timeit.repeat(lambda: fn(python_impl, a, n, L), number=1, repeat=args.repeat))
        if compiled_impl is None:
            print(f"{label:<28}{n:>2}{L:>4}{t_py:>13.4f}{'-':>13}{'-':>9}{'-':>11}")
            continue
        t_c = min(timeit.repeat(lambda: fn(compiled_impl, a, n, L), number=1, repeat=args.repeat))
        diff = float(np.abs(np.asarray(fn(python_impl, a, n, L)) - np.asarray(fn(compiled_impl, a, n, L))).max())
        print(f"{label:<28}{n:>2}{L:>4}{t_py:>13.4f}{t_c:>13.4f}{t_py / t_c:>9.1f}{diff:>11.1e}")


if __name__ == "__main__":
    main()
