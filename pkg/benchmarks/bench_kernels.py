"""Time the goodput kernels with and without numba.

    python benchmarks/bench_kernels.py            # both backends, side by side
    python benchmarks/bench_kernels.py --single   # current backend only (JSON line)

The numba backend is chosen at import time, so each backend runs in its own
subprocess with ``DCLC_DISABLE_NUMBA`` set accordingly.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np


def _best_of(fn, repeat: int) -> float:
    fn()  # warm-up, includes JIT compilation
    best = float("inf")
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t)
    return best


def run_single(n: int, repeat: int) -> dict:
    from dclc import kernels

    rng = np.random.default_rng(0)
    t_first = rng.uniform(0.01, 0.3, n)
    t_token = rng.uniform(0.005, 0.06, n)
    ceiling = rng.uniform(1.0, 80.0, n)
    replicas = rng.integers(1, 9, n)
    args = (t_first, t_token, ceiling, replicas, 0.1, 400.0, 100.0)

    scalar = lambda: [kernels.search_steps(t_first[i], t_token[i], ceiling[i], int(replicas[i]), 0.1, 400.0, 100.0)
                      for i in range(n)]
    grid = lambda: kernels.goodput_grid(*args)
    vector = lambda: kernels.goodput_grid_numpy(*args)
    ref = kernels.goodput_grid(*args)
    assert np.array_equal(ref, kernels.goodput_grid_numpy(*args)), "backends disagree"
    return {"numba": kernels.NUMBA_ENABLED, "pairs": n,
            "scalar_loop_s": _best_of(scalar, repeat),
            "grid_s": _best_of(grid, repeat),
            "numpy_bisect_s": _best_of(vector, repeat)}


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--pairs", type=int, default=20_000)
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--single", action="store_true")
    args = p.parse_args(argv)
    if args.single:
        print(json.dumps(run_single(args.pairs, args.repeat)))
        return 0
    rows = []
    for disabled in ("0", "1"):
        env = {**os.environ, "DCLC_DISABLE_NUMBA": disabled}
        out = subprocess.run([sys.executable, __file__, "--single", "--pairs", str(args.pairs),
                              "--repeat", str(args.repeat)], env=env, check=True,
                             capture_output=True, text=True).stdout
        rows.append(json.loads(out.strip().splitlines()[-1]))
    print(f"{'backend':<8} {'scalar loop':>12} {'grid':>10} {'numpy bisect':>13}   ({args.pairs} pairs, best of {args.repeat})")
    for r in rows:
        name = "numba" if r["numba"] else "python"
        print(f"{name:<8} {r['scalar_loop_s']:>11.4f}s {r['grid_s']:>9.4f}s {r['numpy_bisect_s']:>12.4f}s")
    return 0


if __name__ == "__main__":
    sys.exit(main())
