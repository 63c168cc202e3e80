"""Time the numba kernels against their numpy fallbacks.

Usage::

    python benchmarks/bench_kernels.py [--paths 20000] [--steps 200] [--dim 3] [--repeat 3]

Both variants are imported directly, so the ``CONDWALK_DISABLE_JIT`` flag does
not matter here.  The first compiled call is excluded from the timings.
"""

import argparse
import time

import numpy as np

from condwalk import kernels as K


def _best(func, args, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        func(*args)
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--paths", type=int, default=20_000)
    p.add_argument("--steps", type=int, default=200)
    p.add_argument("--dim", type=int, default=3)
    p.add_argument("--repeat", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    a = p.parse_args(argv)

    rng = np.random.default_rng(a.seed)
    mats = rng.normal(size=(a.paths, a.steps, a.dim, a.dim)) + 2.0 * np.eye(a.dim)
    x = rng.normal(size=(a.paths, a.dim))
    x /= np.linalg.norm(x, axis=1)[:, None]
    x0 = x[0].copy()
    depth = min(20, a.steps // 2)
    a_sorted = np.sort(rng.normal(size=a.paths * 10))
    c_sorted = rng.uniform(size=a_sorted.size)
    grid = np.linspace(-4, 4, 10_000)

    cases = {
        "propagate": (mats, x),
        "propagate_points": (mats, x),
        "suffix_points": (mats, x),
        "window_points": (mats, x0, a.steps - depth, depth),
        "ramp_sums": (a_sorted, c_sorted, grid),
    }
    print(f"paths={a.paths} steps={a.steps} dim={a.dim} (best of {a.repeat})")
    print(f"{'kernel':<18}{'numba [s]':>12}{'numpy [s]':>12}{'speedup':>10}")
    for name, args in cases.items():
        jit = getattr(K, f"_jit_{name}")
        ref = getattr(K, f"_np_{name}")
        jit(*args)  # compile
        tj = _best(jit, args, a.repeat)
        tn = _best(ref, args, a.repeat)
        print(f"{name:<18}{tj:>12.4f}{tn:>12.4f}{tn / tj:>9.1f}x")


if __name__ == "__main__":
    main()
