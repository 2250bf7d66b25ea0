"""Time the compiled kernels against the numpy fallback.

Usage: python benchmarks/bench_kernels.py [--repeat 5] [--batch 256] [--particles 256]

Each kernel is run on identical inputs under both backends; the script
prints best-of-N wall time, the speedup, and the max absolute difference
between the two outputs.
"""

import argparse
import sys
import timeit

import numpy as np

from splitlab import kernels


def cases(args, rng):
    z = rng.standard_normal((args.batch, args.dim))
    z *= np.sqrt(args.dim) / np.linalg.norm(z, axis=1, keepdims=True)
    labels = rng.integers(0, 4, size=args.batch)
    pts = rng.standard_normal((args.particles, 3)) * 0.5
    x = rng.standard_normal((args.points, args.dim))
    centers = x[rng.choice(args.points, size=8, replace=False)].copy()
    return [
        ("pe_angular", lambda k: k.pe_angular(z, labels, 1e-7)),
        ("pe_euclidean", lambda k: k.pe_euclidean(z, labels, 1e-12)),
        ("riesz_energy_grad", lambda k: k.riesz_energy_grad(pts, 1.0)),
        ("assign", lambda k: k.assign(x, centers)),
        ("lloyd", lambda k: k.lloyd(x, centers.copy(), 100)),
    ]


def max_diff(a, b):
    if isinstance(a, tuple):
        return max(max_diff(u, v) for u, v in zip(a, b))
    return float(np.max(np.abs(np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)), initial=0.0))


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--batch", type=int, default=256, help="embedding rows for the PE kernels")
    ap.add_argument("--dim", type=int, default=16)
    ap.add_argument("--particles", type=int, default=256)
    ap.add_argument("--points", type=int, default=2000, help="k-means points")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    backends = kernels.backends()
    if "cython" not in backends:
        print("compiled backend not built; only the numpy fallback is available", file=sys.stderr)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':<20}{'python (ms)':>14}{'cython (ms)':>14}{'speedup':>10}{'max |diff|':>14}")
    for name, fn in cases(args, rng):
        times, outs = {}, {}
        for bname, mod in backends.items():
            outs[bname] = fn(mod)
            times[bname] = min(timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)) * 1e3
        py = times.get("python", float("nan"))
        cy = times.get("cython", float("nan"))
        diff = max_diff(outs["python"], outs["cython"]) if len(outs) == 2 else float("nan")
        print(f"{name:<20}{py:>14.3f}{cy:>14.3f}{py / cy:>10.1f}{diff:>14.2e}")


if __name__ == "__main__":
    main()
