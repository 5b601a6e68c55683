"""Compare the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--repeat 5] [--json out.json]
"""
import argparse
import json
import timeit

import numpy as np

from goalstate import _pykernels

try:
    from goalstate import _ckernels
except ImportError:
    _ckernels = None


def cases(rng):
    a = rng.normal(size=(2000, 3))
    b = rng.normal(size=(2000, 3))
    lo = rng.uniform(-1, 0, size=(32, 3))
    hi = lo + rng.uniform(0.1, 1, size=(32, 3))
    p, q = rng.normal(size=3), rng.normal(size=3)
    return {
        "pairwise_sqdist 2000x2000": lambda k: k.pairwise_sqdist(a, b),
        "nearest_neighbors 2000->2000": lambda k: k.nearest_neighbors(a, b),
        "segment_aabb_sqdist x1000": lambda k: [k.segment_aabb_sqdist(p, q, lo[0], hi[0])
                                                for _ in range(1000)],
        "points_in_boxes 2000x32": lambda k: k.points_in_boxes(a, lo, hi),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", help="also write results here")
    args = ap.parse_args(argv)

    rng = np.random.default_rng(0)
    rows = []
    for name, fn in cases(rng).items():
        py = min(timeit.repeat(lambda: fn(_pykernels), number=1, repeat=args.repeat))
        c = min(timeit.repeat(lambda: fn(_ckernels), number=1, repeat=args.repeat)) if _ckernels else None
        rows.append({"kernel": name, "python_s": py, "cython_s": c,
                     "speedup": (py / c) if c else None})

    print(f"{'kernel':32s} {'numpy (ms)':>11s} {'cython (ms)':>12s} {'speedup':>8s}")
    for r in rows:
        c = f"{1e3 * r['cython_s']:12.3f}" if r["cython_s"] else f"{'n/a':>12s}"
        s = f"{r['speedup']:8.1f}" if r["speedup"] else f"{'n/a':>8s}"
        print(f"{r['kernel']:32s} {1e3 * r['python_s']:11.3f} {c} {s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=2)


if __name__ == "__main__":
    main()
