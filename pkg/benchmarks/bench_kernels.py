"""Compare the compiled and pure-Python split-scan kernels.

    python3 benchmarks/bench_kernels.py --n 20000 --repeat 5

Times the bare cut scan on one sorted column and a full best-first fit on a
ToyPong-sized dataset, once per available kernel, and checks both kernels
produce identical trees.
"""
import argparse
import json
import time

import numpy as np

from obdistill.cart import _backend, fit_tree


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=20_000, help="samples per dataset")
    ap.add_argument("--features", type=int, default=6)
    ap.add_argument("--classes", type=int, default=3)
    ap.add_argument("--leaves", type=int, default=16)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    rng = np.random.default_rng(args.seed)
    values = np.sort(np.round(rng.normal(size=args.n), 3))
    Z = np.eye(args.classes)[rng.integers(0, args.classes, size=args.n)]
    w = np.ones(args.n)

    X = rng.uniform(size=(args.n, args.features))
    y = np.digitize(X[:, 1] - X[:, 0], [-0.1, 0.1])

    results = {"backend_default": _backend.BACKEND, "n": args.n, "kernels": {}}
    trees = {}
    for name, kernel in sorted(_backend.KERNELS.items()):
        scan = best_of(lambda: kernel(values, Z, w, float(args.n)), args.repeat)
        fit = best_of(lambda: trees.__setitem__(
            name, fit_tree(X, y, leaves=args.leaves, kernel=name)), args.repeat)
        results["kernels"][name] = {"scan_ms": scan * 1e3, "fit_ms": fit * 1e3}
    if {"python", "cython"} <= set(results["kernels"]):
        k = results["kernels"]
        results["speedup_scan"] = k["python"]["scan_ms"] / k["cython"]["scan_ms"]
        results["speedup_fit"] = k["python"]["fit_ms"] / k["cython"]["fit_ms"]
    results["trees_identical"] = len({json.dumps(t.to_json()) for t in trees.values()}) == 1
    print(json.dumps(results, indent=2))


if __name__ == "__main__":
    main()
