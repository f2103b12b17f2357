"""Time one bucketed-LRU replacement step per backend on a long-context head.

    python3 benchmarks/bench_replace.py --partitions 16384 --budget 256 --steps 300
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from kvtier.kernels import load_backend
from kvtier.replacement import BucketedLRU, ReplacementParams, single_head_store
from kvtier.workload import LocalityModel, generate_trace


def run(backend: str, steps, n: int, capacity: int, n_buckets: int) -> tuple[float, list[int]]:
    store, key = single_head_store([1] * n, capacity, n_buckets)
    lru = BucketedLRU(store, ReplacementParams(n_buckets), backend=backend)
    misses = []
    t0 = time.perf_counter()
    for t, sel in enumerate(steps):
        misses.append(len(lru.replace(key, sel, t).misses))
    return time.perf_counter() - t0, misses


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--partitions", type=int, default=16384)
    ap.add_argument("--budget", type=int, default=256)
    ap.add_argument("--ratio", type=float, default=5.0, help="buffer pages per mandatory page")
    ap.add_argument("--steps", type=int, default=300)
    ap.add_argument("--n-buckets", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    trace = generate_trace(LocalityModel(0.7, 0.8, args.budget, args.seed), args.partitions, args.steps)
    capacity = int(args.budget * (1 + args.ratio))
    results = {}
    for name in ("python", "cython"):
        try:
            load_backend(name)
        except ImportError:
            print(f"{name:>7}: not built")
            continue
        times = []
        for _ in range(args.repeat):
            dt, misses = run(name, trace.steps, args.partitions, capacity, args.n_buckets)
            times.append(dt)
        results[name] = (min(times), misses)
        per = min(times) / args.steps * 1e6
        print(f"{name:>7}: {per:9.1f} us/step  total misses {sum(misses)}")
    if len(results) == 2:
        same = results["python"][1] == results["cython"][1]
        print(f"speedup {results['python'][0] / results['cython'][0]:.2f}x  identical misses: {same}")
        if not same:
            raise SystemExit("backends disagree")


if __name__ == "__main__":
    np.seterr(all="raise")
    main()
