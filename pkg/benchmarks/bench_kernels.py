"""Compiled vs numpy kernels: kNN, neighbor max, and a full network forward pass.

    python3 benchmarks/bench_kernels.py [--batch 16] [--points 64] [--repetitions 7]
"""
import argparse
import statistics
import time

import numpy as np

from pcclean import kernels
from pcclean.network import Model, ModelConfig


def median_time(fn, reps):
    fn()
    ts = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        ts.append(time.perf_counter() - t0)
    return statistics.median(ts)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--points", type=int, default=64)
    ap.add_argument("--channels", type=int, default=64)
    ap.add_argument("--k", type=int, default=16)
    ap.add_argument("--repetitions", type=int, default=7)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    feats = rng.normal(size=(args.batch, args.points, args.channels))
    idx = kernels.knn_indices(feats, args.k)
    model = Model.create("detector", ModelConfig.desk(k=args.k, patch_points=args.points), seed=0)
    pts = rng.normal(size=(args.batch, args.points, 3))
    scales = np.ones(args.batch)

    cases = {
        "knn": lambda: kernels.knn_indices(feats, args.k),
        "neighbor_max": lambda: kernels.neighbor_max(feats, idx),
        "forward": lambda: model.predict((pts, scales)),
    }
    if "compiled" not in kernels.BACKENDS:
        print("compiled kernels not built; only the numpy fallback is available")
    results = {}
    for backend in sorted(kernels.BACKENDS):
        prev = kernels.use_backend(backend)
        try:
            for name, fn in cases.items():
                results[backend, name] = median_time(fn, args.repetitions)
        finally:
            kernels.use_backend(prev)

    print(f"{'case':<14}" + "".join(f"{b:>14}" for b in sorted(kernels.BACKENDS)) + "   speedup")
    for name in cases:
        row = [results[b, name] for b in sorted(kernels.BACKENDS)]
        speed = results["python", name] / results["compiled", name] if "compiled" in kernels.BACKENDS else 1.0
        print(f"{name:<14}" + "".join(f"{t * 1e3:>12.3f}ms" for t in row) + f"   {speed:6.2f}x")


if __name__ == "__main__":
    main()
