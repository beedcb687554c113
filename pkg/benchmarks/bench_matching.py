"""Compare the compiled and pure-Python assignment solvers.

Usage: python3 benchmarks/bench_matching.py [--repeats N]

Shapes cover the training regime (predictions x ground-truth boxes, e.g. the
105-location pyramid level against a few boxes) and square stress cases.
Both backends must return the same total cost on every matrix.
"""
import argparse
import time

import numpy as np

from ufaformer import matching

SHAPES = [(5, 1), (5, 3), (105, 2), (64, 64), (128, 128), (256, 256)]


def bench(backend: str, mats: list[np.ndarray], repeats: int) -> tuple[float, list[float]]:
    costs = []
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        costs = [matching.hungarian_match(m, backend).total_cost for m in mats]
        best = min(best, time.perf_counter() - t0)
    return best / len(mats), costs


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeats", type=int, default=3)
    ap.add_argument("--count", type=int, default=20, help="matrices per shape")
    args = ap.parse_args()
    if matching.BACKEND != "compiled":
        raise SystemExit("compiled backend not built; reinstall with Cython and a C compiler")
    rng = np.random.default_rng(0)
    print(f"{'shape':>10} {'python_ms':>11} {'compiled_ms':>12} {'speedup':>8}")
    for shape in SHAPES:
        count = args.count if shape[0] <= 128 else max(2, args.count // 10)
        mats = [rng.random(shape) for _ in range(count)]
        tp, cp = bench("python", mats, args.repeats)
        tc, cc = bench("compiled", mats, args.repeats)
        assert cp == cc, f"backends disagree on {shape}"
        print(f"{shape[0]:>5}x{shape[1]:<4} {tp * 1e3:11.3f} {tc * 1e3:12.3f} {tp / tc:8.1f}")


if __name__ == "__main__":
    main()
