"""Compare the compiled and numpy Life kernels on random boards.

Usage: python benchmarks/bench_life.py [--size 12] [--boards 200] [--repeats 5]
"""
import argparse
import timeit

import numpy as np

from sarlkit import _kernels


def random_boards(n, size, seed=0):
    rng = np.random.default_rng(seed)
    kinds = np.array([0, 1, 2, 4, 5, 6], dtype=np.int8)
    weights = np.array([0.55, 0.05, 0.02, 0.13, 0.13, 0.12])
    return [rng.choice(kinds, size=(size, size), p=weights) for _ in range(n)]


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--size", type=int, default=12)
    parser.add_argument("--boards", type=int, default=200)
    parser.add_argument("--repeats", type=int, default=5)
    args = parser.parse_args()

    boards = random_boards(args.boards, args.size)
    kernels = {"numpy": _kernels.life_step_numpy}
    if _kernels._compiled_life_step is not None:
        kernels["compiled"] = _kernels._life_step_compiled
    else:
        print("compiled kernel not built; timing numpy only")

    ref = [_kernels.life_step_numpy(b, 0, 0) for b in boards]
    for name, fn in kernels.items():
        assert all(np.array_equal(fn(b, 0, 0), r) for b, r in zip(boards, ref)), name

    results = {}
    for name, fn in kernels.items():
        best = min(timeit.repeat(lambda: [fn(b, 0, 0) for b in boards], number=1, repeat=args.repeats))
        results[name] = best / len(boards)
        print(f"{name:9s} {results[name] * 1e6:9.2f} us/step  ({args.size}x{args.size})")
    if len(results) == 2:
        print(f"speedup   {results['numpy'] / results['compiled']:9.2f}x")


if __name__ == "__main__":
    main()
