"""Compare the compiled and pure-numpy dense kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import timeit

import numpy as np

from advrl import _kernels_py
from advrl.kernels import RELU, IDENTITY, TANH

try:
    from advrl import _kernels as _kernels_c
except ImportError:
    _kernels_c = None

CASES = [
    # (name, dims, activation codes, batch)
    ("cartpole-act", [4, 16, 16, 16, 2], [RELU, RELU, RELU, IDENTITY], 1),
    ("cartpole-learn", [4, 16, 16, 16, 2], [RELU, RELU, RELU, IDENTITY], 64),
    ("mcar-learn", [2, 100, 100, 3], [RELU, RELU, IDENTITY], 64),
    ("actor-act", [3, 64, 64, 1], [RELU, RELU, TANH], 1),
    ("attack-cands", [4, 16, 16, 16, 2], [RELU, RELU, RELU, IDENTITY], 200),
]


def _setup(dims, batch, rng):
    n = sum(a * b + b for a, b in zip(dims[:-1], dims[1:]))
    params = rng.normal(size=n) * 0.3
    X = rng.normal(size=(batch, dims[0]))
    G = rng.normal(size=(batch, dims[-1]))
    return params, X, G


def bench(mod, dims, acts, params, X, G, repeat):
    d = np.asarray(dims, dtype=np.int64)
    a = np.asarray(acts, dtype=np.int64)
    pre, post = mod.forward(params, d, a, X)
    t_fwd = min(timeit.repeat(lambda: mod.forward(params, d, a, X), number=repeat, repeat=3)) / repeat
    t_bwd = min(timeit.repeat(lambda: mod.backward(params, d, a, X, pre, post, G),
                              number=repeat, repeat=3)) / repeat
    return t_fwd, t_bwd, mod.backward(params, d, a, X, pre, post, G)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=2000)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    if _kernels_c is None:
        print("compiled kernels not built; only the numpy path is timed")
    print(f"{'case':<16}{'batch':>6}{'fwd py':>11}{'fwd c':>11}{'bwd py':>11}{'bwd c':>11}"
          f"{'speedup':>9}{'max|diff|':>11}")
    for name, dims, acts, batch in CASES:
        params, X, G = _setup(dims, batch, rng)
        fp, bp, (gp, _) = bench(_kernels_py, dims, acts, params, X, G, args.repeat)
        if _kernels_c is None:
            print(f"{name:<16}{batch:>6}{fp * 1e6:>9.1f}us{'-':>11}{bp * 1e6:>9.1f}us")
            continue
        fc, bc, (gc, _) = bench(_kernels_c, dims, acts, params, X, G, args.repeat)
        speed = (fp + bp) / (fc + bc)
        diff = float(np.max(np.abs(gp - gc)))
        print(f"{name:<16}{batch:>6}{fp * 1e6:>9.1f}us{fc * 1e6:>9.1f}us{bp * 1e6:>9.1f}us"
              f"{bc * 1e6:>9.1f}us{speed:>8.1f}x{diff:>11.1e}")


if __name__ == "__main__":
    main()
