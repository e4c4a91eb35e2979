"""Compiled vs pure-Python selective scan kernels.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the decoder: one batch row per patch slot, ``L = w*w`` tokens.
"""

import argparse
import time

import numpy as np

from tv3s.kernels import implementations

CASES = [
    # (label, slots, tokens, channels, state size)
    ("w=8 D=32", 13, 64, 32, 16),
    ("w=8 D=64", 13, 64, 64, 16),
    ("w=20 D=64", 13, 400, 64, 16),
]


def inputs(B, L, D, N, dtype, seed=0):
    r = np.random.default_rng(seed)
    return (r.normal(size=(B, L, D)).astype(dtype), r.uniform(1e-3, 0.1, (B, L, D)).astype(dtype),
            -r.uniform(1, 16, (D, N)).astype(dtype), r.normal(size=(B, L, N)).astype(dtype),
            r.normal(size=(B, L, N)).astype(dtype), np.zeros((B, D, N), dtype), np.full(B, L))


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--dtype", choices=("float32", "float64"), default="float32")
    args = ap.parse_args()
    impls = implementations()
    if "compiled" not in impls:
        print("compiled extension not built; only the python kernel is available")
    print(f"{'case':>12} {'backend':>9} {'forward ms':>11} {'backward ms':>12} {'speedup':>8}")
    for label, B, L, D, N in CASES:
        u, dt, A, Bm, Cm, h0, lengths = inputs(B, L, D, N, np.dtype(args.dtype))
        base = None
        for name, (fwd, bwd) in impls.items():
            y, hL, hs = fwd(u, dt, A, Bm, Cm, h0, lengths, True)
            gy, gh = np.ones_like(y), np.ones_like(hL)
            tf = best_of(lambda: fwd(u, dt, A, Bm, Cm, h0, lengths, True), args.repeat)
            tb = best_of(lambda: bwd(gy, gh, u, dt, A, Bm, Cm, h0, hs, lengths), args.repeat)
            base = base or tf + tb
            print(f"{label:>12} {name:>9} {tf * 1e3:11.2f} {tb * 1e3:12.2f} {base / (tf + tb):7.1f}x")


if __name__ == "__main__":
    main()
