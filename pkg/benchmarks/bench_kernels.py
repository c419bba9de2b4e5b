"""Time the numba kernels against the numpy fallback on training-sized tensors.

    python benchmarks/bench_kernels.py [--repeat 50]
"""

import argparse
import time

import numpy as np

from sphbi.tinynn.kernels import _numba, _numpy

SHAPES = {
    # (name, input to the op): shapes seen by the Approach 2b multiclass net at batch 32
    "im2col conv1 3x3": ("im2col", (32, 1, 18, 17), 3),
    "im2col conv2 2x2": ("im2col", (32, 32, 16, 15), 2),
    "col2im conv2 2x2": ("col2im", (32, 32, 16, 15), 2),
    "maxpool fwd 2/1": ("pool_f", (32, 32, 15, 14), 2),
    "maxpool bwd 2/1": ("pool_b", (32, 32, 15, 14), 2),
}


def _case(mod, op, shape, k, rng):
    x = rng.standard_normal(shape).astype(np.float32)
    n, c, h, w = shape
    if op == "im2col":
        return lambda: mod.im2col(x, k, k)
    if op == "col2im":
        cols = mod.im2col(x, k, k)
        return lambda: mod.col2im(cols, n, c, h, w, k, k)
    out, arg = mod.maxpool_forward(x, k, 1)
    if op == "pool_f":
        return lambda: mod.maxpool_forward(x, k, 1)
    g = np.ones_like(out)
    return lambda: mod.maxpool_backward(g, arg, h, w)


def bench(fn, repeat):
    fn()  # compile / warm up
    t = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t) / repeat * 1e3


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--repeat", type=int, default=50)
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}")
    for name, (op, shape, k) in SHAPES.items():
        t_np = bench(_case(_numpy, op, shape, k, rng), args.repeat)
        t_nb = bench(_case(_numba, op, shape, k, rng), args.repeat)
        print(f"{name:<20}{t_np:>10.3f}{t_nb:>10.3f}{t_np / t_nb:>8.1f}x")


if __name__ == "__main__":
    main()
