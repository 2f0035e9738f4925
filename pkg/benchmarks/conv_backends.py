"""Benchmark the compiled vs numpy convolution backends.

Runs forward, grad-input, and grad-kernel for a set of representative
shapes (training-batch dense-block layers, the stride-2 stem, and a
single-image inference case) and prints per-backend timings.

Usage: python3 benchmarks/conv_backends.py [--iters N]
"""

import argparse
import time

import numpy as np

from pneumoxai.kernels import _convnp

try:
    from pneumoxai.kernels import _convext
except ImportError:
    _convext = None

# (label, batch, in_ch, out_ch, size, kernel, stride, padding, groups)
CASES = [
    ("dense-block layer (batch)", 32, 16, 8, 32, 3, 1, 1, 1),
    ("wide dense layer (batch)", 32, 40, 8, 32, 3, 1, 1, 1),
    ("stride-2 stem (batch)", 32, 3, 16, 64, 4, 2, 1, 1),
    ("depthwise 3x3 (batch)", 32, 24, 24, 16, 3, 1, 1, 24),
    ("single-image inference", 1, 40, 8, 32, 3, 1, 1, 1),
]


def time_case(impl, case, iters):
    _, n, ci, co, s, k, stride, pad, groups = case
    rng = np.random.default_rng(0)
    x = rng.standard_normal((n, ci, s, s)).astype(np.float32)
    w = rng.standard_normal((co, ci // groups, k, k)).astype(np.float32)
    y = impl.conv2d_forward(x, w, stride, pad, groups)
    gy = np.ones_like(y)

    def step():
        impl.conv2d_forward(x, w, stride, pad, groups)
        impl.conv2d_grad_input(gy, w, x.shape, stride, pad, groups)
        impl.conv2d_grad_kernel(gy, x, w.shape, stride, pad, groups)

    step()  # warmup
    t0 = time.perf_counter()
    for _ in range(iters):
        step()
    return (time.perf_counter() - t0) / iters


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--iters", type=int, default=5)
    args = parser.parse_args()

    backends = [("numpy", _convnp)]
    if _convext is not None:
        backends.append(("compiled", _convext))
    else:
        print("compiled extension not available; benchmarking numpy only")

    header = f"{'case':<28}" + "".join(f"{name:>12}" for name, _ in backends)
    print(header)
    print("-" * len(header))
    for case in CASES:
        times = [time_case(impl, case, args.iters) for _, impl in backends]
        row = f"{case[0]:<28}" + "".join(f"{t * 1e3:>10.2f}ms" for t in times)
        if len(times) == 2:
            row += f"   ({times[0] / times[1]:.2f}x)"
        print(row)
    print("\ntimes are fwd + grad-input + grad-kernel per iteration; "
          "ratio is numpy/compiled (higher favors compiled)")


if __name__ == "__main__":
    main()
