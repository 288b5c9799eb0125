"""Throughput comparison of the two conv2d kernel backends.

Runs the network's two convolution shapes (84x84x4 -> 20x20x16 and
20x20x16 -> 9x9x32) through both the compiled extension and the NumPy
im2col path, forward and backward, and prints calls/second. The result
motivates the default backend choice in tankdef.nn.kernels: the im2col
route lands in BLAS GEMM and wins on every shape we use, so "auto"
selects NumPy and TANKDEF_KERNELS=cy opts into the extension.

Usage: python benchmarks/bench_kernels.py [--repeats N] [--batch N]
"""

import argparse
import time

import numpy as np

from tankdef.nn import kernels_np

try:
    from tankdef.nn import _convkernels
except ImportError:
    _convkernels = None

SHAPES = [
    # (name, input hwc, kernel, stride, filters)
    ("conv1", (84, 84, 4), 8, 4, 16),
    ("conv2", (20, 20, 16), 4, 2, 32),
]


def bench(fn, repeats):
    fn()  # warm up
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return repeats / (time.perf_counter() - start)


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    parser.add_argument("--batch", type=int, default=1)
    args = parser.parse_args()

    rng = np.random.default_rng(0)
    print(f"batch={args.batch} repeats={args.repeats}")
    header = f"{'shape':8} {'pass':9} {'numpy/s':>10} {'cython/s':>10}"
    print(header)
    print("-" * len(header))
    for name, (h, w, c), k, stride, f in SHAPES:
        x = rng.normal(size=(args.batch, h, w, c)).astype(np.float32)
        wgt = rng.normal(size=(k, k, c, f)).astype(np.float32)
        b = rng.normal(size=f).astype(np.float32)
        out = kernels_np.conv2d_forward(x, wgt, b, stride)
        g = rng.normal(size=out.shape).astype(np.float32)

        rows = {
            "forward": (
                lambda: kernels_np.conv2d_forward(x, wgt, b, stride),
                (lambda: _convkernels.conv2d_forward(x, wgt, b, stride))
                if _convkernels else None,
            ),
            "backward": (
                lambda: kernels_np.conv2d_backward(x, wgt, stride, g),
                (lambda: _convkernels.conv2d_backward(x, wgt, stride, g))
                if _convkernels else None,
            ),
        }
        for pass_name, (np_fn, cy_fn) in rows.items():
            np_rate = bench(np_fn, args.repeats)
            cy_rate = bench(cy_fn, args.repeats) if cy_fn else float("nan")
            print(f"{name:8} {pass_name:9} {np_rate:10.1f} {cy_rate:10.1f}")
    if _convkernels is None:
        print("compiled extension not built; cython column skipped")


if __name__ == "__main__":
    main()
