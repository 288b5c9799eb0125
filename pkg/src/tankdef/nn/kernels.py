"""Kernel backend selection for the conv2d hot loops.

Two interchangeable backends exist: the compiled Cython extension and
the NumPy im2col path. On this workload the im2col route is faster (the
heavy lifting lands in BLAS GEMM, see benchmarks/bench_kernels.py), so
"auto" picks NumPy; set TANKDEF_KERNELS=cy to force the extension. The
NumPy path always handles float64 inputs (used by gradient checks).
"""

from __future__ import annotations

import os

import numpy as np

from . import kernels_np

_choice = os.environ.get("TANKDEF_KERNELS", "auto").lower()

_cy = None
if _choice == "cy":
    from . import _convkernels as _cy  # type: ignore

BACKEND_NAME = "cython" if _cy is not None else "numpy"


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int) -> np.ndarray:
    return conv2d_forward_ex(x, w, b, stride)[0]


def conv2d_forward_ex(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                      stride: int):
    """Forward pass plus the reusable im2col matrix (None on the compiled
    backend, which does not materialize one)."""
    if _cy is not None and x.dtype == np.float32:
        out = _cy.conv2d_forward(
            np.ascontiguousarray(x), np.ascontiguousarray(w),
            np.ascontiguousarray(b), stride,
        )
        return out, None
    return kernels_np.conv2d_forward_ex(x, w, b, stride)


def conv2d_backward(x: np.ndarray, w: np.ndarray, stride: int,
                    grad_out: np.ndarray, need_grad_x: bool = True,
                    cols: np.ndarray = None):
    if _cy is not None and x.dtype == np.float32:
        return _cy.conv2d_backward(
            np.ascontiguousarray(x), np.ascontiguousarray(w), stride,
            np.ascontiguousarray(grad_out),
        )
    return kernels_np.conv2d_backward(x, w, stride, grad_out, need_grad_x,
                                      cols)
