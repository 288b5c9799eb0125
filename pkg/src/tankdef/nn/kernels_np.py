"""NumPy (im2col + BLAS) implementations of the conv2d hot kernels.

Pure-Python fallback for the compiled extension; also the reference path
for float64 work such as finite-difference gradient checks.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

BACKEND_NAME = "numpy"


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # x: (N, H, W, C) -> (N, OH, OW, KH, KW, C)
    view = sliding_window_view(x, (kh, kw), axis=(1, 2))
    view = view[:, ::stride, ::stride]  # (N, OH, OW, C, KH, KW)
    return np.ascontiguousarray(view.transpose(0, 1, 2, 4, 5, 3))


def conv2d_forward_ex(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                      stride: int):
    """Valid convolution. x: (N,H,W,C), w: (KH,KW,C,F), b: (F,).

    Returns (out, cols); cols is the im2col matrix, reusable by
    conv2d_backward on the same x.
    """
    n = x.shape[0]
    kh, kw, c, f = w.shape
    cols = _im2col(x, kh, kw, stride)
    oh, ow = cols.shape[1], cols.shape[2]
    cols = cols.reshape(n * oh * ow, kh * kw * c)
    out = cols @ w.reshape(kh * kw * c, f)
    return out.reshape(n, oh, ow, f) + b, cols


def conv2d_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray,
                   stride: int) -> np.ndarray:
    return conv2d_forward_ex(x, w, b, stride)[0]


def conv2d_backward(
    x: np.ndarray, w: np.ndarray, stride: int, grad_out: np.ndarray,
    need_grad_x: bool = True, cols: np.ndarray = None,
):
    """Gradients of a valid convolution.

    Returns (grad_x, grad_w, grad_b) matching the shapes of x, w and the
    bias respectively. With need_grad_x=False (first layer: the input is
    data, not an activation) grad_x is returned as None and its GEMM and
    scatter passes are skipped. An im2col matrix from the forward pass
    may be supplied via cols to skip recomputing it.
    """
    n, h, wid, c = x.shape
    kh, kw, _, f = w.shape
    _, oh, ow, _ = grad_out.shape

    if cols is None:
        cols = _im2col(x, kh, kw, stride).reshape(n * oh * ow, kh * kw * c)
    g = grad_out.reshape(n * oh * ow, f)

    grad_w = (cols.T @ g).reshape(kh, kw, c, f)
    grad_b = g.sum(axis=0)

    if not need_grad_x:
        return None, grad_w, grad_b

    gcols = (g @ w.reshape(kh * kw * c, f).T).reshape(n, oh, ow, kh, kw, c)
    grad_x = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            grad_x[:, i:i + stride * oh:stride, j:j + stride * ow:stride, :] += (
                gcols[:, :, :, i, j, :]
            )
    return grad_x, grad_w, grad_b
