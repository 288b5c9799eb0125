# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled conv2d kernels (float32, valid convolution, NHWC layout)."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrtf

cnp.import_array()

ctypedef cnp.float32_t f32


def conv2d_forward(cnp.ndarray[f32, ndim=4] x, cnp.ndarray[f32, ndim=4] w,
                   cnp.ndarray[f32, ndim=1] b, int stride):
    cdef int n = x.shape[0], h = x.shape[1], wid = x.shape[2], c = x.shape[3]
    cdef int kh = w.shape[0], kw = w.shape[1], f = w.shape[3]
    cdef int oh = (h - kh) // stride + 1
    cdef int ow = (wid - kw) // stride + 1
    cdef cnp.ndarray[f32, ndim=4] out = np.empty((n, oh, ow, f), dtype=np.float32)
    cdef int ni, oi, oj, ki, kj, ci, fi, y0, x0
    cdef f32 acc
    cdef f32[:, :, :, :] xv = x, wv = w, ov = out
    cdef f32[:] bv = b
    with nogil:
        for ni in range(n):
            for oi in range(oh):
                y0 = oi * stride
                for oj in range(ow):
                    x0 = oj * stride
                    for fi in range(f):
                        acc = bv[fi]
                        for ki in range(kh):
                            for kj in range(kw):
                                for ci in range(c):
                                    acc += xv[ni, y0 + ki, x0 + kj, ci] * wv[ki, kj, ci, fi]
                        ov[ni, oi, oj, fi] = acc
    return out


def conv2d_backward(cnp.ndarray[f32, ndim=4] x, cnp.ndarray[f32, ndim=4] w,
                    int stride, cnp.ndarray[f32, ndim=4] grad_out):
    cdef int n = x.shape[0], h = x.shape[1], wid = x.shape[2], c = x.shape[3]
    cdef int kh = w.shape[0], kw = w.shape[1], f = w.shape[3]
    cdef int oh = grad_out.shape[1], ow = grad_out.shape[2]
    cdef cnp.ndarray[f32, ndim=4] gx = np.zeros_like(x)
    cdef cnp.ndarray[f32, ndim=4] gw = np.zeros_like(w)
    cdef cnp.ndarray[f32, ndim=1] gb = np.zeros(f, dtype=np.float32)
    cdef int ni, oi, oj, ki, kj, ci, fi, y0, x0
    cdef f32 g
    cdef f32[:, :, :, :] xv = x, wv = w, gov = grad_out, gxv = gx, gwv = gw
    cdef f32[:] gbv = gb
    with nogil:
        for ni in range(n):
            for oi in range(oh):
                y0 = oi * stride
                for oj in range(ow):
                    x0 = oj * stride
                    for fi in range(f):
                        g = gov[ni, oi, oj, fi]
                        gbv[fi] += g
                        for ki in range(kh):
                            for kj in range(kw):
                                for ci in range(c):
                                    gwv[ki, kj, ci, fi] += xv[ni, y0 + ki, x0 + kj, ci] * g
                                    gxv[ni, y0 + ki, x0 + kj, ci] += wv[ki, kj, ci, fi] * g
    return gx, gw, gb


def rmsprop_update(cnp.ndarray[f32, ndim=1] p, cnp.ndarray[f32, ndim=1] s,
                   cnp.ndarray[f32, ndim=1] g, float lr, float decay,
                   float eps):
    """Fused in-place RMSProp step over flat float32 views.

    s <- decay*s + (1-decay)*g^2;  p <- p - lr * g / sqrt(s + eps)
    """
    cdef Py_ssize_t i, n = p.shape[0]
    cdef f32[:] pv = p, sv = s, gv = g
    cdef f32 gi, one_minus = 1.0 - decay
    with nogil:
        for i in range(n):
            gi = gv[i]
            sv[i] = decay * sv[i] + one_minus * gi * gi
            pv[i] -= lr * (gi / sqrtf(sv[i] + eps))
