# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot loops: 3x3 patch extraction/scatter and the direct 2-D DFT."""

import numpy as np
from libc.math cimport cos, sin, M_PI


def im2col3x3(const double[:, :, :, ::1] x, int stride):
    """[N,C,H,W] -> [N, Ho*Wo, C*9] patches with zero padding 1."""
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = (h - 1) // stride + 1, wo = (w - 1) // stride + 1
    out = np.zeros((n, ho * wo, c * 9), dtype=np.float64)
    cdef double[:, :, ::1] cols = out
    cdef Py_ssize_t b, ci, oh, ow, kh, kw, ih, iw, row, col
    for b in range(n):
        for oh in range(ho):
            for ow in range(wo):
                row = oh * wo + ow
                for ci in range(c):
                    for kh in range(3):
                        ih = oh * stride + kh - 1
                        if ih < 0 or ih >= h:
                            continue
                        for kw in range(3):
                            iw = ow * stride + kw - 1
                            if iw < 0 or iw >= w:
                                continue
                            col = ci * 9 + kh * 3 + kw
                            cols[b, row, col] = x[b, ci, ih, iw]
    return out


def col2im3x3(const double[:, :, ::1] cols, Py_ssize_t c, Py_ssize_t h, Py_ssize_t w, int stride):
    """Adjoint of im2col3x3: scatter-add patches back to [N,C,H,W]."""
    cdef Py_ssize_t n = cols.shape[0]
    cdef Py_ssize_t ho = (h - 1) // stride + 1, wo = (w - 1) // stride + 1
    out = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] dx = out
    cdef Py_ssize_t b, ci, oh, ow, kh, kw, ih, iw, row
    for b in range(n):
        for oh in range(ho):
            for ow in range(wo):
                row = oh * wo + ow
                for ci in range(c):
                    for kh in range(3):
                        ih = oh * stride + kh - 1
                        if ih < 0 or ih >= h:
                            continue
                        for kw in range(3):
                            iw = ow * stride + kw - 1
                            if iw < 0 or iw >= w:
                                continue
                            dx[b, ci, ih, iw] += cols[b, row, ci * 9 + kh * 3 + kw]
    return out


cdef void _twiddles(Py_ssize_t n, double[:, ::1] cs, double[:, ::1] sn):
    cdef Py_ssize_t k, j
    cdef double ang
    for k in range(n):
        for j in range(n):
            # reduce k*j mod n first so large products keep full precision
            ang = -2.0 * M_PI * <double>((k * j) % n) / <double>n
            cs[k, j] = cos(ang)
            sn[k, j] = sin(ang)


def dft2_direct(const double[:, :, ::1] x):
    """Unscaled forward DFT of each [H,W] plane, by direct summation.

    Returns (real, imag), each [B,H,W].
    """
    cdef Py_ssize_t nb = x.shape[0], h = x.shape[1], w = x.shape[2]
    ch_np = np.empty((h, h)); sh_np = np.empty((h, h))
    cw_np = np.empty((w, w)); sw_np = np.empty((w, w))
    cdef double[:, ::1] ch = ch_np, sh = sh_np, cw = cw_np, sw = sw_np
    _twiddles(h, ch, sh)
    _twiddles(w, cw, sw)
    tr_np = np.zeros((h, w)); ti_np = np.zeros((h, w))
    cdef double[:, ::1] tr = tr_np, ti = ti_np
    re_np = np.zeros((nb, h, w)); im_np = np.zeros((nb, h, w))
    cdef double[:, :, ::1] re = re_np, im = im_np
    cdef Py_ssize_t b, r, u, v, j
    cdef double accr, acci, a, bb
    for b in range(nb):
        # rows: tr + i*ti = sum_j x[r, j] * exp(-2 pi i v j / W)
        for r in range(h):
            for v in range(w):
                accr = 0.0
                acci = 0.0
                for j in range(w):
                    accr = accr + x[b, r, j] * cw[v, j]
                    acci = acci + x[b, r, j] * sw[v, j]
                tr[r, v] = accr
                ti[r, v] = acci
        # columns
        for u in range(h):
            for v in range(w):
                accr = 0.0
                acci = 0.0
                for r in range(h):
                    a = tr[r, v]
                    bb = ti[r, v]
                    accr = accr + a * ch[u, r] - bb * sh[u, r]
                    acci = acci + a * sh[u, r] + bb * ch[u, r]
                re[b, u, v] = accr
                im[b, u, v] = acci
    return re_np, im_np
