"""Pure-numpy versions of the compiled kernels in ``_kernels.pyx``.

Same signatures and results; used when the extension is not built or when
``DATK_PURE_PYTHON=1`` is set.
"""

import numpy as np


def im2col3x3(x, stride):
    n, c, h, w = x.shape
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    taps = [
        xp[:, :, kh : kh + stride * (ho - 1) + 1 : stride, kw : kw + stride * (wo - 1) + 1 : stride]
        for kh in range(3)
        for kw in range(3)
    ]
    patches = np.stack(taps, axis=2)  # [N, C, 9, Ho, Wo]
    return np.ascontiguousarray(patches.transpose(0, 3, 4, 1, 2).reshape(n, ho * wo, c * 9))


def col2im3x3(cols, c, h, w, stride):
    n = cols.shape[0]
    ho, wo = (h - 1) // stride + 1, (w - 1) // stride + 1
    patches = cols.reshape(n, ho, wo, c, 3, 3).transpose(0, 3, 4, 5, 1, 2)
    xp = np.zeros((n, c, h + 2, w + 2))
    for kh in range(3):
        for kw in range(3):
            xp[:, :, kh : kh + stride * (ho - 1) + 1 : stride, kw : kw + stride * (wo - 1) + 1 : stride] += patches[
                :, :, kh, kw
            ]
    return xp[:, :, 1:-1, 1:-1].copy()


def _dft_matrix(n):
    k = np.arange(n)
    ang = -2.0 * np.pi * (np.outer(k, k) % n) / n
    return np.cos(ang) + 1j * np.sin(ang)


def dft2_direct(x):
    _, h, w = x.shape
    out = np.einsum("uh,bhw,vw->buv", _dft_matrix(h), x.astype(np.complex128), _dft_matrix(w))
    return np.ascontiguousarray(out.real), np.ascontiguousarray(out.imag)
