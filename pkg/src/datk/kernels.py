"""Kernel dispatch: compiled extension when available, numpy otherwise.

Set ``DATK_PURE_PYTHON=1`` to force the fallback.
"""

import os

from . import _fallback

BACKEND = "python"

if os.environ.get("DATK_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _fallback
else:
    _impl = _fallback

im2col3x3 = _impl.im2col3x3
col2im3x3 = _impl.col2im3x3
dft2_direct = _impl.dft2_direct

__all__ = ["BACKEND", "im2col3x3", "col2im3x3", "dft2_direct"]
