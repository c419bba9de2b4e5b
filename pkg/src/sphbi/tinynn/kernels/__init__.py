"""Kernel backend selection.

``SPHBI_BACKEND=numpy`` forces the pure-numpy path; the default is numba when
it imports, numpy otherwise. The choice is made once, at import time.
"""

import logging
import os

from . import _numpy

log = logging.getLogger(__name__)

_requested = os.environ.get("SPHBI_BACKEND", "numba").strip().lower()
if _requested not in ("numba", "numpy"):
    raise ImportError(f"SPHBI_BACKEND must be 'numba' or 'numpy', got {_requested!r}")

BACKEND = "numpy"
if _requested == "numba":
    try:
        from . import _numba as _impl

        BACKEND = "numba"
    except ImportError:  # pragma: no cover
        log.warning("numba unavailable, using numpy kernels")
        _impl = _numpy
else:
    _impl = _numpy

im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward

__all__ = ["BACKEND", "im2col", "col2im", "maxpool_forward", "maxpool_backward"]
