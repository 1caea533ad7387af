"""Hot per-pixel kernels with selectable backend.

The numba backend is used when available; set CYCLEDEPTH_NUMBA=0 before
import to force the pure numpy fallback.  Both backends implement the
same functions with matching arithmetic; `benchmarks/bench_kernels.py`
compares their throughput.
"""

from __future__ import annotations

import os

from . import _numpy_impl

_BACKEND = "numpy"
_impl = _numpy_impl

if os.environ.get("CYCLEDEPTH_NUMBA", "1") != "0":
    try:
        from . import _numba_impl

        _impl = _numba_impl
        _BACKEND = "numba"
    except ImportError:
        pass


def backend_name() -> str:
    """Name of the active kernel backend ('numba' or 'numpy')."""
    return _BACKEND


correspondence = _impl.correspondence
identity_correspondence = _impl.identity_correspondence
bilinear_sample = _impl.bilinear_sample
warp_backward = _impl.warp_backward
box_sum3 = _impl.box_sum3
photometric_grad = _impl.photometric_grad
l1_grad = _impl.l1_grad
grid_up = _impl.grid_up
grid_up_adjoint = _impl.grid_up_adjoint

__all__ = [
    "backend_name",
    "correspondence",
    "identity_correspondence",
    "bilinear_sample",
    "warp_backward",
    "box_sum3",
    "photometric_grad",
    "l1_grad",
    "grid_up",
    "grid_up_adjoint",
]
