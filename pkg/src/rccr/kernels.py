"""Backend selection for the windowed kernels.

The compiled extension is used when it was built; otherwise the numpy
fallback. Set ``RCCR_BACKEND=python`` to force the fallback.
"""

import os

from rccr import _kernels_py

_forced = os.environ.get("RCCR_BACKEND", "").lower()

if _forced == "python":
    _impl = _kernels_py
else:
    try:
        from rccr import _ckernels as _impl
    except ImportError:
        if _forced == "cython":
            raise
        _impl = _kernels_py

BACKEND = _impl.NAME
im2col = _impl.im2col
col2im = _impl.col2im
maxpool_forward = _impl.maxpool_forward
maxpool_backward = _impl.maxpool_backward


def available_backends():
    """Map of backend name to kernel module, for tests and benchmarks."""
    out = {"python": _kernels_py}
    try:
        from rccr import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
