"""Select the split-scan kernel at import time.

The compiled Cython kernel is preferred; setting ``OBDISTILL_PURE_PYTHON=1``
or a missing build falls back to the numpy implementation.
"""
import os

from . import _scan_py

KERNELS = {"python": _scan_py.cut_decreases}

try:
    from . import _scan_ext
except ImportError:  # not built
    _scan_ext = None
else:
    KERNELS["cython"] = _scan_ext.cut_decreases

if os.environ.get("OBDISTILL_PURE_PYTHON") or "cython" not in KERNELS:
    BACKEND = "python"
else:
    BACKEND = "cython"

cut_decreases = KERNELS[BACKEND]


def get_kernel(name=None):
    if name is None:
        return cut_decreases
    try:
        return KERNELS[name]
    except KeyError:
        raise ValueError(f"kernel {name!r} unavailable; have {sorted(KERNELS)}") from None
