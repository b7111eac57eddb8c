"""Selects the compiled kernels when available.

Set FEEFLOW_PURE=1 to force the NumPy reference implementation (used by the
parity tests and the benchmark).
"""

import os

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

FORCE_PURE = os.environ.get("FEEFLOW_PURE", "") not in ("", "0")
HAVE_KERNELS = _kernels is not None


def kernels_enabled() -> bool:
    return HAVE_KERNELS and not FORCE_PURE


def backend_name() -> str:
    return "ext" if kernels_enabled() else "pure"
