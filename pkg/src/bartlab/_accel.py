"""Numba switch for the hot kernels.

Set ``BARTLAB_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
The flag is read once at import time.
"""

import os

_FALSE = {"", "0", "false", "no", "off"}

USE_NUMBA = os.environ.get("BARTLAB_DISABLE_NUMBA", "0").strip().lower() in _FALSE

if USE_NUMBA:
    try:
        from numba import njit as _njit
    except ImportError:  # pragma: no cover
        USE_NUMBA = False


def jit(fn):
    """Compile ``fn`` with numba when enabled, otherwise return it unchanged."""
    if USE_NUMBA:
        return _njit(cache=True, nogil=True)(fn)
    return fn
