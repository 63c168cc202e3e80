"""JIT switch.

Kernels are compiled with numba unless ``CONDWALK_DISABLE_JIT`` is set to a
truthy value (or numba cannot be imported), in which case the pure-numpy
implementations in :mod:`condwalk.kernels` are used instead.
"""

import os

_FLAG = os.environ.get("CONDWALK_DISABLE_JIT", "").strip().lower()

try:
    import numba
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None

USE_JIT = numba is not None and _FLAG not in ("1", "true", "yes", "on")

JIT_OPTIONS = {"nogil": True, "cache": True}


def njit(func):
    """Compile ``func`` in nopython mode, or return it untouched."""
    if numba is None:
        return func
    return numba.njit(**JIT_OPTIONS)(func)
