"""Optional numba compilation.

Set ``CSWX_DISABLE_JIT=1`` to run the kernels as plain Python over numpy
arrays (slow, but handy for debugging and for comparing the two paths).
"""
from __future__ import annotations

import os

JIT_DISABLED = os.environ.get("CSWX_DISABLE_JIT", "").strip().lower() in ("1", "true", "yes")

try:
    if JIT_DISABLED:
        raise ImportError
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - exercised through the env flag
    numba = None
    HAVE_NUMBA = False


def njit(*args, **kwargs):
    """``numba.njit`` when available and enabled, else the identity decorator."""
    if HAVE_NUMBA:
        kwargs.setdefault("cache", True)
        return numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]
    return lambda fn: fn


def backend() -> str:
    return "numba" if HAVE_NUMBA else "python"
