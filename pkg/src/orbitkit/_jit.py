"""Numba switch.

Set ``ORBITKIT_DISABLE_NUMBA=1`` before import to run every kernel as plain
Python over numpy arrays.  The kernels are written so that both paths execute
the same source.
"""
from __future__ import annotations

import os

_DISABLED = os.environ.get("ORBITKIT_DISABLE_NUMBA", "").strip().lower() in {"1", "true", "yes"}

try:
    if _DISABLED:
        raise ImportError
    import numba as _numba
except ImportError:  # pragma: no cover - exercised through the env flag
    _numba = None

NUMBA_ENABLED = _numba is not None


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    if _numba is not None:
        return _numba.njit(*args, **kwargs)
    if len(args) == 1 and callable(args[0]) and not kwargs:
        return args[0]

    def wrapper(f):
        return f

    return wrapper
