"""Optional numba acceleration.

Set ``GMEML_DISABLE_NUMBA=1`` to force the pure-numpy code paths.  Kernels
that have a compiled variant expose both and dispatch on ``USE_NUMBA``.
"""

import os

_disabled = os.environ.get("GMEML_DISABLE_NUMBA", "").strip().lower() in ("1", "true", "yes")

try:
    if _disabled:
        raise ImportError
    from numba import njit as _njit

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False
    _njit = None

USE_NUMBA = HAVE_NUMBA and not _disabled


def njit(*args, **kwargs):
    """``numba.njit`` when available, identity decorator otherwise."""
    kwargs.setdefault("cache", True)
    if not HAVE_NUMBA:
        if len(args) == 1 and callable(args[0]):
            return args[0]
        return lambda fn: fn
    return _njit(*args, **kwargs)
