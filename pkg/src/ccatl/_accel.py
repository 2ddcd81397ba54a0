"""Numba switch.

Set ``CCATL_DISABLE_NUMBA=1`` to run every hot kernel through its pure-numpy
fallback instead of the ``@njit`` version. The flag is read once at import.
"""
import os

_FLAG = os.environ.get("CCATL_DISABLE_NUMBA", "").strip().lower()

try:
    import numba  # noqa: F401
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(fn=None, **kwargs):
    """``numba.njit`` with caching, or the identity when numba is unavailable."""
    def wrap(f):
        if not HAVE_NUMBA:
            return f
        from numba import njit as _njit
        kwargs.setdefault("cache", True)
        return _njit(**kwargs)(f)

    if fn is None:
        return wrap
    return wrap(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
