"""Numba selection.

Set ``AMISEC_DISABLE_NUMBA=1`` to route every hot kernel through its
pure-numpy implementation instead of the ``@njit`` one.
"""
import os

_FLAG = os.environ.get("AMISEC_DISABLE_NUMBA", "").strip().lower()

try:
    import numba
    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False

USE_NUMBA = HAVE_NUMBA and _FLAG not in ("1", "true", "yes", "on")


def njit(fn):
    """Compile ``fn`` in nopython mode when numba is active, else return it untouched."""
    if USE_NUMBA:
        return numba.njit(cache=True, nogil=True)(fn)
    return fn


def select(jit_impl, numpy_impl):
    return jit_impl if USE_NUMBA else numpy_impl
