"""Numba switch for the hot kernels.

Set ``CFT2NN_DISABLE_NUMBA=1`` to run every kernel as plain Python/numpy.
Kernels are written once against the numba-compatible subset; ``jit``
returns the compiled function when numba is enabled and the original
otherwise, so both paths are always importable (``kernel.py_func``).
"""
import os

_DISABLED = os.environ.get("CFT2NN_DISABLE_NUMBA", "").lower() in ("1", "true", "yes")

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and not _DISABLED


class _PlainKernel:
    """Stand-in for a numba dispatcher when JIT is off."""

    def __init__(self, fn):
        self.py_func = fn
        self.__name__ = fn.__name__
        self.__doc__ = fn.__doc__

    def __call__(self, *args):
        return self.py_func(*args)


def jit(fn):
    if USE_NUMBA:
        return numba.njit(cache=True)(fn)
    return _PlainKernel(fn)


def backend():
    return "numba" if USE_NUMBA else "numpy"
