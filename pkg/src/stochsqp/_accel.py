"""Optional numba acceleration.

Kernels are written in the numpy subset numba understands, so the same
source runs compiled or interpreted. Set ``STOCH_SQP_DISABLE_JIT=1`` before
import to force the interpreted path.
"""
import os

_FLAG = "STOCH_SQP_DISABLE_JIT"


def _jit_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    if not _jit_requested():
        raise ImportError
    import numba

    JIT_ENABLED = True
except ImportError:
    numba = None
    JIT_ENABLED = False


def kernel(func):
    """Compile ``func`` with ``numba.njit`` when available, else return it unchanged."""
    if JIT_ENABLED:
        return numba.njit(cache=True, nogil=True)(func)
    return func
