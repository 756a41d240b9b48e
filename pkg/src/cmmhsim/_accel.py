"""Optional numba acceleration for the hot simulation kernels.

Set CMMHSIM_NO_NUMBA=1 to force the pure-Python fallback; the fallback runs
the very same kernel functions un-jitted, so results are bit-identical.
"""

import os

_flag = os.environ.get("CMMHSIM_NO_NUMBA", "").strip().lower()
_DISABLED = _flag not in ("", "0", "false", "no")

try:
    if _DISABLED:
        raise ImportError
    from numba import njit as _njit

    NUMBA_ENABLED = True
except ImportError:
    NUMBA_ENABLED = False


def accelerated(fn):
    """JIT-compile fn when numba is enabled, otherwise return it unchanged."""
    if NUMBA_ENABLED:
        return _njit(cache=True)(fn)
    return fn


def backend_name() -> str:
    return "numba" if NUMBA_ENABLED else "python"
