"""Backend selection for the numeric kernels.

Set ``LFMMI_CL_NO_NUMBA=1`` to force the pure-numpy path. The flag is read
once at import time.
"""
import os

NO_NUMBA = os.environ.get("LFMMI_CL_NO_NUMBA", "").strip().lower() not in ("", "0", "false", "no")

try:
    from numba import njit

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    HAS_NUMBA = False

    def njit(*args, **kwargs):
        if len(args) == 1 and callable(args[0]) and not kwargs:
            return args[0]
        return lambda f: f


DEFAULT_BACKEND = "numba" if HAS_NUMBA and not NO_NUMBA else "numpy"
