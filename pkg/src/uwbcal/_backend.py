"""Backend selection for the numeric kernels.

Set ``UWBCAL_NO_NUMBA=1`` to force the pure-numpy kernels. Numba is used
otherwise when it imports cleanly.
"""
import os
import warnings

_FLAG = "UWBCAL_NO_NUMBA"


def numba_requested():
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


USE_NUMBA = False
if numba_requested():
    try:
        import numba  # noqa: F401

        USE_NUMBA = True
    except ImportError:  # pragma: no cover - numba is a hard dependency in CI
        warnings.warn("numba is not installed - falling back to numpy kernels")

BACKEND = "numba" if USE_NUMBA else "numpy"
