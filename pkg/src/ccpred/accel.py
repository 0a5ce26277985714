"""Numba acceleration switch.

Hot kernels live in ``ccpred._kernels`` as ``@njit`` functions; every caller
also has a vectorized numpy/scipy fallback.  The active path is chosen once at
import time:

* default: use numba if it imports,
* ``CCPRED_DISABLE_NUMBA=1`` forces the numpy fallback,
* ``CCPRED_THREADS=n`` caps the numba thread pool.
"""

import os

DISABLE_ENV = "CCPRED_DISABLE_NUMBA"
THREADS_ENV = "CCPRED_THREADS"


def _detect() -> bool:
    if os.environ.get(DISABLE_ENV, "") not in ("", "0"):
        return False
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


USE_NUMBA = _detect()

if USE_NUMBA:
    import numba

    _cap = os.environ.get(THREADS_ENV, "")
    if _cap.isdigit() and int(_cap) >= 1:
        numba.set_num_threads(max(1, min(int(_cap), numba.config.NUMBA_NUM_THREADS)))
