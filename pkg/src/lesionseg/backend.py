"""Kernel backend selection.

Hot inner loops (3D convolution forward/backward, surface-distance queries)
have two implementations: numba @njit machine code and a pure-numpy fallback.
Selection happens once at import time:

    LESIONSEG_NUMBA=0   force the numpy fallback
    LESIONSEG_NUMBA=1   require numba (ImportError if unavailable)
    unset / "auto"      use numba when importable

Both paths accumulate in float64 and produce results that agree to roundoff;
within one backend results are bitwise deterministic.
"""

import os

try:
    import numba  # noqa: F401
    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False

_flag = os.environ.get("LESIONSEG_NUMBA", "auto").strip().lower()

if _flag in ("0", "false", "no", "off"):
    USE_NUMBA = False
elif _flag in ("1", "true", "yes", "on"):
    if not HAVE_NUMBA:
        raise ImportError("LESIONSEG_NUMBA=1 but numba is not importable")
    USE_NUMBA = True
else:
    USE_NUMBA = HAVE_NUMBA

BACKEND = "numba" if USE_NUMBA else "numpy"
