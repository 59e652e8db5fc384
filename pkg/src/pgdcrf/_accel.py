"""Backend switch for the hot kernels.

Set ``PGDCRF_DISABLE_NUMBA=1`` to force the pure-numpy path (useful for
debugging under the Python interpreter, or where numba is unavailable).
"""

import os

_FLAG = "PGDCRF_DISABLE_NUMBA"


def numba_requested() -> bool:
    return os.environ.get(_FLAG, "").strip().lower() not in ("1", "true", "yes", "on")


try:
    import numba  # noqa: F401

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and numba_requested()
