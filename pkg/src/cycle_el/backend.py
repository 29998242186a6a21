"""Kernel backend selection.

Hot numeric loops have two implementations: a numba ``@njit`` version and a
pure-numpy fallback.  Set ``CYCLE_DISABLE_NUMBA=1`` to force the numpy path
(useful for debugging and for the kernel benchmark).
"""

from __future__ import annotations

import os

_DISABLE = os.environ.get("CYCLE_DISABLE_NUMBA", "").strip() in {"1", "true", "yes"}

if not _DISABLE:
    try:
        import numba  # noqa: F401

        HAVE_NUMBA = True
    except ImportError:  # pragma: no cover
        HAVE_NUMBA = False
else:
    HAVE_NUMBA = False


def use_numba() -> bool:
    """True when jitted kernels are active for this process."""
    return HAVE_NUMBA
