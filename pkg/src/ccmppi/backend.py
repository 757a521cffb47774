"""Numeric backend selection.

Hot kernels ship in two equivalent implementations: numba ``@njit`` loops and
vectorized pure numpy. The environment variable ``CCMPPI_BACKEND`` picks one
("numba" or "numpy"); unset, numba is used when importable.
"""

from __future__ import annotations

import os

ENV_VAR = "CCMPPI_BACKEND"


def _numba_available() -> bool:
    try:
        import numba  # noqa: F401
    except ImportError:
        return False
    return True


def select_backend() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice == "numpy":
        return "numpy"
    if choice == "numba":
        if not _numba_available():
            raise ImportError(
                f"{ENV_VAR}=numba requested but numba is not importable"
            )
        return "numba"
    if choice:
        raise ValueError(
            f"unknown {ENV_VAR}={choice!r}; expected 'numba' or 'numpy'"
        )
    return "numba" if _numba_available() else "numpy"


BACKEND = select_backend()
USING_NUMBA = BACKEND == "numba"
