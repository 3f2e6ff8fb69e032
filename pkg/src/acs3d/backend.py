"""Selects the implementation of the hot numeric kernels.

Two interchangeable backends exist: ``numba`` (JIT-compiled loops, the
default when numba imports) and ``numpy`` (pure-numpy shift-and-add).
The environment variable ``ACS3D_BACKEND`` picks one explicitly; tests and
benchmarks may also call :func:`set_backend`.

Both backends follow the same fixed per-output accumulation order
(input channel, then kernel offsets), so forward results agree bitwise.
"""

import os

# Must precede the first numba import anywhere in the process: the TBB
# probe warns on older TBB installs, while OpenMP behaves identically and
# stays quiet.
os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

VALID_BACKENDS = ("numba", "numpy")

_active = None


def _resolve():
    choice = os.environ.get("ACS3D_BACKEND", "").strip().lower()
    if choice and choice not in VALID_BACKENDS:
        raise ValueError(
            f"ACS3D_BACKEND={choice!r}: expected one of {VALID_BACKENDS}"
        )
    if choice == "numpy":
        return "numpy"
    try:
        import numba  # noqa: F401
    except ImportError:
        if choice == "numba":
            raise
        return "numpy"
    return "numba"


def active_backend():
    """Return the backend in use, resolving the environment on first call."""
    global _active
    if _active is None:
        _active = _resolve()
    return _active


def set_backend(name):
    """Force a backend (used by tests and the kernel benchmark)."""
    global _active
    if name not in VALID_BACKENDS:
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba":
        import numba  # noqa: F401
    _active = name


def using_numba():
    return active_backend() == "numba"
