"""Backend selection: numba kernels or the pure-numpy reference path.

The active backend is resolved once from the environment variable
PCRLBDESIGN_BACKEND ("numba" or "numpy"). When unset, numba is used if it
imports. set_backend() overrides at runtime (used by tests and the
benchmark script). Both backends compute the same quantities; the numba
path is the fast twin of the numpy reference implementation.
"""

from __future__ import annotations

import os

ENV_VAR = "PCRLBDESIGN_BACKEND"

try:
    import numba  # noqa: F401

    HAS_NUMBA = True
except ImportError:
    HAS_NUMBA = False


def _resolve_default() -> str:
    choice = os.environ.get(ENV_VAR, "").strip().lower()
    if choice in ("numba", "numpy"):
        if choice == "numba" and not HAS_NUMBA:
            raise ImportError(f"{ENV_VAR}=numba but numba is not importable")
        return choice
    if choice:
        raise ValueError(f"{ENV_VAR} must be 'numba' or 'numpy', got {choice!r}")
    return "numba" if HAS_NUMBA else "numpy"


_ACTIVE = _resolve_default()


def active_backend() -> str:
    return _ACTIVE


def set_backend(name: str) -> str:
    """Switch backends at runtime; returns the previous backend name."""
    global _ACTIVE
    if name not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {name!r}")
    if name == "numba" and not HAS_NUMBA:
        raise ValueError("numba backend requested but numba is not importable")
    previous = _ACTIVE
    _ACTIVE = name
    return previous
