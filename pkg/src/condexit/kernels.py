"""Step-kernel backend selection.

Two interchangeable implementations of the per-step kernel exist: a
compiled one (numba) and a pure-numpy one.  They carry out the same
arithmetic in the same order, so simulations are bit-for-bit identical
under either backend; the compiled one is simply faster.

Selection order:

1. an explicit :func:`set_backend` call,
2. the ``CONDEXIT_BACKEND`` environment variable (``numba``, ``numpy`` or
   ``auto``),
3. ``auto``: the compiled backend when importable, numpy otherwise.
"""

from __future__ import annotations

import os

from . import _kernels_numpy

__all__ = ["available_backends", "get_backend", "set_backend", "advance_step"]

_ENV_VAR = "CONDEXIT_BACKEND"

_BACKENDS = {"numpy": _kernels_numpy}
try:
    from . import _kernels_numba

    _BACKENDS["numba"] = _kernels_numba
except ImportError:  # compiled backend is optional
    _kernels_numba = None

_forced: str | None = None


def available_backends() -> list[str]:
    return sorted(_BACKENDS)


def _resolve() -> str:
    if _forced is not None:
        return _forced
    env = os.environ.get(_ENV_VAR, "auto").strip().lower()
    if env in _BACKENDS:
        return env
    if env not in ("", "auto"):
        raise ValueError(
            f"{_ENV_VAR}={env!r} is not available; choose from {available_backends()} or 'auto'"
        )
    return "numba" if "numba" in _BACKENDS else "numpy"


def get_backend() -> str:
    """Name of the backend that will run the next simulation."""
    return _resolve()


def set_backend(name: str | None) -> None:
    """Force a backend by name, or restore automatic selection with None."""
    global _forced
    if name is None:
        _forced = None
        return
    name = str(name).strip().lower()
    if name not in _BACKENDS:
        raise ValueError(f"backend {name!r} not available; choose from {available_backends()}")
    _forced = name


def advance_step(*args):
    """Advance one chunk by one Euler step on the active backend."""
    return _BACKENDS[_resolve()].advance_step(*args)
