"""Kernel backend selection: compiled extension with a pure-numpy fallback.

The two backends implement the same numeric contract and return bit-equal
arrays; selection is a speed decision only. AGBMAP_BACKEND=python|compiled
forces a choice (compiled raises if the extension is not built).
"""
from __future__ import annotations

import os

from . import _kernels_py

try:
    from . import _core
except ImportError:  # extension not built; numpy kernels carry the load
    _core = None

_ENV_VAR = "AGBMAP_BACKEND"


def available_backends() -> list:
    names = ["python"]
    if _core is not None:
        names.insert(0, "compiled")
    return names


def get_backend(name: str | None = None):
    """Kernel module for a backend name (None/auto = env var or fastest)."""
    if name is None:
        name = os.environ.get(_ENV_VAR, "auto")
    name = name.strip().lower()
    if name in ("", "auto"):
        return _core if _core is not None else _kernels_py
    if name == "python":
        return _kernels_py
    if name == "compiled":
        if _core is None:
            raise ImportError(
                "compiled backend requested but agbmap.learners._core is not "
                "built; install with the Cython extension or unset "
                f"{_ENV_VAR}"
            )
        return _core
    raise ValueError(f"unknown backend {name!r} (use 'compiled' or 'python')")


def backend_name(module) -> str:
    return "compiled" if module is _core and _core is not None else "python"


def active_backend() -> str:
    return backend_name(get_backend())
