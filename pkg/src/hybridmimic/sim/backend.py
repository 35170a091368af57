"""Kernel selection: compiled extension when importable, numpy otherwise."""
from __future__ import annotations

import os

from . import _kernel_py

try:
    from . import _kernel as _compiled
except ImportError:  # extension not built
    _compiled = None

_KERNELS = {"python": _kernel_py}
if _compiled is not None:
    _KERNELS["cython"] = _compiled

_active = "cython" if _compiled is not None and os.environ.get("HYBRIDMIMIC_BACKEND", "auto") != "python" else "python"


def available() -> list[str]:
    return sorted(_KERNELS)


def current() -> str:
    return _active


def kernel():
    return _KERNELS[_active]


def get(name: str):
    if name not in _KERNELS:
        raise ValueError(f"backend {name!r} unavailable; have {available()}")
    return _KERNELS[name]


def use_backend(name: str) -> str:
    """Switch the process-wide kernel; returns the previous backend name."""
    global _active
    get(name)
    prev, _active = _active, name
    return prev
