"""Backend selection for the hot kernels.

The compiled extension is used when it was built and importable; otherwise,
or when ``KVTIER_PURE_PYTHON`` is set to a non-empty value, the numpy
fallback is used. Both expose the same functions with identical outputs.
"""
from __future__ import annotations

import importlib
import os

from . import _kernels_py

OK = 0
INSUFFICIENT = 1


def load_backend(name: str):
    """Return the kernel module for ``"cython"`` or ``"python"``."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("kvtier._ckernels")
    raise ValueError(f"unknown backend {name!r}")


def _select():
    if os.environ.get("KVTIER_PURE_PYTHON"):
        return "python", _kernels_py
    try:
        return "cython", load_backend("cython")
    except ImportError:
        return "python", _kernels_py


BACKEND, _impl = _select()
replace_step = _impl.replace_step
