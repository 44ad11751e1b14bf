"""Select the solver kernels at import time.

The compiled ``_kernels`` extension is used when it imports; otherwise, or
when ``HETREG_PURE_PYTHON`` is set to a non-empty value other than ``0``,
the numpy fallback ``_kernels_py`` is used. Both expose the same functions.
"""

import importlib
import os

from . import _kernels_py


def _want_pure() -> bool:
    return os.environ.get("HETREG_PURE_PYTHON", "") not in ("", "0")


def load(name: str | None = None):
    """Return a kernel module by name (``"cython"`` or ``"python"``), or the default."""
    if name == "python":
        return _kernels_py
    if name == "cython":
        return importlib.import_module("hetreg._kernels")
    if name is not None:
        raise ValueError(f"unknown backend {name!r}")
    if _want_pure():
        return _kernels_py
    try:
        return importlib.import_module("hetreg._kernels")
    except ImportError:
        return _kernels_py


kernels = load()
BACKEND = "python" if kernels is _kernels_py else "cython"


def available() -> list[str]:
    out = ["python"]
    try:
        importlib.import_module("hetreg._kernels")
    except ImportError:
        return out
    return ["cython"] + out
