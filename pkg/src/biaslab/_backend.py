"""Kernel backend chosen at import time.

The compiled ``_ckernels`` extension is used when it was built; otherwise,
or when ``BIASLAB_PURE_PYTHON`` is set to a non-empty value other than "0",
the numpy implementation in ``_pykernels`` is used.
"""

import os

from . import _pykernels

_forced = os.environ.get("BIASLAB_PURE_PYTHON", "") not in ("", "0")

if _forced:
    kernels = _pykernels
    NAME = "python"
else:
    try:
        from . import _ckernels as kernels
        NAME = "cython"
    except ImportError:
        kernels = _pykernels
        NAME = "python"


def get(name: str | None = None):
    """Kernel module by name ("cython" or "python"); the active one by default."""
    if name is None:
        return kernels
    if name == "python":
        return _pykernels
    if name == "cython":
        from . import _ckernels
        return _ckernels
    raise ValueError(f"unknown backend {name!r}")


def available() -> list[str]:
    names = ["python"]
    try:
        from . import _ckernels  # noqa: F401
        names.insert(0, "cython")
    except ImportError:
        pass
    return names
