"""Backend selection for the hot loops.

The compiled extension is used when it imports; otherwise the numpy
implementation takes over.  ``OPALLOC_BACKEND=python`` forces the fallback
and ``OPALLOC_BACKEND=compiled`` makes a missing extension an error.
"""
from __future__ import annotations

import os
import types

from . import _fallback

try:
    from . import _kernels as _compiled
except ImportError:  # extension not built
    _compiled = None

BACKENDS = ("compiled", "python")


def available() -> list[str]:
    return [b for b in BACKENDS if b == "python" or _compiled is not None]


def get(name: str | None = None) -> types.ModuleType:
    name = name or os.environ.get("OPALLOC_BACKEND", "auto")
    if name == "python":
        return _fallback
    if name == "compiled":
        if _compiled is None:
            raise ImportError("compiled kernels are not built; run `pip install -e .`")
        return _compiled
    if name != "auto":
        raise ValueError(f"unknown backend {name!r}")
    return _compiled if _compiled is not None else _fallback


def backend_name(mod: types.ModuleType) -> str:
    return "python" if mod is _fallback else "compiled"
