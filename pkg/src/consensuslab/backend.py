"""Kernel selection.

The compiled extension is used when it imports; ``CONSENSUSLAB_BACKEND=python``
forces the numpy fallback.
"""

from __future__ import annotations

import os

from . import _fallback

try:
    from . import _kernels
except ImportError:  # extension not built
    _kernels = None

AVAILABLE = ("cython", "python") if _kernels is not None else ("python",)

if _kernels is not None and os.environ.get("CONSENSUSLAB_BACKEND", "").lower() != "python":
    BACKEND = "cython"
else:
    BACKEND = "python"


def linear_kernel(name: str | None = None):
    """``advance_linear`` implementation for ``name`` (default: the selected backend)."""
    name = name or BACKEND
    if name == "cython":
        if _kernels is None:
            raise RuntimeError("compiled kernel is not available; rebuild the package")
        return _kernels.advance_linear
    if name == "python":
        return _fallback.advance_linear
    raise ValueError(f"unknown backend {name!r}")


general_kernel = _fallback.advance_general
