"""Kernel backend selection.

The compiled extension is preferred when importable; the pure-Python module
is the fallback. Set ``LORANK_PURE_PYTHON=1`` to force the fallback (used by
the parity tests and the benchmark). Both backends are bit-identical, so the
choice affects speed only.
"""
import os

_forced_pure = os.environ.get("LORANK_PURE_PYTHON", "") not in ("", "0")

if _forced_pure:
    from lorank import _kernels_py as kernels

    BACKEND = "python"
else:
    try:
        from lorank import _kernels as kernels  # type: ignore[no-redef]

        BACKEND = "compiled"
    except ImportError:
        from lorank import _kernels_py as kernels  # type: ignore[no-redef]

        BACKEND = "python"

__all__ = ["kernels", "BACKEND"]
