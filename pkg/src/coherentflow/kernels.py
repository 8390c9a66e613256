"""Kernel backend selection: compiled extension when available, numpy otherwise.

Set COHERENTFLOW_FORCE_PY=1 to force the pure-Python backend (used by the
benchmark to compare both).
"""
import os

from . import _kernels_py

if os.environ.get("COHERENTFLOW_FORCE_PY"):
    _impl = _kernels_py
else:
    try:
        from . import _kernels as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _kernels_py

diffuse_sweep = _impl.diffuse_sweep


def backend() -> str:
    """Name of the active kernel backend: 'compiled' or 'python'."""
    return "python" if _impl is _kernels_py else "compiled"
