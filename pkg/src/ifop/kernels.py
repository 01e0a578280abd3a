"""Hot-loop kernels: compiled extension when available, numpy otherwise.

Set ``IFOP_PURE_PYTHON=1`` to force the fallback.
"""
import os

from . import _kernels_py

BACKEND = "python"
if os.environ.get("IFOP_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _kernels as _impl

        BACKEND = "cython"
    except ImportError:  # extension not built
        _impl = _kernels_py
else:
    _impl = _kernels_py

polyline_query = _impl.polyline_query
polyline_self_intersects = _impl.polyline_self_intersects

__all__ = ["BACKEND", "polyline_query", "polyline_self_intersects"]
