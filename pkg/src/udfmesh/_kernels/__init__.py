"""Hot kernels with a compiled core and a pure-Python fallback.

The compiled extension is used when it imports; set ``UDFMESH_PURE_PYTHON=1``
to force the fallback.  ``BACKEND`` names the active implementation.
"""

import os

from . import _pykernels

BACKEND = "python"
_impl = _pykernels

if os.environ.get("UDFMESH_PURE_PYTHON", "") not in ("1", "true", "yes"):
    try:
        from . import _ckernels as _impl  # noqa: F811

        BACKEND = "cython"
    except ImportError:
        _impl = _pykernels

maxflow = _impl.maxflow
count_intersecting_pairs = _impl.count_intersecting_pairs
tri_tri_intersect = _impl.tri_tri_intersect


def backends():
    """Available implementations by name (the fallback is always present)."""
    out = {"python": _pykernels}
    try:
        from . import _ckernels

        out["cython"] = _ckernels
    except ImportError:
        pass
    return out
