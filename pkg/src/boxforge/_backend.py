"""Kernel backend selection.

The compiled extension is used when it imports; otherwise the numpy fallback.
Set ``BOXFORGE_PURE_PYTHON=1`` to force the fallback.
"""

import os

from boxforge import _pykernels

try:
    if os.environ.get("BOXFORGE_PURE_PYTHON"):
        raise ImportError("pure-python backend forced")
    from boxforge import _kernels as _compiled
except ImportError:
    _compiled = None

BACKENDS = {"python": _pykernels}
if _compiled is not None:
    BACKENDS["cython"] = _compiled

kernels = _compiled if _compiled is not None else _pykernels
name = "cython" if _compiled is not None else "python"


def set_backend(backend: str) -> str:
    """Switch the active kernels; returns the previous backend name."""
    global kernels, name
    if backend not in BACKENDS:
        raise ValueError(f"backend {backend!r} unavailable; have {sorted(BACKENDS)}")
    prev = name
    kernels = BACKENDS[backend]
    name = backend
    return prev
