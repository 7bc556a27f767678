"""Backend selection for the conv kernels.

The compiled extension is used when it was built; set ``UNOBS_PURE_PYTHON=1``
to force the numpy fallback.
"""
import os

from . import _kernels_py

try:
    from . import _kernels as _compiled
except ImportError:
    _compiled = None

HAVE_EXTENSION = _compiled is not None
BACKEND = "python"
im2col = _kernels_py.im2col
col2im = _kernels_py.col2im

if HAVE_EXTENSION and os.environ.get("UNOBS_PURE_PYTHON", "") not in ("1", "true", "yes"):
    BACKEND = "cython"
    im2col = _compiled.im2col
    col2im = _compiled.col2im


def get_backend(name):
    """Return an ``(im2col, col2im)`` pair for ``"python"`` or ``"cython"``."""
    if name == "python":
        return _kernels_py.im2col, _kernels_py.col2im
    if name == "cython":
        if not HAVE_EXTENSION:
            raise ImportError("the compiled kernel extension is not built")
        return _compiled.im2col, _compiled.col2im
    raise ValueError(f"unknown backend {name!r}")
