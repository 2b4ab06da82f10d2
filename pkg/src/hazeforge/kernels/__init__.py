"""Hot kernels with a compiled backend and a numpy fallback.

The Cython extension is used when it was built and imports cleanly;
set ``HAZEFORGE_PURE_PYTHON=1`` to force the numpy versions (``0`` or empty keeps the default).
"""

import os

from . import _pykernels

BACKEND = "python"

if os.environ.get("HAZEFORGE_PURE_PYTHON", "").strip().lower() in ("", "0", "false", "no"):
    try:
        from . import _ckernels
    except ImportError:
        _ckernels = None
    else:
        BACKEND = "cython"
else:
    _ckernels = None

_impl = _ckernels if _ckernels is not None else _pykernels

im2col = _impl.im2col
col2im = _impl.col2im
matting_blocks = _impl.matting_blocks

__all__ = ["BACKEND", "im2col", "col2im", "matting_blocks"]
