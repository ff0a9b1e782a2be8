"""Patch gather/scatter kernels with a compiled fast path.

The Cython extension is preferred when it was built; the numpy fallback is
bit-identical, so which backend runs never changes results. Set
``LGEST_NO_EXT=1`` to force the fallback (used by tests and benchmarks).
"""

import os

from . import fallback as _fallback

_impl = _fallback
if not os.environ.get("LGEST_NO_EXT"):
    try:
        from . import _convkern as _impl  # type: ignore[no-redef]
    except ImportError:
        _impl = _fallback

BACKEND = "numpy" if _impl is _fallback else "cython"

im2col = _impl.im2col
col2im = _impl.col2im

__all__ = ["im2col", "col2im", "BACKEND"]
