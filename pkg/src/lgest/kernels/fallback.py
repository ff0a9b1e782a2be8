"""Pure numpy patch gather/scatter kernels.

Reference implementation for the compiled module in ``_convkern.pyx``. Both
produce bit-identical arrays: im2col is a pure copy, and col2im accumulates
the k*k shifted contributions in the same (i, j) order, so even float
rounding agrees.

Layout contract, shared with the compiled kernels:
  cols[n, (c*k + i)*k + j, y*wo + x] == xp[n, c, y*stride + i, x*stride + j]
"""

from __future__ import annotations

import numpy as np


def im2col(xp: np.ndarray, k: int, stride: int, ho: int, wo: int) -> np.ndarray:
    """Gather k*k patches of xp (N, C, Hp, Wp) into (N, C*k*k, ho*wo)."""
    n, c = xp.shape[:2]
    win = np.lib.stride_tricks.sliding_window_view(xp, (k, k), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]  # (N, C, ho, wo, k, k)
    cols = np.ascontiguousarray(win.transpose(0, 1, 4, 5, 2, 3))
    return cols.reshape(n, c * k * k, ho * wo)


def col2im(
    cols: np.ndarray, c: int, hp: int, wp: int, k: int, stride: int, ho: int, wo: int
) -> np.ndarray:
    """Adjoint of im2col: scatter-add columns back onto (N, C, hp, wp)."""
    n = cols.shape[0]
    patches = cols.reshape(n, c, k, k, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(k):
        for j in range(k):
            out[:, :, i : i + stride * ho : stride, j : j + stride * wo : stride] += patches[
                :, :, i, j, :, :
            ]
    return out
