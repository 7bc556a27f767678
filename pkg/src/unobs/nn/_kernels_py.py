"""Pure numpy im2col / col2im. Reference for the compiled ``_kernels``."""
import numpy as np


def im2col(xp, k, stride, ho, wo):
    """Padded ``(N, C, Hp, Wp)`` input to ``(N, ho, wo, C, k, k)`` patches."""
    n, c = xp.shape[:2]
    cols = np.empty((n, ho, wo, c, k, k), dtype=np.float64)
    for i in range(k):
        for j in range(k):
            win = xp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride]
            cols[..., i, j] = win.transpose(0, 2, 3, 1)
    return cols


def col2im(cols, shape, k, stride):
    """Adjoint of ``im2col``: scatter-add patches back into ``shape``."""
    n, ho, wo, c = cols.shape[:4]
    out = np.zeros(shape, dtype=np.float64)
    for i in range(k):
        for j in range(k):
            out[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += \
                cols[..., i, j].transpose(0, 3, 1, 2)
    return out
