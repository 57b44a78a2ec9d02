"""Pure numpy versions of the windowed kernels. Always importable."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "python"


def im2col(x, k, stride, pad):
    """Gather sliding windows: ``(N, L, C) -> (N, Lout, k, C)``."""
    if pad:
        x = np.pad(x, ((0, 0), (pad, pad), (0, 0)))
    win = sliding_window_view(x, k, axis=1)[:, ::stride]  # (N, Lout, C, k)
    return np.ascontiguousarray(win.transpose(0, 1, 3, 2))


def col2im(cols, length, stride, pad):
    """Adjoint of :func:`im2col`: scatter-add windows back to ``(N, L, C)``."""
    n, lout, k, c = cols.shape
    buf = np.zeros((n, length + 2 * pad, c))
    span = stride * (lout - 1) + 1
    for j in range(k):
        buf[:, j : j + span : stride] += cols[:, :, j]
    return buf[:, pad : pad + length]


def maxpool_forward(x, p):
    """Non-overlapping max pool of width ``p`` along axis 1 (tail truncated).

    Returns the pooled values and the absolute argmax positions (first max
    wins on ties).
    """
    n, length, c = x.shape
    lo = length // p
    win = x[:, : lo * p].reshape(n, lo, p, c)
    arg = win.argmax(axis=2)
    out = np.take_along_axis(win, arg[:, :, None], axis=2)[:, :, 0]
    idx = arg + (np.arange(lo) * p)[None, :, None]
    return np.ascontiguousarray(out), idx.astype(np.int64)


def maxpool_backward(g, idx, length):
    n, lo, c = g.shape
    out = np.zeros((n, length, c))
    np.put_along_axis(out, idx, g, axis=1)
    return out
