"""Pure-numpy reference kernels."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(xp, kh, kw):
    n, c, hp, wp = xp.shape
    ho, wo = hp - kh + 1, wp - kw + 1
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))  # n, c, ho, wo, kh, kw
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, ho * wo)
    return np.ascontiguousarray(cols)


def col2im(cols, n, c, hp, wp, kh, kw):
    ho, wo = hp - kh + 1, wp - kw + 1
    cols = cols.reshape(n, c, kh, kw, ho, wo)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i : i + ho, j : j + wo] += cols[:, :, i, j]
    return out


def maxpool_forward(x, k, s):
    n, c, h, w = x.shape
    win = sliding_window_view(x, (k, k), axis=(2, 3))[:, :, ::s, ::s]
    ho, wo = win.shape[2], win.shape[3]
    flat = win.reshape(n, c, ho, wo, k * k)
    local = flat.argmax(axis=-1)  # first maximum in row-major scan
    out = np.take_along_axis(flat, local[..., None], axis=-1)[..., 0]
    rows = np.arange(ho)[:, None] * s + local // k
    cols_ = np.arange(wo)[None, :] * s + local % k
    arg = (rows * w + cols_).astype(np.int64)
    return np.ascontiguousarray(out), arg


def maxpool_backward(g, arg, h, w):
    n, c = g.shape[:2]
    out = np.zeros((n * c, h * w), dtype=g.dtype)
    rows = np.repeat(np.arange(n * c), g.shape[2] * g.shape[3])
    np.add.at(out, (rows, arg.reshape(-1)), g.reshape(-1))
    return out.reshape(n, c, h, w)

