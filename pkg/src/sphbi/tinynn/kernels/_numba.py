"""numba-compiled kernels; same contracts as the numpy versions."""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, kh, kw):
    n, c, hp, wp = xp.shape
    ho = hp - kh + 1
    wo = wp - kw + 1
    cols = np.empty((n, c * kh * kw, ho * wo), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ch * kh + i) * kw + j
                    for y in range(ho):
                        base = y * wo
                        for x in range(wo):
                            cols[b, r, base + x] = xp[b, ch, y + i, x + j]
    return cols


@njit(cache=True)
def col2im(cols, n, c, hp, wp, kh, kw):
    ho = hp - kh + 1
    wo = wp - kw + 1
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    r = (ch * kh + i) * kw + j
                    for y in range(ho):
                        base = y * wo
                        for x in range(wo):
                            out[b, ch, y + i, x + j] += cols[b, r, base + x]
    return out


@njit(cache=True)
def maxpool_forward(x, k, s):
    n, c, h, w = x.shape
    ho = (h - k) // s + 1
    wo = (w - k) // s + 1
    out = np.empty((n, c, ho, wo), dtype=x.dtype)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    y0 = y * s
                    x0 = xx * s
                    best = x[b, ch, y0, x0]
                    bi = y0 * w + x0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, ch, y0 + i, x0 + j]
                            if v > best:
                                best = v
                                bi = (y0 + i) * w + x0 + j
                    out[b, ch, y, xx] = best
                    arg[b, ch, y, xx] = bi
    return out, arg


@njit(cache=True)
def maxpool_backward(g, arg, h, w):
    n, c, ho, wo = g.shape
    out = np.zeros((n, c, h * w), dtype=g.dtype)
    for b in range(n):
        for ch in range(c):
            for y in range(ho):
                for xx in range(wo):
                    out[b, ch, arg[b, ch, y, xx]] += g[b, ch, y, xx]
    return out.reshape(n, c, h, w)

