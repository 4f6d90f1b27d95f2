"""numba-compiled kernels, numerically interchangeable with ``_numpy``."""

import numpy as np
from numba import njit


@njit(cache=True)
def im2col(xp, kh, kw, sh, sw, r0, r1, wout):
    c = xp.shape[0]
    rows = r1 - r0
    cols = np.empty((c * kh * kw, rows * wout), dtype=xp.dtype)
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                r = (ch * kh + i) * kw + j
                for y in range(rows):
                    yy = (r0 + y) * sh + i
                    base = y * wout
                    for x in range(wout):
                        cols[r, base + x] = xp[ch, yy, x * sw + j]
    return cols


@njit(cache=True)
def col2im_add(dxp, dcols, kh, kw, sh, sw, r0, r1, wout):
    c = dxp.shape[0]
    rows = r1 - r0
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                r = (ch * kh + i) * kw + j
                for y in range(rows):
                    yy = (r0 + y) * sh + i
                    base = y * wout
                    for x in range(wout):
                        dxp[ch, yy, x * sw + j] += dcols[r, base + x]


@njit(cache=True)
def depthwise_forward(xp, w, sh, sw, hout, wout):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = w.shape[1], w.shape[2]
    out = np.zeros((n, c, hout, wout), dtype=xp.dtype)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    wv = w[ch, i, j]
                    for y in range(hout):
                        yy = y * sh + i
                        for x in range(wout):
                            out[b, ch, y, x] += xp[b, ch, yy, x * sw + j] * wv
    return out


@njit(cache=True)
def depthwise_backward(xp, w, dy, sh, sw):
    n, c = xp.shape[0], xp.shape[1]
    kh, kw = w.shape[1], w.shape[2]
    hout, wout = dy.shape[2], dy.shape[3]
    dxp = np.zeros_like(xp)
    dw = np.zeros_like(w)
    for b in range(n):
        for ch in range(c):
            for i in range(kh):
                for j in range(kw):
                    wv = w[ch, i, j]
                    acc = 0.0
                    for y in range(hout):
                        yy = y * sh + i
                        for x in range(wout):
                            g = dy[b, ch, y, x]
                            acc += g * xp[b, ch, yy, x * sw + j]
                            dxp[b, ch, yy, x * sw + j] += g * wv
                    dw[ch, i, j] += acc
    return dxp, dw


@njit(cache=True)
def maxpool_forward(xp, k, s, hout, wout):
    n, c = xp.shape[0], xp.shape[1]
    out = np.empty((n, c, hout, wout), dtype=xp.dtype)
    arg = np.zeros((n, c, hout, wout), dtype=np.int32)
    for b in range(n):
        for ch in range(c):
            for y in range(hout):
                for x in range(wout):
                    best = -np.inf
                    bi = 0
                    for i in range(k):
                        for j in range(k):
                            v = xp[b, ch, y * s + i, x * s + j]
                            if v > best:
                                best = v
                                bi = i * k + j
                    out[b, ch, y, x] = best
                    arg[b, ch, y, x] = bi
    return out, arg


@njit(cache=True)
def maxpool_backward(dy, arg, k, s, hp, wp):
    n, c, hout, wout = dy.shape
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for b in range(n):
        for ch in range(c):
            for y in range(hout):
                for x in range(wout):
                    a = arg[b, ch, y, x]
                    dxp[b, ch, y * s + a // k, x * s + a % k] += dy[b, ch, y, x]
    return dxp


@njit(cache=True)
def _taps(n_in, n_out):
    i0 = np.empty(n_out, dtype=np.int64)
    i1 = np.empty(n_out, dtype=np.int64)
    lam = np.empty(n_out, dtype=np.float64)
    scale = n_in / n_out
    for o in range(n_out):
        src = (o + 0.5) * scale - 0.5
        if src < 0.0:
            src = 0.0
        f = int(np.floor(src))
        if f > n_in - 1:
            f = n_in - 1
        i0[o] = f
        i1[o] = min(f + 1, n_in - 1)
        lam[o] = src - f
    return i0, i1, lam


@njit(cache=True)
def resize_forward(x, oh, ow):
    n, c, ih, iw = x.shape
    y0, y1, ly = _taps(ih, oh)
    x0, x1, lx = _taps(iw, ow)
    out = np.empty((n, c, oh, ow), dtype=x.dtype)
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                wy = ly[oy]
                for ox in range(ow):
                    wx = lx[ox]
                    top = (1.0 - wx) * x[b, ch, y0[oy], x0[ox]] + wx * x[b, ch, y0[oy], x1[ox]]
                    bot = (1.0 - wx) * x[b, ch, y1[oy], x0[ox]] + wx * x[b, ch, y1[oy], x1[ox]]
                    out[b, ch, oy, ox] = (1.0 - wy) * top + wy * bot
    return out


@njit(cache=True)
def resize_backward(dy, ih, iw):
    n, c, oh, ow = dy.shape
    y0, y1, ly = _taps(ih, oh)
    x0, x1, lx = _taps(iw, ow)
    dx = np.zeros((n, c, ih, iw), dtype=dy.dtype)
    for b in range(n):
        for ch in range(c):
            for oy in range(oh):
                wy = ly[oy]
                for ox in range(ow):
                    wx = lx[ox]
                    g = dy[b, ch, oy, ox]
                    dx[b, ch, y0[oy], x0[ox]] += (1.0 - wy) * (1.0 - wx) * g
                    dx[b, ch, y0[oy], x1[ox]] += (1.0 - wy) * wx * g
                    dx[b, ch, y1[oy], x0[ox]] += wy * (1.0 - wx) * g
                    dx[b, ch, y1[oy], x1[ox]] += wy * wx * g
    return dx
