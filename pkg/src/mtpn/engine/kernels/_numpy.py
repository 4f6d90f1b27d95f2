"""Pure-numpy kernels. Reference path, also used when numba is disabled."""

import numpy as np


def im2col(xp, kh, kw, sh, sw, r0, r1, wout):
    c = xp.shape[0]
    rows = r1 - r0
    cols = np.empty((c, kh, kw, rows, wout), dtype=xp.dtype)
    for i in range(kh):
        y0 = i + r0 * sh
        for j in range(kw):
            cols[:, i, j] = xp[:, y0:y0 + (rows - 1) * sh + 1:sh, j:j + (wout - 1) * sw + 1:sw]
    return cols.reshape(c * kh * kw, rows * wout)


def col2im_add(dxp, dcols, kh, kw, sh, sw, r0, r1, wout):
    c = dxp.shape[0]
    rows = r1 - r0
    d = dcols.reshape(c, kh, kw, rows, wout)
    for i in range(kh):
        y0 = i + r0 * sh
        for j in range(kw):
            dxp[:, y0:y0 + (rows - 1) * sh + 1:sh, j:j + (wout - 1) * sw + 1:sw] += d[:, i, j]


def depthwise_forward(xp, w, sh, sw, hout, wout):
    n, c = xp.shape[:2]
    kh, kw = w.shape[1:]
    out = np.zeros((n, c, hout, wout), dtype=xp.dtype)
    for i in range(kh):
        for j in range(kw):
            out += xp[:, :, i:i + (hout - 1) * sh + 1:sh, j:j + (wout - 1) * sw + 1:sw] * w[None, :, i, j, None, None]
    return out


def depthwise_backward(xp, w, dy, sh, sw):
    hout, wout = dy.shape[2:]
    kh, kw = w.shape[1:]
    dxp = np.zeros_like(xp)
    dw = np.empty_like(w)
    for i in range(kh):
        for j in range(kw):
            sl = (slice(None), slice(None), slice(i, i + (hout - 1) * sh + 1, sh), slice(j, j + (wout - 1) * sw + 1, sw))
            dw[:, i, j] = np.einsum("nchw,nchw->c", dy, xp[sl])
            dxp[sl] += dy * w[None, :, i, j, None, None]
    return dxp, dw


def maxpool_forward(xp, k, s, hout, wout):
    n, c = xp.shape[:2]
    out = np.full((n, c, hout, wout), -np.inf, dtype=xp.dtype)
    arg = np.zeros((n, c, hout, wout), dtype=np.int32)
    for i in range(k):
        for j in range(k):
            v = xp[:, :, i:i + (hout - 1) * s + 1:s, j:j + (wout - 1) * s + 1:s]
            better = v > out
            out = np.where(better, v, out)
            arg[better] = i * k + j
    return out, arg


def maxpool_backward(dy, arg, k, s, hp, wp):
    n, c, hout, wout = dy.shape
    dxp = np.zeros((n, c, hp, wp), dtype=dy.dtype)
    for i in range(k):
        for j in range(k):
            dxp[:, :, i:i + (hout - 1) * s + 1:s, j:j + (wout - 1) * s + 1:s] += np.where(arg == i * k + j, dy, 0)
    return dxp


def _interp_matrix(n_in, n_out, dtype):
    m = np.zeros((n_out, n_in), dtype=np.float64)
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.maximum(src, 0.0)
    i0 = np.minimum(np.floor(src).astype(np.int64), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    lam = src - i0
    rows = np.arange(n_out)
    np.add.at(m, (rows, i0), 1.0 - lam)
    np.add.at(m, (rows, i1), lam)
    return m.astype(dtype)


def resize_forward(x, oh, ow):
    ry = _interp_matrix(x.shape[2], oh, x.dtype)
    rx = _interp_matrix(x.shape[3], ow, x.dtype)
    return np.ascontiguousarray(np.matmul(ry, np.matmul(x, rx.T)))


def resize_backward(dy, ih, iw):
    ry = _interp_matrix(ih, dy.shape[2], dy.dtype)
    rx = _interp_matrix(iw, dy.shape[3], dy.dtype)
    return np.ascontiguousarray(np.matmul(ry.T, np.matmul(dy, rx)))
