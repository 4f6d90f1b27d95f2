"""Forward operators on rank-4 ``(n, c, h, w)`` arrays.

Every operator validates its operands, reports its arithmetic work to the
active tally (see :mod:`.tally` for the counting block) and, when a tape is
recording, appends a node that knows its vector-Jacobian product.

Flop convention, per output element unless stated: conv 2 per MAC plus 1
per bias add; batchnorm 2; relu/relu6 1; sigmoid 4; softmax 4; add 1;
max/avg pool ``k*k``; global average pool ``h*w``; bilinear resize 8;
weighted merge of ``m`` inputs ``2m-1`` plus ``3m`` for the coefficients;
concat 0. Only convolutions contribute MACs.
"""

from __future__ import annotations

import numpy as np

from ..errors import GradientError, PrecisionError, ShapeError
from . import kernels
from .autograd import Node, current_tape
from .tally import active as _tally_active
from .tally import record as _tally_record

_FLOAT_TYPES = (np.dtype(np.float32), np.dtype(np.float64))
_COL_BUDGET = 1 << 25  # im2col elements per chunk


def _pair(v):
    if isinstance(v, (tuple, list)):
        a, b = v
        return int(a), int(b)
    return int(v), int(v)


def _check4(x, name="input"):
    if not isinstance(x, np.ndarray):
        raise TypeError(f"{name} must be a numpy array, got {type(x).__name__}")
    if x.ndim != 4:
        raise ShapeError(f"{name} must be rank 4 (n, c, h, w), got shape {x.shape}", dim="rank")
    if x.dtype not in _FLOAT_TYPES:
        raise PrecisionError(f"{name} has unsupported dtype {x.dtype}; use float32 or float64")


def _same_precision(*arrays):
    dts = {a.dtype for a in arrays if a is not None}
    if len(dts) > 1:
        raise PrecisionError(f"mixed precision operands: {sorted(str(d) for d in dts)}")


def _vec(v, c, name, what):
    if v.ndim != 1 or v.shape[0] != c:
        raise ShapeError(f"{what}: {name} must have length {c}, got shape {v.shape}", dim=name)


def _record(node):
    tape = current_tape()
    if tape is not None:
        tape.record(node)


def _count(label, op, macs, flops):
    if _tally_active():
        _tally_record(f"{label}/{op}" if label else op, macs, flops)


# --------------------------------------------------------------------------
# convolution


def _conv_out(h, w, kh, kw, sh, sw, ph, pw):
    hout = (h + 2 * ph - kh) // sh + 1
    wout = (w + 2 * pw - kw) // sw + 1
    if h + 2 * ph < kh or w + 2 * pw < kw or hout <= 0 or wout <= 0:
        raise ShapeError(f"conv2d: kernel {kh}x{kw} does not fit padded input {h + 2 * ph}x{w + 2 * pw}", dim="h/w")
    return hout, wout


def _pad(x, ph, pw, value=0.0):
    if ph == 0 and pw == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)), constant_values=value)


def _row_chunks(hout, per_row):
    step = max(1, _COL_BUDGET // max(per_row, 1))
    return [(r, min(r + step, hout)) for r in range(0, hout, step)]


def _dense_forward(x, w, sh, sw, ph, pw, hout, wout):
    n, cin = x.shape[:2]
    cout, _, kh, kw = w.shape
    w2 = w.reshape(cout, -1)
    if kh == 1 and kw == 1 and ph == 0 and pw == 0:
        xs = x if sh == 1 and sw == 1 else x[:, :, ::sh, ::sw]
        return np.matmul(w2, xs.reshape(n, cin, hout * wout)).reshape(n, cout, hout, wout)
    xp = _pad(x, ph, pw)
    out = np.empty((n, cout, hout, wout), dtype=x.dtype)
    for b in range(n):
        for r0, r1 in _row_chunks(hout, cin * kh * kw * wout):
            cols = kernels.im2col(xp[b], kh, kw, sh, sw, r0, r1, wout)
            out[b, :, r0:r1, :] = (w2 @ cols).reshape(cout, r1 - r0, wout)
    return out


def _dense_backward(x, w, dy, sh, sw, ph, pw, need_x, need_w):
    n, cin, h, wd = x.shape
    cout, _, kh, kw = w.shape
    hout, wout = dy.shape[2:]
    w2 = w.reshape(cout, -1)
    dw = np.zeros_like(w2) if need_w else None
    if kh == 1 and kw == 1 and ph == 0 and pw == 0:
        xs = x if sh == 1 and sw == 1 else x[:, :, ::sh, ::sw]
        x3 = xs.reshape(n, cin, hout * wout)
        d3 = dy.reshape(n, cout, hout * wout)
        if need_w:
            for b in range(n):
                dw += d3[b] @ x3[b].T
        dx = None
        if need_x:
            dxs = np.matmul(w2.T, d3).reshape(n, cin, hout, wout)
            if sh == 1 and sw == 1:
                dx = dxs
            else:
                dx = np.zeros_like(x)
                dx[:, :, ::sh, ::sw][:, :, :hout, :wout] = dxs
        return dx, (dw.reshape(w.shape) if need_w else None)
    xp = _pad(x, ph, pw)
    dxp = np.zeros_like(xp) if need_x else None
    for b in range(n):
        for r0, r1 in _row_chunks(hout, cin * kh * kw * wout):
            d2 = np.ascontiguousarray(dy[b, :, r0:r1, :]).reshape(cout, -1)
            if need_w:
                cols = kernels.im2col(xp[b], kh, kw, sh, sw, r0, r1, wout)
                dw += d2 @ cols.T
            if need_x:
                dcols = np.ascontiguousarray(w2.T @ d2)
                kernels.col2im_add(dxp[b], dcols, kh, kw, sh, sw, r0, r1, wout)
    dx = None
    if need_x:
        dx = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + wd])
    return dx, (dw.reshape(w.shape) if need_w else None)


def _is_depthwise(cin, cout, groups, w):
    return groups == cin and cout == cin and w.shape[1] == 1 and groups > 1


def _conv_forward(x, w, sh, sw, ph, pw, groups, hout, wout):
    cin = x.shape[1]
    cout = w.shape[0]
    if groups == 1:
        return _dense_forward(x, w, sh, sw, ph, pw, hout, wout)
    if _is_depthwise(cin, cout, groups, w):
        xp = np.ascontiguousarray(_pad(x, ph, pw))
        return kernels.depthwise_forward(xp, np.ascontiguousarray(w[:, 0]), sh, sw, hout, wout)
    gi, go = cin // groups, cout // groups
    parts = [
        _dense_forward(np.ascontiguousarray(x[:, g * gi:(g + 1) * gi]), w[g * go:(g + 1) * go], sh, sw, ph, pw, hout, wout)
        for g in range(groups)
    ]
    return np.concatenate(parts, axis=1)


class _Conv2d(Node):
    op = "conv2d"

    def __init__(self, inputs, output, stride, pad, groups):
        super().__init__(inputs, output)
        self.stride, self.pad, self.groups = stride, pad, groups

    def backward(self, dy, needs):
        x, w, b = self.inputs
        (sh, sw), (ph, pw), groups = self.stride, self.pad, self.groups
        need_x, need_w, need_b = needs
        db = dy.sum(axis=(0, 2, 3)) if need_b else None
        cin, cout = x.shape[1], w.shape[0]
        if groups == 1:
            dx, dw = _dense_backward(x, w, dy, sh, sw, ph, pw, need_x, need_w)
        elif _is_depthwise(cin, cout, groups, w):
            xp = np.ascontiguousarray(_pad(x, ph, pw))
            dxp, dwk = kernels.depthwise_backward(xp, np.ascontiguousarray(w[:, 0]), np.ascontiguousarray(dy), sh, sw)
            h, wd = x.shape[2:]
            dx = np.ascontiguousarray(dxp[:, :, ph:ph + h, pw:pw + wd]) if need_x else None
            dw = dwk[:, None] if need_w else None
        else:
            gi, go = cin // groups, cout // groups
            dxs, dws = [], []
            for g in range(groups):
                a, c = _dense_backward(
                    np.ascontiguousarray(x[:, g * gi:(g + 1) * gi]), w[g * go:(g + 1) * go],
                    np.ascontiguousarray(dy[:, g * go:(g + 1) * go]), sh, sw, ph, pw, need_x, need_w,
                )
                dxs.append(a)
                dws.append(c)
            dx = np.concatenate(dxs, axis=1) if need_x else None
            dw = np.concatenate(dws, axis=0) if need_w else None
        return dx, dw, db


def conv2d(x, weight, bias=None, stride=1, pad=0, groups=1, label=None):
    """2-D cross-correlation with zero padding."""
    _check4(x)
    _check4(weight, "weight")
    _same_precision(x, weight, bias)
    sh, sw = _pair(stride)
    ph, pw = _pair(pad)
    groups = int(groups)
    n, cin, h, wd = x.shape
    cout, cin_g, kh, kw = weight.shape
    if groups < 1 or cin % groups or cout % groups:
        raise ShapeError(f"conv2d: channels in={cin} out={cout} not divisible by groups={groups}", dim="groups")
    if cin_g != cin // groups:
        raise ShapeError(f"conv2d: weight expects {cin_g * groups} input channels, input has {cin}", dim="cin")
    if bias is not None:
        _vec(bias, cout, "bias", "conv2d")
    if sh < 1 or sw < 1:
        raise ShapeError("conv2d: stride must be positive", dim="stride")
    hout, wout = _conv_out(h, wd, kh, kw, sh, sw, ph, pw)

    out = _conv_forward(x, weight, sh, sw, ph, pw, groups, hout, wout)
    if bias is not None:
        out += bias[None, :, None, None]
    macs = cout * cin_g * kh * kw * hout * wout * n
    _count(label, "conv2d", macs, 2 * macs + (cout * hout * wout * n if bias is not None else 0))
    _record(_Conv2d((x, weight, bias), out, (sh, sw), (ph, pw), groups))
    return out


# --------------------------------------------------------------------------
# normalisation and activations


class _BatchNorm(Node):
    op = "batchnorm"

    def __init__(self, inputs, output, eps):
        super().__init__(inputs, output)
        self.eps = eps

    def backward(self, dy, needs):
        x, gamma, beta, mean, var = self.inputs
        inv = 1.0 / np.sqrt(var + self.eps)
        dx = dy * (gamma * inv)[None, :, None, None] if needs[0] else None
        dg = np.einsum("nchw,nchw->c", dy, x - mean[None, :, None, None]) * inv if needs[1] else None
        db = dy.sum(axis=(0, 2, 3)) if needs[2] else None
        return dx, dg, db, None, None


def batchnorm(x, gamma, beta, mean, var, eps=1e-5, label=None):
    """Inference-mode batch normalisation with fixed statistics.

    ``mean`` and ``var`` are buffers: the node returns no gradient for them.
    """
    _check4(x)
    _same_precision(x, gamma, beta, mean, var)
    c = x.shape[1]
    for name, v in (("gamma", gamma), ("beta", beta), ("mean", mean), ("var", var)):
        _vec(v, c, name, "batchnorm")
    if np.any(var < 0):
        raise ValueError("batchnorm: variance must be nonnegative")
    scale = gamma / np.sqrt(var + eps)
    shift = beta - mean * scale
    out = x * scale[None, :, None, None] + shift[None, :, None, None]
    _count(label, "batchnorm", 0, 2 * out.size)
    _record(_BatchNorm((x, gamma, beta, mean, var), out, eps))
    return out


class _Relu(Node):
    op = "relu"

    def backward(self, dy, needs):
        return (dy * (self.inputs[0] > 0),)


class _Relu6(Node):
    op = "relu6"

    def backward(self, dy, needs):
        x = self.inputs[0]
        return (dy * ((x > 0) & (x < 6)),)


class _Sigmoid(Node):
    op = "sigmoid"

    def backward(self, dy, needs):
        s = self.output
        return (dy * s * (1 - s),)


def relu(x, label=None):
    _check4(x)
    out = np.maximum(x, 0)
    _count(label, "relu", 0, out.size)
    _record(_Relu((x,), out))
    return out


def relu6(x, label=None):
    _check4(x)
    out = np.clip(x, 0, 6)
    _count(label, "relu6", 0, out.size)
    _record(_Relu6((x,), out))
    return out


def sigmoid(x, label=None):
    _check4(x)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    e = np.exp(x[~pos])
    out[~pos] = e / (1.0 + e)
    _count(label, "sigmoid", 0, 4 * out.size)
    _record(_Sigmoid((x,), out))
    return out


class _Softmax(Node):
    op = "softmax_channels"

    def backward(self, dy, needs):
        s = self.output
        return (s * (dy - (dy * s).sum(axis=1, keepdims=True)),)


def softmax_channels(x, label=None):
    """Softmax across the channel axis, independently per pixel."""
    _check4(x)
    z = np.exp(x - x.max(axis=1, keepdims=True))
    out = z / z.sum(axis=1, keepdims=True)
    _count(label, "softmax_channels", 0, 4 * out.size)
    _record(_Softmax((x,), out))
    return out


# --------------------------------------------------------------------------
# structural


class _Add(Node):
    op = "add"

    def backward(self, dy, needs):
        return dy, dy


def add(a, b, label=None):
    _check4(a)
    _check4(b)
    _same_precision(a, b)
    if a.shape != b.shape:
        dim = next(i for i in range(4) if a.shape[i] != b.shape[i])
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ", dim="nchw"[dim])
    out = a + b
    _count(label, "add", 0, out.size)
    _record(_Add((a, b), out))
    return out


class _Concat(Node):
    op = "concat_channels"

    def backward(self, dy, needs):
        bounds = np.cumsum([0] + [x.shape[1] for x in self.inputs])
        return tuple(
            np.ascontiguousarray(dy[:, bounds[i]:bounds[i + 1]]) if need else None
            for i, need in enumerate(needs)
        )


def concat_channels(arrays, label=None):
    arrays = list(arrays)
    if not arrays:
        raise ShapeError("concat_channels: nothing to concatenate")
    for a in arrays:
        _check4(a)
    _same_precision(*arrays)
    n, _, h, w = arrays[0].shape
    for a in arrays[1:]:
        for dim, want, got in (("n", n, a.shape[0]), ("h", h, a.shape[2]), ("w", w, a.shape[3])):
            if want != got:
                raise ShapeError(f"concat_channels: {dim} mismatch ({want} vs {got})", dim=dim)
    out = np.concatenate(arrays, axis=1)
    _count(label, "concat_channels", 0, 0)
    _record(_Concat(arrays, out))
    return out


# --------------------------------------------------------------------------
# pooling


def _pool_out(h, w, k, s, p):
    hout = (h + 2 * p - k) // s + 1
    wout = (w + 2 * p - k) // s + 1
    if h + 2 * p < k or w + 2 * p < k:
        raise ShapeError(f"pool: window {k} larger than padded input {h + 2 * p}x{w + 2 * p}", dim="h/w")
    return hout, wout


class _MaxPool(Node):
    op = "maxpool"

    def __init__(self, inputs, output, k, s, p, arg):
        super().__init__(inputs, output)
        self.k, self.s, self.p, self.arg = k, s, p, arg

    def backward(self, dy, needs):
        x = self.inputs[0]
        h, w = x.shape[2:]
        dxp = kernels.maxpool_backward(np.ascontiguousarray(dy), self.arg, self.k, self.s, h + 2 * self.p, w + 2 * self.p)
        return (np.ascontiguousarray(dxp[:, :, self.p:self.p + h, self.p:self.p + w]),)


def maxpool(x, k, s, pad=0, label=None):
    """Max pooling; padded cells never win."""
    _check4(x)
    hout, wout = _pool_out(x.shape[2], x.shape[3], k, s, pad)
    xp = np.ascontiguousarray(_pad(x, pad, pad, value=-np.inf))
    out, arg = kernels.maxpool_forward(xp, k, s, hout, wout)
    _count(label, "maxpool", 0, k * k * out.size)
    _record(_MaxPool((x,), out, k, s, pad, arg))
    return out


class _AvgPool(Node):
    op = "avgpool"

    def __init__(self, inputs, output, k, s):
        super().__init__(inputs, output)
        self.k, self.s = k, s

    def backward(self, dy, needs):
        x = self.inputs[0]
        k, s = self.k, self.s
        hout, wout = dy.shape[2:]
        dx = np.zeros_like(x)
        g = dy / (k * k)
        for i in range(k):
            for j in range(k):
                dx[:, :, i:i + (hout - 1) * s + 1:s, j:j + (wout - 1) * s + 1:s] += g
        return (dx,)


def avgpool(x, k, s, label=None):
    _check4(x)
    hout, wout = _pool_out(x.shape[2], x.shape[3], k, s, 0)
    out = np.zeros((x.shape[0], x.shape[1], hout, wout), dtype=x.dtype)
    for i in range(k):
        for j in range(k):
            out += x[:, :, i:i + (hout - 1) * s + 1:s, j:j + (wout - 1) * s + 1:s]
    out /= k * k
    _count(label, "avgpool", 0, k * k * out.size)
    _record(_AvgPool((x,), out, k, s))
    return out


class _GlobalAvgPool(Node):
    op = "global_avgpool"

    def backward(self, dy, needs):
        x = self.inputs[0]
        h, w = x.shape[2:]
        return (np.broadcast_to(dy / (h * w), x.shape).copy(),)


def global_avgpool(x, label=None):
    _check4(x)
    out = x.mean(axis=(2, 3), keepdims=True)
    _count(label, "global_avgpool", 0, x.shape[2] * x.shape[3] * out.size)
    _record(_GlobalAvgPool((x,), out))
    return out


# --------------------------------------------------------------------------
# resampling and fusion


class _Resize(Node):
    op = "resize_bilinear"

    def backward(self, dy, needs):
        x = self.inputs[0]
        if dy.shape == x.shape:
            return (dy.copy(),)
        return (kernels.resize_backward(np.ascontiguousarray(dy), x.shape[2], x.shape[3]),)


def resize_bilinear(x, out_h, out_w, label=None):
    """Bilinear resampling with half-pixel centres (``align_corners=False``)."""
    _check4(x)
    out_h, out_w = int(out_h), int(out_w)
    if out_h < 1 or out_w < 1:
        raise ShapeError(f"resize_bilinear: output size {out_h}x{out_w} must be positive", dim="h/w")
    if (out_h, out_w) == x.shape[2:]:
        out = x.copy()
    else:
        out = kernels.resize_forward(np.ascontiguousarray(x), out_h, out_w)
    _count(label, "resize_bilinear", 0, 8 * out.size)
    _record(_Resize((x,), out))
    return out


def merge_coefficients(weights, eps=1e-4):
    """Fast normalised fusion coefficients ``relu(w_i) / (eps + sum_j relu(w_j))``."""
    r = np.maximum(weights, 0)
    return r / (eps + r.sum())


class _WeightedMerge(Node):
    op = "weighted_merge"

    def __init__(self, inputs, output, eps):
        super().__init__(inputs, output)
        self.eps = eps

    def backward(self, dy, needs):
        *xs, w = self.inputs
        r = np.maximum(w, 0)
        denom = self.eps + r.sum()
        coef = r / denom
        grads = [dy * coef[i] if needs[i] else None for i in range(len(xs))]
        dw = None
        if needs[-1]:
            dcoef = np.array([np.vdot(dy, x) for x in xs], dtype=w.dtype)
            dr = dcoef / denom - np.dot(dcoef, r) / denom**2
            dw = dr * (w > 0)
        return (*grads, dw)


def weighted_merge(arrays, weights, eps=1e-4, label=None):
    """Normalised nonnegative weighted sum of same-shape feature maps."""
    arrays = list(arrays)
    for a in arrays:
        _check4(a)
    _same_precision(*arrays, weights)
    if weights.ndim != 1 or weights.shape[0] != len(arrays):
        raise ShapeError(f"weighted_merge: {len(arrays)} inputs but weights of shape {weights.shape}", dim="weights")
    for a in arrays[1:]:
        if a.shape != arrays[0].shape:
            raise ShapeError(f"weighted_merge: shapes {arrays[0].shape} and {a.shape} differ", dim="shape")
    coef = merge_coefficients(weights, eps)
    out = arrays[0] * coef[0]
    for a, c in zip(arrays[1:], coef[1:]):
        out += a * c
    m = len(arrays)
    _count(label, "weighted_merge", 0, (2 * m - 1) * out.size + 3 * m)
    _record(_WeightedMerge((*arrays, weights), out, eps))
    return out


# --------------------------------------------------------------------------
# non-differentiable


class _NonDifferentiable(Node):
    differentiable = False

    def __init__(self, op, inputs, output):
        super().__init__(inputs, output)
        self.op = op

    def backward(self, dy, needs):  # pragma: no cover - vjp raises first
        raise GradientError(f"{self.op} has no gradient")


def argmax_channels(x):
    """Per-pixel index of the largest channel, shape ``(n, h, w)``."""
    _check4(x)
    out = np.argmax(x, axis=1)
    _record(_NonDifferentiable("argmax_channels", (x,), out))
    return out


def threshold(x, t):
    _check4(x)
    out = (x >= t).astype(x.dtype)
    _record(_NonDifferentiable("threshold", (x,), out))
    return out
