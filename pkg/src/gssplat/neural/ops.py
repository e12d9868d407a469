"""Differentiable operators. Images are channels-last: N x H x W x C."""
from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ..errors import ContractError
from .tensor import Tensor, as_tensor, make


def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


# --- elementwise ---------------------------------------------------------------------

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data + b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data - b.data, (a, b),
                lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    return make(a.data * b.data, (a, b),
                lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    out = a.data / b.data
    return make(out, (a, b), lambda g: (_unbroadcast(g / b.data, a.shape),
                                        _unbroadcast(-g * out / b.data, b.shape)))


def exp(x):
    out = np.exp(x.data)
    return make(out, (x,), lambda g: (g * out,))


def log(x):
    return make(np.log(x.data), (x,), lambda g: (g / x.data,))


def abs(x):  # noqa: A001 - mirrors numpy naming
    return make(np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def square(x):
    return make(x.data * x.data, (x,), lambda g: (2.0 * g * x.data,))


def relu(x):
    mask = x.data > 0
    return make(x.data * mask, (x,), lambda g: (g * mask,))


def sigmoid(x):
    out = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return make(out, (x,), lambda g: (g * out * (1.0 - out),))


def tanh(x):
    out = np.tanh(x.data)
    return make(out, (x,), lambda g: (g * (1.0 - out * out),))


def clip(x, lo, hi):
    """Clamp with zero gradient outside ``(lo, hi)``."""
    inside = (x.data > lo) & (x.data < hi)
    return make(np.clip(x.data, lo, hi), (x,), lambda g: (g * inside,))


def smooth_l1(x, beta=1.0):
    """Elementwise Huber-style penalty: 0.5 e²/β below β, |e| - 0.5β above."""
    e = x.data
    small = np.abs(e) < beta
    out = np.where(small, 0.5 * e * e / beta, np.abs(e) - 0.5 * beta)
    return make(out, (x,), lambda g: (g * np.where(small, e / beta, np.sign(e)),))


# --- reductions & shape ----------------------------------------------------------------

def sum(x, axis=None, keepdims=False):  # noqa: A001
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape).copy(),)

    return make(out, (x,), backward)


def mean(x, axis=None, keepdims=False):
    count = x.data.size if axis is None else np.prod([x.shape[a] for a in np.atleast_1d(axis)])
    return mul(sum(x, axis, keepdims), 1.0 / count)


def reshape(x, shape):
    return make(x.data.reshape(shape), (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes):
    inv = np.argsort(axes)
    return make(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def _is_basic(index):
    items = index if isinstance(index, tuple) else (index,)
    return all(isinstance(i, (slice, int, type(Ellipsis), type(None))) for i in items)


def getitem(x, index):
    basic = _is_basic(index)

    def backward(g):
        out = np.zeros_like(x.data)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make(x.data[index], (x,), backward)


def gather_rows(x, index):
    """``x[index]`` for a 1-D integer index over the first axis."""
    index = np.asarray(index, dtype=np.int64)

    def backward(g):
        out = np.zeros_like(x.data)
        np.add.at(out, index, g)
        return (out,)

    return make(x.data[index], (x,), backward)


def concat(tensors, axis=-1):
    tensors = [as_tensor(t) for t in tensors]
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]
    return make(np.concatenate([t.data for t in tensors], axis=axis), tensors,
                lambda g: tuple(np.split(g, splits, axis=axis)))


# --- linear algebra --------------------------------------------------------------------

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)

    def backward(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make(a.data @ b.data, (a, b), backward)


def linear(x, weight, bias=None):
    """``x @ W + b`` over the last axis; ``W`` is Cin x Cout."""
    if x.shape[-1] != weight.shape[0]:
        raise ContractError(f"linear: input has {x.shape[-1]} features, weight expects "
                            f"{weight.shape[0]}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, x.shape[-1])
    out = x2 @ weight.data
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, weight.shape[1])
        grads = [(g2 @ weight.data.T).reshape(x.shape), x2.T @ g2]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out.reshape(lead + (weight.shape[1],)), parents, backward)


def softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)
    return make(out, (x,), lambda g: (out * (g - (g * out).sum(axis=axis, keepdims=True)),))


def log_softmax(x, axis=-1):
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    out = z - lse
    p = np.exp(out)
    return make(out, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def self_attention(x, wq, wk, wv, bq=None, bk=None, bv=None):
    """Scaled dot-product self-attention over tokens: x is N x T x C, returns N x T x Cv."""
    if x.ndim != 3:
        raise ContractError("self_attention expects N x T x C tokens")
    q = linear(x, wq, bq)
    k = linear(x, wk, bk)
    v = linear(x, wv, bv)
    scores = mul(matmul(q, transpose(k, (0, 2, 1))), 1.0 / np.sqrt(q.shape[-1]))
    return matmul(softmax(scores, axis=-1), v)


# --- images ----------------------------------------------------------------------------

def conv2d(x, weight, bias=None, stride=1):
    """'Same'-padded 2-D convolution. x: N x H x W x Cin, weight: kh x kw x Cin x Cout."""
    if stride not in (1, 2):
        raise ContractError("conv2d supports stride 1 or 2")
    if x.ndim != 4 or weight.ndim != 4 or x.shape[3] != weight.shape[2]:
        raise ContractError(f"conv2d shape mismatch: input {x.shape}, weight {weight.shape}")
    kh, kw, cin, cout = weight.shape
    ph, pw = kh // 2, kw // 2
    n, h, w, _ = x.shape
    xp = np.pad(x.data, ((0, 0), (ph, ph), (pw, pw), (0, 0)))
    ho = (h + 2 * ph - kh) // stride + 1
    wo = (w + 2 * pw - kw) // stride + 1
    win = sliding_window_view(xp, (kh, kw), axis=(1, 2))[:, ::stride, ::stride][:, :ho, :wo]
    cols = np.ascontiguousarray(win.transpose(0, 1, 2, 4, 5, 3)).reshape(-1, kh * kw * cin)
    w2 = weight.data.reshape(kh * kw * cin, cout)
    out = cols @ w2
    if bias is not None:
        out = out + bias.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.T @ g2).reshape(weight.shape)
        gcols = (g2 @ w2.T).reshape(n, ho, wo, kh, kw, cin)
        gxp = np.zeros_like(xp)
        for i in range(kh):
            for j in range(kw):
                gxp[:, i:i + stride * ho:stride, j:j + stride * wo:stride] += gcols[:, :, :, i, j]
        gx = gxp[:, ph:ph + h, pw:pw + w]
        grads = [gx, gw]
        if bias is not None:
            grads.append(g2.sum(axis=0))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return make(out.reshape(n, ho, wo, cout), parents, backward)


def group_norm(x, groups, gamma=None, beta=None, eps=1e-5):
    """Group normalisation over (H, W, C/groups) of an N x H x W x C tensor."""
    n, h, w, c = x.shape
    if c % groups:
        raise ContractError(f"{c} channels not divisible into {groups} groups")
    xg = x.data.reshape(n, h, w, groups, c // groups)
    mu = xg.mean(axis=(1, 2, 4), keepdims=True)
    var = xg.var(axis=(1, 2, 4), keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = ((xg - mu) * inv).reshape(n, h, w, c)
    out = xhat
    if gamma is not None:
        out = out * gamma.data
    if beta is not None:
        out = out + beta.data
    m = h * w * (c // groups)

    def backward(g):
        dxhat = g * gamma.data if gamma is not None else g
        dg = dxhat.reshape(n, h, w, groups, c // groups)
        xh = xhat.reshape(dg.shape)
        s1 = dg.sum(axis=(1, 2, 4), keepdims=True)
        s2 = (dg * xh).sum(axis=(1, 2, 4), keepdims=True)
        dx = (inv / m) * (m * dg - s1 - xh * s2)
        grads = [dx.reshape(x.shape)]
        if gamma is not None:
            grads.append((g * xhat).sum(axis=(0, 1, 2)))
        if beta is not None:
            grads.append(g.sum(axis=(0, 1, 2)))
        return grads

    parents = [x] + [t for t in (gamma, beta) if t is not None]
    return make(out, parents, backward)


def _upsample_matrix(n):
    """Linear-interpolation matrix (2n x n), half-pixel centres, edge clamped."""
    m = np.zeros((2 * n, n))
    for i in range(2 * n):
        src = (i + 0.5) / 2.0 - 0.5
        s0 = int(np.floor(src))
        frac = src - s0
        for idx, wgt in ((s0, 1.0 - frac), (s0 + 1, frac)):
            m[i, min(max(idx, 0), n - 1)] += wgt
    return m


def upsample2x(x):
    """Bilinear ×2 upsampling of N x H x W x C."""
    uh = _upsample_matrix(x.shape[1])
    uw = _upsample_matrix(x.shape[2])
    out = np.einsum("ah,nhwc->nawc", uh, x.data)
    out = np.einsum("bw,nawc->nabc", uw, out)

    def backward(g):
        gx = np.einsum("bw,nabc->nawc", uw, g)
        return (np.einsum("ah,nawc->nhwc", uh, gx),)

    return make(out, (x,), backward)


def normalize_rows(x, eps=1e-8, fallback=None):
    """Row-wise unit normalisation; rows with norm below ``eps`` become ``fallback``."""
    norm = np.linalg.norm(x.data, axis=-1, keepdims=True)
    ok = norm > eps
    safe = np.where(ok, norm, 1.0)
    unit = x.data / safe
    fb = np.zeros(x.shape[-1]) if fallback is None else np.asarray(fallback, dtype=np.float64)
    out = np.where(ok, unit, fb)

    def backward(g):
        proj = (g * unit).sum(axis=-1, keepdims=True)
        return (np.where(ok, (g - unit * proj) / safe, 0.0),)

    return make(out, (x,), backward)


def segment_mean(x, segments, n_segments=None):
    """Per-row mean of the rows sharing the same segment id, broadcast back to rows."""
    segments = np.asarray(segments, dtype=np.int64)
    if n_segments is None:
        n_segments = int(segments.max()) + 1 if segments.size else 0
    counts = np.bincount(segments, minlength=n_segments).astype(np.float64)
    sums = np.zeros((n_segments,) + x.shape[1:])
    np.add.at(sums, segments, x.data)
    means = sums / np.maximum(counts, 1.0).reshape((-1,) + (1,) * (x.ndim - 1))
    out = means[segments]

    def backward(g):
        gs = np.zeros_like(sums)
        np.add.at(gs, segments, g)
        gs /= np.maximum(counts, 1.0).reshape((-1,) + (1,) * (x.ndim - 1))
        return (gs[segments],)

    return make(out, (x,), backward)


def stop_gradient(x):
    return Tensor(x.data)
