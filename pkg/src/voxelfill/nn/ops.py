"""Differentiable primitives over Grids.

The op set is intentionally closed: elementwise arithmetic and
activations, reductions, reshape/transpose/concat/pad/crop, matmul,
softmax, strided N-D convolution and its transpose, and the composed
normalization / attention helpers the models need. Convolutions use
stride-tricks windowing plus tensordot; their input gradients scatter
per kernel offset.
"""

import math

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy import special

from ..errors import ShapeMismatch
from .grid import Grid, make_node

_INV_SQRT2 = 1.0 / math.sqrt(2.0)
_INV_SQRT2PI = 1.0 / math.sqrt(2.0 * math.pi)


def _coerce(x) -> Grid:
    return x if isinstance(x, Grid) else Grid(np.asarray(x))


def _unbroadcast(grad: np.ndarray, shape) -> np.ndarray:
    """Sum a broadcast gradient back down to the original operand shape."""
    if grad.shape == tuple(shape):
        return grad
    extra = grad.ndim - len(shape)
    if extra > 0:
        grad = grad.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad


# ---------------------------------------------------------------- elementwise

def add(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(_unbroadcast(g, b.shape))

    return make_node(a.data + b.data, (a, b), bwd)


def sub(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        a.accumulate(_unbroadcast(g, a.shape))
        b.accumulate(-_unbroadcast(g, b.shape))

    return make_node(a.data - b.data, (a, b), bwd)


def mul(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        a.accumulate(_unbroadcast(g * b.data, a.shape))
        b.accumulate(_unbroadcast(g * a.data, b.shape))

    return make_node(a.data * b.data, (a, b), bwd)


def div(a, b) -> Grid:
    a, b = _coerce(a), _coerce(b)

    def bwd(g):
        a.accumulate(_unbroadcast(g / b.data, a.shape))
        b.accumulate(_unbroadcast(-g * a.data / (b.data * b.data), b.shape))

    return make_node(a.data / b.data, (a, b), bwd)


def neg(a) -> Grid:
    a = _coerce(a)
    return make_node(-a.data, (a,), lambda g: a.accumulate(-g))


def exp(a) -> Grid:
    a = _coerce(a)
    out_data = np.exp(a.data)
    return make_node(out_data, (a,), lambda g: a.accumulate(g * out_data))


def log(a) -> Grid:
    a = _coerce(a)
    return make_node(np.log(a.data), (a,), lambda g: a.accumulate(g / a.data))


def sqrt(a) -> Grid:
    a = _coerce(a)
    out_data = np.sqrt(a.data)
    return make_node(out_data, (a,), lambda g: a.accumulate(g * 0.5 / out_data))


def absolute(a) -> Grid:
    a = _coerce(a)
    return make_node(np.abs(a.data), (a,), lambda g: a.accumulate(g * np.sign(a.data)))


def relu(a) -> Grid:
    a = _coerce(a)
    mask = a.data > 0
    return make_node(np.where(mask, a.data, 0.0), (a,), lambda g: a.accumulate(g * mask))


def leaky_relu(a, slope: float = 0.2) -> Grid:
    a = _coerce(a)
    scale = np.where(a.data > 0, 1.0, slope)
    return make_node(a.data * scale, (a,), lambda g: a.accumulate(g * scale))


def tanh(a) -> Grid:
    a = _coerce(a)
    out_data = np.tanh(a.data)
    return make_node(out_data, (a,), lambda g: a.accumulate(g * (1.0 - out_data * out_data)))


def sigmoid(a) -> Grid:
    a = _coerce(a)
    out_data = special.expit(a.data)
    return make_node(out_data, (a,), lambda g: a.accumulate(g * out_data * (1.0 - out_data)))


def gelu(a) -> Grid:
    """Exact erf-based GELU: x * Phi(x)."""
    a = _coerce(a)
    phi = 0.5 * (1.0 + special.erf(a.data * _INV_SQRT2))

    def bwd(g):
        pdf = _INV_SQRT2PI * np.exp(-0.5 * a.data * a.data)
        a.accumulate(g * (phi + a.data * pdf))

    return make_node(a.data * phi, (a,), bwd)


# ----------------------------------------------------------------- reductions

def sum_(a, axis=None, keepdims: bool = False) -> Grid:
    a = _coerce(a)
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def bwd(g):
        if axis is None:
            a.accumulate(np.broadcast_to(g, a.shape).copy())
            return
        if not keepdims:
            axes = axis if isinstance(axis, tuple) else (axis,)
            g = np.expand_dims(g, axes)
        a.accumulate(np.broadcast_to(g, a.shape).copy())

    return make_node(out_data, (a,), bwd)


def mean(a, axis=None, keepdims: bool = False) -> Grid:
    a = _coerce(a)
    if axis is None:
        n = a.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        n = int(np.prod([a.shape[ax] for ax in axes]))
    return mul(sum_(a, axis=axis, keepdims=keepdims), 1.0 / n)


# -------------------------------------------------------------- shape change

def reshape(a, shape) -> Grid:
    a = _coerce(a)
    return make_node(a.data.reshape(shape), (a,),
                     lambda g: a.accumulate(g.reshape(a.shape)))


def transpose(a, axes) -> Grid:
    a = _coerce(a)
    inverse = np.argsort(axes)
    return make_node(np.transpose(a.data, axes), (a,),
                     lambda g: a.accumulate(np.transpose(g, inverse)))


def concat(grids, axis: int = 1) -> Grid:
    grids = [_coerce(g) for g in grids]
    sizes = [g.shape[axis] for g in grids]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        for piece, grid in zip(np.split(g, splits, axis=axis), grids):
            grid.accumulate(piece)

    return make_node(np.concatenate([g.data for g in grids], axis=axis), tuple(grids), bwd)


def pad(a, pad_width) -> Grid:
    """Zero padding; pad_width is a per-axis (low, high) list."""
    a = _coerce(a)
    inner = tuple(slice(lo, lo + n) for (lo, _), n in zip(pad_width, a.shape))
    return make_node(np.pad(a.data, pad_width), (a,),
                     lambda g: a.accumulate(g[inner]))


def crop(a, slices) -> Grid:
    """Slice out a sub-block; gradient zero-pads back to the input shape."""
    a = _coerce(a)
    slices = tuple(slices)

    def bwd(g):
        full = np.zeros_like(a.data)
        full[slices] = g
        a.accumulate(full)

    return make_node(a.data[slices].copy(), (a,), bwd)


# -------------------------------------------------------------------- matmul

def matmul(a, b) -> Grid:
    """Batched matrix product; both operands must be at least rank 2."""
    a, b = _coerce(a), _coerce(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeMismatch("matmul operands must have rank >= 2")

    def bwd(g):
        a.accumulate(_unbroadcast(np.matmul(g, np.swapaxes(b.data, -1, -2)), a.shape))
        b.accumulate(_unbroadcast(np.matmul(np.swapaxes(a.data, -1, -2), g), b.shape))

    return make_node(np.matmul(a.data, b.data), (a, b), bwd)


def softmax(a, axis: int = -1) -> Grid:
    a = _coerce(a)
    shifted = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    out_data = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        dot = (g * out_data).sum(axis=axis, keepdims=True)
        a.accumulate(out_data * (g - dot))

    return make_node(out_data, (a,), bwd)


# -------------------------------------------------------------- convolutions

def _norm_tuple(value, rank: int):
    if isinstance(value, (tuple, list)):
        if len(value) != rank:
            raise ShapeMismatch(f"expected {rank} entries, got {value}")
        return tuple(int(v) for v in value)
    return (int(value),) * rank


def _conv_windows(xp: np.ndarray, ksize, stride):
    """Strided sliding windows: (N, C, *out_spatial, *ksize), a view."""
    win = sliding_window_view(xp, ksize, axis=tuple(range(2, xp.ndim)))
    sel = (slice(None), slice(None)) + tuple(slice(None, None, s) for s in stride)
    return win[sel]


def conv(x, kernel, bias=None, stride=1, padding=0) -> Grid:
    """N-D cross-correlation for 2 or 3 spatial axes.

    x: (N, C_in, *spatial); kernel: (C_out, C_in, *k); output spatial extent
    is floor((in + 2*pad - k) / stride) + 1 per axis.
    """
    x, kernel = _coerce(x), _coerce(kernel)
    rank = kernel.ndim - 2
    if rank not in (2, 3) or x.ndim != kernel.ndim:
        raise ShapeMismatch(f"conv rank must be 2 or 3; x {x.shape}, kernel {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeMismatch(f"channel mismatch: input {x.shape[1]}, kernel {kernel.shape[1]}")
    stride = _norm_tuple(stride, rank)
    padding = _norm_tuple(padding, rank)
    if min(stride) < 1:
        raise ShapeMismatch(f"stride must be >= 1, got {stride}")
    ksize = kernel.shape[2:]
    for n, p, k in zip(x.shape[2:], padding, ksize):
        if n + 2 * p < k:
            raise ShapeMismatch(f"kernel {ksize} larger than padded input {x.shape[2:]}")

    pad_width = [(0, 0), (0, 0)] + [(p, p) for p in padding]
    xp = np.pad(x.data, pad_width) if any(padding) else x.data
    windows = _conv_windows(xp, ksize, stride)
    # windows: (N, Cin, *out, *k); contract Cin and kernel axes
    win_axes = (1,) + tuple(range(2 + rank, 2 + 2 * rank))
    ker_axes = (1,) + tuple(range(2, 2 + rank))
    out_data = np.tensordot(windows, kernel.data, axes=(win_axes, ker_axes))
    out_data = np.moveaxis(out_data, -1, 1)  # (N, Cout, *out)
    if bias is not None:
        bias = _coerce(bias)
        out_data = out_data + bias.data.reshape((1, -1) + (1,) * rank)

    out_spatial = out_data.shape[2:]
    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        # kernel: contract batch and output positions against the windows
        contract = (0,) + tuple(range(2, 2 + rank))
        kernel.accumulate(np.tensordot(g, windows, axes=(contract, contract)))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0,) + tuple(range(2, 2 + rank))))
        if not x._wants_grad():
            return
        gp = np.zeros_like(xp)
        for idx in np.ndindex(*ksize):
            w = kernel.data[(slice(None), slice(None)) + idx]  # (Cout, Cin)
            contrib = np.moveaxis(np.tensordot(g, w, axes=((1,), (0,))), -1, 1)
            target = (slice(None), slice(None)) + tuple(
                slice(i, i + s * o, s) for i, s, o in zip(idx, stride, out_spatial)
            )
            gp[target] += contrib
        if any(padding):
            inner = (slice(None), slice(None)) + tuple(
                slice(p, p + n) for p, n in zip(padding, x.shape[2:])
            )
            gp = gp[inner]
        x.accumulate(gp)

    return make_node(out_data, parents, bwd)


def transpose_conv(x, kernel, bias=None, stride=1, padding=0) -> Grid:
    """Transposed convolution (the gradient of conv w.r.t. its input).

    x: (N, C_in, *spatial); kernel: (C_in, C_out, *k); output spatial extent
    is (in - 1)*stride + k - 2*pad per axis.
    """
    x, kernel = _coerce(x), _coerce(kernel)
    rank = kernel.ndim - 2
    if rank not in (2, 3) or x.ndim != kernel.ndim:
        raise ShapeMismatch(f"transpose_conv rank must be 2 or 3; x {x.shape}, kernel {kernel.shape}")
    if x.shape[1] != kernel.shape[0]:
        raise ShapeMismatch(f"channel mismatch: input {x.shape[1]}, kernel {kernel.shape[0]}")
    stride = _norm_tuple(stride, rank)
    padding = _norm_tuple(padding, rank)
    ksize = kernel.shape[2:]
    in_spatial = x.shape[2:]
    full_spatial = tuple((n - 1) * s + k for n, s, k in zip(in_spatial, stride, ksize))
    out_spatial = tuple(f - 2 * p for f, p in zip(full_spatial, padding))
    if min(out_spatial) < 1:
        raise ShapeMismatch(f"padding {padding} consumes the whole output {full_spatial}")

    cout = kernel.shape[1]
    full = np.zeros((x.shape[0], cout) + full_spatial, dtype=x.data.dtype)
    for idx in np.ndindex(*ksize):
        w = kernel.data[(slice(None), slice(None)) + idx]  # (Cin, Cout)
        contrib = np.moveaxis(np.tensordot(x.data, w, axes=((1,), (0,))), -1, 1)
        target = (slice(None), slice(None)) + tuple(
            slice(i, i + s * n, s) for i, s, n in zip(idx, stride, in_spatial)
        )
        full[target] += contrib
    inner = (slice(None), slice(None)) + tuple(
        slice(p, f - p) for p, f in zip(padding, full_spatial)
    )
    out_data = full[inner]
    if any(padding):
        out_data = out_data.copy()
    if bias is not None:
        bias = _coerce(bias)
        out_data = out_data + bias.data.reshape((1, -1) + (1,) * rank)

    parents = (x, kernel) if bias is None else (x, kernel, bias)

    def bwd(g):
        pad_width = [(0, 0), (0, 0)] + [(p, p) for p in padding]
        gf = np.pad(g, pad_width) if any(padding) else g
        windows = _conv_windows(gf, ksize, stride)  # (N, Cout, *in, *k)
        win_axes = (1,) + tuple(range(2 + rank, 2 + 2 * rank))
        ker_axes = (1,) + tuple(range(2, 2 + rank))
        x.accumulate(np.moveaxis(
            np.tensordot(windows, kernel.data, axes=(win_axes, ker_axes)), -1, 1))
        contract = (0,) + tuple(range(2, 2 + rank))
        kernel.accumulate(np.tensordot(x.data, windows, axes=(contract, contract)))
        if bias is not None:
            bias.accumulate(g.sum(axis=(0,) + tuple(range(2, 2 + rank))))

    return make_node(out_data, parents, bwd)


# ------------------------------------------------------- composed operations

def normalize(x, axes, gain=None, shift=None, eps: float = 1e-5) -> Grid:
    """Zero-mean unit-std over the given axes, then optional affine."""
    m = mean(x, axis=axes, keepdims=True)
    centered = sub(x, m)
    var = mean(mul(centered, centered), axis=axes, keepdims=True)
    out = div(centered, sqrt(add(var, eps)))
    if gain is not None:
        out = mul(out, gain)
    if shift is not None:
        out = add(out, shift)
    return out


def instance_norm(x, gain, shift, eps: float = 1e-5) -> Grid:
    """Per (sample, channel) spatial standardization with learnable affine.

    gain/shift are rank-1 per-channel parameters.
    """
    rank = x.ndim - 2
    view = (1, -1) + (1,) * rank
    return normalize(x, tuple(range(2, x.ndim)),
                     reshape(gain, view), reshape(shift, view), eps)


def self_attention(x, wq, wk, wv, wo, heads: int = 1, return_weights: bool = False):
    """Multi-head scaled dot-product attention over (N, tokens, dim)."""
    x = _coerce(x)
    n, t, d = x.shape
    if d % heads:
        raise ShapeMismatch(f"dim {d} not divisible by {heads} heads")
    dh = d // heads

    def split(m):  # (N, T, D) -> (N, h, T, dh)
        return transpose(reshape(m, (n, t, heads, dh)), (0, 2, 1, 3))

    q, k, v = split(matmul(x, wq)), split(matmul(x, wk)), split(matmul(x, wv))
    scores = mul(matmul(q, transpose(k, (0, 1, 3, 2))), 1.0 / math.sqrt(dh))
    attn = softmax(scores, axis=-1)
    ctx = matmul(attn, v)  # (N, h, T, dh)
    merged = reshape(transpose(ctx, (0, 2, 1, 3)), (n, t, d))
    out = matmul(merged, wo)
    if return_weights:
        return out, attn.data
    return out


# Operator sugar on Grid.
Grid.__add__ = add
Grid.__radd__ = lambda a, b: add(b, a)
Grid.__sub__ = sub
Grid.__rsub__ = lambda a, b: sub(b, a)
Grid.__mul__ = mul
Grid.__rmul__ = lambda a, b: mul(b, a)
Grid.__truediv__ = div
Grid.__neg__ = neg
Grid.sum = sum_
Grid.mean = mean
Grid.reshape = reshape
