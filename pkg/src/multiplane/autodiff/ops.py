"""Differentiable operations recorded on the active tape.

Every op computes its forward value eagerly with NumPy (dispatching the
loop-bound kernels to `multiplane.kernels`) and, when a tape is active and
an input is tracked, records a closure computing the input gradients from
the output gradient. All backward closures use fixed reduction orders, so
gradients are deterministic.

Image ops use channel-first layouts: conv/resampling work on (N, C, H, W)
batches, homography warps on single (C, H, W) slices.
"""

import numpy as np

from .. import kernels
from . import tensor as _tensor_mod
from .tensor import Tensor, active_tape


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=dtype if dtype is not None else np.float32))


def _emit(data, inputs, backward_fn, opname):
    if _tensor_mod.DEBUG_CHECKS and not np.all(np.isfinite(data)):
        raise ArithmeticError(f"{opname}: non-finite values in output")
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(tape.tracks(t) for t in inputs):
        tape.record(out, inputs, backward_fn)
    return out


def _unbroadcast(g, shape):
    """Sum a broadcast gradient back down to the operand's shape."""
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data + b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _emit(data, (a, b), bwd, "add")


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data - b.data

    def bwd(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _emit(data, (a, b), bwd, "sub")


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    data = a.data * b.data

    def bwd(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _emit(data, (a, b), bwd, "mul")


def scale(x, s):
    x = as_tensor(x)
    s = float(s)

    def bwd(g):
        return (g * s,)

    return _emit(x.data * s, (x,), bwd, "scale")


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0

    def bwd(g):
        return (g * mask,)

    return _emit(np.where(mask, x.data, 0), (x,), bwd, "relu")


def leaky_relu(x, slope=0.2):
    x = as_tensor(x)
    pos = x.data > 0

    def bwd(g):
        return (np.where(pos, g, g * np.asarray(slope, g.dtype)),)

    return _emit(np.where(pos, x.data, x.data * np.asarray(slope, x.dtype)), (x,), bwd, "leaky_relu")


def sigmoid(x):
    x = as_tensor(x)
    d = x.data
    # overflow-safe split form
    s = np.where(d >= 0, 1.0 / (1.0 + np.exp(-np.abs(d))), np.exp(-np.abs(d)) / (1.0 + np.exp(-np.abs(d))))
    s = s.astype(d.dtype)

    def bwd(g):
        return (g * s * (1.0 - s),)

    return _emit(s, (x,), bwd, "sigmoid")


def abs_(x):
    x = as_tensor(x)
    sign = np.sign(x.data)

    def bwd(g):
        return (g * sign,)

    return _emit(np.abs(x.data), (x,), bwd, "abs")


def sum_(x):
    x = as_tensor(x)

    def bwd(g):
        return (np.broadcast_to(g, x.shape).astype(x.dtype),)

    return _emit(x.data.sum(), (x,), bwd, "sum")


def mean(x):
    x = as_tensor(x)
    inv_n = 1.0 / x.size

    def bwd(g):
        return (np.broadcast_to(g * inv_n, x.shape).astype(x.dtype),)

    return _emit(x.data.mean(), (x,), bwd, "mean")


def reshape(x, shape):
    x = as_tensor(x)
    old = x.shape

    def bwd(g):
        return (g.reshape(old),)

    return _emit(x.data.reshape(shape), (x,), bwd, "reshape")


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat of an empty sequence")
    data = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    splits = np.cumsum(sizes)[:-1]

    def bwd(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(data, tuple(tensors), bwd, "concat")


def stack(tensors):
    """Stack equal-shaped tensors along a new leading axis."""
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("stack of an empty sequence")
    data = np.stack([t.data for t in tensors])

    def bwd(g):
        return tuple(g[i] for i in range(len(tensors)))

    return _emit(data, tuple(tensors), bwd, "stack")


def narrow(x, axis, start, length):
    """Contiguous slice [start, start+length) along one axis."""
    x = as_tensor(x)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(start, start + length)
    idx = tuple(idx)

    def bwd(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _emit(x.data[idx].copy(), (x,), bwd, "narrow")


def conv2d(x, weight, bias=None, padding=None, stride=1):
    """2D convolution (cross-correlation) of (N,C,H,W) with (O,C,k,k).

    Implemented as one batched im2col + GEMM; 1x1 stride-1 convolutions skip
    the unfold entirely. The unfolded columns are kept for the backward pass
    (recomputing them costs more than the memory at the sizes this package
    trains at).
    """
    x, weight = as_tensor(x), as_tensor(weight)
    if bias is not None:
        bias = as_tensor(bias)
    n, c, h, w = x.shape
    o, cw, kh, kw = weight.shape
    if kh != kw:
        raise ValueError(f"square kernels only, got {kh}x{kw}")
    k = kh
    if k % 2 != 1:
        raise ValueError(f"kernel size must be odd, got {k}")
    if cw != c:
        raise ValueError(f"channel mismatch: input has {c}, weight expects {cw}")
    if bias is not None and bias.shape != (o,):
        raise ValueError(f"bias shape {bias.shape} != ({o},)")
    pad = (k - 1) // 2 if padding is None else int(padding)
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    w2d = weight.data.reshape(o, c * k * k)
    pointwise = k == 1 and stride == 1 and pad == 0

    if pointwise:
        cols = np.ascontiguousarray(np.moveaxis(x.data, 1, 0)).reshape(c, n * h * w)
    else:
        cols = kernels.im2col_batch(x.data, k, stride, pad)
    out = np.moveaxis((w2d @ cols).reshape(o, n, oh, ow), 0, 1).copy()
    if bias is not None:
        out += bias.data[None, :, None, None]

    def bwd(g):
        g2d = np.ascontiguousarray(np.moveaxis(g, 1, 0)).reshape(o, n * oh * ow)
        gw2d = g2d @ cols.T
        gcols = w2d.T @ g2d
        if pointwise:
            gx = np.moveaxis(gcols.reshape(c, n, h, w), 0, 1).copy()
        else:
            gx = kernels.col2im_batch(gcols, n, h, w, k, stride, pad)
        gb = g.sum(axis=(0, 2, 3)) if bias is not None else None
        return gx, gw2d.reshape(weight.shape), gb

    inputs = (x, weight, bias) if bias is not None else (x, weight)
    if bias is None:
        return _emit(out, inputs, lambda g: bwd(g)[:2], "conv2d")
    return _emit(out, inputs, bwd, "conv2d")


def upsample2x(x):
    """Bilinear 2x upsampling of (N,C,H,W): even taps copy, odd taps average."""
    x = as_tensor(x)
    data = _up_axis(_up_axis(x.data, -2), -1)

    def bwd(g):
        return (_up_axis_t(_up_axis_t(g, -1), -2),)

    return _emit(data, (x,), bwd, "upsample2x")


def _up_axis(a, axis):
    a = np.moveaxis(a, axis, -1)
    n = a.shape[-1]
    out = np.empty(a.shape[:-1] + (2 * n,), dtype=a.dtype)
    out[..., 0::2] = a
    if n > 1:
        out[..., 1:-1:2] = 0.5 * (a[..., :-1] + a[..., 1:])
    out[..., -1] = a[..., -1]
    return np.moveaxis(out, -1, axis)


def _up_axis_t(g, axis):
    g = np.moveaxis(g, axis, -1)
    n = g.shape[-1] // 2
    out = g[..., 0::2].copy()
    if n > 1:
        mid = 0.5 * g[..., 1:-1:2]
        out[..., :-1] += mid
        out[..., 1:] += mid
    out[..., -1] += g[..., -1]
    return np.moveaxis(out, -1, axis)


def downsample2x(x, stride=2):
    """Strided subsampling of (N,C,H,W); keeps the top-left sample of each block."""
    x = as_tensor(x)
    s = int(stride)
    data = x.data[..., ::s, ::s].copy()

    def bwd(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., ::s, ::s] = g
        return (full,)

    return _emit(data, (x,), bwd, "downsample2x")


def pad_reflect2d(x, pad_h, pad_w):
    """Reflect-pad the bottom/right of (N,C,H,W); pads must be < dim."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    if pad_h >= h or pad_w >= w:
        raise ValueError("reflect padding must be smaller than the padded dim")
    width = [(0, 0)] * (x.ndim - 2) + [(0, pad_h), (0, pad_w)]
    data = np.pad(x.data, width, mode="reflect")

    def bwd(g):
        gh = g[..., :h, :].copy()
        for i in range(1, pad_h + 1):
            gh[..., h - 1 - i, :] += g[..., h - 1 + i, :]
        gw = gh[..., :, :w].copy()
        for j in range(1, pad_w + 1):
            gw[..., :, w - 1 - j] += gh[..., :, w - 1 + j]
        return (gw,)

    return _emit(data, (x,), bwd, "pad_reflect2d")


def crop2d(x, h, w):
    """Crop (N,C,H,W) to its top-left (h, w) window."""
    x = as_tensor(x)

    def bwd(g):
        full = np.zeros(x.shape, dtype=g.dtype)
        full[..., :h, :w] = g
        return (full,)

    return _emit(x.data[..., :h, :w].copy(), (x,), bwd, "crop2d")


def warp(x, mat, out_h, out_w):
    """Homography gather-warp of (C,H,W); differentiable w.r.t. pixel values.

    `mat` maps output pixel (x, y, 1) to a source pixel location; content
    mapping outside the source (or behind it) comes out zero. The matrix is
    a plain array, never differentiated: poses are inputs, not parameters.
    """
    x = as_tensor(x)
    if x.ndim != 3:
        raise ValueError(f"warp expects (C,H,W), got {x.shape}")
    h, w = x.shape[-2:]
    mat = np.asarray(mat, dtype=np.float64)
    data = kernels.warp_forward(x.data, mat, out_h, out_w)

    def bwd(g):
        return (kernels.warp_backward(g, mat, h, w),)

    return _emit(data, (x,), bwd, "warp")


def warp_multi(x, indices, mats, out_h, out_w):
    """Batch of homography gather-warps over a stack of source slices.

    x (V, C, H, W); output slice s reads x[indices[s]] through mats[s],
    giving (S, C, out_h, out_w). One graph node for a whole sweep volume;
    gradients scatter-add back per source slice in a fixed order.
    """
    x = as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"warp_multi expects (V,C,H,W), got {x.shape}")
    v, _, h, w = x.shape
    indices = np.asarray(indices, dtype=np.int64)
    mats = np.asarray(mats, dtype=np.float64)
    if indices.min() < 0 or indices.max() >= v:
        raise ValueError("warp_multi slice index out of range")
    if mats.shape != (len(indices), 3, 3):
        raise ValueError(f"need one 3x3 matrix per slice, got {mats.shape}")
    data = kernels.warp_forward_multi(x.data, indices, mats, out_h, out_w)

    def bwd(g):
        return (kernels.warp_backward_multi(g, indices, mats, v, h, w),)

    return _emit(data, (x,), bwd, "warp_multi")


def l1_loss(pred, target, mask=None):
    """Mean absolute error; optional mask weights (masked-out pixels get
    exactly zero gradient). Normalized by mask sum, not element count."""
    pred = as_tensor(pred)
    target = as_tensor(target)
    diff = abs_(sub(pred, target))
    if mask is None:
        return mean(diff)
    mask = as_tensor(mask)
    denom = float(mask.data.sum()) * (diff.size / mask.size)
    if denom <= 0:
        raise ValueError("loss mask is empty")
    return scale(sum_(mul(diff, mask)), 1.0 / denom)
