"""Backend selection for the hot inner-loop kernels.

At import time the compiled extension `_native` is preferred; the NumPy
reference implementation is used when the extension is missing or when the
environment variable MULTIPLANE_NO_NATIVE is set to a non-empty value.
Both backends implement the same contract (see `reference`); `BACKEND`
records which one is active.
"""

import os

import numpy as np

from . import reference

if os.environ.get("MULTIPLANE_NO_NATIVE"):
    _impl = reference
    BACKEND = "reference"
else:
    try:
        from . import _native as _impl  # type: ignore[no-redef]

        BACKEND = "native"
    except ImportError:
        _impl = reference
        BACKEND = "reference"


def _c(a, dtype=None):
    return np.ascontiguousarray(a, dtype=dtype)


def warp_forward(src, mat, out_h, out_w):
    """Gather-warp src (C,H,W) through a 3x3 pixel map; zeros outside."""
    return _impl.warp_forward(_c(src), _c(mat, np.float64), int(out_h), int(out_w))


def warp_backward(grad_out, mat, src_h, src_w):
    """Scatter-add transpose of warp_forward onto a (C,src_h,src_w) buffer."""
    return _impl.warp_backward(_c(grad_out), _c(mat, np.float64), int(src_h), int(src_w))


def warp_forward_multi(src, indices, mats, out_h, out_w):
    """Warp a (S,)-indexed stack of (N,C,H,W) slices, one matrix per slice."""
    idx = _c(indices, np.int64)
    return _impl.warp_forward_multi(_c(src), idx, _c(mats, np.float64), int(out_h), int(out_w))


def warp_backward_multi(grad_out, indices, mats, n_src, src_h, src_w):
    """Scatter-add transpose of warp_forward_multi onto (n_src,C,H,W)."""
    idx = _c(indices, np.int64)
    return _impl.warp_backward_multi(_c(grad_out), idx, _c(mats, np.float64), int(n_src), int(src_h), int(src_w))


def im2col(x, k, stride=1, pad=0):
    """Unfold (C,H,W) into (C*k*k, oh*ow) columns, zero padding."""
    return _impl.im2col(_c(x), int(k), int(stride), int(pad))


def col2im(cols, h, w, k, stride=1, pad=0):
    """Fold columns back to (C,H,W), accumulating overlapping taps."""
    return _impl.col2im(_c(cols), int(h), int(w), int(k), int(stride), int(pad))


def im2col_batch(x, k, stride=1, pad=0):
    """Unfold (N,C,H,W) into (C*k*k, N*oh*ow) columns, sample-major blocks."""
    return _impl.im2col_batch(_c(x), int(k), int(stride), int(pad))


def col2im_batch(cols, n, h, w, k, stride=1, pad=0):
    """Fold batched columns back to (N,C,H,W)."""
    return _impl.col2im_batch(_c(cols), int(n), int(h), int(w), int(k), int(stride), int(pad))
