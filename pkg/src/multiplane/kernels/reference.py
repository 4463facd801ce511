"""NumPy reference implementations of the hot inner-loop kernels.

These are the semantics of record: the compiled extension in `_native.pyx`
must agree with them (tests enforce parity). They are selected automatically
when the extension is unavailable or when MULTIPLANE_NO_NATIVE=1.

Conventions shared by both backends:

  * Images are channel-first (C, H, W), float32 or float64.
  * Warps use gather semantics: output pixel (x, y) reads the source at the
    homogeneous-normalized location mat @ (x, y, 1), bilinear interpolation,
    zero outside the source bounds. Non-positive homogeneous denominators
    also produce zero (content behind the camera).
  * Pixel centers sit at integer coordinates, origin at the top-left pixel
    center.
"""

import numpy as np

_W_EPS = 1e-12


def warp_forward(src, mat, out_h, out_w):
    """Projective bilinear gather. src (C,H,W), mat 3x3 -> (C,out_h,out_w)."""
    c, h, w = src.shape
    xs = np.arange(out_w, dtype=np.float64)
    ys = np.arange(out_h, dtype=np.float64)
    gx, gy, gw = _grid(mat, xs, ys)
    valid_w = gw > _W_EPS
    gw = np.where(valid_w, gw, 1.0)
    gx = gx / gw
    gy = gy / gw

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = (gx - x0).astype(src.dtype)
    fy = (gy - y0).astype(src.dtype)

    out = np.zeros((c, out_h, out_w), dtype=src.dtype)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = valid_w & (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            wgt = np.where(dx == 1, fx, 1.0 - fx) * np.where(dy == 1, fy, 1.0 - fy)
            wgt = np.where(ok, wgt, 0.0).astype(src.dtype)
            xi = np.clip(xi, 0, w - 1)
            yi = np.clip(yi, 0, h - 1)
            out += wgt[None] * src[:, yi, xi]
    return out


def warp_backward(grad_out, mat, src_h, src_w):
    """Transpose of warp_forward: scatter-add grad_out back onto the source."""
    c, oh, ow = grad_out.shape
    xs = np.arange(ow, dtype=np.float64)
    ys = np.arange(oh, dtype=np.float64)
    gx, gy, gw = _grid(mat, xs, ys)
    valid_w = gw > _W_EPS
    gw = np.where(valid_w, gw, 1.0)
    gx = gx / gw
    gy = gy / gw

    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = (gx - x0).astype(grad_out.dtype)
    fy = (gy - y0).astype(grad_out.dtype)

    grad_src = np.zeros((c, src_h, src_w), dtype=grad_out.dtype)
    flat = grad_src.reshape(c, -1)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            ok = valid_w & (xi >= 0) & (xi < src_w) & (yi >= 0) & (yi < src_h)
            wgt = np.where(dx == 1, fx, 1.0 - fx) * np.where(dy == 1, fy, 1.0 - fy)
            wgt = np.where(ok, wgt, 0.0).astype(grad_out.dtype)
            idx = (np.clip(yi, 0, src_h - 1) * src_w + np.clip(xi, 0, src_w - 1)).ravel()
            contrib = (wgt[None] * grad_out).reshape(c, -1)
            for ch in range(c):
                np.add.at(flat[ch], idx, contrib[ch])
    return grad_src


def _grid(mat, xs, ys):
    """Homogeneous map of the (ys, xs) pixel grid; returns un-normalized u, v, w."""
    gx = mat[0, 0] * xs[None, :] + mat[0, 1] * ys[:, None] + mat[0, 2]
    gy = mat[1, 0] * xs[None, :] + mat[1, 1] * ys[:, None] + mat[1, 2]
    gw = mat[2, 0] * xs[None, :] + mat[2, 1] * ys[:, None] + mat[2, 2]
    return gx, gy, gw


def warp_forward_multi(src, indices, mats, out_h, out_w):
    """Warp a stack: output slice s gathers src[indices[s]] through mats[s]."""
    out = np.empty((len(indices), src.shape[1], out_h, out_w), dtype=src.dtype)
    for s, (idx, mat) in enumerate(zip(indices, mats)):
        out[s] = warp_forward(src[idx], mat, out_h, out_w)
    return out


def warp_backward_multi(grad_out, indices, mats, n_src, src_h, src_w):
    """Scatter-add transpose of warp_forward_multi onto (n_src, C, H, W)."""
    grad_src = np.zeros((n_src, grad_out.shape[1], src_h, src_w), dtype=grad_out.dtype)
    for s, (idx, mat) in enumerate(zip(indices, mats)):
        grad_src[idx] += warp_backward(grad_out[s], mat, src_h, src_w)
    return grad_src


def im2col(x, k, stride, pad):
    """Unfold (C,H,W) into (C*k*k, oh*ow) patch columns with zero padding."""
    c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, pad : pad + h, pad : pad + w] = x
    cols = np.empty((c, k, k, oh, ow), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            cols[:, ki, kj] = xp[:, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride]
    return cols.reshape(c * k * k, oh * ow)


def col2im(cols, h, w, k, stride, pad):
    """Fold (C*k*k, oh*ow) columns back to (C,H,W), accumulating overlaps."""
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    c = cols.shape[0] // (k * k)
    cols = cols.reshape(c, k, k, oh, ow)
    xp = np.zeros((c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride] += cols[:, ki, kj]
    return np.ascontiguousarray(xp[:, pad : pad + h, pad : pad + w])


def im2col_batch(x, k, stride, pad):
    """Unfold (N,C,H,W) into (C*k*k, N*oh*ow) columns, sample-major blocks."""
    n, c, h, w = x.shape
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=x.dtype)
    xp[:, :, pad : pad + h, pad : pad + w] = x
    cols = np.empty((c, k, k, n, oh, ow), dtype=x.dtype)
    for ki in range(k):
        for kj in range(k):
            patch = xp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride]
            cols[:, ki, kj] = patch.transpose(1, 0, 2, 3)
    return cols.reshape(c * k * k, n * oh * ow)


def col2im_batch(cols, n, h, w, k, stride, pad):
    """Fold (C*k*k, N*oh*ow) columns back to (N,C,H,W)."""
    oh = (h + 2 * pad - k) // stride + 1
    ow = (w + 2 * pad - k) // stride + 1
    c = cols.shape[0] // (k * k)
    cols = cols.reshape(c, k, k, n, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            xp[:, :, ki : ki + oh * stride : stride, kj : kj + ow * stride : stride] += cols[:, ki, kj].transpose(
                1, 0, 2, 3
            )
    return np.ascontiguousarray(xp[:, :, pad : pad + h, pad : pad + w])
