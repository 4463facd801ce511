# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels for bilinear homography warps and convolution packing.

Semantics mirror `multiplane.kernels.reference` exactly; see that module for
the coordinate and padding conventions. All loops are single-threaded:
on the small desk-scale workloads this package trains, keeping both cores
free for the BLAS calls between kernels wins over intra-kernel threading.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()

ctypedef fused real:
    float
    double

DEF W_EPS = 1e-12


def warp_forward(real[:, :, ::1] src, double[:, ::1] mat, Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t c = src.shape[0], h = src.shape[1], w = src.shape[2]
    out_np = np.zeros((c, out_h, out_w), dtype=np.asarray(src).dtype)
    cdef real[:, :, ::1] out = out_np
    cdef double m00 = mat[0, 0], m01 = mat[0, 1], m02 = mat[0, 2]
    cdef double m10 = mat[1, 0], m11 = mat[1, 1], m12 = mat[1, 2]
    cdef double m20 = mat[2, 0], m21 = mat[2, 1], m22 = mat[2, 2]
    cdef Py_ssize_t x, y, ch, x0, y0
    cdef double u, v, wd, gx, gy, fx, fy
    cdef double w00, w01, w10, w11
    cdef bint v00, v01, v10, v11

    with nogil:
        for y in range(out_h):
            for x in range(out_w):
                u = m00 * x + m01 * y + m02
                v = m10 * x + m11 * y + m12
                wd = m20 * x + m21 * y + m22
                if wd <= W_EPS:
                    continue
                gx = u / wd
                gy = v / wd
                x0 = <Py_ssize_t>floor(gx)
                y0 = <Py_ssize_t>floor(gy)
                fx = gx - x0
                fy = gy - y0
                v00 = (0 <= x0 < w) and (0 <= y0 < h)
                v01 = (0 <= x0 + 1 < w) and (0 <= y0 < h)
                v10 = (0 <= x0 < w) and (0 <= y0 + 1 < h)
                v11 = (0 <= x0 + 1 < w) and (0 <= y0 + 1 < h)
                w00 = (1.0 - fx) * (1.0 - fy) if v00 else 0.0
                w01 = fx * (1.0 - fy) if v01 else 0.0
                w10 = (1.0 - fx) * fy if v10 else 0.0
                w11 = fx * fy if v11 else 0.0
                for ch in range(c):
                    out[ch, y, x] = <real>(
                        (w00 * src[ch, y0 if v00 else 0, x0 if v00 else 0] if v00 else 0.0)
                        + (w01 * src[ch, y0 if v01 else 0, x0 + 1 if v01 else 0] if v01 else 0.0)
                        + (w10 * src[ch, y0 + 1 if v10 else 0, x0 if v10 else 0] if v10 else 0.0)
                        + (w11 * src[ch, y0 + 1 if v11 else 0, x0 + 1 if v11 else 0] if v11 else 0.0))
    return out_np


def warp_backward(real[:, :, ::1] grad_out, double[:, ::1] mat, Py_ssize_t src_h, Py_ssize_t src_w):
    cdef Py_ssize_t c = grad_out.shape[0], oh = grad_out.shape[1], ow = grad_out.shape[2]
    grad_np = np.zeros((c, src_h, src_w), dtype=np.asarray(grad_out).dtype)
    cdef real[:, :, ::1] grad_src = grad_np
    cdef double m00 = mat[0, 0], m01 = mat[0, 1], m02 = mat[0, 2]
    cdef double m10 = mat[1, 0], m11 = mat[1, 1], m12 = mat[1, 2]
    cdef double m20 = mat[2, 0], m21 = mat[2, 1], m22 = mat[2, 2]
    cdef Py_ssize_t x, y, ch, x0, y0
    cdef double u, v, wd, gx, gy, fx, fy, g
    cdef bint v00, v01, v10, v11

    with nogil:
        for y in range(oh):
            for x in range(ow):
                u = m00 * x + m01 * y + m02
                v = m10 * x + m11 * y + m12
                wd = m20 * x + m21 * y + m22
                if wd <= W_EPS:
                    continue
                gx = u / wd
                gy = v / wd
                x0 = <Py_ssize_t>floor(gx)
                y0 = <Py_ssize_t>floor(gy)
                fx = gx - x0
                fy = gy - y0
                v00 = (0 <= x0 < src_w) and (0 <= y0 < src_h)
                v01 = (0 <= x0 + 1 < src_w) and (0 <= y0 < src_h)
                v10 = (0 <= x0 < src_w) and (0 <= y0 + 1 < src_h)
                v11 = (0 <= x0 + 1 < src_w) and (0 <= y0 + 1 < src_h)
                for ch in range(c):
                    g = grad_out[ch, y, x]
                    if v00:
                        grad_src[ch, y0, x0] += <real>(g * (1.0 - fx) * (1.0 - fy))
                    if v01:
                        grad_src[ch, y0, x0 + 1] += <real>(g * fx * (1.0 - fy))
                    if v10:
                        grad_src[ch, y0 + 1, x0] += <real>(g * (1.0 - fx) * fy)
                    if v11:
                        grad_src[ch, y0 + 1, x0 + 1] += <real>(g * fx * fy)
    return grad_np


def warp_forward_multi(real[:, :, :, ::1] src, cnp.int64_t[::1] indices, double[:, :, ::1] mats,
                       Py_ssize_t out_h, Py_ssize_t out_w):
    cdef Py_ssize_t s_count = indices.shape[0]
    cdef Py_ssize_t c = src.shape[1], h = src.shape[2], w = src.shape[3]
    out_np = np.zeros((s_count, c, out_h, out_w), dtype=np.asarray(src).dtype)
    cdef real[:, :, :, ::1] out = out_np
    cdef Py_ssize_t s, x, y, ch, x0, y0, idx
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double u, v, wd, gx, gy, fx, fy, w00, w01, w10, w11
    cdef bint v00, v01, v10, v11

    with nogil:
      for s in range(s_count):
        idx = indices[s]
        m00 = mats[s, 0, 0]; m01 = mats[s, 0, 1]; m02 = mats[s, 0, 2]
        m10 = mats[s, 1, 0]; m11 = mats[s, 1, 1]; m12 = mats[s, 1, 2]
        m20 = mats[s, 2, 0]; m21 = mats[s, 2, 1]; m22 = mats[s, 2, 2]
        for y in range(out_h):
            for x in range(out_w):
                u = m00 * x + m01 * y + m02
                v = m10 * x + m11 * y + m12
                wd = m20 * x + m21 * y + m22
                if wd <= W_EPS:
                    continue
                gx = u / wd
                gy = v / wd
                x0 = <Py_ssize_t>floor(gx)
                y0 = <Py_ssize_t>floor(gy)
                fx = gx - x0
                fy = gy - y0
                v00 = (0 <= x0 < w) and (0 <= y0 < h)
                v01 = (0 <= x0 + 1 < w) and (0 <= y0 < h)
                v10 = (0 <= x0 < w) and (0 <= y0 + 1 < h)
                v11 = (0 <= x0 + 1 < w) and (0 <= y0 + 1 < h)
                w00 = (1.0 - fx) * (1.0 - fy) if v00 else 0.0
                w01 = fx * (1.0 - fy) if v01 else 0.0
                w10 = (1.0 - fx) * fy if v10 else 0.0
                w11 = fx * fy if v11 else 0.0
                for ch in range(c):
                    out[s, ch, y, x] = <real>(
                        (w00 * src[idx, ch, y0 if v00 else 0, x0 if v00 else 0] if v00 else 0.0)
                        + (w01 * src[idx, ch, y0 if v01 else 0, x0 + 1 if v01 else 0] if v01 else 0.0)
                        + (w10 * src[idx, ch, y0 + 1 if v10 else 0, x0 if v10 else 0] if v10 else 0.0)
                        + (w11 * src[idx, ch, y0 + 1 if v11 else 0, x0 + 1 if v11 else 0] if v11 else 0.0))
    return out_np


def warp_backward_multi(real[:, :, :, ::1] grad_out, cnp.int64_t[::1] indices, double[:, :, ::1] mats,
                        Py_ssize_t n_src, Py_ssize_t src_h, Py_ssize_t src_w):
    cdef Py_ssize_t s_count = indices.shape[0]
    cdef Py_ssize_t c = grad_out.shape[1], oh = grad_out.shape[2], ow = grad_out.shape[3]
    grad_np = np.zeros((n_src, c, src_h, src_w), dtype=np.asarray(grad_out).dtype)
    cdef real[:, :, :, ::1] grad_src = grad_np
    cdef Py_ssize_t s, x, y, ch, x0, y0, idx
    cdef double m00, m01, m02, m10, m11, m12, m20, m21, m22
    cdef double u, v, wd, gx, gy, fx, fy, g
    cdef bint v00, v01, v10, v11

    with nogil:
      for ch in range(c):
        for s in range(s_count):
            idx = indices[s]
            m00 = mats[s, 0, 0]; m01 = mats[s, 0, 1]; m02 = mats[s, 0, 2]
            m10 = mats[s, 1, 0]; m11 = mats[s, 1, 1]; m12 = mats[s, 1, 2]
            m20 = mats[s, 2, 0]; m21 = mats[s, 2, 1]; m22 = mats[s, 2, 2]
            for y in range(oh):
                for x in range(ow):
                    u = m00 * x + m01 * y + m02
                    v = m10 * x + m11 * y + m12
                    wd = m20 * x + m21 * y + m22
                    if wd <= W_EPS:
                        continue
                    gx = u / wd
                    gy = v / wd
                    x0 = <Py_ssize_t>floor(gx)
                    y0 = <Py_ssize_t>floor(gy)
                    fx = gx - x0
                    fy = gy - y0
                    v00 = (0 <= x0 < src_w) and (0 <= y0 < src_h)
                    v01 = (0 <= x0 + 1 < src_w) and (0 <= y0 < src_h)
                    v10 = (0 <= x0 < src_w) and (0 <= y0 + 1 < src_h)
                    v11 = (0 <= x0 + 1 < src_w) and (0 <= y0 + 1 < src_h)
                    g = grad_out[s, ch, y, x]
                    if v00:
                        grad_src[idx, ch, y0, x0] += <real>(g * (1.0 - fx) * (1.0 - fy))
                    if v01:
                        grad_src[idx, ch, y0, x0 + 1] += <real>(g * fx * (1.0 - fy))
                    if v10:
                        grad_src[idx, ch, y0 + 1, x0] += <real>(g * (1.0 - fx) * fy)
                    if v11:
                        grad_src[idx, ch, y0 + 1, x0 + 1] += <real>(g * fx * fy)
    return grad_np


def im2col(real[:, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], w = x.shape[2]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    cols_np = np.zeros((c * k * k, oh * ow), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] cols = cols_np
    cdef Py_ssize_t ch, ki, kj, oy, ox, iy, ix, row

    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    for oy in range(oh):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kj - pad
                            if 0 <= ix < w:
                                cols[row, oy * ow + ox] = x[ch, iy, ix]
    return cols_np


def col2im(real[:, ::1] cols, Py_ssize_t h, Py_ssize_t w, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t c = cols.shape[0] // (k * k)
    x_np = np.zeros((c, h, w), dtype=np.asarray(cols).dtype)
    cdef real[:, :, ::1] x = x_np
    cdef Py_ssize_t ch, ki, kj, oy, ox, iy, ix, row

    with nogil:
        for ch in range(c):
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    for oy in range(oh):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= h:
                            continue
                        for ox in range(ow):
                            ix = ox * stride + kj - pad
                            if 0 <= ix < w:
                                x[ch, iy, ix] += cols[row, oy * ow + ox]
    return x_np


def im2col_batch(real[:, :, :, ::1] x, Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    # Inner loops run over the contiguous in-bounds ox range, so the hot
    # stride-1 case is a straight row copy with no per-pixel branching.
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ncols = n * oh * ow
    cols_np = np.zeros((c * k * k, ncols), dtype=np.asarray(x).dtype)
    cdef real[:, ::1] cols = cols_np
    cdef Py_ssize_t ni, ch, ki, kj, oy, ox, iy, row, base, ox_lo, ox_hi, off

    with nogil:
      for ch in range(c):
        for ni in range(n):
            base = ni * oh * ow
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    ox_lo = (pad - kj + stride - 1) // stride
                    if ox_lo < 0:
                        ox_lo = 0
                    ox_hi = (w - 1 - kj + pad) // stride + 1
                    if ox_hi > ow:
                        ox_hi = ow
                    off = kj - pad
                    for oy in range(oh):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= h:
                            continue
                        if stride == 1:
                            for ox in range(ox_lo, ox_hi):
                                cols[row, base + oy * ow + ox] = x[ni, ch, iy, ox + off]
                        else:
                            for ox in range(ox_lo, ox_hi):
                                cols[row, base + oy * ow + ox] = x[ni, ch, iy, ox * stride + off]
    return cols_np


def col2im_batch(real[:, ::1] cols, Py_ssize_t n, Py_ssize_t h, Py_ssize_t w,
                 Py_ssize_t k, Py_ssize_t stride, Py_ssize_t pad):
    cdef Py_ssize_t oh = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * pad - k) // stride + 1
    cdef Py_ssize_t c = cols.shape[0] // (k * k)
    x_np = np.zeros((n, c, h, w), dtype=np.asarray(cols).dtype)
    cdef real[:, :, :, ::1] x = x_np
    cdef Py_ssize_t ni, ch, ki, kj, oy, ox, iy, row, base, ox_lo, ox_hi, off

    with nogil:
      for ch in range(c):
        for ni in range(n):
            base = ni * oh * ow
            for ki in range(k):
                for kj in range(k):
                    row = (ch * k + ki) * k + kj
                    ox_lo = (pad - kj + stride - 1) // stride
                    if ox_lo < 0:
                        ox_lo = 0
                    ox_hi = (w - 1 - kj + pad) // stride + 1
                    if ox_hi > ow:
                        ox_hi = ow
                    off = kj - pad
                    for oy in range(oh):
                        iy = oy * stride + ki - pad
                        if iy < 0 or iy >= h:
                            continue
                        if stride == 1:
                            for ox in range(ox_lo, ox_hi):
                                x[ni, ch, iy, ox + off] += cols[row, base + oy * ow + ox]
                        else:
                            for ox in range(ox_lo, ox_hi):
                                x[ni, ch, iy, ox * stride + off] += cols[row, base + oy * ow + ox]
    return x_np
