"""Differentiable homography warping and the multiplane pipeline tensors.

The warping operator is a gather: output pixel q reads the source at the
homogeneous-normalized location h @ (q / s), bilinear interpolation, zeros
outside the source bounds. Gradients flow to pixel values only; homographies
and poses are inputs, never optimized.

Scale bookkeeping: a representation grid at scale s has round(s*H) x
round(s*W) pixels, and a homography G between unit-scale frames acts on it
as diag(s,s,1) @ G @ diag(1/s,1/s,1). `inverse_on_scaled_grid` packages the
inverse map in that form, which is what backward-warping a scale-s grid to a
unit-scale view needs (and what makes forward-then-inverse warps at scales s
and 1/s actually invert each other).

Patch windows: a window (x0, y0) offsets the grid inside the reference
frame. Offsets are folded into the effective matrices here so that callers
can train on crops without touching the geometry.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .compositor import MpiTensor
from .geometry import DepthPlaneSet, Homography, plane_homography, relative_view, scale_matrix


@dataclass
class PsvTensor:
    """Plane sweep volumes: (D, V, C1, sh, sw) warped view images/features."""

    data: Tensor
    depth_planes: DepthPlaneSet
    views: list
    reference: object
    scale: float = 1.0
    base_shape: tuple = None
    window: tuple = (0.0, 0.0)

    def __post_init__(self):
        d, v = self.data.shape[:2]
        if d != len(self.depth_planes):
            raise ValueError(f"depth dim {d} != plane count {len(self.depth_planes)}")
        if v != len(self.views):
            raise ValueError(f"view dim {v} != view count {len(self.views)}")


@dataclass
class MpfTensor:
    """Multiplane features: (D, C2, sh, sw), range unconstrained."""

    data: Tensor
    depth_planes: DepthPlaneSet
    reference: object
    scale: float = 1.0
    base_shape: tuple = None
    window: tuple = (0.0, 0.0)


@dataclass
class ProjectedTensor:
    """Per-render-view projection: (R, C3, H, W) features or (R, D, 4, H, W)
    planes awaiting overcompositing."""

    data: Tensor
    render_views: list
    kind: str = "feature"  # "feature" | "mpi"
    depth_planes: DepthPlaneSet | None = None


def scaled_size(scale, height, width):
    return int(round(scale * height)), int(round(scale * width))


def translation_matrix(x0, y0):
    return np.array([[1.0, 0.0, float(x0)], [0.0, 1.0, float(y0)], [0.0, 0.0, 1.0]])


def inverse_on_scaled_grid(h, scale):
    """The inverse of `h` re-expressed between grids upscaled by `scale`."""
    inv = np.linalg.inv(h.matrix)
    return Homography(scale_matrix(scale) @ inv @ scale_matrix(1.0 / scale))


def warp_image(source, h, scale):
    """Warp (C, H, W) through homography `h` onto a grid upscaled by `scale`.

    Output pixel q samples the source at h @ (q / scale); all-outside maps
    produce an all-zero image rather than an error.
    """
    if scale <= 0:
        raise ValueError(f"scale must be positive, got {scale}")
    src = source if isinstance(source, Tensor) else Tensor(source)
    if src.ndim != 3:
        raise ValueError(f"warp_image expects (C, H, W), got {src.shape}")
    out_h, out_w = scaled_size(scale, src.shape[1], src.shape[2])
    mat = h.matrix @ scale_matrix(1.0 / scale)
    return ops.warp(src, mat, out_h, out_w)


def build_psv(views, reference, planes, scale=1.0, pre_conv=None, window=None, patch_size=None, features=None):
    """Forward-warp every view onto every depth plane of the reference camera.

    views       CameraView list with images (ignored if `features` given)
    reference   CameraView placing the representation grid
    planes      DepthPlaneSet (far to near)
    pre_conv    optional learned convolution applied once per view, before
                warping (not per depth)
    window      optional (x0, y0) patch offset in reference pixels, with
                `patch_size` (h, w); defaults to the full reference grid
    features    optional per-view tensors to warp instead of view images

    Returns a PsvTensor of shape (D, V, C1, s*h, s*w).
    """
    if not views:
        raise ValueError("at least one view required")
    if len(planes) < 1:
        raise ValueError("at least one depth plane required")
    if features is None:
        if any(v.image is None for v in views):
            raise ValueError("every view needs an image (or pass features=)")
        sizes = {tuple(v.image.shape) for v in views}
        if len(sizes) != 1:
            raise ValueError(f"views must share one image size, got {sizes}")

    if features is None:
        stack = Tensor(np.stack([np.asarray(v.image, dtype=np.float32) for v in views]))
    else:
        stack = ops.stack([f if isinstance(f, Tensor) else Tensor(f) for f in features])
    if pre_conv is not None:
        stack = pre_conv(stack)

    if window is None:
        base_h, base_w = _default_grid(reference, views)
        x0 = y0 = 0.0
    else:
        x0, y0 = window
        base_h, base_w = patch_size
    out_h, out_w = scaled_size(scale, base_h, base_w)
    offset = translation_matrix(x0, y0)
    inv_scale = scale_matrix(1.0 / scale)

    rel_views = [relative_view(v, reference.pose) for v in views]
    indices, mats = [], []
    for depth in planes:
        for vi, rel in enumerate(rel_views):
            h_dv = plane_homography(rel, reference.intrinsics, depth, planes.normal)
            indices.append(vi)
            mats.append(h_dv.matrix @ offset @ inv_scale)
    data = ops.warp_multi(stack, indices, np.stack(mats), out_h, out_w)
    data = ops.reshape(data, (len(planes), len(views)) + data.shape[1:])
    return PsvTensor(data, planes, list(views), reference, scale, (base_h, base_w), (x0, y0))


def _default_grid(reference, views):
    if reference.image is not None:
        return reference.image.shape[1:]
    for v in views:
        if v.image is not None:
            return v.image.shape[1:]
    raise ValueError("cannot infer grid size: no images on reference or views")


def _projection_matrix(render_view, reference, depth, normal, scale, src_window, dst_window):
    """Pixel map from a render-view grid into the scaled representation grid."""
    rel = relative_view(render_view, reference.pose)
    g_rd = plane_homography(rel, reference.intrinsics, depth, normal)
    sx, sy = src_window
    dx, dy = dst_window
    return (
        translation_matrix(-scale * sx, -scale * sy)
        @ scale_matrix(scale)
        @ np.linalg.inv(g_rd.matrix)
        @ translation_matrix(dx, dy)
    )


def project_multiplane(y, render_views, collapse_conv=None, out_size=None, windows=None):
    """Backward-warp a multiplane representation to a set of render views.

    For an MpfTensor the depth and channel dims are then collapsed by the
    (required) learned `collapse_conv`, giving (R, C3, H, W). For an
    MpiTensor the (R, D, 4, H, W) structure is kept for overcompositing.

    windows: optional per-render-view (x0, y0) offsets in target pixels;
    out_size overrides the (H, W) of the output grid.
    """
    is_mpi = isinstance(y, MpiTensor)
    if not is_mpi and collapse_conv is None:
        raise ValueError("multiplane features require a collapse convolution")
    if not render_views:
        raise ValueError("at least one render view required")
    planes = y.depth_planes
    out_h, out_w = out_size if out_size is not None else y.base_shape
    if windows is None:
        windows = [(0.0, 0.0)] * len(render_views)

    indices, mats = [], []
    for render_view, dst_window in zip(render_views, windows):
        for di, depth in enumerate(planes):
            indices.append(di)
            mats.append(_projection_matrix(render_view, y.reference, depth, planes.normal, y.scale, y.window, dst_window))
    warped = ops.warp_multi(y.data, indices, np.stack(mats), out_h, out_w)  # (R*D, C, H, W)
    d = len(planes)
    r = len(render_views)
    channels = y.data.shape[1]
    if is_mpi:
        data = ops.reshape(warped, (r, d, 4, out_h, out_w))
        return ProjectedTensor(data, list(render_views), kind="mpi", depth_planes=planes)
    stacked = ops.reshape(warped, (r, d * channels, out_h, out_w))
    return ProjectedTensor(collapse_conv(stacked), list(render_views), kind="feature", depth_planes=planes)


def plane_coverage(reference, planes, scale, grid_size, render_view, out_size, src_window=(0.0, 0.0), dst_window=(0.0, 0.0)):
    """Number of depth planes landing in-bounds, per output pixel.

    Mirrors the sampling rule of `project_multiplane` without touching pixel
    data: `grid_size` is the (sh, sw) representation grid being sampled.
    Integer counts let callers apply exact threshold comparisons.
    """
    out_h, out_w = out_size
    sh, sw = grid_size
    xs = np.arange(out_w)
    ys = np.arange(out_h)
    count = np.zeros((out_h, out_w), dtype=np.int64)
    for depth in planes:
        mat = _projection_matrix(render_view, reference, depth, planes.normal, scale, src_window, dst_window)
        gx = mat[0, 0] * xs[None, :] + mat[0, 1] * ys[:, None] + mat[0, 2]
        gy = mat[1, 0] * xs[None, :] + mat[1, 1] * ys[:, None] + mat[1, 2]
        gw = mat[2, 0] * xs[None, :] + mat[2, 1] * ys[:, None] + mat[2, 2]
        ok = gw > 1e-12
        gx = np.where(ok, gx / np.where(ok, gw, 1.0), -1.0)
        gy = np.where(ok, gy / np.where(ok, gw, 1.0), -1.0)
        count += ok & (gx >= 0) & (gx <= sw - 1) & (gy >= 0) & (gy <= sh - 1)
    return count
