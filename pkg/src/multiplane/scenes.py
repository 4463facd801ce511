"""Procedural multi-view scenes with analytic ground truth, plus disk I/O.

Scenes are stacks of fronto-parallel textured planes at fixed world depths
(the rig frame: cameras near the origin looking along +z). Because every
layer is a plane, ground-truth views have a closed form, and
`render_ground_truth` computes it by direct ray-plane intersection with its
own bilinear texture lookup: it deliberately shares no code with the
homography warping stack so the two can cross-validate each other. Renders
are supersampled 4x and box-downsampled to bound aliasing.

On-disk format: a scene directory contains

  poses.txt       pose file (see multiplane.geometry)
  images/*.ppm    binary PPM (P6), 8- or 16-bit, linear intensity in [0, 1]
  manifest.json   generator spec + seed (written by the CLI)
  noise.json      for noisy copies: gain, sigmas, seed, source directory

Disk images clip to [0, 1]; unclamped noisy tensors only exist in memory.
"""

import json
import os
import re
from dataclasses import dataclass

import numpy as np

from .geometry import CameraIntrinsics, CameraPose, CameraView, load_pose_file, save_pose_file

TEXTURE_KINDS = ("checker", "noise", "ramp", "mixed")


@dataclass
class SceneLayer:
    depth: float
    texture: np.ndarray  # (3, th, tw) in [0, 1]
    opacity: np.ndarray  # (th, tw) in [0, 1]
    extent: float  # world side length (meters) of the textured square

    def __post_init__(self):
        if self.depth <= 0 or self.extent <= 0:
            raise ValueError("layer depth and extent must be positive")


@dataclass
class SyntheticScene:
    """Layers ordered far to near (strictly decreasing depth)."""

    layers: list
    seed: int | None = None

    def __post_init__(self):
        depths = [layer.depth for layer in self.layers]
        if not depths:
            raise ValueError("scene needs at least one layer")
        if any(b >= a for a, b in zip(depths, depths[1:])):
            raise ValueError("layer depths must be strictly decreasing (far to near)")

    @property
    def depths(self):
        return [layer.depth for layer in self.layers]


@dataclass
class SceneSpec:
    layer_count: int
    depth_range: tuple = (2.0, 40.0)  # (near, far) meters
    texture: str = "mixed"
    seed: int = 0
    texture_size: int = 128
    fov_degrees: float = 75.0  # angular size of layers seen from the origin

    def __post_init__(self):
        if not 1 <= self.layer_count <= 8:
            raise ValueError(f"layer_count must be in [1, 8], got {self.layer_count}")
        near, far = self.depth_range
        if not 0 < near < far:
            raise ValueError(f"need 0 < near < far, got {self.depth_range}")
        if self.texture not in TEXTURE_KINDS:
            raise ValueError(f"texture must be one of {TEXTURE_KINDS}, got {self.texture!r}")


def _texture_checker(rng, size):
    cell = int(rng.integers(6, 16))
    ii, jj = np.meshgrid(np.arange(size) // cell, np.arange(size) // cell, indexing="ij")
    mask = ((ii + jj) % 2).astype(np.float32)
    c0 = rng.uniform(0.05, 0.45, size=3).astype(np.float32)
    c1 = rng.uniform(0.55, 0.95, size=3).astype(np.float32)
    return c0[:, None, None] * (1 - mask) + c1[:, None, None] * mask


def _value_noise(rng, size, grid):
    """Smooth random field: coarse grid, bilinear upsampling to size x size."""
    coarse = rng.random((grid, grid))
    src = np.linspace(0, grid - 1, size)
    i0 = np.clip(src.astype(int), 0, grid - 2)
    frac = src - i0
    rows = coarse[i0] * (1 - frac[:, None]) + coarse[i0 + 1] * frac[:, None]
    out = rows[:, i0] * (1 - frac[None, :]) + rows[:, i0 + 1] * frac[None, :]
    return out.astype(np.float32)


def _texture_noise(rng, size):
    grid = int(rng.integers(5, 10))
    channels = [_value_noise(rng, size, grid) for _ in range(3)]
    tex = np.stack(channels)
    lo, hi = tex.min(), tex.max()
    return (0.1 + 0.8 * (tex - lo) / max(hi - lo, 1e-9)).astype(np.float32)


def _texture_ramp(rng, size):
    theta = rng.uniform(0, 2 * np.pi)
    xs, ys = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="xy")
    t = (np.cos(theta) * xs + np.sin(theta) * ys - min(0, np.cos(theta)) - min(0, np.sin(theta))) / (
        abs(np.cos(theta)) + abs(np.sin(theta))
    )
    c0 = rng.uniform(0.0, 0.4, size=3).astype(np.float32)
    c1 = rng.uniform(0.6, 1.0, size=3).astype(np.float32)
    return (c0[:, None, None] + (c1 - c0)[:, None, None] * t[None]).astype(np.float32)


_TEXTURES = {"checker": _texture_checker, "noise": _texture_noise, "ramp": _texture_ramp}


def _blob_mask(rng, size):
    """Soft blob opacity from thresholded smooth noise; values in [0, 1]."""
    fieldv = _value_noise(rng, size, int(rng.integers(4, 7)))
    lo, hi = fieldv.min(), fieldv.max()
    fieldv = (fieldv - lo) / max(hi - lo, 1e-9)
    threshold = rng.uniform(0.45, 0.6)
    softness = 0.08
    return np.clip((fieldv - threshold) / softness, 0.0, 1.0).astype(np.float32)


def _disk_mask(rng, size):
    cx, cy = rng.uniform(0.3, 0.7, size=2)
    radius = rng.uniform(0.15, 0.3)
    xs, ys = np.meshgrid(np.linspace(0, 1, size), np.linspace(0, 1, size), indexing="xy")
    dist = np.sqrt((xs - cx) ** 2 + (ys - cy) ** 2)
    return (dist <= radius).astype(np.float32)


def layer_extent(depth, fov_degrees):
    """World side length subtending `fov_degrees` at the origin."""
    return 2.0 * depth * np.tan(np.radians(fov_degrees) / 2.0)


def make_scene(spec):
    """Deterministic layered scene; depths sampled uniformly in disparity."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(spec.seed)))
    near, far = spec.depth_range
    count = spec.layer_count
    # stratified in disparity: one draw per bin keeps depths distinct
    edges = np.linspace(1.0 / far, 1.0 / near, count + 1)
    disparities = np.sort(rng.uniform(edges[:-1], edges[1:]))
    depths = 1.0 / disparities  # descending: far first

    layers = []
    for i, depth in enumerate(depths):
        if spec.texture == "mixed":
            kind = ("checker", "noise", "ramp")[int(rng.integers(0, 3))]
        else:
            kind = spec.texture
        texture = _TEXTURES[kind](rng, spec.texture_size)
        if i == 0:
            opacity = np.ones(texture.shape[1:], dtype=np.float32)  # opaque backdrop
        elif rng.random() < 0.5:
            opacity = _disk_mask(rng, spec.texture_size)
        else:
            opacity = _blob_mask(rng, spec.texture_size)
        layers.append(SceneLayer(float(depth), texture, opacity, layer_extent(depth, spec.fov_degrees)))
    return SyntheticScene(layers, seed=spec.seed)


def make_occlusion_scene(far_depth=20.0, near_depth=2.0, seed=0, texture_size=128):
    """Canonical two-layer fixture: opaque far checker, near opaque disk."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    far_layer = SceneLayer(
        far_depth,
        _texture_checker(rng, texture_size),
        np.ones((texture_size, texture_size), dtype=np.float32),
        layer_extent(far_depth, 75.0),
    )
    near_layer = SceneLayer(
        near_depth,
        _texture_noise(rng, texture_size),
        _disk_mask(rng, texture_size),
        layer_extent(near_depth, 75.0),
    )
    return SyntheticScene([far_layer, near_layer], seed=seed)


def _bilinear_layer(texture, opacity, u, v):
    """Direct bilinear lookup with transparent outside; independent of the
    kernels module on purpose (this is the oracle path)."""
    th, tw = opacity.shape
    u0 = np.floor(u).astype(np.int64)
    v0 = np.floor(v).astype(np.int64)
    fu = (u - u0).astype(np.float64)
    fv = (v - v0).astype(np.float64)
    color = np.zeros((3,) + u.shape, dtype=np.float64)
    alpha = np.zeros(u.shape, dtype=np.float64)
    for dv in (0, 1):
        for du in (0, 1):
            ui, vi = u0 + du, v0 + dv
            ok = (ui >= 0) & (ui < tw) & (vi >= 0) & (vi < th)
            wgt = np.where(du, fu, 1 - fu) * np.where(dv, fv, 1 - fv) * ok
            ui = np.clip(ui, 0, tw - 1)
            vi = np.clip(vi, 0, th - 1)
            color += wgt[None] * texture[:, vi, ui]
            alpha += wgt * opacity[vi, ui]
    return color, alpha


def render_ground_truth(scene, camera, image_size=None, supersample=4):
    """Exact alpha-over render of the scene layers from a camera, (3, H, W).

    Rays are cast per subpixel, intersected with each layer plane, and the
    layers composited near over far; the subpixel grid is then box-averaged.
    """
    if image_size is None:
        if camera.image is None:
            raise ValueError("image_size required when the camera has no image")
        image_size = camera.image.shape[1:]
    h, w = image_size
    ss = int(supersample)
    sub = (np.arange(ss) + 0.5) / ss - 0.5
    xs = (np.arange(w)[:, None] + sub[None, :]).ravel()
    ys = (np.arange(h)[:, None] + sub[None, :]).ravel()
    grid_x, grid_y = np.meshgrid(xs, ys, indexing="xy")

    k_inv = camera.intrinsics.inverse_matrix()
    rot_t = camera.pose.rotation.T
    center = camera.pose.camera_center
    dirs = np.stack([grid_x, grid_y, np.ones_like(grid_x)])  # (3, H*ss, W*ss)
    dirs = np.tensordot(rot_t @ k_inv, dirs, axes=1)

    out = np.zeros((3,) + grid_x.shape, dtype=np.float64)
    for layer in scene.layers:  # far to near
        dz = dirs[2]
        hit = dz > 1e-12
        t = np.where(hit, (layer.depth - center[2]) / np.where(hit, dz, 1.0), -1.0)
        hit &= t > 0
        px = center[0] + t * dirs[0]
        py = center[1] + t * dirs[1]
        th, tw = layer.opacity.shape
        u = (px / layer.extent + 0.5) * tw - 0.5
        v = (py / layer.extent + 0.5) * th - 0.5
        color, alpha = _bilinear_layer(layer.texture, layer.opacity, u, v)
        alpha = np.where(hit, alpha, 0.0)
        out = color * alpha + (1.0 - alpha) * out

    out = out.reshape(3, h, ss, w, ss).mean(axis=(2, 4))
    return out.astype(np.float32)


def make_rig(view_count, image_size, seed=0, spacing=0.2, focal_factor=1.1, jitter=0.05):
    """Forward-facing camera rig around the origin: identity rotations,
    centers jittered around a ring of radius `spacing` in the z=0 plane."""
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    h, w = image_size
    focal = focal_factor * max(h, w)
    intr = CameraIntrinsics(focal, focal, (w - 1) / 2.0, (h - 1) / 2.0)
    views = []
    for i in range(view_count):
        if view_count == 1:
            cx = cy = 0.0
        else:
            angle = 2 * np.pi * i / view_count
            cx = spacing * np.cos(angle) + rng.uniform(-jitter, jitter) * spacing
            cy = spacing * np.sin(angle) + rng.uniform(-jitter, jitter) * spacing
        center = np.array([cx, cy, 0.0])
        views.append(CameraView(intr, CameraPose(np.eye(3), center), None))
    return views


def render_dataset(scene, cameras, image_size, supersample=4):
    """Ground-truth images for a camera list, returned as (V, 3, H, W)."""
    return np.stack([render_ground_truth(scene, cam, image_size, supersample) for cam in cameras])


# ---------------------------------------------------------------------------
# Disk I/O (binary PPM, poses, manifests)
# ---------------------------------------------------------------------------

IMAGES_SUBDIR = "images"
POSES_NAME = "poses.txt"


def write_image(path, img, bit_depth=16):
    """Quantize a (3, H, W) [0, 1] image to binary PPM (P6)."""
    if bit_depth not in (8, 16):
        raise ValueError(f"bit_depth must be 8 or 16, got {bit_depth}")
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[0] != 3:
        raise ValueError(f"expected (3, H, W), got {img.shape}")
    maxval = (1 << bit_depth) - 1
    q = np.rint(np.clip(img, 0.0, 1.0) * maxval)
    q = q.astype(">u2" if bit_depth == 16 else "u1")
    _, h, w = img.shape
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n{maxval}\n".encode("ascii"))
        fh.write(np.moveaxis(q, 0, -1).tobytes())


def read_image(path):
    """Read a binary PPM back to float32 (3, H, W) in [0, 1]."""
    try:
        with open(path, "rb") as fh:
            blob = fh.read()
    except OSError as exc:
        raise ValueError(f"unreadable image {path}: {exc}") from exc
    match = re.match(rb"P6\s+(?:#[^\n]*\n\s*)*(\d+)\s+(\d+)\s+(\d+)\s", blob)
    if not match:
        raise ValueError(f"{path}: not a binary PPM (P6) file")
    w, h, maxval = (int(match.group(i)) for i in (1, 2, 3))
    data = blob[match.end() :]
    dtype = ">u2" if maxval > 255 else "u1"
    expect = w * h * 3 * (2 if maxval > 255 else 1)
    if len(data) != expect:
        raise ValueError(f"{path}: expected {expect} pixel bytes, found {len(data)}")
    img = np.frombuffer(data, dtype=dtype).reshape(h, w, 3)
    return (np.moveaxis(img, -1, 0).astype(np.float32) / maxval).astype(np.float32)


def save_scene(dirpath, views, names=None, bit_depth=16):
    """Write views (with images) as an on-disk scene directory."""
    os.makedirs(os.path.join(dirpath, IMAGES_SUBDIR), exist_ok=True)
    names = names or [f"{i:03d}.ppm" for i in range(len(views))]
    entries = []
    for name, view in zip(names, views):
        if view.image is None:
            raise ValueError(f"view {name!r} has no image to save")
        write_image(os.path.join(dirpath, IMAGES_SUBDIR, name), view.image, bit_depth)
        entries.append((name, view.intrinsics, view.pose))
    save_pose_file(os.path.join(dirpath, POSES_NAME), entries)


def load_scene(dirpath):
    """Read a scene directory back; strict about image/pose pairing.

    Returns (views, names) with every view carrying its image.
    """
    pose_path = os.path.join(dirpath, POSES_NAME)
    if not os.path.exists(pose_path):
        raise ValueError(f"{dirpath}: missing {POSES_NAME}")
    entries = load_pose_file(pose_path)
    img_dir = os.path.join(dirpath, IMAGES_SUBDIR)
    on_disk = sorted(f for f in os.listdir(img_dir)) if os.path.isdir(img_dir) else []
    listed = [name for name, _, _ in entries]
    missing_pose = sorted(set(on_disk) - set(listed))
    if missing_pose:
        raise ValueError(f"{dirpath}: images without a pose entry: {missing_pose}")
    views, names = [], []
    shape = None
    for name, intr, pose in entries:
        img_path = os.path.join(img_dir, name)
        if not os.path.exists(img_path):
            raise ValueError(f"{dirpath}: pose entry {name!r} has no image file")
        img = read_image(img_path)
        if shape is None:
            shape = img.shape
        elif img.shape != shape:
            raise ValueError(f"{dirpath}: resolution mismatch for {name!r}: {img.shape} vs {shape}")
        views.append(CameraView(intr, pose, img))
        names.append(name)
    if not views:
        raise ValueError(f"{dirpath}: scene contains no views")
    return views, names


def write_json(path, payload):
    """Deterministic JSON (sorted keys, fixed separators, trailing newline)."""
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def read_json(path):
    with open(path) as fh:
        return json.load(fh)
