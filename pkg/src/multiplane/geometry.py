"""Pinhole cameras, depth-plane sampling, and plane-induced homographies.

Conventions (used consistently across the package):

  * Pixel centers sit at integer coordinates; the origin is the top-left
    pixel center. A homogeneous pixel is the column (x, y, 1).
  * Camera frame: x right, y down, z forward along the optical axis.
  * A pose (R, t) maps world points to camera coordinates as
    X_cam = R X - t, so the camera center is R^T t; for the identity
    rotation, t IS the camera position. (This is the sign convention the
    plane-induced homography below is written in; the usual extrinsic
    translation is its negative.) The world frame is the rig frame: the
    frame the reference camera is constructed in.
  * A fronto-parallel plane at distance a from the reference camera, with
    normal n = (0, 0, 1), induces the homography

        H = K_v (R_v - t_v n^T / a) K_ref^{-1}

    mapping reference pixels to view-v pixels, where (R_v, t_v) is the
    view's pose *relative to the reference camera*.

All functions here are pure over immutable inputs and thread-safe.
"""

import math
from dataclasses import dataclass, field

import numpy as np

PLANE_NORMAL = np.array([0.0, 0.0, 1.0])

# Relative tolerance for the uniform-in-disparity invariant.
_DISPARITY_RTOL = 1e-9


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def as_matrix(self):
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def inverse_matrix(self):
        return np.array(
            [[1.0 / self.fx, 0.0, -self.cx / self.fx], [0.0, 1.0 / self.fy, -self.cy / self.fy], [0.0, 0.0, 1.0]]
        )


@dataclass(frozen=True)
class CameraPose:
    """Rigid transform to camera coordinates: X_cam = rotation @ X - translation."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        rot = np.asarray(self.rotation, dtype=np.float64)
        trans = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if rot.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {rot.shape}")
        err = np.abs(rot.T @ rot - np.eye(3)).max()
        if err >= 1e-6:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.3g})")
        if np.linalg.det(rot) <= 0:
            raise ValueError("rotation must have determinant +1")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", trans)

    @property
    def camera_center(self):
        return self.rotation.T @ self.translation

    @staticmethod
    def identity():
        return CameraPose(np.eye(3), np.zeros(3))


@dataclass
class CameraView:
    """One viewpoint: intrinsics + pose + optional (3, H, W) image in [0, 1]."""

    intrinsics: CameraIntrinsics
    pose: CameraPose
    image: np.ndarray | None = None

    def __post_init__(self):
        if self.image is not None:
            img = np.asarray(self.image)
            if img.ndim != 3 or img.shape[0] != 3:
                raise ValueError(f"image must be (3, H, W), got {img.shape}")
            if img.shape[1] < 1 or img.shape[2] < 1:
                raise ValueError("image must have H, W >= 1")
            self.image = img


@dataclass(frozen=True)
class DepthPlaneSet:
    """Plane distances in meters, strictly decreasing far to near, uniform in
    disparity; the shared normal is (0, 0, 1) in the reference frame."""

    distances: tuple
    normal: np.ndarray = field(default_factory=lambda: PLANE_NORMAL.copy())

    def __post_init__(self):
        dists = tuple(float(d) for d in self.distances)
        if len(dists) < 1:
            raise ValueError("at least one depth plane required")
        if any(d <= 0 for d in dists):
            raise ValueError("plane distances must be positive")
        if len(dists) >= 2:
            disp = np.reciprocal(np.asarray(dists))
            gaps = np.diff(disp)
            if np.any(gaps <= 0):
                raise ValueError("plane distances must be strictly decreasing (far to near)")
            mean_gap = gaps.mean()
            if np.abs(gaps - mean_gap).max() > _DISPARITY_RTOL * abs(mean_gap):
                raise ValueError("plane disparities must form a uniform progression")
        object.__setattr__(self, "distances", dists)

    def __len__(self):
        return len(self.distances)

    def __iter__(self):
        return iter(self.distances)


@dataclass(frozen=True)
class Homography:
    """3x3 invertible matrix acting on homogeneous pixels (x, y, 1)."""

    matrix: np.ndarray

    def __post_init__(self):
        mat = np.asarray(self.matrix, dtype=np.float64)
        if mat.shape != (3, 3):
            raise ValueError(f"homography must be 3x3, got {mat.shape}")
        if abs(np.linalg.det(mat)) <= 1e-12:
            raise ValueError("homography matrix is singular")
        object.__setattr__(self, "matrix", mat)

    def apply(self, points):
        """Map (N, 2) pixel coordinates through the homography."""
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
        hom = np.concatenate([pts, np.ones((len(pts), 1))], axis=1) @ self.matrix.T
        return hom[:, :2] / hom[:, 2:3]

    def normalized(self):
        """Scaled copy with bottom-right entry 1 (for equality tests only)."""
        return self.matrix / self.matrix[2, 2]


def sample_depth_planes(near, far, count):
    """Distances of `count` planes between far and near, uniform in disparity."""
    if near <= 0:
        raise ValueError(f"near must be positive, got {near}")
    if near >= far:
        raise ValueError(f"near must be smaller than far, got near={near}, far={far}")
    if count < 1:
        raise ValueError("count must be >= 1")
    if count == 1:
        return DepthPlaneSet((float(far),))
    d_far, d_near = 1.0 / far, 1.0 / near
    disparities = d_far + (d_near - d_far) * np.arange(count) / (count - 1)
    return DepthPlaneSet(tuple(1.0 / disparities))


def plane_homography(view, reference, plane_distance, normal=None):
    """Homography induced by a fronto-parallel plane at `plane_distance`.

    `view.pose` must be relative to the reference camera (see
    `relative_view`); `reference` is the reference camera's intrinsics.
    """
    if plane_distance <= 0:
        raise ValueError(f"plane distance must be positive, got {plane_distance}")
    n = PLANE_NORMAL if normal is None else np.asarray(normal, dtype=np.float64).reshape(3)
    k_view = view.intrinsics.as_matrix()
    k_ref_inv = reference.inverse_matrix()
    rot = view.pose.rotation
    t = view.pose.translation
    mat = k_view @ (rot - np.outer(t, n) / plane_distance) @ k_ref_inv
    return Homography(mat)


def invert(h):
    """Inverse homography; rejects singular matrices."""
    return Homography(np.linalg.inv(h.matrix))


def relative_view(view, reference_pose):
    """Re-express a view's pose relative to a reference camera's frame."""
    r_rel = view.pose.rotation @ reference_pose.rotation.T
    t_rel = view.pose.translation - r_rel @ reference_pose.translation
    return CameraView(view.intrinsics, CameraPose(r_rel, t_rel), view.image)


def reference_camera(views, image_size, far=100.0):
    """Virtual reference camera at the average input position.

    The pose is the average of the input camera centers with identity
    rotation in the rig frame. Intrinsics are centered on the image and the
    focal lengths are chosen (in closed form) so the reference frustum at
    the far plane contains the union of every input frustum's footprint on
    that plane. A single input view is returned unchanged (minus its image).
    """
    if not views:
        raise ValueError("at least one view required")
    if len(views) == 1:
        return CameraView(views[0].intrinsics, views[0].pose, None)
    h, w = image_size
    centers = np.stack([v.pose.camera_center for v in views])
    mean_center = centers.mean(axis=0)
    ref_pose = CameraPose(np.eye(3), mean_center)

    z_plane = mean_center[2] + far
    ratios_x, ratios_y = [], []
    for view in views:
        k_inv = view.intrinsics.inverse_matrix()
        rot_t = view.pose.rotation.T
        center = view.pose.camera_center
        img = view.image
        if img is not None:
            vh, vw = img.shape[1:]
        else:
            vh, vw = h, w
        for px, py in ((0, 0), (vw - 1, 0), (0, vh - 1), (vw - 1, vh - 1)):
            direction = rot_t @ k_inv @ np.array([px, py, 1.0])
            if direction[2] <= 1e-12:
                raise ValueError("input frustum does not reach the far plane")
            lam = (z_plane - center[2]) / direction[2]
            point = center + lam * direction - mean_center
            ratios_x.append(abs(point[0] / point[2]))
            ratios_y.append(abs(point[1] / point[2]))

    half_w, half_h = (w - 1) / 2.0, (h - 1) / 2.0
    fx = half_w / max(ratios_x) if max(ratios_x) > 0 else float(np.mean([v.intrinsics.fx for v in views]))
    fy = half_h / max(ratios_y) if max(ratios_y) > 0 else float(np.mean([v.intrinsics.fy for v in views]))
    return CameraView(CameraIntrinsics(fx, fy, half_w, half_h), ref_pose, None)


# ---------------------------------------------------------------------------
# Pose files
# ---------------------------------------------------------------------------
#
# Line-oriented text, one block per view:
#
#   multiplane-poses v1
#   view <image file name>
#   fx <float>
#   fy <float>
#   cx <float>
#   cy <float>
#   rotation <9 floats, row-major>
#   translation <3 floats, meters>
#
# '#' comments and blank lines are allowed; unknown field names are not.

_POSE_MAGIC = "multiplane-poses v1"
_FIELD_COUNTS = {"fx": 1, "fy": 1, "cx": 1, "cy": 1, "rotation": 9, "translation": 3}


def save_pose_file(path, entries):
    """Write (name, CameraIntrinsics, CameraPose) triples to a pose file."""
    lines = [_POSE_MAGIC]
    for name, intr, pose in entries:
        if any(ch.isspace() for ch in name):
            raise ValueError(f"view name contains whitespace: {name!r}")
        lines.append(f"view {name}")
        lines.append(f"fx {float(intr.fx)!r}")
        lines.append(f"fy {float(intr.fy)!r}")
        lines.append(f"cx {float(intr.cx)!r}")
        lines.append(f"cy {float(intr.cy)!r}")
        lines.append("rotation " + " ".join(repr(float(v)) for v in pose.rotation.ravel()))
        lines.append("translation " + " ".join(repr(float(v)) for v in pose.translation))
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load_pose_file(path):
    """Parse a pose file strictly; returns (name, intrinsics, pose) triples."""
    with open(path) as fh:
        raw = fh.read().splitlines()

    def fail(lineno, msg):
        raise ValueError(f"{path}:{lineno}: {msg}")

    lines = [(i + 1, ln.strip()) for i, ln in enumerate(raw)]
    lines = [(no, ln) for no, ln in lines if ln and not ln.startswith("#")]
    if not lines or lines[0][1] != _POSE_MAGIC:
        raise ValueError(f"{path}: missing '{_POSE_MAGIC}' header")

    entries = []
    current_name, fields = None, {}

    def flush(lineno):
        if current_name is None:
            return
        missing = set(_FIELD_COUNTS) - set(fields)
        if missing:
            fail(lineno, f"view {current_name!r} is missing fields: {sorted(missing)}")
        intr = CameraIntrinsics(fields["fx"][0], fields["fy"][0], fields["cx"][0], fields["cy"][0])
        pose = CameraPose(np.array(fields["rotation"]).reshape(3, 3), np.array(fields["translation"]))
        entries.append((current_name, intr, pose))

    for lineno, line in lines[1:]:
        key, _, rest = line.partition(" ")
        if key == "view":
            flush(lineno)
            current_name, fields = rest.strip(), {}
            if not current_name:
                fail(lineno, "view line without a name")
            continue
        if current_name is None:
            fail(lineno, f"field {key!r} before any 'view' line")
        if key not in _FIELD_COUNTS:
            fail(lineno, f"unknown field {key!r}")
        if key in fields:
            fail(lineno, f"duplicate field {key!r} for view {current_name!r}")
        try:
            values = [float(tok) for tok in rest.split()]
        except ValueError:
            fail(lineno, f"non-numeric value in field {key!r}")
        if len(values) != _FIELD_COUNTS[key]:
            fail(lineno, f"field {key!r} expects {_FIELD_COUNTS[key]} values, got {len(values)}")
        fields[key] = values
    flush(len(raw))
    return entries


def scale_matrix(s):
    """Pixel-scaling homography diag(s, s, 1)."""
    return np.diag([float(s), float(s), 1.0])


def rotation_about_axis(axis, angle):
    """Rodrigues rotation; handy for building test rigs."""
    axis = np.asarray(axis, dtype=np.float64)
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)
