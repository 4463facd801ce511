"""Fixed overcompositing of semi-transparent color/alpha planes.

Depth index orientation, stated once and relied on everywhere: index 0 is
the FARTHEST plane and index D-1 the nearest, matching `DepthPlaneSet`
(distances run far to near). The closed form

    out = sum_d  C_d * A_d * prod_{k > d} (1 - A_k)

therefore lets larger indices occlude smaller ones. Getting this orientation
backwards is the classic multiplane bug; `overcomposite_recursive` is the
independently-written back-to-front oracle used to pin it down.
"""

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, ops
from .autodiff import tensor as _tensor_mod
from .geometry import DepthPlaneSet  # noqa: F401  (re-exported for callers)


@dataclass
class MpiTensor:
    """Multiplane image: (D, 4, h, w) color+alpha planes, values in [0, 1]."""

    data: Tensor
    depth_planes: DepthPlaneSet
    reference: object = None
    scale: float = 1.0
    base_shape: tuple | None = None
    window: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not isinstance(self.data, Tensor):
            self.data = Tensor(self.data)
        d, c = self.data.shape[:2]
        if c != 4:
            raise ValueError(f"multiplane image needs 4 channels (RGBA), got {c}")
        if d < 1 or d != len(self.depth_planes):
            raise ValueError(f"plane count {d} does not match depth planes ({len(self.depth_planes)})")
        if self.base_shape is None:
            self.base_shape = self.data.shape[2:]


def _plane_data(z):
    """Accept MpiTensor, a single-view MPI ProjectedTensor, or a raw tensor."""
    if isinstance(z, Tensor):
        data = z
    else:
        data = getattr(z, "data", z)
        data = data if isinstance(data, Tensor) else Tensor(data)
    if data.ndim == 5:
        if data.shape[0] != 1:
            raise ValueError("overcomposite works on one view; loop render views instead")
        data = ops.reshape(data, data.shape[1:])
    if data.ndim != 4 or data.shape[1] != 4:
        raise ValueError(f"expected (D, 4, H, W) planes, got {data.shape}")
    if _tensor_mod.DEBUG_CHECKS:
        alpha = data.data[:, 3]
        if alpha.min() < 0 or alpha.max() > 1:
            raise ValueError(f"alpha outside [0, 1]: range [{alpha.min():.4g}, {alpha.max():.4g}]")
    return data


def overcomposite(z):
    """Closed-form compositing to a (3, H, W) image; differentiable."""
    planes = _plane_data(z)
    depth = planes.shape[0]
    out = None
    # Transmittance through the planes nearer than d, accumulated near-to-far.
    trans = Tensor(np.ones((1,) + planes.shape[2:], dtype=planes.dtype))
    for d in range(depth - 1, -1, -1):
        slab = ops.reshape(ops.narrow(planes, 0, d, 1), planes.shape[1:])
        color = ops.narrow(slab, 0, 0, 3)
        alpha = ops.narrow(slab, 0, 3, 1)
        term = ops.mul(ops.mul(color, alpha), trans)
        out = term if out is None else ops.add(out, term)
        trans = ops.mul(trans, ops.sub(1.0, alpha))
    return out


def overcomposite_recursive(z):
    """Back-to-front `over` oracle: out = C_d A_d + (1 - A_d) out, far to near."""
    planes = _plane_data(z)
    depth = planes.shape[0]
    out = Tensor(np.zeros((3,) + planes.shape[2:], dtype=planes.dtype))
    for d in range(depth):
        slab = ops.reshape(ops.narrow(planes, 0, d, 1), planes.shape[1:])
        color = ops.narrow(slab, 0, 0, 3)
        alpha = ops.narrow(slab, 0, 3, 1)
        out = ops.add(ops.mul(color, alpha), ops.mul(ops.sub(1.0, alpha), out))
    return out
