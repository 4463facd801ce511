import os

# Single-threaded BLAS: faster at this package's GEMM sizes and keeps
# checkpoint bytes reproducible across machines with different core counts.
# The env vars only help if numpy is not loaded yet (pytest plugins may load
# it first), so the pools are also capped at runtime when threadpoolctl is
# available.
for _var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(_var, "1")
try:
    import threadpoolctl

    _pool_limit = threadpoolctl.threadpool_limits(limits=1)
except ImportError:
    _pool_limit = None

import numpy as np
import pytest

from multiplane.geometry import CameraIntrinsics, CameraPose, CameraView


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def identity_view():
    """Unit-intrinsics camera at the origin with no image."""
    return CameraView(CameraIntrinsics(1.0, 1.0, 0.0, 0.0), CameraPose.identity(), None)


def make_view(fx=50.0, cx=15.5, cy=15.5, center=(0.0, 0.0, 0.0), rotation=None, image=None):
    rotation = np.eye(3) if rotation is None else rotation
    t = rotation @ np.asarray(center, dtype=np.float64)
    return CameraView(CameraIntrinsics(fx, fx, cx, cy), CameraPose(rotation, t), image)
