#!/usr/bin/env python3
"""Benchmark the compiled kernels against the NumPy reference backend.

Times the four hot kernels at pipeline-realistic sizes plus one full
forward+backward training step with each backend. Run from the repo root:

    python benchmarks/bench_kernels.py [--repeats N]

Select the pure-NumPy backend in a live session with MULTIPLANE_NO_NATIVE=1.
"""

import argparse
import os
import time

os.environ.setdefault("OPENBLAS_NUM_THREADS", "1")

import numpy as np


def timeit(fn, repeats):
    fn()
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    from multiplane.kernels import _native, reference

    rng = np.random.default_rng(0)
    rows = []

    src = rng.random((4, 4, 80, 80)).astype(np.float32)
    mats = np.stack([np.eye(3) + 0.02 * rng.standard_normal((3, 3)) for _ in range(32)])
    mats[:, 2, :2] *= 0.01
    idx = rng.integers(0, 4, 32).astype(np.int64)
    rows.append(("warp_forward_multi 32x(4,80,80)",
                 timeit(lambda: reference.warp_forward_multi(src, idx, mats, 56, 56), repeats),
                 timeit(lambda: _native.warp_forward_multi(src, idx, mats, 56, 56), repeats)))

    grad = rng.random((32, 16, 56, 56)).astype(np.float32)
    mats16 = mats
    rows.append(("warp_backward_multi 32x(16,56,56)",
                 timeit(lambda: reference.warp_backward_multi(grad, idx, mats16, 4, 56, 56), repeats),
                 timeit(lambda: _native.warp_backward_multi(grad, idx, mats16, 4, 56, 56), repeats)))

    x = rng.random((8, 16, 56, 56)).astype(np.float32)
    rows.append(("im2col_batch (8,16,56,56) k3",
                 timeit(lambda: reference.im2col_batch(x, 3, 1, 1), repeats),
                 timeit(lambda: _native.im2col_batch(x, 3, 1, 1), repeats)))

    cols = _native.im2col_batch(x, 3, 1, 1)
    rows.append(("col2im_batch (8,16,56,56) k3",
                 timeit(lambda: reference.col2im_batch(cols, 8, 56, 56, 3, 1, 1), repeats),
                 timeit(lambda: _native.col2im_batch(cols, 8, 56, 56, 3, 1, 1), repeats)))
    return rows


def bench_training_step(repeats):
    """One desk-preset forward+backward patch step, per backend."""
    import subprocess
    import sys

    script = r"""
import os, time
import numpy as np
from multiplane import config_from_preset, sample_depth_planes, reference_camera
from multiplane.pipeline import MultiplaneFeatureModel
from multiplane.scenes import SceneSpec, make_scene, make_rig, render_dataset
from multiplane.geometry import CameraView
from multiplane.noise import gain_to_params, add_noise
from multiplane.autodiff import Tape, ops
import multiplane.kernels as K

scene = make_scene(SceneSpec(layer_count=3, seed=1))
rig = make_rig(4, (80, 80), seed=2)
imgs = render_dataset(scene, rig, (80, 80))
views = [CameraView(c.intrinsics, c.pose, img) for c, img in zip(rig, imgs)]
params = gain_to_params(20)
noisy = [CameraView(v.intrinsics, v.pose, add_noise(v.image, params, 100 + i)) for i, v in enumerate(views)]
cfg = config_from_preset("desk", view_count=4, mode="denoise", near=2.0, far=45.0)
model = MultiplaneFeatureModel(cfg, seed=0)
ref = reference_camera(noisy, (80, 80), far=cfg.far)
planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)

def one():
    with Tape() as tape:
        out = model.forward(noisy, ref, planes, render_cameras=noisy, noise_params=params,
                            window=(8, 8), patch_size=(56, 56), render_windows=[(8, 8)] * 4, out_size=(56, 56))
        clean = np.stack([v.image[:, 8:64, 8:64] for v in views])
        loss = ops.l1_loss(out, clean)
        tape.backward(loss)

one()
t0 = time.perf_counter()
n = REPEATS
for _ in range(n):
    one()
print(K.BACKEND, (time.perf_counter() - t0) / n)
"""
    rows = []
    for env_flag in ("", "1"):
        env = dict(os.environ)
        if env_flag:
            env["MULTIPLANE_NO_NATIVE"] = env_flag
        out = subprocess.run([sys.executable, "-c", script.replace("REPEATS", str(repeats))],
                             capture_output=True, text=True, env=env, check=True)
        backend, seconds = out.stdout.split()
        rows.append((backend, float(seconds)))
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=10)
    args = parser.parse_args()

    print(f"{'kernel':40s} {'reference':>12s} {'native':>12s} {'speedup':>9s}")
    for name, ref_t, nat_t in bench_kernels(args.repeats):
        print(f"{name:40s} {ref_t * 1e3:9.2f} ms {nat_t * 1e3:9.2f} ms {ref_t / nat_t:8.2f}x")

    print("\nfull training step (desk preset, one patch example):")
    rows = dict(bench_training_step(max(3, args.repeats // 3)))
    for backend, seconds in rows.items():
        print(f"  {backend:10s} {seconds * 1e3:8.1f} ms/step")
    if "native" in rows and "reference" in rows:
        print(f"  end-to-end speedup: {rows['reference'] / rows['native']:.2f}x")


if __name__ == "__main__":
    main()
