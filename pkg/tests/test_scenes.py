import numpy as np
import pytest

from conftest import make_view
from multiplane.geometry import CameraIntrinsics, CameraPose, CameraView
from multiplane.scenes import (
    SceneSpec,
    load_scene,
    make_occlusion_scene,
    make_rig,
    make_scene,
    read_image,
    render_ground_truth,
    save_scene,
    write_image,
)


class TestMakeScene:
    def test_deterministic(self):
        spec = SceneSpec(layer_count=4, seed=77)
        a, b = make_scene(spec), make_scene(spec)
        for la, lb in zip(a.layers, b.layers):
            assert la.depth == lb.depth
            assert np.array_equal(la.texture, lb.texture)
            assert np.array_equal(la.opacity, lb.opacity)

    def test_depths_decrease_within_range(self):
        scene = make_scene(SceneSpec(layer_count=6, depth_range=(1.5, 30.0), seed=3))
        depths = scene.depths
        assert all(a > b for a, b in zip(depths, depths[1:]))
        assert all(1.5 <= d <= 30.0 for d in depths)

    def test_depths_stratified_in_disparity(self):
        scene = make_scene(SceneSpec(layer_count=8, depth_range=(2.0, 40.0), seed=5))
        disp = np.sort(1.0 / np.asarray(scene.depths))
        edges = np.linspace(1 / 40.0, 1 / 2.0, 9)
        for value, lo, hi in zip(disp, edges[:-1], edges[1:]):
            assert lo <= value <= hi

    def test_background_is_opaque(self):
        scene = make_scene(SceneSpec(layer_count=3, seed=1))
        assert np.all(scene.layers[0].opacity == 1.0)

    def test_invalid_specs_rejected(self):
        with pytest.raises(ValueError):
            SceneSpec(layer_count=0)
        with pytest.raises(ValueError):
            SceneSpec(layer_count=9)
        with pytest.raises(ValueError):
            SceneSpec(layer_count=2, depth_range=(5.0, 2.0))
        with pytest.raises(ValueError):
            SceneSpec(layer_count=2, texture="marble")

    @pytest.mark.parametrize("kind", ["checker", "noise", "ramp"])
    def test_texture_kinds_in_range(self, kind):
        scene = make_scene(SceneSpec(layer_count=2, texture=kind, seed=9))
        for layer in scene.layers:
            assert layer.texture.min() >= 0.0 and layer.texture.max() <= 1.0


class TestRenderGroundTruth:
    def test_single_layer_from_axis_camera(self):
        # ramp texture seen head-on from the origin reproduces the texture
        scene = make_scene(SceneSpec(layer_count=1, texture="ramp", seed=2, depth_range=(9.0, 10.0)))
        cam = make_view(fx=64.0, cx=31.5, cy=31.5, center=(0, 0, 0))
        img = render_ground_truth(scene, cam, (64, 64))
        assert img.shape == (3, 64, 64)
        assert img.min() >= 0.0 and img.max() <= 1.0
        # a ramp stays a ramp: rows are affine in x (up to supersampling filter)
        row = img[0, 32]
        diffs = np.diff(row[8:-8])
        assert np.abs(diffs - diffs.mean()).max() < 5e-3

    def test_translation_shifts_by_disparity(self):
        # camera moved by t_x sees the layer shifted by f * t_x / depth pixels
        depth, fx, t_x = 10.0, 64.0, 0.5
        scene = make_scene(SceneSpec(layer_count=1, texture="noise", seed=6, depth_range=(depth - 0.01, depth)))
        actual_depth = scene.layers[0].depth
        cam0 = make_view(fx=fx, cx=31.5, cy=31.5, center=(0, 0, 0))
        cam1 = make_view(fx=fx, cx=31.5, cy=31.5, center=(t_x, 0, 0))
        img0 = render_ground_truth(scene, cam0, (64, 64))
        img1 = render_ground_truth(scene, cam1, (64, 64))
        shift = fx * t_x / actual_depth
        lo = int(np.floor(shift)) + 1
        # img1(x) = img0 shifted left: content at pixel x in cam1 appears at x + shift in cam0
        xs = np.arange(lo, 50)
        interp = (1 - (shift % 1)) * img0[:, 10:50, xs] + (shift % 1) * img0[:, 10:50, xs + 1] \
            if shift % 1 else img0[:, 10:50, xs]
        sampled = img1[:, 10:50, lo:50]
        # compare against img0 sampled at x + shift (bilinear in x)
        base = np.floor(xs - shift + shift).astype(int)  # = xs
        x_src = xs + shift
        x0 = np.floor(x_src).astype(int)
        frac = x_src - x0
        expected = (1 - frac) * img0[:, 10:50, x0] + frac * img0[:, 10:50, x0 + 1]
        assert np.abs(sampled - expected).mean() < 5e-3

    def test_occlusion_fixture(self):
        scene = make_occlusion_scene(seed=4)
        cam = make_view(fx=48.0, cx=23.5, cy=23.5, center=(0, 0, 0))
        img = render_ground_truth(scene, cam, (48, 48))
        # render the layers separately: where the near disk is opaque the
        # composite equals the near layer, elsewhere the far layer
        from multiplane.scenes import SceneLayer, SyntheticScene

        near = scene.layers[1]
        far_only = render_ground_truth(SyntheticScene([scene.layers[0]]), cam, (48, 48))
        near_color = render_ground_truth(
            SyntheticScene([SceneLayer(near.depth, near.texture, np.ones_like(near.opacity), near.extent)]), cam, (48, 48)
        )
        mask = render_ground_truth(
            SyntheticScene([SceneLayer(near.depth, np.repeat(near.opacity[None], 3, 0), np.ones_like(near.opacity), near.extent)]),
            cam,
            (48, 48),
        )[0]
        fully_opaque = mask >= 1.0
        fully_clear = mask <= 0.0
        assert fully_opaque.sum() > 50 and fully_clear.sum() > 50
        assert np.allclose(img[:, fully_opaque], near_color[:, fully_opaque], atol=1e-5)
        assert np.allclose(img[:, fully_clear], far_only[:, fully_clear], atol=1e-5)


class TestImageIO:
    def test_16bit_roundtrip_quantized(self, tmp_path, rng):
        img = rng.random((3, 9, 13)).astype(np.float32)
        path = tmp_path / "img.ppm"
        write_image(path, img, bit_depth=16)
        back = read_image(path)
        assert back.shape == img.shape
        assert np.abs(back - img).max() <= 0.5 / 65535 + 1e-9

    def test_8bit_roundtrip(self, tmp_path, rng):
        img = rng.random((3, 5, 7)).astype(np.float32)
        path = tmp_path / "img.ppm"
        write_image(path, img, bit_depth=8)
        assert np.abs(read_image(path) - img).max() <= 0.5 / 255 + 1e-9

    def test_save_twice_identical_bytes(self, tmp_path, rng):
        img = rng.random((3, 6, 6)).astype(np.float32)
        write_image(tmp_path / "a.ppm", img)
        write_image(tmp_path / "b.ppm", img)
        assert (tmp_path / "a.ppm").read_bytes() == (tmp_path / "b.ppm").read_bytes()

    def test_ramp_quantization_bound(self, tmp_path):
        ramp = np.linspace(0, 1, 64, dtype=np.float64)
        img = np.tile(ramp, (3, 4, 1))
        write_image(tmp_path / "r.ppm", img, bit_depth=16)
        err = np.abs(read_image(tmp_path / "r.ppm").astype(np.float64) - img).max()
        assert err <= 1.0 / (2 * 65535) + 1e-12

    def test_truncated_file_rejected(self, tmp_path, rng):
        path = tmp_path / "img.ppm"
        write_image(path, rng.random((3, 8, 8)))
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(ValueError, match="pixel bytes"):
            read_image(path)

    def test_non_ppm_rejected(self, tmp_path):
        path = tmp_path / "img.ppm"
        path.write_bytes(b"PNG not really")
        with pytest.raises(ValueError, match="P6"):
            read_image(path)


class TestSceneIO:
    def _views(self, rng, count=3, size=8):
        views = []
        for i in range(count):
            views.append(
                CameraView(
                    CameraIntrinsics(10.0, 10.0, 3.5, 3.5),
                    CameraPose(np.eye(3), np.array([0.1 * i, 0.0, 0.0])),
                    rng.random((3, size, size)).astype(np.float32),
                )
            )
        return views

    def test_roundtrip(self, tmp_path, rng):
        views = self._views(rng)
        save_scene(tmp_path / "scene", views)
        loaded, names = load_scene(tmp_path / "scene")
        assert names == ["000.ppm", "001.ppm", "002.ppm"]
        for orig, back in zip(views, loaded):
            assert np.abs(orig.image - back.image).max() <= 0.5 / 65535 + 1e-9
            assert np.array_equal(orig.pose.translation, back.pose.translation)

    def test_image_without_pose_rejected(self, tmp_path, rng):
        save_scene(tmp_path / "scene", self._views(rng))
        extra = tmp_path / "scene" / "images" / "zzz.ppm"
        write_image(extra, rng.random((3, 8, 8)))
        with pytest.raises(ValueError, match="without a pose"):
            load_scene(tmp_path / "scene")

    def test_pose_without_image_rejected(self, tmp_path, rng):
        save_scene(tmp_path / "scene", self._views(rng))
        (tmp_path / "scene" / "images" / "001.ppm").unlink()
        with pytest.raises(ValueError, match="no image file"):
            load_scene(tmp_path / "scene")

    def test_resolution_mismatch_rejected(self, tmp_path, rng):
        save_scene(tmp_path / "scene", self._views(rng))
        write_image(tmp_path / "scene" / "images" / "001.ppm", rng.random((3, 9, 9)))
        with pytest.raises(ValueError, match="resolution mismatch"):
            load_scene(tmp_path / "scene")

    def test_missing_poses_file_rejected(self, tmp_path):
        (tmp_path / "scene").mkdir()
        with pytest.raises(ValueError, match="poses.txt"):
            load_scene(tmp_path / "scene")


class TestRig:
    def test_rig_centers_and_intrinsics(self):
        rig = make_rig(4, (32, 32), seed=0, spacing=0.25)
        assert len(rig) == 4
        centers = np.stack([v.pose.camera_center for v in rig])
        assert np.all(np.abs(np.linalg.norm(centers[:, :2], axis=1) - 0.25) < 0.25 * 0.11)
        assert np.all(centers[:, 2] == 0)

    def test_rig_deterministic(self):
        a = make_rig(5, (16, 16), seed=3)
        b = make_rig(5, (16, 16), seed=3)
        for va, vb in zip(a, b):
            assert np.array_equal(va.pose.translation, vb.pose.translation)
