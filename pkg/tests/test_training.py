import numpy as np
import pytest

from multiplane.autodiff import Tape, ops
from multiplane.geometry import CameraView, reference_camera, sample_depth_planes
from multiplane.noise import gain_to_params
from multiplane.pipeline import MultiplaneFeatureModel, PipelineConfig
from multiplane.scenes import SceneSpec, make_rig, make_scene, render_dataset
from multiplane.training import (
    MAX_PATCH_RESAMPLES,
    SceneBundle,
    TrainConfig,
    TrainingAborted,
    bundle_for_synthesis,
    evaluate,
    sample_patch,
    train,
)


def tiny_config(**overrides):
    kwargs = dict(depth_count=2, channels=2, scale=1.0, view_count=2, mode="denoise", skip_connection=True,
                  collapse_channels=4, unet_base=4, unet_levels=1, near=3.0, far=25.0)
    kwargs.update(overrides)
    return PipelineConfig(**kwargs)


def tiny_bundle(seed=0, size=(20, 20), views=2):
    scene = make_scene(SceneSpec(layer_count=2, seed=seed, depth_range=(4.0, 20.0)))
    rig = make_rig(views, size, seed=seed + 100, spacing=0.1)
    images = render_dataset(scene, rig, size)
    return SceneBundle([CameraView(c.intrinsics, c.pose, img) for c, img in zip(rig, images)])


class TestTrainConfig:
    def test_lr_schedule_boundary(self):
        cfg = TrainConfig(steps=100, lr=1.5e-3, lr_drop_factor=0.1)
        assert cfg.lr_drop_step == 80  # 80% of steps, matching the full-scale ratio
        assert cfg.lr_at(79) == pytest.approx(1.5e-3)
        assert cfg.lr_at(80) == pytest.approx(1.5e-4)  # dropped at the boundary
        assert cfg.lr_at(99) == pytest.approx(1.5e-4)

    def test_explicit_drop_step(self):
        cfg = TrainConfig(steps=10, lr_drop_step=5)
        assert cfg.lr_at(4) == cfg.lr and cfg.lr_at(5) == cfg.lr * cfg.lr_drop_factor

    def test_invalid_drop_step(self):
        with pytest.raises(ValueError):
            TrainConfig(steps=10, lr_drop_step=10)


class TestSamplePatch:
    def test_reference_target_full_coverage(self):
        bundle = tiny_bundle(seed=1)
        cfg = tiny_config()
        reference = reference_camera(bundle.input_views, bundle.image_size, far=cfg.far)
        planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)
        # target at the reference camera itself: coverage is total
        ref_bundle = SceneBundle([CameraView(reference.intrinsics, reference.pose, bundle.views[0].image)])
        tc = TrainConfig(steps=1, patch_size=20, gains=(8,), seed=0)
        example = sample_patch(ref_bundle, reference, planes, 1.0, np.random.default_rng(0), tc, "denoise")
        assert all(np.all(mask == 1.0) for mask in example.masks)

    def test_threshold_strictly_greater(self):
        # 12 of 16 planes (75%) is masked out; 13 of 16 (81.25%) is kept
        counts = np.array([[12, 13], [16, 0]])
        keep = counts * 10 > 8 * 16
        assert keep.tolist() == [[False, True], [True, False]]

    def test_non_overlapping_frusta_raise(self):
        bundle = tiny_bundle(seed=2)
        cfg = tiny_config()
        planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)
        # reference displaced far sideways: nothing lands in bounds
        from conftest import make_view

        reference = make_view(fx=20.0, cx=9.5, cy=9.5, center=(500.0, 0.0, 0.0))
        tc = TrainConfig(steps=1, patch_size=16, gains=(8,), seed=0)
        with pytest.raises(ValueError, match="frusta"):
            sample_patch(bundle, reference, planes, 1.0, np.random.default_rng(0), tc, "denoise")
        assert MAX_PATCH_RESAMPLES == 100

    def test_patch_larger_than_image_rejected(self):
        bundle = tiny_bundle(seed=3)
        cfg = tiny_config()
        reference = reference_camera(bundle.input_views, bundle.image_size, far=cfg.far)
        planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)
        tc = TrainConfig(steps=1, patch_size=32, gains=(8,), seed=0)
        with pytest.raises(ValueError, match="patch size"):
            sample_patch(bundle, reference, planes, 1.0, np.random.default_rng(0), tc, "denoise")

    def test_synthesis_picks_holdout_target(self):
        scene = make_scene(SceneSpec(layer_count=2, seed=5, depth_range=(4.0, 20.0)))
        rig = make_rig(4, (20, 20), seed=6, spacing=0.1)
        images = render_dataset(scene, rig, (20, 20))
        views = [CameraView(c.intrinsics, c.pose, img) for c, img in zip(rig, images)]
        bundle = bundle_for_synthesis(views, holdout=1)
        assert bundle.input_indices == [0, 1, 2] and bundle.target_indices == [3]
        cfg = tiny_config(view_count=3, mode="synthesis", skip_connection=False)
        reference = reference_camera(bundle.input_views, (20, 20), far=cfg.far)
        planes = sample_depth_planes(cfg.near, cfg.far, cfg.depth_count)
        tc = TrainConfig(steps=1, patch_size=16, seed=0)
        example = sample_patch(bundle, reference, planes, 1.0, np.random.default_rng(1), tc, "synthesis")
        assert example.target_indices == [3]
        assert example.gain is None


class TestTrain:
    def test_loss_decreases_on_overfit(self):
        bundle = tiny_bundle(seed=7)
        cfg = tiny_config()
        model = MultiplaneFeatureModel(cfg, seed=0)
        tc = TrainConfig(steps=60, batch_size=1, patch_size=16, gains=(8,), seed=3, log_every=20)
        result = train(tc, model, [bundle])
        first = np.mean([v for _, _, v in result.loss_curve[:5]])
        last = np.mean([v for _, _, v in result.loss_curve[-5:]])
        assert last < first * 0.6

    def test_overfit_smoke_drives_l1_below_bar(self):
        # one tiny synthesis scene, fixed seeds: the repo's baseline run puts
        # the 500-step trailing loss at 0.016, so 0.02 is the committed bar
        scene = make_scene(SceneSpec(layer_count=2, seed=7, depth_range=(4.0, 20.0)))
        rig = make_rig(3, (20, 20), seed=107, spacing=0.1)
        images = render_dataset(scene, rig, (20, 20))
        views = [CameraView(c.intrinsics, c.pose, img) for c, img in zip(rig, images)]
        bundle = bundle_for_synthesis(views, holdout=1)
        cfg = tiny_config(depth_count=4, unet_base=8, collapse_channels=8, mode="synthesis",
                          skip_connection=False, near=3.0, far=25.0)
        model = MultiplaneFeatureModel(cfg, seed=0)
        schedule = TrainConfig(steps=500, batch_size=1, patch_size=16, seed=3)
        result = train(schedule, model, [bundle])
        trailing = np.mean([value for _, _, value in result.loss_curve[-20:]])
        assert trailing < 0.02

    def test_bitwise_deterministic_checkpoints(self, tmp_path):
        bundle = tiny_bundle(seed=8)
        cfg = tiny_config()
        for run in ("a", "b"):
            model = MultiplaneFeatureModel(cfg, seed=1)
            tc = TrainConfig(steps=8, batch_size=1, patch_size=16, gains=(4, 20), seed=11)
            train(tc, model, [bundle], out_dir=str(tmp_path / run))
        for name in ("checkpoint/params.bin", "checkpoint/manifest.txt", "loss_log.txt"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes(), name

    def test_loss_log_format(self, tmp_path):
        bundle = tiny_bundle(seed=9)
        model = MultiplaneFeatureModel(tiny_config(), seed=0)
        tc = TrainConfig(steps=3, batch_size=1, patch_size=16, gains=(8,), seed=0, log_every=1)
        train(tc, model, [bundle], out_dir=str(tmp_path))
        lines = (tmp_path / "loss_log.txt").read_text().splitlines()
        assert len(lines) == 3
        for line in lines:
            fields = line.split()
            assert fields[0] == "step" and fields[2] == "lr" and fields[4] == "loss"
            float(fields[3]), float(fields[5])

    def test_nan_loss_aborts_with_checkpoint(self, tmp_path):
        bundle = tiny_bundle(seed=10)
        model = MultiplaneFeatureModel(tiny_config(), seed=0)
        # poison one weight at step 2 via a callback-free trick: blow up the lr
        # so the next loss goes non-finite
        tc = TrainConfig(steps=40, batch_size=1, patch_size=16, gains=(8,), seed=0, lr=1e18, lr_drop_step=39)
        with pytest.raises(TrainingAborted, match="last good checkpoint retained"):
            with np.errstate(over="ignore", invalid="ignore"):
                train(tc, model, [bundle], out_dir=str(tmp_path))
        assert (tmp_path / "checkpoint" / "params.bin").exists()
        loaded = np.fromfile(tmp_path / "checkpoint" / "params.bin", dtype=np.float32)
        assert np.all(np.isfinite(loaded))

    def test_masked_pixels_get_zero_gradient(self):
        # perturbation test: zero-mask region contributes exactly no gradient
        rng = np.random.default_rng(0)
        pred = rng.random((1, 3, 8, 8))
        target = rng.random((1, 3, 8, 8))
        mask = np.zeros((1, 1, 8, 8))
        mask[:, :, :4] = 1.0
        from multiplane.autodiff import Tensor

        p = Tensor(pred, requires_grad=True)
        with Tape() as tape:
            loss = ops.l1_loss(p, Tensor(target), mask)
        grads = tape.gradients(loss)
        assert np.all(grads[p][:, :, 4:] == 0)
        assert np.any(grads[p][:, :, :4] != 0)


class TestEvaluate:
    def test_denoise_report_per_gain(self):
        bundle = tiny_bundle(seed=12)
        model = MultiplaneFeatureModel(tiny_config(), seed=0)
        reports = evaluate(model, [bundle], gains=(4, 8, 16, 20))
        assert len(reports) == 4
        labels = [r.label for r in reports]
        assert labels == ["scene0-gain4", "scene0-gain8", "scene0-gain16", "scene0-gain20"]
        assert all(r.crop == 0 for r in reports)

    def test_synthesis_crops_16(self):
        scene = make_scene(SceneSpec(layer_count=2, seed=13, depth_range=(4.0, 20.0)))
        rig = make_rig(3, (48, 48), seed=14, spacing=0.1)
        images = render_dataset(scene, rig, (48, 48))
        views = [CameraView(c.intrinsics, c.pose, img) for c, img in zip(rig, images)]
        bundle = bundle_for_synthesis(views, holdout=1)
        cfg = tiny_config(view_count=2, mode="synthesis", skip_connection=False)
        model = MultiplaneFeatureModel(cfg, seed=0)
        reports = evaluate(model, [bundle])
        assert len(reports) == 1 and reports[0].crop == 16

    def test_identity_model_on_clean_inputs_hits_cap(self, monkeypatch):
        # identity pipeline + noise-free inputs: every view scores the 99 dB cap
        class IdentityModel:
            config = tiny_config()

            def forward(self, views, reference, planes, render_cameras, **kwargs):
                from multiplane.autodiff import Tensor

                return Tensor(np.stack([v.image for v in views]))

        from multiplane import training as training_mod

        monkeypatch.setattr(training_mod, "add_noise", lambda clean, params, seed: np.asarray(clean, np.float32))
        reports = evaluate(IdentityModel(), [tiny_bundle(seed=15)], gains=(20,))
        assert all(p == 99.0 for r in reports for p in r.psnr_values)
