import numpy as np
import pytest

from multiplane.metrics import MetricReport, PSNR_CAP_DB, compare_views, psnr, ssim


class TestPsnr:
    def test_known_mse(self):
        a = np.zeros((3, 20, 20))
        b = np.full((3, 20, 20), 0.1)  # MSE = 0.01
        assert psnr(a, b) == pytest.approx(20.0)

    def test_identical_inputs_capped(self, rng):
        img = rng.random((3, 10, 10))
        assert psnr(img, img) == PSNR_CAP_DB

    def test_crop_region(self):
        a = np.zeros((3, 480, 800))
        b = np.zeros((3, 480, 800))
        b[:, :16, :] = 1.0  # damage only the cropped border
        assert psnr(a, b, crop=16) == PSNR_CAP_DB
        assert psnr(a, b) < PSNR_CAP_DB

    def test_crop_shrinks_to_expected_size(self):
        # metric over 448x768 after 16-px crop of 480x800: border-only noise ignored
        rng = np.random.default_rng(0)
        a = rng.random((3, 480, 800))
        b = a.copy()
        b[:, 200, 400] += 0.5
        full = psnr(a, b)
        cropped = psnr(a, b, crop=16)
        inner_pixels = 448 * 768
        # one bad pixel: MSE scales with region size
        assert 10 ** (-cropped / 10) == pytest.approx(10 ** (-full / 10) * (480 * 800) / inner_pixels, rel=1e-6)

    def test_symmetry(self, rng):
        a, b = rng.random((3, 12, 12)), rng.random((3, 12, 12))
        assert psnr(a, b) == psnr(b, a)

    def test_monotone_in_noise_level(self, rng):
        clean = rng.random((3, 64, 64))
        values = []
        for sigma in (0.01, 0.03, 0.07, 0.15, 0.3):
            noisy = clean + sigma * np.random.default_rng(7).standard_normal(clean.shape)
            values.append(psnr(clean, noisy))
        assert all(x > y for x, y in zip(values, values[1:]))

    def test_shape_mismatch_rejected(self):
        with pytest.raises(ValueError):
            psnr(np.zeros((3, 4, 4)), np.zeros((3, 4, 5)))


class TestSsim:
    def test_self_similarity_is_one(self, rng):
        img = rng.random((3, 24, 24))
        assert ssim(img, img) == pytest.approx(1.0)

    def test_constant_zero_vs_one(self):
        a = np.zeros((1, 16, 16))
        b = np.ones((1, 16, 16))
        # (2*0*1 + 1e-4) / ((0 + 1) + 1e-4)
        assert ssim(a, b) == pytest.approx(1e-4 / 1.0001, rel=1e-9)

    def test_anticorrelated_ramps_negative(self):
        # mirrored ramps: equal local statistics, negative covariance
        xs = np.linspace(0, 1, 32)
        a = np.tile(xs, (32, 1))[None]
        b = np.tile(xs[::-1], (32, 1))[None]
        assert ssim(a, b) < 0

    def test_bounded_on_random_pairs(self, rng):
        for _ in range(50):
            a, b = rng.random((1, 16, 16)), rng.random((1, 16, 16))
            value = ssim(a, b)
            assert -1.0 <= value <= 1.0

    def test_too_small_rejected(self):
        with pytest.raises(ValueError, match="window"):
            ssim(np.zeros((1, 8, 8)), np.zeros((1, 8, 8)))

    def test_grayscale_is_channel_mean(self, rng):
        img = rng.random((3, 20, 20))
        gray = np.repeat(img.mean(axis=0, keepdims=True), 3, axis=0)
        assert ssim(img, gray) == pytest.approx(1.0)


class TestReport:
    def test_lines_and_means(self):
        report = MetricReport(label="scene0", crop=16)
        report.add("a.ppm", 30.0, 0.9)
        report.add("b.ppm", 32.0, 0.95)
        lines = report.to_lines()
        assert lines[0] == "view scene0 a.ppm psnr 30.0000 ssim 0.900000"
        assert lines[-1].startswith("mean scene0 psnr 31.0000 ssim 0.925000")
        assert report.mean_psnr == pytest.approx(31.0)

    def test_compare_views(self, rng):
        out = rng.random((2, 3, 24, 24))
        report = compare_views(out, out, crop=0, label="x")
        assert report.psnr_values == [PSNR_CAP_DB] * 2
        assert report.ssim_values == pytest.approx([1.0, 1.0])
