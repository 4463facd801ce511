"""PSNR and SSIM for evaluation tables.

SSIM uses the standard reference constants (11x11 Gaussian window with
sigma 1.5, K1=0.01, K2=0.03, dynamic range L=1) so numbers are comparable
across implementations; color images are converted to grayscale by channel
mean and only fully-valid window positions contribute (no padding).
"""

from dataclasses import dataclass, field

import numpy as np

PSNR_CAP_DB = 99.0

_WINDOW = 11
_SIGMA = 1.5
_K1, _K2 = 0.01, 0.03


def psnr(a, b, peak=1.0, crop=0):
    """10 log10(peak^2 / MSE) over the crop-trimmed region, capped at 99 dB."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if crop:
        if 2 * crop >= a.shape[-1] or 2 * crop >= a.shape[-2]:
            raise ValueError(f"crop {crop} leaves no pixels for shape {a.shape}")
        a = a[..., crop:-crop, crop:-crop]
        b = b[..., crop:-crop, crop:-crop]
    mse = np.mean((a - b) ** 2)
    if mse == 0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 10.0 * np.log10(peak**2 / mse))


def _gaussian_window(size=_WINDOW, sigma=_SIGMA):
    half = (size - 1) / 2.0
    x = np.arange(size) - half
    w = np.exp(-(x**2) / (2.0 * sigma**2))
    return w / w.sum()


def _filter_valid(img, window):
    """Separable 'valid' correlation with a 1-D window, both axes."""
    k = len(window)
    rows = np.lib.stride_tricks.sliding_window_view(img, k, axis=0) @ window
    return np.lib.stride_tricks.sliding_window_view(rows, k, axis=1) @ window


def ssim(a, b, peak=1.0, crop=0):
    """Mean local SSIM over valid window positions; grayscale = channel mean."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    if a.ndim == 3:
        a, b = a.mean(axis=0), b.mean(axis=0)
    if crop:
        a = a[crop:-crop, crop:-crop]
        b = b[crop:-crop, crop:-crop]
    if min(a.shape) < _WINDOW:
        raise ValueError(f"image {a.shape} smaller than the {_WINDOW}x{_WINDOW} SSIM window")

    window = _gaussian_window()
    c1 = (_K1 * peak) ** 2
    c2 = (_K2 * peak) ** 2
    mu_a = _filter_valid(a, window)
    mu_b = _filter_valid(b, window)
    var_a = _filter_valid(a * a, window) - mu_a**2
    var_b = _filter_valid(b * b, window) - mu_b**2
    cov = _filter_valid(a * b, window) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


@dataclass
class MetricReport:
    """Per-view image quality plus the means; renders as line-oriented text."""

    label: str = ""
    crop: int = 0
    view_names: list = field(default_factory=list)
    psnr_values: list = field(default_factory=list)
    ssim_values: list = field(default_factory=list)

    def add(self, name, psnr_db, ssim_value):
        self.view_names.append(name)
        self.psnr_values.append(float(psnr_db))
        self.ssim_values.append(float(ssim_value))

    @property
    def mean_psnr(self):
        return float(np.mean(self.psnr_values)) if self.psnr_values else float("nan")

    @property
    def mean_ssim(self):
        return float(np.mean(self.ssim_values)) if self.ssim_values else float("nan")

    def to_lines(self):
        lines = []
        for name, p, s in zip(self.view_names, self.psnr_values, self.ssim_values):
            lines.append(f"view {self.label} {name} psnr {p:.4f} ssim {s:.6f}")
        lines.append(f"mean {self.label} psnr {self.mean_psnr:.4f} ssim {self.mean_ssim:.6f} crop {self.crop}")
        return lines


def compare_views(outputs, targets, names=None, crop=0, label=""):
    """Bulk PSNR/SSIM of (R, 3, H, W) stacks into a MetricReport."""
    outputs = np.asarray(outputs)
    targets = np.asarray(targets)
    if outputs.shape != targets.shape:
        raise ValueError(f"shape mismatch: {outputs.shape} vs {targets.shape}")
    report = MetricReport(label=label, crop=crop)
    for i in range(outputs.shape[0]):
        name = names[i] if names else f"{i:03d}"
        report.add(name, psnr(outputs[i], targets[i], crop=crop), ssim(outputs[i], targets[i], crop=crop))
    return report
