"""Signal-dependent Gaussian noise synthesis and per-pixel sigma estimation.

A noisy observation of a clean linear intensity I* is drawn from
N(I*, sigma_r^2 + sigma_s * I*). The (sigma_r, sigma_s) pairs are indexed by
an integer gain level via a log10 table; log base 10 puts the sigmas in the
range expected for [0, 1] linear intensities. Gains 1 and 2 extend the
tabulated levels by the same 0.36-per-octave progression the listed levels
follow.

Noisy values are NOT clamped to [0, 1]: clamping would bias the statistics
this module guarantees. Sampling uses the counter-based Philox generator
keyed by the seed, so generation is order-independent and parallel-safe.
"""

from dataclasses import dataclass

import numpy as np

# gain -> (log10 sigma_r, log10 sigma_s)
_LOG_SIGMA = {
    1: (-2.16, -2.56),
    2: (-1.80, -2.20),
    4: (-1.44, -1.84),
    8: (-1.08, -1.48),
    16: (-0.72, -1.12),
    20: (-0.60, -1.00),
}

SUPPORTED_GAINS = tuple(sorted(_LOG_SIGMA))


@dataclass(frozen=True)
class NoiseParams:
    sigma_r: float
    sigma_s: float
    gain: int | None = None

    def __post_init__(self):
        if self.sigma_r < 0 or self.sigma_s < 0:
            raise ValueError("noise sigmas must be non-negative")

    def variance(self, intensity):
        """Per-pixel variance sigma_r^2 + sigma_s * I* (I* clipped at 0)."""
        return self.sigma_r**2 + self.sigma_s * np.maximum(np.asarray(intensity, dtype=np.float64), 0.0)


def gain_to_params(gain):
    """Noise parameters for a supported gain level."""
    gain = int(gain)
    if gain not in _LOG_SIGMA:
        raise ValueError(f"unsupported gain {gain}; supported: {SUPPORTED_GAINS}")
    log_r, log_s = _LOG_SIGMA[gain]
    return NoiseParams(10.0**log_r, 10.0**log_s, gain)


def add_noise(clean, params, seed):
    """Corrupt a clean [0, 1] tensor; deterministic given the seed, unclamped."""
    clean = np.asarray(clean)
    if clean.min() < 0 or clean.max() > 1:
        raise ValueError("clean input must lie in [0, 1]")
    rng = np.random.Generator(np.random.Philox(key=np.uint64(seed)))
    std = np.sqrt(params.variance(clean))
    noisy = clean + std * rng.standard_normal(clean.shape)
    return noisy.astype(np.float32)


def sigma_map(observed, params):
    """Per-pixel noise standard deviation estimate, (1, H, W).

    Computed from the observation itself (which may dip below zero); negative
    intensities clip to the read-noise floor, so the map is monotone
    nondecreasing in the observed value.
    """
    observed = np.asarray(observed)
    if observed.ndim == 3:
        observed = observed.mean(axis=0)
    return np.sqrt(params.variance(observed)).astype(np.float32)[None]
