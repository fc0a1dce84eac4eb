"""Image quality metrics: PSNR, SSIM and MSE."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

PSNR_CAP = 99.99


@dataclass
class MetricReport:
    psnr: float
    ssim: float
    mse: float


def mse(a, b) -> float:
    a, b = _pair(a, b)
    return float(np.mean((a - b) ** 2))


def psnr(test, reference, literal: bool = False) -> float:
    """PSNR in dB with the reference maximum as peak.

    By default the noise term is the per-pixel RMSE. ``literal=True`` uses the
    unnormalized L2 norm of the difference instead. Identical inputs give
    ``PSNR_CAP``.
    """
    test, reference = _pair(test, reference)
    diff = test - reference
    denom = np.linalg.norm(diff) if literal else np.sqrt(np.mean(diff ** 2))
    if denom == 0:
        return PSNR_CAP
    return float(min(20 * np.log10(np.max(reference) / denom), PSNR_CAP))


def ssim(a, b, data_range: float | None = None, sigma: float = 1.5) -> float:
    """Mean SSIM over 11x11 Gaussian windows (sigma 1.5), K1=0.01, K2=0.03."""
    a, b = _pair(a, b)
    if data_range is None:
        data_range = float(max(a.max(), b.max()) - min(a.min(), b.min())) or 1.0
    if not data_range > 0:
        raise ValueError("data_range must be positive")
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2

    def blur(z):
        return gaussian_filter(z, sigma, truncate=3.5, mode="reflect")

    mu_a, mu_b = blur(a), blur(b)
    var_a = blur(a * a) - mu_a ** 2
    var_b = blur(b * b) - mu_b ** 2
    cov = blur(a * b) - mu_a * mu_b
    num = (2 * mu_a * mu_b + c1) * (2 * cov + c2)
    den = (mu_a ** 2 + mu_b ** 2 + c1) * (var_a + var_b + c2)
    r = 5  # half window; drop the border like the reference implementation
    if min(a.shape) > 2 * r:
        num, den = num[r:-r, r:-r], den[r:-r, r:-r]
    return float(np.mean(num / den))


def report(test, reference, data_range: float | None = None) -> MetricReport:
    ref = np.asarray(reference, dtype=np.float64)
    if data_range is None:
        data_range = float(ref.max() - ref.min()) or 1.0
    return MetricReport(psnr(test, ref), ssim(test, ref, data_range), mse(test, ref))


def _pair(a, b):
    a = np.asarray(getattr(a, "values", a), dtype=np.float64)
    b = np.asarray(getattr(b, "values", b), dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    return a, b
