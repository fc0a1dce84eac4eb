"""Poisson transmission model for low-dose sinograms and PWLS statistical weights.

Sinogram values are in calibrated units: the expected photon count of ray ``i``
is ``I0_i * exp(-x_i / eta) + r_i``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Sinogram

COUNT_FLOOR = 1.0


@dataclass
class PhotonModel:
    """Source intensity ``I0`` (scalar or per-ray), background counts and calibration scale."""

    source_intensity: float | np.ndarray = 1e5
    background: float | np.ndarray = 0.0
    eta: float = 22000.0
    rng_seed: int = 0

    def __post_init__(self):
        a = np.asarray(self.source_intensity, dtype=np.float64)
        r = np.asarray(self.background, dtype=np.float64)
        if np.any(r < 0) or np.any(a <= r):
            raise ValueError("photon model requires source_intensity > background >= 0")
        if not self.eta > 0:
            raise ValueError("eta must be positive")

    def expected_counts(self, x: np.ndarray) -> np.ndarray:
        return self.source_intensity * np.exp(-np.asarray(x) / self.eta) + self.background


def _values(x):
    return x.values if isinstance(x, Sinogram) else np.asarray(x, dtype=np.float64)


def simulate_counts(x: Sinogram | np.ndarray, model: PhotonModel, rng=None) -> np.ndarray:
    """Independent Poisson photon counts per ray, seeded by ``model.rng_seed`` unless ``rng`` is given."""
    v = _values(x)
    if not np.all(np.isfinite(v)):
        raise ValueError("sinogram contains non-finite values")
    rng = np.random.default_rng(model.rng_seed) if rng is None else rng
    return rng.poisson(model.expected_counts(v)).astype(np.float64)


def log_transform(counts: np.ndarray, model: PhotonModel, count_floor: float = COUNT_FLOOR) -> Sinogram:
    """``y = eta * ln(I0 / max(L - r, floor))``."""
    net = np.maximum(np.asarray(counts, dtype=np.float64) - model.background, count_floor)
    y = model.eta * np.log(model.source_intensity / net)
    return Sinogram(np.broadcast_to(y, np.shape(counts)).copy(), scale=model.eta)


def pwls_weights(y: Sinogram | np.ndarray, model: PhotonModel) -> np.ndarray:
    """Inverse-variance weights ``I0 * exp(-y / eta)`` (the variance of ``y`` is ``eta^2 / w``)."""
    v = _values(y)
    return np.broadcast_to(model.source_intensity * np.exp(-v / model.eta), v.shape).copy()


def simulate_lowdose(x: Sinogram, model: PhotonModel, rng=None) -> tuple[np.ndarray, Sinogram, np.ndarray]:
    """Counts, log-transformed noisy sinogram and its weights for a clean sinogram ``x``."""
    counts = simulate_counts(x, model, rng)
    y = log_transform(counts, model)
    return counts, y, pwls_weights(y, model)
