"""Filtered back-projection for flat-detector fan beams and the SART-TV baseline."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import FanBeamGeometry, ImageGrid, Sinogram, pixel_centers
from .projector import system_matrix
from .tv import tv_gradient


@dataclass(frozen=True)
class FilterSpec:
    """Ramp filter, optionally apodized by a Hann window; ``cutoff`` is a fraction of Nyquist."""

    kind: str = "ramp"
    cutoff: float = 1.0

    def __post_init__(self):
        if self.kind not in ("ramp", "hann"):
            raise ValueError(f"unknown filter kind {self.kind!r}")
        if not 0 < self.cutoff <= 1:
            raise ValueError("cutoff must lie in (0, 1]")


def ramp_response(n: int, spacing: float, spec: FilterSpec = FilterSpec()) -> tuple[np.ndarray, int]:
    """Frequency response of the band-limited discrete ramp kernel, zero padded.

    Returns the response (length ``pad``) and ``pad``, the FFT length used for
    linear (not circular) convolution of ``n``-sample profiles.
    """
    pad = int(2 ** np.ceil(np.log2(2 * n)))
    k = np.arange(pad)
    k = np.where(k > pad // 2, k - pad, k)
    h = np.zeros(pad)
    h[0] = 1.0 / (4 * spacing ** 2)
    odd = k % 2 == 1
    h[odd] = -1.0 / (np.pi * k[odd] * spacing) ** 2
    resp = np.real(np.fft.fft(h)) * spacing
    resp[0] = 0.0  # the untruncated kernel has zero DC gain; truncation leaves a small residue
    f = np.abs(np.fft.fftfreq(pad)) / 0.5  # fraction of Nyquist
    if spec.kind == "hann":
        resp *= np.where(f <= spec.cutoff, 0.5 * (1 + np.cos(np.pi * f / spec.cutoff)), 0.0)
    elif spec.cutoff < 1:
        resp *= f <= spec.cutoff
    return resp, pad


def filter_profiles(profiles: np.ndarray, spacing: float, spec: FilterSpec = FilterSpec()) -> np.ndarray:
    """Convolve each row with the ramp kernel (times ``spacing``) along the last axis."""
    n = profiles.shape[-1]
    resp, pad = ramp_response(n, spacing, spec)
    out = np.fft.ifft(np.fft.fft(profiles, n=pad, axis=-1) * resp, axis=-1)
    return np.real(out[..., :n])


def fbp(sino: Sinogram, geom: FanBeamGeometry, width: int, height: int, pixel_size: float,
        filter: FilterSpec = FilterSpec()) -> ImageGrid:
    """Fan-beam FBP for equispaced flat detectors over a full rotation.

    Profiles are rebinned to a virtual detector through the rotation centre,
    cosine weighted, ramp filtered and back-projected with the inverse-square
    distance weight.
    """
    sino.check(geom)
    so = geom.source_to_center
    t = geom.detector_offsets() * so / (so + geom.detector_to_center)
    dt = geom.detector_pitch * so / (so + geom.detector_to_center)
    q = sino.line_integrals() * (so / np.sqrt(so ** 2 + t ** 2))[None, :]
    q = 0.5 * filter_profiles(q, dt, filter)

    x, y = pixel_centers(width, height, pixel_size)
    img = np.zeros((height, width))
    dbeta = geom.angle_span / geom.n_views
    for beta, row in zip(geom.angles(), q):
        c, s = np.cos(beta), np.sin(beta)
        dist = so - (x * c + y * s)
        tp = so * (-x * s + y * c) / dist
        img += np.interp(tp, t, row, left=0.0, right=0.0) * (so / dist) ** 2
    return ImageGrid(img * dbeta, pixel_size)


def sart_tv(sino: Sinogram, geom: FanBeamGeometry, width: int, height: int, pixel_size: float,
            n_iters: int = 20, relaxation: float = 1.0, tv_steps_per_iter: int = 10,
            tv_step_size: float = 0.2, history: list | None = None) -> ImageGrid:
    """SART sweeps over all views, each followed by normalized TV descent steps.
    The nonnegativity clamp is applied after the sweep and again after the TV steps.

    The TV step length is ``tv_step_size`` times the norm of the change made by
    the preceding sweep. If ``history`` is given, the data residual
    ``||A x - y||`` after every iteration is appended to it.
    """
    if n_iters < 1:
        raise ValueError("n_iters must be >= 1")
    if not 0 < relaxation < 2:
        raise ValueError("relaxation must lie in (0, 2)")
    sino.check(geom)
    a = system_matrix(geom, width, height, pixel_size)
    y = sino.line_integrals().ravel()
    row_sum = np.asarray(a.sum(axis=1)).ravel()
    col_sum = np.asarray(a.sum(axis=0)).ravel()
    inv_row = np.divide(1.0, row_sum, out=np.zeros_like(row_sum), where=row_sum > 0)
    inv_col = np.divide(1.0, col_sum, out=np.zeros_like(col_sum), where=col_sum > 0)
    at = a.T.tocsr()

    x = np.zeros(width * height)
    for _ in range(n_iters):
        before = x.copy()
        x = x + relaxation * inv_col * (at @ (inv_row * (y - a @ x)))
        np.maximum(x, 0.0, out=x)
        x = tv_descent(x.reshape(height, width), np.linalg.norm(x - before),
                       tv_steps_per_iter, tv_step_size).ravel()
        np.maximum(x, 0.0, out=x)
        if history is not None:
            history.append(float(np.linalg.norm(a @ x - y)))
    return ImageGrid(x.reshape(height, width), pixel_size)


def tv_descent(x: np.ndarray, scale: float, n_steps: int, step: float) -> np.ndarray:
    for _ in range(n_steps):
        g = tv_gradient(x)
        norm = np.linalg.norm(g)
        if norm == 0 or scale == 0:
            break
        x = x - step * scale * g / norm
    return x
