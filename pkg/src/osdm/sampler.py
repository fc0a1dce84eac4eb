"""Predictor-corrector reconstruction of low-dose sinograms.

Each outer step runs a reverse-diffusion predictor, then the consistency chain
(Hankel low-rank projection, PWLS blend with the measurement, normalized TV
descent). Each of the ``inner_steps`` Langevin corrector moves is followed by
the same chain. The restored sinogram is turned into an image by FBP.

The sampler state lives in normalized units: calibrated sinogram values
divided by the prior's normalization factor.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .analytic import FilterSpec, fbp
from .geometry import FanBeamGeometry, ImageGrid, Sinogram
from .hankel import hankel_inverse, hankel_transform, low_rank_project, tile_columns, untile
from .score import ScoreModel, ScoreNet, SigmaSchedule, score
from .tv import tv_gradient, tv_norm

log = logging.getLogger(__name__)

ScoreFn = Callable[[np.ndarray, float], np.ndarray]


class NumericalFailure(RuntimeError):
    pass


@dataclass
class ReconConfig:
    outer_steps: int = 200
    inner_steps: int = 1
    rank: int = 38
    window: int = 8
    tv_step: float = 0.1
    pwls_mu: float = 3.0e4  # prior precision, in the units of sampler_weights
    eta: float = 22000.0
    corrector_snr: float = 0.08
    sigma_min: float | None = None  # None: take the prior's training range
    sigma_max: float | None = None
    enable_diffusion: bool = True
    enable_lr: bool = True
    enable_tv: bool = True
    enable_pwls: bool = True
    rng_seed: int = 0
    tile_batch: int = 64
    filter: FilterSpec = field(default_factory=FilterSpec)

    def __post_init__(self):
        if self.outer_steps < 1 or self.inner_steps < 0 or self.rank < 1:
            raise ValueError("need outer_steps >= 1, inner_steps >= 0, rank >= 1")
        if not (self.tv_step > 0 and self.pwls_mu >= 0 and self.corrector_snr > 0):
            raise ValueError("need tv_step > 0, pwls_mu >= 0, corrector_snr > 0")

    @classmethod
    def h_svd(cls, **kw) -> "ReconConfig":
        """Low-rank + PWLS + TV chain without the diffusion prior."""
        return cls(enable_diffusion=False, **kw)

    def schedule(self, model: ScoreModel | None = None) -> SigmaSchedule:
        base = model.schedule if model is not None else SigmaSchedule()
        return SigmaSchedule(self.sigma_min or base.sigma_min, self.sigma_max or base.sigma_max,
                             self.outer_steps)


@dataclass
class SamplerState:
    x: np.ndarray
    step: int
    rng: np.random.Generator


def hankel_score(net: ScoreNet, window: int, tile_batch: int = 64) -> ScoreFn:
    """Score of a whole sinogram from the patch network.

    The sinogram is lifted to its Hankel matrix, cut into ``a^2 x a^2`` tiles in
    column order, scored tile by tile and averaged back through ``H+``.
    """
    def fn(x, sigma):
        h = hankel_transform(x, window)
        tiles, idx = tile_columns(h)
        out = np.concatenate([score(net, tiles[k:k + tile_batch], sigma)
                              for k in range(0, len(tiles), tile_batch)])
        return hankel_inverse(untile(out, idx, h))
    return fn


def predictor_step(state: SamplerState, score_fn: ScoreFn, schedule: SigmaSchedule,
                   noise: bool = True) -> SamplerState:
    """Reverse-diffusion move from level ``i + 1`` to ``i``; the level below 0 is 0."""
    i = state.step
    hi = float(schedule.sigma(i + 1))
    lo = float(schedule.sigma(i)) if i > 0 else 0.0
    dvar = hi * hi - lo * lo
    x = state.x
    if dvar > 0:
        x = x + dvar * score_fn(x, hi)
        if noise:
            x = x + np.sqrt(dvar) * state.rng.standard_normal(x.shape)
    return SamplerState(x, i, state.rng)


def corrector_step(state: SamplerState, score_fn: ScoreFn, schedule: SigmaSchedule,
                   snr: float = 0.08, noise: bool = True) -> SamplerState:
    """Langevin move at level ``i`` with step ``2 * (snr * |z| / |score|)^2``."""
    sigma = float(schedule.sigma(state.step))
    s = score_fn(state.x, sigma)
    z = state.rng.standard_normal(state.x.shape)
    s_norm = np.linalg.norm(s)
    if s_norm == 0:
        return state
    eps = corrector_step_size(s_norm, np.linalg.norm(z), snr)
    x = state.x + eps * s
    if noise:
        x = x + np.sqrt(2 * eps) * z
    return SamplerState(x, state.step, state.rng)


def corrector_step_size(score_norm: float, noise_norm: float, snr: float) -> float:
    return 2.0 * (snr * noise_norm / score_norm) ** 2


def lr_step(x: np.ndarray, rank: int, window: int = 8) -> np.ndarray:
    return low_rank_project(x, window, rank)


def pwls_step(x, y, weights, prior, mu: float) -> np.ndarray:
    """Closed-form minimizer of ``W (x - y)^2 + mu (x - prior)^2`` per element.

    ``x`` is accepted for call-site symmetry; the minimizer depends only on ``y`` and ``prior``.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if mu == 0:
        return np.array(y, dtype=np.float64, copy=True)
    return (weights * y + mu * prior) / (weights + mu)


def tv_step(x: np.ndarray, alpha: float, x_prev: np.ndarray, max_halvings: int = 5) -> np.ndarray:
    """Normalized TV descent of length ``alpha * ||x - x_prev||``.

    The step is halved (at most ``max_halvings`` times) until TV does not
    increase; if it still increases, ``x`` is returned unchanged.
    """
    g = tv_gradient(x)
    gn = np.linalg.norm(g)
    dx = np.linalg.norm(x - x_prev)
    if gn == 0 or dx == 0:
        return x
    g /= gn
    base = tv_norm(x)
    step = alpha * dx
    for _ in range(max_halvings + 1):
        cand = x - step * g
        if tv_norm(cand) <= base:
            return cand
        step /= 2
    return x


@dataclass
class ReconResult:
    sinogram: Sinogram
    image: ImageGrid
    trace: list[dict]


def _consistency(x, entry, y, w, cfg: ReconConfig):
    if cfg.enable_lr:
        x = lr_step(x, cfg.rank, cfg.window)
    if cfg.enable_pwls:
        x = pwls_step(x, y, w, x, cfg.pwls_mu)
    if cfg.enable_tv:
        x = tv_step(x, cfg.tv_step, entry)
    return x


def sampler_weights(weights: np.ndarray, eta: float, norm: float) -> np.ndarray:
    """Inverse variance of the normalized sinogram ``y / norm``.

    ``weights`` are PWLS weights ``I0 exp(-y / eta)``, the inverse variance of
    ``ln(I0 / L)``; calibration by ``eta`` and normalization by ``norm`` rescale
    it by ``(norm / eta)^2``.
    """
    return np.asarray(weights, dtype=np.float64) * (norm / eta) ** 2


def reconstruct(y: Sinogram, model: ScoreModel | None, geom: FanBeamGeometry, grid: tuple[int, int, float],
                config: ReconConfig = ReconConfig(), weights: np.ndarray | None = None,
                reference: ImageGrid | None = None, score_fn: ScoreFn | None = None) -> ReconResult:
    """Restore the low-dose sinogram ``y`` and reconstruct it with FBP.

    ``weights`` are PWLS weights ``I0 exp(-y / eta)`` as produced by
    :func:`osdm.lowdose.pwls_weights`; they are required when PWLS is enabled.
    ``config.pwls_mu`` is the prior precision on the same scale as
    :func:`sampler_weights`. ``grid`` is ``(width, height, pixel_size)``
    of the output image. With ``reference`` the trace records image PSNR per
    outer step.
    """
    from .metrics import psnr

    y.check(geom)
    if config.enable_diffusion and model is None and score_fn is None:
        raise ValueError("diffusion is enabled but no score model was given")
    norm = model.normalization if model is not None else float(np.max(np.abs(y.values))) or 1.0
    if model is not None and model.window != config.window:
        config = replace(config, window=model.window)
    if score_fn is None and model is not None:
        score_fn = hankel_score(model.net, model.window, config.tile_batch)
    schedule = config.schedule(model)
    yn = y.values / norm
    if weights is None:
        if config.enable_pwls:
            raise ValueError("PWLS is enabled but no weights were given")
        weights = np.ones_like(y.values) * config.eta ** 2
    weights = np.asarray(weights, dtype=np.float64)
    if weights.shape != y.values.shape or not np.all(np.isfinite(weights)) or np.any(weights <= 0):
        raise ValueError("weights must be positive, finite and shaped like the sinogram")
    w = sampler_weights(weights, config.eta, norm)
    width, height, pixel_size = grid

    rng = np.random.default_rng(config.rng_seed)
    x = schedule.sigma_max * rng.standard_normal(yn.shape)
    state = SamplerState(x, config.outer_steps, rng)
    trace = []
    def check(x, i):
        if not np.all(np.isfinite(x)):
            raise NumericalFailure(f"non-finite sampler state at outer step {i}")

    for i in range(config.outer_steps - 1, -1, -1):
        state.step = i
        if config.enable_diffusion:
            state = predictor_step(state, score_fn, schedule)
            check(state.x, i)
        state.x = _consistency(state.x, state.x, yn, w, config)
        for _ in range(config.inner_steps):
            if config.enable_diffusion:
                state = corrector_step(state, score_fn, schedule, config.corrector_snr)
                check(state.x, i)
            state.x = _consistency(state.x, state.x, yn, w, config)
        check(state.x, i)
        row = {
            "step": i,
            "sigma": float(schedule.sigma(i)),
            "fidelity": float(np.sqrt(np.sum(w * (state.x - yn) ** 2))),
            "tv": tv_norm(state.x),
        }
        if reference is not None:
            img = fbp(Sinogram(state.x * norm, y.scale), geom, width, height, pixel_size, config.filter)
            row["psnr"] = psnr(img.values, reference.values)
        trace.append(row)
    xhat = Sinogram(state.x * norm, y.scale)
    image = fbp(xhat, geom, width, height, pixel_size, config.filter)
    return ReconResult(xhat, image, trace)
