"""Variance-exploding noise schedule, a small convolutional score network and its
one-sample denoising-score-matching training loop.

The network is a noise predictor: trained with target ``-eps`` for inputs
``x0 + sigma * eps``, so the score estimate is ``net(x, sigma) / sigma``.
"""
from __future__ import annotations

import copy
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import torch
from torch import nn

from . import io

log = logging.getLogger(__name__)

ARCH_NAME = "conv3x3x4-silu-logsigma"


class TrainingDiverged(RuntimeError):
    pass


@dataclass(frozen=True)
class SigmaSchedule:
    """Geometric noise ladder ``sigma_i = sigma_max * (sigma_min / sigma_max) ** ((N - i) / N)``.

    ``sigma(0) == sigma_min`` and ``sigma(N) == sigma_max``.
    """

    sigma_min: float = 0.01
    sigma_max: float = 1.0
    n_levels: int = 1000

    def __post_init__(self):
        if not 0 < self.sigma_min < self.sigma_max:
            raise ValueError("schedule needs 0 < sigma_min < sigma_max")
        if self.n_levels < 1:
            raise ValueError("n_levels must be >= 1")

    def sigma(self, i):
        n = self.n_levels
        return self.sigma_max * (self.sigma_min / self.sigma_max) ** ((n - np.asarray(i)) / n)

    def sigmas(self) -> np.ndarray:
        return self.sigma(np.arange(self.n_levels + 1))

    def to_dict(self):
        return {"sigma_min": self.sigma_min, "sigma_max": self.sigma_max, "n_levels": self.n_levels}


class ScoreNet(nn.Module):
    """Four 3x3 convolutions with SiLU; input channels are the patch and ``ln sigma``."""

    def __init__(self, features: int = 32, seed: int = 0, zero_last: bool = False,
                 dtype=torch.float32):
        super().__init__()
        self.features = features
        self.convs = nn.ModuleList([
            nn.Conv2d(2, features, 3, padding=1),
            nn.Conv2d(features, features, 3, padding=1),
            nn.Conv2d(features, features, 3, padding=1),
            nn.Conv2d(features, 1, 3, padding=1),
        ])
        gen = torch.Generator().manual_seed(seed)
        for conv in self.convs:
            nn.init.kaiming_normal_(conv.weight, mode="fan_in", nonlinearity="relu", generator=gen)
            nn.init.zeros_(conv.bias)
        if zero_last:
            nn.init.zeros_(self.convs[-1].weight)
        self.to(dtype)

    @property
    def dtype(self):
        return self.convs[0].weight.dtype

    def forward(self, x: torch.Tensor, sigma) -> torch.Tensor:
        sigma = torch.as_tensor(sigma, dtype=x.dtype).reshape(-1, 1, 1, 1)
        cond = torch.log(sigma).expand(x.shape[0], 1, *x.shape[-2:])
        h = torch.cat([x.unsqueeze(1), cond], dim=1)
        for conv in self.convs[:-1]:
            h = nn.functional.silu(conv(h))
        return self.convs[-1](h).squeeze(1)

    def arch(self) -> dict:
        return {"name": ARCH_NAME, "features": self.features, "in_channels": 2, "layers": 4}

    def arch_hash(self) -> str:
        shapes = [[k, list(v.shape)] for k, v in self.state_dict().items()]
        blob = json.dumps({"arch": self.arch(), "params": shapes}, sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()


def perturb(x0, sigma: float, rng: np.random.Generator):
    """Return ``(x0 + sigma * eps, eps)`` with standard normal ``eps``."""
    if sigma < 0:
        raise ValueError("sigma must be nonnegative")
    x0 = np.asarray(x0, dtype=np.float64)
    eps = rng.standard_normal(x0.shape)
    return x0 + sigma * eps, eps


def dsm_loss(net: ScoreNet, batch, schedule: SigmaSchedule, rng: np.random.Generator) -> torch.Tensor:
    """Mean over the batch of ``||net(x0 + sigma*eps, sigma) + eps||^2``, one random level per sample."""
    batch = np.asarray(batch, dtype=np.float64)
    if len(batch) == 0:
        raise ValueError("empty batch")
    levels = rng.integers(0, schedule.n_levels + 1, size=len(batch))
    sig = schedule.sigma(levels)
    eps = rng.standard_normal(batch.shape)
    xt = batch + sig[:, None, None] * eps
    dt = net.dtype
    out = net(torch.as_tensor(xt, dtype=dt), torch.as_tensor(sig, dtype=dt))
    return ((out + torch.as_tensor(eps, dtype=dt)) ** 2).sum(dim=(1, 2)).mean()


def dsm_loss_and_grad(net, batch, schedule, rng) -> tuple[float, list[np.ndarray]]:
    net.zero_grad()
    loss = dsm_loss(net, batch, schedule, rng)
    loss.backward()
    return loss.item(), [p.grad.detach().numpy().copy() for p in net.parameters()]


@dataclass
class TrainConfig:
    n_iters: int = 2000
    batch_size: int = 16
    learning_rate: float = 1e-3
    rng_seed: int = 0
    ema_decay: float = 0.999
    features: int = 32

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.ema_decay < 1:
            raise ValueError("ema_decay must lie in [0, 1)")


@dataclass
class ScoreModel:
    """A trained prior: EMA network plus everything needed to resume or apply it."""

    net: ScoreNet
    schedule: SigmaSchedule
    normalization: float = 1.0
    window: int = 8
    seed: int = 0
    raw: ScoreNet | None = None
    optimizer_state: dict | None = None
    step: int = 0
    losses: list[float] = field(default_factory=list)

    def save(self, path):
        arrays = {f"ema/{k}": v.double().numpy() for k, v in self.net.state_dict().items()}
        meta = {
            "arch": self.net.arch(),
            "arch_hash": self.net.arch_hash(),
            "schedule": self.schedule.to_dict(),
            "normalization": self.normalization,
            "window": self.window,
            "seed": self.seed,
            "step": self.step,
            "losses": self.losses,
        }
        if self.raw is not None:
            arrays.update({f"raw/{k}": v.double().numpy() for k, v in self.raw.state_dict().items()})
        if self.optimizer_state is not None:
            for i, st in self.optimizer_state["state"].items():
                arrays[f"adam/{i}/exp_avg"] = st["exp_avg"].double().numpy()
                arrays[f"adam/{i}/exp_avg_sq"] = st["exp_avg_sq"].double().numpy()
                meta.setdefault("adam_steps", {})[str(i)] = float(st["step"])
        io.save_container(path, meta, arrays)

    @classmethod
    def load(cls, path, dtype=torch.float32) -> "ScoreModel":
        meta, arrays = io.load_container(path)
        arch = meta["arch"]
        if arch.get("name") != ARCH_NAME:
            raise io.FormatError(f"unknown architecture {arch.get('name')!r}")

        def build(prefix):
            net = ScoreNet(arch["features"], dtype=dtype)
            net.load_state_dict({k: torch.as_tensor(arrays[f"{prefix}/{k}"], dtype=dtype)
                                 for k in net.state_dict()})
            return net

        net = build("ema")
        if net.arch_hash() != meta["arch_hash"]:
            raise io.FormatError("checkpoint architecture hash mismatch")
        raw = build("raw") if any(k.startswith("raw/") for k in arrays) else None
        opt_state = None
        if "adam_steps" in meta:
            opt_state = {"state": {}, "param_groups": None}
            for i, steps in meta["adam_steps"].items():
                opt_state["state"][int(i)] = {
                    "step": torch.tensor(steps),
                    "exp_avg": torch.as_tensor(arrays[f"adam/{i}/exp_avg"], dtype=dtype),
                    "exp_avg_sq": torch.as_tensor(arrays[f"adam/{i}/exp_avg_sq"], dtype=dtype),
                }
        return cls(net, SigmaSchedule(**meta["schedule"]), meta["normalization"], meta["window"],
                   meta["seed"], raw, opt_state, meta["step"], list(meta["losses"]))


def train(patches, config: TrainConfig = TrainConfig(), schedule: SigmaSchedule = SigmaSchedule(),
          resume: ScoreModel | None = None, normalization: float = 1.0, window: int = 8,
          callback=None) -> ScoreModel:
    """Adam on the DSM objective over normalized patches; returns the EMA network.

    Passing ``resume`` continues from its raw weights, optimizer moments and step count.
    """
    patches = np.asarray(patches, dtype=np.float64)
    if resume is not None:
        raw = copy.deepcopy(resume.raw if resume.raw is not None else resume.net)
        ema = copy.deepcopy(resume.net)
        step0, losses = resume.step, list(resume.losses)
        schedule, normalization, window = resume.schedule, resume.normalization, resume.window
    else:
        raw = ScoreNet(config.features, seed=config.rng_seed)
        ema = copy.deepcopy(raw)
        step0, losses = 0, []
    opt = torch.optim.Adam(raw.parameters(), lr=config.learning_rate)
    if resume is not None and resume.optimizer_state is not None:
        state = opt.state_dict()
        state["state"] = resume.optimizer_state["state"]
        opt.load_state_dict(state)

    rng = np.random.default_rng([config.rng_seed, step0])
    for p in ema.parameters():
        p.requires_grad_(False)
    for it in range(step0, step0 + config.n_iters):
        idx = rng.integers(0, len(patches), size=config.batch_size)
        opt.zero_grad()
        loss = dsm_loss(raw, patches[idx], schedule, rng)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingDiverged(f"loss became {value} at iteration {it}")
        loss.backward()
        opt.step()
        decay = min(config.ema_decay, (1 + it) / (10 + it))
        with torch.no_grad():
            for pe, pr in zip(ema.parameters(), raw.parameters()):
                pe.mul_(decay).add_(pr, alpha=1 - decay)
        losses.append(value)
        if callback is not None:
            callback(it, value)
        if it % 200 == 0:
            log.debug("iter %d loss %.4f", it, value)

    return ScoreModel(ema, schedule, normalization, window, config.rng_seed, raw,
                      opt.state_dict(), step0 + config.n_iters, losses)


def score(net: ScoreNet, x, sigma: float) -> np.ndarray:
    """Score estimate ``net(x, sigma) / sigma`` for a stack of patches ``(..., n, m)``."""
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    x = np.asarray(x)
    flat = x.reshape(-1, *x.shape[-2:])
    with torch.no_grad():
        out = net(torch.as_tensor(flat, dtype=net.dtype), sigma).double().numpy()
    return out.reshape(x.shape) / sigma
