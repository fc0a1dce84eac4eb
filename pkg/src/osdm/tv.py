"""Smoothed isotropic total variation and its gradient."""
import numpy as np

TV_EPS = 1e-8


def _diffs(x):
    dx = np.zeros_like(x)
    dy = np.zeros_like(x)
    dx[:-1, :] = x[1:, :] - x[:-1, :]
    dy[:, :-1] = x[:, 1:] - x[:, :-1]
    return dx, dy


def tv_norm(x, eps: float = TV_EPS) -> float:
    """``sum sqrt(dx^2 + dy^2 + eps)`` with forward differences and replicated borders."""
    dx, dy = _diffs(np.asarray(x, dtype=np.float64))
    return float(np.sqrt(dx * dx + dy * dy + eps).sum())


def tv_gradient(x, eps: float = TV_EPS) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    dx, dy = _diffs(x)
    mag = np.sqrt(dx * dx + dy * dy + eps)
    px = dx / mag
    py = dy / mag
    g = -(px + py)
    g[1:, :] += px[:-1, :]
    g[:, 1:] += py[:, :-1]
    return g
