"""Structural-Hankel lifting of 2D arrays and its averaging pseudo-inverse.

The lifted matrix has ``a*a`` rows and one column per ``a x a`` window position
(stride 1, no padding). Window positions are enumerated row-major; inside a
window, entries are vectorized row-major as well.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


@dataclass
class HankelMatrix:
    data: np.ndarray
    window: int
    source_shape: tuple[int, int]

    @property
    def positions(self) -> tuple[int, int]:
        a = self.window
        return (self.source_shape[0] - a + 1, self.source_shape[1] - a + 1)

    def with_data(self, data: np.ndarray) -> "HankelMatrix":
        return HankelMatrix(data, self.window, self.source_shape)


@dataclass
class PatchBatch:
    patches: np.ndarray  # (count, a*a, a*a); rows are window positions
    seed: int | None
    columns: np.ndarray  # source column of every patch row, shape (count, a*a)

    @property
    def count(self) -> int:
        return len(self.patches)


def hankel_transform(x, a: int) -> HankelMatrix:
    x = np.asarray(getattr(x, "values", x), dtype=np.float64)
    if x.ndim != 2:
        raise ValueError("hankel_transform expects a 2D array")
    if not 1 <= a <= min(x.shape):
        raise ValueError(f"window {a} does not fit an array of shape {x.shape}")
    win = sliding_window_view(x, (a, a))
    data = win.reshape(-1, a * a).T.copy()
    return HankelMatrix(data, a, x.shape)


def coverage(shape, a: int) -> np.ndarray:
    """Number of windows covering each source pixel."""
    def one(n):
        i = np.arange(n)
        return np.minimum.reduce([i + 1, n - i, np.full(n, a), np.full(n, n - a + 1)])
    return np.outer(one(shape[0]), one(shape[1])).astype(np.float64)


def hankel_inverse(h: HankelMatrix) -> np.ndarray:
    """Average every copy of each source pixel back into place.

    A running mean is used so that identical copies reproduce the original value bit for bit.
    """
    a = h.window
    nx, ny = h.positions
    out = np.zeros(h.source_shape)
    seen = np.zeros(h.source_shape)
    for p in range(a):
        for q in range(a):
            block = (slice(p, p + nx), slice(q, q + ny))
            seen[block] += 1
            out[block] += (h.data[p * a + q].reshape(nx, ny) - out[block]) / seen[block]
    return out


def hankel_adjoint_average(h: HankelMatrix) -> np.ndarray:
    """Sum of copies divided by coverage; equals :func:`hankel_inverse` up to rounding."""
    a = h.window
    nx, ny = h.positions
    out = np.zeros(h.source_shape)
    for p in range(a):
        for q in range(a):
            out[p:p + nx, q:q + ny] += h.data[p * a + q].reshape(nx, ny)
    return out / coverage(h.source_shape, a)


def split_patches(h: HankelMatrix, seed: int | None = 0) -> PatchBatch:
    """Shuffle Hankel columns and stack groups of ``a*a`` of them into square patches.

    Columns left over after the last full group are dropped.
    """
    n = h.window ** 2
    cols = h.data.shape[1]
    if cols < n:
        raise ValueError(f"need at least {n} Hankel columns, have {cols}")
    order = np.random.default_rng(seed).permutation(cols)
    count = cols // n
    keep = order[:count * n].reshape(count, n)
    return PatchBatch(h.data.T[keep], seed, keep)


def tile_columns(h: HankelMatrix) -> tuple[np.ndarray, np.ndarray]:
    """Cover all columns with square tiles in their natural order.

    When the column count is not a multiple of ``a*a`` the final tile is the
    last ``a*a`` columns, overlapping its neighbour. Returns the tiles and the
    column indices of each tile's rows.
    """
    n = h.window ** 2
    cols = h.data.shape[1]
    if cols < n:
        raise ValueError(f"need at least {n} Hankel columns, have {cols}")
    starts = list(range(0, cols - n + 1, n))
    if starts[-1] + n < cols:
        starts.append(cols - n)
    idx = np.array(starts)[:, None] + np.arange(n)[None, :]
    return h.data.T[idx], idx


def untile(tiles: np.ndarray, idx: np.ndarray, like: HankelMatrix) -> HankelMatrix:
    """Inverse of :func:`tile_columns`; overlapping columns take the earlier tile's value."""
    data = np.empty_like(like.data)
    for tile, cols in zip(tiles[::-1], idx[::-1]):
        data[:, cols] = tile.T
    return like.with_data(data)


def svd(m: np.ndarray):
    """Thin SVD with each left singular vector's first nonzero entry made nonnegative."""
    u, s, vt = np.linalg.svd(m, full_matrices=False)
    nz = np.abs(u) > 1e-300
    first = np.argmax(nz, axis=0)
    sign = np.sign(u[first, np.arange(u.shape[1])])
    sign[sign == 0] = 1.0
    return u * sign, s, vt * sign[:, None]


def svd_hard_threshold(h, k: int):
    """Best rank-``k`` Frobenius approximation; ``k`` above the rank bound passes through."""
    if k < 1:
        raise ValueError("rank must be >= 1")
    data = h.data if isinstance(h, HankelMatrix) else np.asarray(h, dtype=np.float64)
    u, s, vt = svd(data)
    k = min(k, len(s))
    low = (u[:, :k] * s[:k]) @ vt[:k]
    return h.with_data(low) if isinstance(h, HankelMatrix) else low


def low_rank_project(x: np.ndarray, a: int, k: int) -> np.ndarray:
    """``H+(svd_hard_threshold(H(x), k))``."""
    return hankel_inverse(svd_hard_threshold(hankel_transform(x, a), k))
