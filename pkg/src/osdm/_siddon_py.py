"""Pure NumPy Siddon traversal, used when the compiled core is unavailable.

Vectorized over rays: every candidate plane crossing of every ray is sorted in
one shot, then consecutive crossings give the intersected pixel and chord length.
"""
import numpy as np

_CHUNK = 2048


def _entry_exit(o, d, lo, hi):
    """Parametric interval where ``o + t*d`` lies inside ``[lo, hi]`` along one axis."""
    with np.errstate(divide="ignore", invalid="ignore"):
        a0 = (lo - o) / d
        a1 = (hi - o) / d
    tmin = np.minimum(a0, a1)
    tmax = np.maximum(a0, a1)
    flat = d == 0
    inside = (o >= lo) & (o < hi)
    tmin = np.where(flat, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(flat, np.where(inside, np.inf, -np.inf), tmax)
    return tmin, tmax


def siddon_system(origins, directions, width, height, pixel_size):
    """Sparse system-matrix triplets for half-line rays ``origin + t * direction, t >= 0``.

    Returns ``(ray_index, pixel_index, length)`` with ``pixel_index = row * width + col``
    in the image convention of :mod:`osdm.geometry`.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    out_r, out_p, out_v = [], [], []
    for start in range(0, len(origins), _CHUNK):
        r, p, v = _chunk(origins[start:start + _CHUNK], directions[start:start + _CHUNK],
                         width, height, pixel_size)
        out_r.append(r + start)
        out_p.append(p)
        out_v.append(v)
    if not out_r:
        empty = np.zeros(0)
        return empty.astype(np.int64), empty.astype(np.int64), empty
    return np.concatenate(out_r), np.concatenate(out_p), np.concatenate(out_v)


def _chunk(o, d, width, height, s):
    xmin, ymin = -width * s / 2, -height * s / 2
    xmax, ymax = xmin + width * s, ymin + height * s
    ox, oy, dx, dy = o[:, 0:1], o[:, 1:2], d[:, 0:1], d[:, 1:2]

    txmin, txmax = _entry_exit(ox[:, 0], dx[:, 0], xmin, xmax)
    tymin, tymax = _entry_exit(oy[:, 0], dy[:, 0], ymin, ymax)
    t_in = np.maximum(np.maximum(txmin, tymin), 0.0)[:, None]
    t_out = np.minimum(txmax, tymax)[:, None]
    hit = t_out > t_in

    xp = xmin + s * np.arange(width + 1)
    yp = ymin + s * np.arange(height + 1)
    with np.errstate(divide="ignore", invalid="ignore"):
        ax = (xp[None, :] - ox) / dx
        ay = (yp[None, :] - oy) / dy
    # Crossings outside the in-grid interval collapse onto its endpoints and yield zero-length segments.
    cand = np.concatenate([t_in, t_out, ax, ay], axis=1)
    cand = np.where(np.isfinite(cand), cand, t_in)
    cand = np.clip(cand, t_in, np.maximum(t_out, t_in))
    cand.sort(axis=1)

    seg = np.diff(cand, axis=1)
    mid = 0.5 * (cand[:, 1:] + cand[:, :-1])
    keep = (seg > 0) & hit
    ray_idx = np.nonzero(keep)[0]
    mid = mid[keep]
    seg = seg[keep]
    px = ox[ray_idx, 0] + mid * dx[ray_idx, 0]
    py = oy[ray_idx, 0] + mid * dy[ray_idx, 0]
    col = np.clip(np.floor((px - xmin) / s).astype(np.int64), 0, width - 1)
    iy = np.clip(np.floor((py - ymin) / s).astype(np.int64), 0, height - 1)
    row = height - 1 - iy
    return ray_idx.astype(np.int64), row * width + col, seg
