"""Siddon ray-driven fan-beam projector and its exact adjoint.

The system matrix is assembled once per (geometry, grid) and cached, so forward
projection and back-projection are a sparse product and its transpose. The
traversal kernel comes from the compiled ``_siddon`` extension when it is
importable, otherwise from the NumPy fallback. Set ``OSDM_PURE_PYTHON=1`` to
force the fallback.
"""
from __future__ import annotations

import functools
import os

import numpy as np
import scipy.sparse as sp

from . import _siddon_py
from .geometry import FanBeamGeometry, ImageGrid, Ray, Sinogram

if os.environ.get("OSDM_PURE_PYTHON"):
    _kernel = _siddon_py.siddon_system
    BACKEND = "python"
else:
    try:
        from ._siddon import siddon_system as _kernel
        BACKEND = "cython"
    except ImportError:  # extension not built
        _kernel = _siddon_py.siddon_system
        BACKEND = "python"

KERNELS = {"python": _siddon_py.siddon_system}
if BACKEND == "cython":
    KERNELS["cython"] = _kernel


def fan_rays(geom: FanBeamGeometry) -> tuple[np.ndarray, np.ndarray]:
    """Ray origins and unit directions, ordered view-major: ``ray = view * n_detectors + det``."""
    src = np.repeat(geom.source_positions(), geom.n_detectors, axis=0)
    det = geom.detector_positions().reshape(-1, 2)
    d = det - src
    d /= np.hypot(d[:, 0], d[:, 1])[:, None]
    return src, d


def siddon_line_integral(ray: Ray, grid: ImageGrid, backend: str | None = None) -> float:
    """Exact sum of pixel value times chord length along the half-line ``ray``."""
    kernel = KERNELS[backend] if backend else _kernel
    _, pix, length = kernel(np.array([ray.origin]), np.array([ray.direction]),
                            grid.width, grid.height, grid.pixel_size)
    return float(np.dot(length, grid.values.ravel()[pix]))


def siddon_segments(ray: Ray, width: int, height: int, pixel_size: float):
    """``(pixel_index, length)`` pairs traversed by ``ray``."""
    _, pix, length = _kernel(np.array([ray.origin]), np.array([ray.direction]),
                             width, height, pixel_size)
    return pix, length


@functools.lru_cache(maxsize=8)
def _cached_matrix(geom: FanBeamGeometry, width: int, height: int, pixel_size: float, backend: str):
    origins, dirs = fan_rays(geom)
    rows, cols, vals = KERNELS[backend](origins, dirs, width, height, pixel_size)
    a = sp.csr_matrix((vals, (rows, cols)), shape=(len(origins), width * height))
    a.sum_duplicates()
    return a, a.T.tocsr()


def system_matrix(geom: FanBeamGeometry, width: int, height: int, pixel_size: float,
                  backend: str | None = None) -> sp.csr_matrix:
    """Sparse ``(n_views * n_detectors, height * width)`` matrix of chord lengths (cm)."""
    return _cached_matrix(geom, int(width), int(height), float(pixel_size), backend or BACKEND)[0]


def _pair(geom, width, height, pixel_size):
    return _cached_matrix(geom, int(width), int(height), float(pixel_size), BACKEND)


def forward_project(image: ImageGrid, geom: FanBeamGeometry) -> Sinogram:
    a, _ = _pair(geom, image.width, image.height, image.pixel_size)
    return Sinogram((a @ image.values.ravel()).reshape(geom.shape))


def back_project(sino: Sinogram | np.ndarray, geom: FanBeamGeometry, width: int, height: int,
                 pixel_size: float) -> ImageGrid:
    """Unfiltered back-projection, the transpose of :func:`forward_project`."""
    values = sino.values if isinstance(sino, Sinogram) else np.asarray(sino, dtype=np.float64)
    if values.shape != geom.shape:
        raise ValueError(f"sinogram shape {values.shape} does not match geometry {geom.shape}")
    _, at = _pair(geom, width, height, pixel_size)
    return ImageGrid((at @ values.ravel()).reshape(height, width), pixel_size)
