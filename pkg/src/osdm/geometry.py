"""Imaging types: pixel grids, fan-beam geometry, sinograms and ellipse phantoms.

Coordinate conventions
----------------------
The image is centred on the rotation axis. ``values[row, col]`` holds the pixel
whose centre is at ``x = (col + 0.5 - width / 2) * pixel_size`` and
``y = (height / 2 - row - 0.5) * pixel_size``, so row 0 is the top of the
displayed image and ``y`` increases upwards.

For view angle ``beta`` the source sits at ``source_to_center * (cos beta, sin beta)``
and the flat detector is centred at ``-detector_to_center * (cos beta, sin beta)``
with its elements laid out along ``(-sin beta, cos beta)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


@dataclass
class ImageGrid:
    """A 2D attenuation map (1/cm) on a square-pixel grid."""

    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError(f"image must be a non-empty 2D array, got shape {self.values.shape}")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("image contains non-finite values")

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @classmethod
    def zeros(cls, width: int, height: int, pixel_size: float) -> "ImageGrid":
        return cls(np.zeros((height, width)), pixel_size)

    def pixel_centers(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x, y)`` centre coordinates, each shaped like ``values``."""
        return pixel_centers(self.width, self.height, self.pixel_size)


def pixel_centers(width: int, height: int, pixel_size: float):
    xs = (np.arange(width) + 0.5 - width / 2) * pixel_size
    ys = (height / 2 - np.arange(height) - 0.5) * pixel_size
    return np.meshgrid(xs, ys)


@dataclass(frozen=True)
class FanBeamGeometry:
    """Flat-detector fan-beam acquisition; all lengths in cm, angles in radians."""

    source_to_center: float = 40.0
    detector_to_center: float = 40.0
    detector_width: float = 41.3
    n_detectors: int = 180
    n_views: int = 180
    angle_start: float = 0.0
    angle_span: float = 2 * math.pi

    def __post_init__(self):
        for name in ("source_to_center", "detector_to_center", "detector_width"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.n_detectors < 1 or self.n_views < 1:
            raise ValueError("n_detectors and n_views must be >= 1")
        if not 0 < self.angle_span <= 2 * math.pi + 1e-12:
            raise ValueError("angle_span must lie in (0, 2*pi]")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.n_views, self.n_detectors)

    @property
    def detector_pitch(self) -> float:
        return self.detector_width / self.n_detectors

    @property
    def magnification(self) -> float:
        return (self.source_to_center + self.detector_to_center) / self.source_to_center

    def angles(self) -> np.ndarray:
        return self.angle_start + self.angle_span * np.arange(self.n_views) / self.n_views

    def detector_offsets(self) -> np.ndarray:
        """Signed element-centre positions along the detector (cm)."""
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2) * self.detector_pitch

    def source_positions(self) -> np.ndarray:
        b = self.angles()
        return self.source_to_center * np.stack([np.cos(b), np.sin(b)], axis=1)

    def detector_positions(self) -> np.ndarray:
        """Element centres, shape ``(n_views, n_detectors, 2)``."""
        b = self.angles()[:, None]
        u = self.detector_offsets()[None, :]
        dx = -self.detector_to_center * np.cos(b) - u * np.sin(b)
        dy = -self.detector_to_center * np.sin(b) + u * np.cos(b)
        return np.stack([dx, dy], axis=-1)

    def with_views(self, n_views: int) -> "FanBeamGeometry":
        return FanBeamGeometry(
            self.source_to_center, self.detector_to_center, self.detector_width,
            self.n_detectors, n_views, self.angle_start, self.angle_span,
        )


@dataclass
class Sinogram:
    """Line integrals indexed ``[view, detector]``.

    ``values = scale * (line integral of attenuation)``; forward projection
    produces ``scale = 1`` and dose simulation rescales to the photon-model
    calibration units.
    """

    values: np.ndarray
    scale: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise ValueError("sinogram must be 2D (views, detectors)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("sinogram contains non-finite values")
        if not self.scale > 0:
            raise ValueError("scale must be positive")

    @property
    def n_views(self) -> int:
        return self.values.shape[0]

    @property
    def n_detectors(self) -> int:
        return self.values.shape[1]

    def line_integrals(self) -> np.ndarray:
        return self.values / self.scale

    def rescaled(self, scale: float) -> "Sinogram":
        return Sinogram(self.line_integrals() * scale, scale)

    def check(self, geom: FanBeamGeometry):
        if self.values.shape != geom.shape:
            raise ValueError(f"sinogram shape {self.values.shape} does not match geometry {geom.shape}")


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float]
    direction: tuple[float, float]

    def __post_init__(self):
        if abs(math.hypot(*self.direction) - 1.0) > 1e-12:
            raise ValueError("ray direction must be a unit vector")

    @classmethod
    def through(cls, start, end) -> "Ray":
        d = np.subtract(end, start, dtype=float)
        d /= np.hypot(*d)
        return cls(tuple(map(float, start)), (float(d[0]), float(d[1])))


@dataclass(frozen=True)
class Ellipse:
    """Centre and semi-axes in cm, counter-clockwise rotation in radians."""

    center: tuple[float, float]
    semi_axes: tuple[float, float]
    rotation: float
    value: float

    def __post_init__(self):
        if min(self.semi_axes) <= 0:
            raise ValueError("ellipse semi-axes must be positive")

    def contains(self, x, y):
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        dx, dy = x - self.center[0], y - self.center[1]
        u = dx * c + dy * s
        v = -dx * s + dy * c
        return (u / self.semi_axes[0]) ** 2 + (v / self.semi_axes[1]) ** 2 <= 1.0


@dataclass
class EllipsePhantom:
    ellipses: list[Ellipse] = field(default_factory=list)

    def mirrored(self) -> "EllipsePhantom":
        return EllipsePhantom([
            Ellipse((-e.center[0], e.center[1]), e.semi_axes, -e.rotation, e.value)
            for e in self.ellipses
        ])


def make_phantom(spec: EllipsePhantom, width: int, height: int, pixel_size: float) -> ImageGrid:
    """Rasterize ``spec``: every pixel whose centre lies inside an ellipse gets its value added."""
    x, y = pixel_centers(width, height, pixel_size)
    img = np.zeros((height, width))
    for e in spec.ellipses:
        img[e.contains(x, y)] += e.value
    return ImageGrid(img, pixel_size)


# Modified Shepp-Logan table: value, semi-axes, centre (unit-disk coordinates), rotation in degrees.
_SHEPP_LOGAN = [
    (1.0, 0.69, 0.92, 0.0, 0.0, 0.0),
    (-0.8, 0.6624, 0.874, 0.0, -0.0184, 0.0),
    (-0.2, 0.11, 0.31, 0.22, 0.0, -18.0),
    (-0.2, 0.16, 0.41, -0.22, 0.0, 18.0),
    (0.1, 0.21, 0.25, 0.0, 0.35, 0.0),
    (0.1, 0.046, 0.046, 0.0, 0.1, 0.0),
    (0.1, 0.046, 0.046, 0.0, -0.1, 0.0),
    (0.1, 0.046, 0.023, -0.08, -0.605, 0.0),
    (0.1, 0.023, 0.023, 0.0, -0.606, 0.0),
    (0.1, 0.023, 0.046, 0.06, -0.605, 0.0),
]

# Attenuation of the Shepp-Logan "1.0" level in 1/cm; puts the longest chord of the
# default desk phantom at roughly four attenuation lengths.
HEAD_ATTENUATION = 0.8
HEAD_RADIUS_CM = 9.5


def head_phantom(radius: float = HEAD_RADIUS_CM, attenuation: float = HEAD_ATTENUATION,
                 symmetric: bool = False) -> EllipsePhantom:
    """Modified Shepp-Logan head scaled to ``radius`` cm.

    ``symmetric=True`` keeps only the ellipses centred on the vertical axis,
    which makes the phantom mirror symmetric.
    """
    rows = [r for r in _SHEPP_LOGAN if r[3] == 0.0] if symmetric else _SHEPP_LOGAN
    return EllipsePhantom([
        Ellipse((x0 * radius, y0 * radius), (a * radius, b * radius), math.radians(phi), v * attenuation)
        for v, a, b, x0, y0, phi in rows
    ])


def disk_phantom(radius: float, value: float = 1.0, center: Sequence[float] = (0.0, 0.0)) -> EllipsePhantom:
    return EllipsePhantom([Ellipse(tuple(center), (radius, radius), 0.0, value)])


DESK_BLUR_PX = 1.0


def desk_phantom(width: int = 128, height: int = 128, pixel_size: float = 0.16,
                 blur: float = DESK_BLUR_PX, mirrored: bool = False) -> ImageGrid:
    """Rasterized head phantom smoothed by a Gaussian of ``blur`` pixels.

    The smoothing stands in for the finite resolution of a real scan; without
    it the rasterized edges are far from low rank in the Hankel domain.
    """
    from scipy.ndimage import gaussian_filter

    spec = head_phantom()
    if mirrored:
        spec = spec.mirrored()
    img = make_phantom(spec, width, height, pixel_size)
    if blur > 0:
        img = ImageGrid(gaussian_filter(img.values, blur), pixel_size)
    return img
