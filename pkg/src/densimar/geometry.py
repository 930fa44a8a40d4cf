"""Flat-detector fan-beam geometry, ray generation and ray sampling.

Conventions: lengths in mm, the isocenter at the origin, view angle
``theta = k * angular_range / n_views``. At angle ``theta`` the source sits at
``source_to_center * (cos theta, sin theta)`` and the detector centre at
``-center_to_detector * (cos theta, sin theta)``; detector cells are laid
out along ``(-sin theta, cos theta)`` and are symmetric about the central ray.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class ScanGeometry:
    source_to_center: float = 362.0
    center_to_detector: float = 362.0
    n_views: int = 360
    angular_range: float = 360.0
    n_detectors: int = 368
    detector_spacing: float = 2.0
    fov_half_width: float = 128.0

    def __post_init__(self):
        if not self.source_to_center > 0:
            raise ValueError("source_to_center must be positive")
        if self.center_to_detector < 0:
            raise ValueError("center_to_detector must be non-negative")
        if self.n_views < 1:
            raise ValueError("n_views must be >= 1")
        if self.n_detectors < 2:
            raise ValueError("n_detectors must be >= 2")
        if not self.detector_spacing > 0 or not self.fov_half_width > 0:
            raise ValueError("detector_spacing and fov_half_width must be positive")
        if not 0 < self.angular_range <= 360.0:
            raise ValueError("angular_range must lie in (0, 360]")

    @property
    def n_rays(self) -> int:
        return self.n_views * self.n_detectors

    def view_angles(self) -> np.ndarray:
        """View angles in radians."""
        step = math.radians(self.angular_range) / self.n_views
        return np.arange(self.n_views) * step

    def detector_offsets(self) -> np.ndarray:
        """Cell-centre positions along the detector, in mm."""
        return (np.arange(self.n_detectors) - (self.n_detectors - 1) / 2.0) * self.detector_spacing

    @property
    def magnification(self) -> float:
        return (self.source_to_center + self.center_to_detector) / self.source_to_center


@dataclass(frozen=True)
class Ray:
    origin: tuple[float, float]
    direction: tuple[float, float]
    t_entry: float
    t_exit: float

    def point(self, t: float) -> np.ndarray:
        return np.asarray(self.origin) + t * np.asarray(self.direction)


@dataclass(frozen=True)
class SamplingConfig:
    delta_x: float = 0.5

    def __post_init__(self):
        if not self.delta_x > 0:
            raise ValueError("delta_x must be positive")


def clip_to_square(origins, directions, half_width):
    """Slab intersection of rays with the square ``[-h, h]^2``.

    Returns ``(t_entry, t_exit)``; rays that miss get ``t_entry == t_exit``.
    """
    origins = np.asarray(origins, dtype=np.float64)
    directions = np.asarray(directions, dtype=np.float64)
    t_lo = np.full(origins.shape[:-1], -np.inf)
    t_hi = np.full(origins.shape[:-1], np.inf)
    for axis in range(2):
        o = origins[..., axis]
        d = directions[..., axis]
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-half_width - o) / d
            t2 = (half_width - o) / d
        parallel = d == 0
        inside = np.abs(o) <= half_width
        t_near = np.where(parallel, np.where(inside, -np.inf, np.inf), np.minimum(t1, t2))
        t_far = np.where(parallel, np.where(inside, np.inf, -np.inf), np.maximum(t1, t2))
        t_lo = np.maximum(t_lo, t_near)
        t_hi = np.minimum(t_hi, t_far)
    t_lo = np.maximum(t_lo, 0.0)
    miss = ~(t_hi > t_lo)
    t_lo = np.where(miss, 0.0, t_lo)
    t_hi = np.where(miss, 0.0, t_hi)
    return t_lo, t_hi


def fan_rays(geom: ScanGeometry, views=None, offsets=None):
    """Vectorised ray bundle.

    Parameters
    ----------
    geom : ScanGeometry
    views : array_like of int, optional
        View indices (default: all views).
    offsets : array_like, optional
        Positions along the detector in mm (default: cell centres). May be
        any shape; output arrays have shape ``(len(views),) + offsets.shape``.

    Returns
    -------
    origins, directions : ndarray, trailing dimension 2
    t_entry, t_exit : ndarray
    """
    views = np.arange(geom.n_views) if views is None else np.asarray(views)
    offsets = geom.detector_offsets() if offsets is None else np.asarray(offsets, dtype=np.float64)
    theta = views * (math.radians(geom.angular_range) / geom.n_views)
    e = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    u = np.stack([-np.sin(theta), np.cos(theta)], axis=-1)
    extra = (None,) * offsets.ndim
    e_b = e[(slice(None),) + extra]
    u_b = u[(slice(None),) + extra]
    src = geom.source_to_center * e_b
    det = -geom.center_to_detector * e_b + offsets[None, ..., None] * u_b
    d = det - src
    d = d / np.linalg.norm(d, axis=-1, keepdims=True)
    src = np.broadcast_to(src, d.shape).copy()
    t0, t1 = clip_to_square(src, d, geom.fov_half_width)
    return src, d, t0, t1


def make_ray(geom: ScanGeometry, view_index: int, detector_index: int) -> Ray:
    if not 0 <= view_index < geom.n_views:
        raise IndexError(f"view index {view_index} outside [0, {geom.n_views})")
    if not 0 <= detector_index < geom.n_detectors:
        raise IndexError(f"detector index {detector_index} outside [0, {geom.n_detectors})")
    off = geom.detector_offsets()[detector_index]
    o, d, t0, t1 = fan_rays(geom, [view_index], [off])
    return Ray(tuple(o[0, 0]), tuple(d[0, 0]), float(t0[0, 0]), float(t1[0, 0]))


def sample_counts(t_entry, t_exit, delta_x):
    """Number of whole sampling cells per chord; a partial last cell is dropped."""
    length = np.asarray(t_exit) - np.asarray(t_entry)
    return np.floor(length / delta_x + 1e-9).astype(np.int64).clip(min=0)


def sample_ray(ray: Ray, cfg: SamplingConfig):
    """Midpoint samples along one ray.

    Returns
    -------
    points : ndarray, shape (K, 2)
    weight : float
        The quadrature weight ``delta_x`` (mm) carried by every sample.
    """
    n = int(sample_counts(ray.t_entry, ray.t_exit, cfg.delta_x))
    t = ray.t_entry + (np.arange(n) + 0.5) * cfg.delta_x
    points = np.asarray(ray.origin) + t[:, None] * np.asarray(ray.direction)
    return points, cfg.delta_x


@dataclass
class RaySamples:
    """Samples of many rays stored back to back (CSR layout)."""

    points: np.ndarray  # (M, 2) mm
    ray_index: np.ndarray  # (M,) owning ray for each sample
    offsets: np.ndarray  # (n_rays + 1,) start of each ray's block
    delta_x: float

    @property
    def n_rays(self) -> int:
        return len(self.offsets) - 1

    @property
    def counts(self) -> np.ndarray:
        return np.diff(self.offsets)


def sample_bundle(origins, directions, t_entry, t_exit, delta_x) -> RaySamples:
    """Midpoint-sample a flat batch of rays."""
    origins = np.asarray(origins).reshape(-1, 2)
    directions = np.asarray(directions).reshape(-1, 2)
    t_entry = np.asarray(t_entry).ravel()
    counts = sample_counts(t_entry, np.asarray(t_exit).ravel(), delta_x)
    offsets = np.zeros(len(counts) + 1, dtype=np.int64)
    np.cumsum(counts, out=offsets[1:])
    ray_index = np.repeat(np.arange(len(counts)), counts)
    k = np.arange(offsets[-1]) - offsets[ray_index]
    t = t_entry[ray_index] + (k + 0.5) * delta_x
    points = origins[ray_index] + t[:, None] * directions[ray_index]
    return RaySamples(points, ray_index, offsets, delta_x)


def geometry_samples(geom: ScanGeometry, cfg: SamplingConfig) -> RaySamples:
    """Samples for every (view, detector) ray, view-major ray order."""
    o, d, t0, t1 = fan_rays(geom)
    return sample_bundle(o, d, t0, t1, cfg.delta_x)
