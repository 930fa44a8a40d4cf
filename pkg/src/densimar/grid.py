"""Pixel grids centred on the isocenter, continuous lookups and image files.

Pixel ``(r, c)`` of an ``H x W`` grid with pixel size ``ps`` has its centre at
``x = (c - (W - 1) / 2) * ps`` and ``y = ((H - 1) / 2 - r) * ps``: rows run
top to bottom, columns left to right.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass

import numpy as np

DIMG_MAGIC = b"DIMG"
DIMG_VERSION = 1
_DIMG_HEADER = struct.Struct("<4sHIIdd")


@dataclass(frozen=True)
class GridSpec:
    height: int
    width: int
    pixel_size: float = 1.0

    def __post_init__(self):
        if self.height < 1 or self.width < 1:
            raise ValueError("grid must have at least one pixel")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def half_extent(self) -> tuple[float, float]:
        """Half widths (x, y) of the grid in mm."""
        return (0.5 * self.width * self.pixel_size, 0.5 * self.height * self.pixel_size)

    @property
    def fov_half_width(self) -> float:
        """Half width of the square circumscribing the grid."""
        return max(self.half_extent)

    def pixel_centers(self) -> np.ndarray:
        """Physical pixel-centre coordinates, shape (H, W, 2)."""
        ps = self.pixel_size
        x = (np.arange(self.width) - (self.width - 1) / 2.0) * ps
        y = ((self.height - 1) / 2.0 - np.arange(self.height)) * ps
        xx, yy = np.meshgrid(x, y)
        return np.stack([xx, yy], axis=-1)

    def continuous_index(self, points):
        """Fractional (row, col) of physical points."""
        p = np.asarray(points, dtype=np.float64)
        col = p[..., 0] / self.pixel_size + (self.width - 1) / 2.0
        row = (self.height - 1) / 2.0 - p[..., 1] / self.pixel_size
        return row, col

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        hx, hy = self.half_extent
        return (np.abs(p[..., 0]) <= hx) & (np.abs(p[..., 1]) <= hy)


@dataclass(eq=False)
class _Grid:
    values: np.ndarray
    pixel_size: float = 1.0

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or min(self.values.shape) < 1:
            raise ValueError("grid values must be a non-empty 2-D array")
        if not self.pixel_size > 0:
            raise ValueError("pixel_size must be positive")

    @property
    def size(self) -> tuple[int, int]:
        return self.values.shape

    @property
    def spec(self) -> GridSpec:
        return GridSpec(self.values.shape[0], self.values.shape[1], self.pixel_size)


@dataclass(eq=False)
class DensityGrid(_Grid):
    """Mass density in g/cm^3."""

    def __post_init__(self):
        super().__post_init__()
        self.values = self.values.astype(np.float64, copy=False)
        if np.any(self.values < 0):
            raise ValueError("densities must be non-negative")


@dataclass(eq=False)
class LacGrid(_Grid):
    """Linear attenuation coefficients in 1/cm at ``energy`` keV."""

    energy: float = math.nan

    def __post_init__(self):
        super().__post_init__()
        self.values = self.values.astype(np.float64, copy=False)
        if np.any(self.values < 0):
            raise ValueError("attenuation coefficients must be non-negative")


@dataclass(eq=False)
class MetalMask(_Grid):
    def __post_init__(self):
        super().__post_init__()
        if not np.all((self.values == 0) | (self.values == 1)):
            raise ValueError("metal mask must be binary")
        self.values = self.values.astype(np.uint8)

    @classmethod
    def empty(cls, spec: GridSpec) -> "MetalMask":
        return cls(np.zeros(spec.shape, dtype=np.uint8), spec.pixel_size)

    @property
    def n_metal(self) -> int:
        return int(self.values.sum())


def lookup_bilinear(grid, points):
    """Bilinear interpolation with zero padding; zero outside the grid extent."""
    values = grid.values
    spec = grid.spec
    row, col = spec.continuous_index(points)
    r0 = np.floor(row).astype(np.int64)
    c0 = np.floor(col).astype(np.int64)
    fr = row - r0
    fc = col - c0
    padded = np.pad(np.asarray(values, dtype=np.float64), 1)
    h, w = values.shape
    # shift by the one-pixel pad; anything further out reads the zero border
    r0p = np.clip(r0 + 1, 0, h + 1)
    r1p = np.clip(r0 + 2, 0, h + 1)
    c0p = np.clip(c0 + 1, 0, w + 1)
    c1p = np.clip(c0 + 2, 0, w + 1)
    out = ((1 - fr) * (1 - fc) * padded[r0p, c0p] + (1 - fr) * fc * padded[r0p, c1p]
           + fr * (1 - fc) * padded[r1p, c0p] + fr * fc * padded[r1p, c1p])
    out = np.where(spec.contains(points), out, 0.0)
    return float(out) if out.ndim == 0 else out


def nearest_index(spec: GridSpec, points):
    """Nearest pixel (row, col); exact ties go to the smaller index."""
    row, col = spec.continuous_index(points)
    r = np.ceil(row - 0.5).astype(np.int64)
    c = np.ceil(col - 0.5).astype(np.int64)
    inside = spec.contains(points) & (r >= 0) & (r < spec.height) & (c >= 0) & (c < spec.width)
    return r, c, inside


def lookup_mask(mask: MetalMask, points):
    """Nearest-neighbour mask lookup; 0 outside the grid."""
    r, c, inside = nearest_index(mask.spec, points)
    out = np.where(inside, mask.values[np.clip(r, 0, mask.spec.height - 1),
                                       np.clip(c, 0, mask.spec.width - 1)], 0).astype(np.uint8)
    return int(out) if out.ndim == 0 else out


def write_dimg(path, grid) -> None:
    values = np.asarray(grid.values)
    energy = getattr(grid, "energy", math.nan)
    h, w = values.shape
    with open(path, "wb") as fh:
        fh.write(_DIMG_HEADER.pack(DIMG_MAGIC, DIMG_VERSION, h, w, float(grid.pixel_size), float(energy)))
        fh.write(np.ascontiguousarray(values, dtype="<f4").tobytes())


def read_dimg(path, kind: str | None = None):
    """Read a ``DIMG`` file.

    ``kind`` selects the returned type (``"density"``, ``"lac"`` or
    ``"mask"``); by default a NaN energy gives a :class:`DensityGrid` and a
    finite one a :class:`LacGrid`.
    """
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _DIMG_HEADER.size:
        raise ValueError(f"{path}: truncated DIMG header")
    magic, version, h, w, pixel_size, energy = _DIMG_HEADER.unpack_from(raw)
    if magic != DIMG_MAGIC:
        raise ValueError(f"{path}: not a DIMG file")
    if version != DIMG_VERSION:
        raise ValueError(f"{path}: unsupported DIMG version {version}")
    body = raw[_DIMG_HEADER.size:]
    if len(body) != 4 * h * w:
        raise ValueError(f"{path}: expected {h * w} pixels, found {len(body) // 4}")
    values = np.frombuffer(body, dtype="<f4").reshape(h, w).astype(np.float64)
    if kind is None:
        kind = "density" if math.isnan(energy) else "lac"
    if kind == "density":
        return DensityGrid(values, pixel_size)
    if kind == "lac":
        return LacGrid(values, pixel_size, energy)
    if kind == "mask":
        return MetalMask(values, pixel_size)
    raise ValueError(f"unknown image kind {kind!r}")


def write_pgm(path, values, lo: float, hi: float) -> None:
    """16-bit binary PGM with a linear window ``[lo, hi]``."""
    if not hi > lo:
        raise ValueError("window upper bound must exceed lower bound")
    v = np.clip((np.asarray(values, dtype=np.float64) - lo) / (hi - lo), 0.0, 1.0)
    data = np.round(v * 65535).astype(">u2")
    h, w = data.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{w} {h}\n65535\n".encode("ascii"))
        fh.write(data.tobytes())
