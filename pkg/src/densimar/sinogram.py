"""Sinogram container and the ``DSIN`` file format.

Layout (little endian)::

    b"DSIN"  u16 version
    f64 source_to_center  f64 center_to_detector  u32 n_views  f64 angular_range
    u32 n_detectors  f64 detector_spacing  f64 fov_half_width
    u32 n_views  u32 n_detectors
    32 bytes  SHA-256 of the source spectrum (all zero for linear projections)
    f32 * n_views * n_detectors, view-major
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .geometry import ScanGeometry

DSIN_MAGIC = b"DSIN"
DSIN_VERSION = 1
NO_SPECTRUM = bytes(32)
_HEADER = struct.Struct("<4sH ddIdIdd II 32s")


@dataclass(eq=False)
class Sinogram:
    values: np.ndarray
    geometry: ScanGeometry
    spectrum_sha256: bytes = NO_SPECTRUM
    # bins whose photon count was clamped to one (not stored on disk)
    clamped: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        expected = (self.geometry.n_views, self.geometry.n_detectors)
        if self.values.shape != expected:
            raise ValueError(f"sinogram shape {self.values.shape} does not match geometry {expected}")
        if len(self.spectrum_sha256) != 32:
            raise ValueError("spectrum digest must be 32 bytes")

    @property
    def shape(self):
        return self.values.shape

    def replace(self, values) -> "Sinogram":
        return Sinogram(values, self.geometry, self.spectrum_sha256)


def write_dsin(path, sino: Sinogram) -> None:
    g = sino.geometry
    header = _HEADER.pack(DSIN_MAGIC, DSIN_VERSION,
                          g.source_to_center, g.center_to_detector, g.n_views, g.angular_range,
                          g.n_detectors, g.detector_spacing, g.fov_half_width,
                          g.n_views, g.n_detectors, sino.spectrum_sha256)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(sino.values, dtype="<f4").tobytes())


def read_dsin(path) -> Sinogram:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < _HEADER.size:
        raise ValueError(f"{path}: truncated DSIN header")
    (magic, version, sc, cd, nv, ar, nd, ds, fov, nv2, nd2, digest) = _HEADER.unpack_from(raw)
    if magic != DSIN_MAGIC:
        raise ValueError(f"{path}: not a DSIN file")
    if version != DSIN_VERSION:
        raise ValueError(f"{path}: unsupported DSIN version {version}")
    if (nv, nd) != (nv2, nd2):
        raise ValueError(f"{path}: inconsistent sinogram dimensions")
    geom = ScanGeometry(sc, cd, nv, ar, nd, ds, fov)
    body = raw[_HEADER.size:]
    if len(body) != 4 * nv * nd:
        raise ValueError(f"{path}: expected {nv * nd} values, found {len(body) // 4}")
    values = np.frombuffer(body, dtype="<f4").reshape(nv, nd).astype(np.float64)
    return Sinogram(values, geom, digest)
