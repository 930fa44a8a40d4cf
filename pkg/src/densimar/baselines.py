"""Classical references: flat-detector fan-beam FBP and linear-interpolation MAR."""

from __future__ import annotations

import math

import numpy as np

from .forward import MM_TO_CM
from .geometry import SamplingConfig, ScanGeometry
from .grid import GridSpec, LacGrid, MetalMask
from .simulate import metal_trace
from .sinogram import Sinogram


class InterpolationError(ValueError):
    def __init__(self, view):
        self.view = view
        super().__init__(f"view {view} lies entirely inside the metal trace")


def ramp_response(n_detectors: int, spacing_cm: float, window: str | None = None):
    """Frequency response of the discrete Ram-Lak kernel on a zero-padded grid.

    Returns ``(response, padded_length)``; the response already includes the
    convolution step ``spacing_cm`` and the 1/2 factor of a full 2*pi scan.
    """
    length = 2 * (1 << max(1, math.ceil(math.log2(n_detectors))))
    n = np.concatenate([np.arange(0, length // 2), np.arange(-length // 2, 0)])
    h = np.zeros(length)
    h[0] = 1.0 / (4.0 * spacing_cm ** 2)
    odd = n % 2 == 1
    h[odd] = -1.0 / (n[odd] ** 2 * math.pi ** 2 * spacing_cm ** 2)
    response = 0.5 * spacing_cm * np.real(np.fft.fft(h))
    if window == "hann":
        response *= 0.5 * (1.0 + np.cos(2.0 * math.pi * np.fft.fftfreq(length)))
    elif window not in (None, "ram-lak"):
        raise ValueError(f"unknown filter window {window!r}")
    return response, length


def fbp_array(values, geom: ScanGeometry, spec: GridSpec, window: str | None = None) -> np.ndarray:
    """Unclipped fan-beam FBP of a ``(n_views, n_detectors)`` array (linear in ``values``)."""
    if geom.n_views < 2:
        raise ValueError("FBP needs at least two views")
    if geom.angular_range != 360.0:
        raise ValueError("FBP requires a full 360 degree scan")
    values = np.asarray(values, dtype=np.float64)
    r = geom.source_to_center
    # detector coordinates rescaled to a virtual detector through the isocenter
    s = geom.detector_offsets() / geom.magnification
    ds = geom.detector_spacing / geom.magnification
    weighted = values * (r / np.sqrt(r * r + s * s))
    response, length = ramp_response(geom.n_detectors, MM_TO_CM * ds, window)
    q = np.real(np.fft.ifft(np.fft.fft(weighted, n=length, axis=1) * response, axis=1))
    q = q[:, :geom.n_detectors]

    pts = spec.pixel_centers().reshape(-1, 2)
    image = np.zeros(len(pts))
    d_beta = math.radians(geom.angular_range) / geom.n_views
    for v, theta in enumerate(geom.view_angles()):
        along = pts[:, 0] * math.cos(theta) + pts[:, 1] * math.sin(theta)
        across = -pts[:, 0] * math.sin(theta) + pts[:, 1] * math.cos(theta)
        u = (r - along) / r
        s_prime = across / u
        image += np.interp(s_prime, s, q[v], left=0.0, right=0.0) / (u * u)
    return (image * d_beta).reshape(spec.shape)


def fbp(sino: Sinogram, spec: GridSpec, window: str | None = None) -> LacGrid:
    """FBP image in 1/cm; negative values are clipped to zero."""
    image = fbp_array(sino.values, sino.geometry, spec, window)
    return LacGrid(np.maximum(image, 0.0), spec.pixel_size)


def interpolate_trace(values, trace) -> np.ndarray:
    """Replace every run of traced bins in each view by linear interpolation.

    Runs touching the detector edge are filled with the single available
    neighbour. Untraced bins are returned unchanged.
    """
    values = np.asarray(values, dtype=np.float64)
    trace = np.asarray(trace, dtype=bool)
    out = values.copy()
    det = np.arange(values.shape[1])
    for v in range(values.shape[0]):
        t = trace[v]
        if not t.any():
            continue
        if t.all():
            raise InterpolationError(v)
        good = ~t
        # np.interp holds the end values constant outside the known range
        out[v, t] = np.interp(det[t], det[good], values[v, good])
    return out


def li_mar(sino: Sinogram, mask: MetalMask, spec: GridSpec, cfg: SamplingConfig = SamplingConfig(),
           window: str | None = None, trace=None) -> LacGrid:
    """Linear-interpolation MAR: inpaint the metal trace per view, then FBP."""
    if trace is None:
        trace = metal_trace(mask, sino.geometry, cfg)
    return fbp(sino.replace(interpolate_trace(sino.values, trace)), spec, window)
