"""Procedural phantoms with metal inserts and polychromatic fan-beam projection."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .forward import MM_TO_CM, MaterialContext
from .geometry import SamplingConfig, ScanGeometry, fan_rays, sample_bundle
from .grid import DensityGrid, GridSpec, LacGrid, MetalMask, lookup_bilinear, lookup_mask
from .sinogram import NO_SPECTRUM, Sinogram
from .spectrum import Spectrum

# g/cm^3, room temperature handbook values (CRC Handbook of Chemistry and Physics)
MATERIAL_DENSITY = {
    "water": 1.0,
    "titanium": 4.506,
    "chromium": 7.19,
    "steel": 8.00,  # AISI 304 nominal
    "gold": 19.32,
}


@dataclass(frozen=True)
class Ellipse:
    """Ellipse centred at ``(cx, cy)`` mm with semi-axes ``a``, ``b`` mm,
    rotated counter-clockwise by ``angle`` degrees."""

    cx: float
    cy: float
    a: float
    b: float
    angle: float = 0.0

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        c, s = math.cos(math.radians(self.angle)), math.sin(math.radians(self.angle))
        dx = p[..., 0] - self.cx
        dy = p[..., 1] - self.cy
        u = (c * dx + s * dy) / self.a
        v = (-s * dx + c * dy) / self.b
        return u * u + v * v <= 1.0

    def bounds(self):
        c, s = math.cos(math.radians(self.angle)), math.sin(math.radians(self.angle))
        hx = math.hypot(self.a * c, self.b * s)
        hy = math.hypot(self.a * s, self.b * c)
        return self.cx - hx, self.cx + hx, self.cy - hy, self.cy + hy


@dataclass(frozen=True)
class Polygon:
    """Simple polygon given by its vertices in mm (even-odd fill rule)."""

    vertices: tuple

    def contains(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=np.float64)
        x, y = p[..., 0], p[..., 1]
        v = np.asarray(self.vertices, dtype=np.float64)
        inside = np.zeros(x.shape, dtype=bool)
        for (x0, y0), (x1, y1) in zip(v, np.roll(v, -1, axis=0)):
            crosses = (y0 > y) != (y1 > y)
            with np.errstate(divide="ignore", invalid="ignore"):
                xi = x0 + (y - y0) * (x1 - x0) / (y1 - y0)
            inside ^= crosses & (x < xi)
        return inside

    def bounds(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        return v[:, 0].min(), v[:, 0].max(), v[:, 1].min(), v[:, 1].max()


@dataclass(eq=False)
class Phantom:
    density: DensityGrid
    mask: MetalMask
    tissue_material: str = "water"
    metal_material: str = "titanium"

    def __post_init__(self):
        if self.density.spec != self.mask.spec:
            raise ValueError("density and mask grids differ in size or pixel size")
        if np.any(self.density.values[self.mask.values == 1] <= 0):
            raise ValueError("metal pixels must have positive density")

    @property
    def spec(self) -> GridSpec:
        return self.density.spec


@dataclass(frozen=True)
class NoiseConfig:
    incident_photons: float = 2e7
    enable_poisson: bool = True
    pve_subsamples: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.incident_photons < 1:
            raise ValueError("incident_photons must be >= 1")
        if self.pve_subsamples < 1:
            raise ValueError("pve_subsamples must be >= 1")


def _body_ellipses(hx, hy):
    # (ellipse, density) painted in order; later entries overwrite
    return [
        (Ellipse(0.0, 0.0, 0.86 * hx, 0.70 * hy), 1.0),
        (Ellipse(-0.38 * hx, 0.05 * hy, 0.22 * hx, 0.34 * hy, 10.0), 0.35),
        (Ellipse(0.38 * hx, 0.05 * hy, 0.20 * hx, 0.32 * hy, -10.0), 0.35),
        (Ellipse(0.0, -0.40 * hy, 0.14 * hx, 0.12 * hy), 1.45),
        (Ellipse(0.0, -0.40 * hy, 0.07 * hx, 0.06 * hy), 1.05),
        (Ellipse(0.0, 0.30 * hy, 0.12 * hx, 0.10 * hy, 30.0), 1.08),
        (Ellipse(-0.10 * hx, 0.52 * hy, 0.05 * hx, 0.04 * hy), 1.15),
        (Ellipse(0.12 * hx, 0.50 * hy, 0.04 * hx, 0.04 * hy), 0.92),
    ]


# modified Shepp-Logan (Toft): value, a, b, x0, y0, phi
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


def _tissue(kind: str, spec: GridSpec) -> np.ndarray:
    pts = spec.pixel_centers()
    hx, hy = spec.half_extent
    rho = np.zeros(spec.shape)
    if kind == "empty":
        return rho
    if kind == "disk":
        rho[Ellipse(0.0, 0.0, 0.8 * hx, 0.8 * hy).contains(pts)] = 1.0
        return rho
    if kind == "body":
        for shape, value in _body_ellipses(hx, hy):
            rho[shape.contains(pts)] = value
        return rho
    if kind == "shepp_logan":
        v = np.zeros(spec.shape)
        for value, a, b, x0, y0, phi in _SHEPP_LOGAN:
            v[Ellipse(x0 * hx, y0 * hy, a * hx, b * hy, phi).contains(pts)] += value
        head = Ellipse(0.0, 0.0, 0.69 * hx, 0.92 * hy).contains(pts)
        # skull 1.4, brain 1.0, lesions 0.9-1.1 g/cm^3
        rho[head] = 1.0 + 0.5 * (v[head] - 0.2)
        return rho
    raise ValueError(f"unknown phantom kind {kind!r}")


def make_phantom(kind: str = "body", size=(256, 256), pixel_size: float = 1.0,
                 metal_shapes=(), metal_material: str = "titanium",
                 metal_density: float | None = None) -> Phantom:
    """Water-equivalent phantom with metal inserts.

    Parameters
    ----------
    kind : {"body", "shepp_logan", "disk", "empty"}
        Tissue layout. All tissue uses water MACs; structures differ in density.
    size : (H, W)
    pixel_size : float
        mm.
    metal_shapes : sequence of Ellipse or Polygon
        Inserts in physical coordinates (mm). Pixels whose centre lies in any
        shape become metal.
    metal_material : str
        One of the bundled MAC materials.
    metal_density : float, optional
        g/cm^3; defaults to the handbook density of ``metal_material``.
    """
    spec = GridSpec(int(size[0]), int(size[1]), pixel_size)
    rho = _tissue(kind, spec)
    hx, hy = spec.half_extent
    mask = np.zeros(spec.shape, dtype=np.uint8)
    pts = spec.pixel_centers()
    for shape in metal_shapes:
        x0, x1, y0, y1 = shape.bounds()
        if x0 < -hx or x1 > hx or y0 < -hy or y1 > hy:
            raise ValueError(f"metal shape {shape} extends outside the grid")
        mask[shape.contains(pts)] = 1
    if metal_density is None:
        metal_density = MATERIAL_DENSITY[metal_material]
    rho[mask == 1] = metal_density
    return Phantom(DensityGrid(rho, pixel_size), MetalMask(mask, pixel_size), "water", metal_material)


def ground_truth_lac(phantom: Phantom, ctx: MaterialContext, energy: float) -> LacGrid:
    from .reconstruct import render_lac

    return render_lac(phantom.density, phantom.mask, ctx, energy)


def _chunks(n, size):
    return [np.arange(i, min(i + size, n)) for i in range(0, n, size)]


def _subray_offsets(geom: ScanGeometry, n_sub: int) -> np.ndarray:
    frac = (np.arange(n_sub) + 0.5) / n_sub - 0.5
    return geom.detector_offsets()[:, None] + frac[None, :] * geom.detector_spacing


def _map_views(fn, geom, threads, chunk):
    chunks = _chunks(geom.n_views, chunk)
    if threads and threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(fn, chunks))
    else:
        parts = [fn(c) for c in chunks]
    return np.concatenate(parts, axis=0)


def project_poly(phantom: Phantom, geom: ScanGeometry, cfg: SamplingConfig, spectrum: Spectrum,
                 ctx: MaterialContext, noise: NoiseConfig = NoiseConfig(), threads: int = 1,
                 views_per_chunk: int = 8) -> Sinogram:
    """Polychromatic measurements of a phantom.

    ``ctx`` supplies the water and metal MAC tables; its own spectrum is
    ignored in favour of ``spectrum``. Intensities are averaged over
    ``noise.pve_subsamples`` sub-rays per detector cell before the log. With
    Poisson noise the photon count in every bin is drawn from a generator
    seeded by ``(noise.seed, view)``, so output does not depend on ``threads``.
    """
    ctx = ctx.with_spectrum(spectrum)
    n_sub = noise.pve_subsamples
    offsets = _subray_offsets(geom, n_sub)
    log_eta = np.log(np.where(spectrum.weights > 0, spectrum.weights, 1.0))
    live = spectrum.weights > 0
    log_norm = np.logaddexp.reduce(np.where(live, log_eta, -np.inf))
    scale = MM_TO_CM * cfg.delta_x

    def log_transmission(views):
        o, d, t0, t1 = fan_rays(geom, views, offsets)
        rs = sample_bundle(o, d, t0, t1, cfg.delta_x)
        sigma = lookup_bilinear(phantom.density, rs.points)
        metal = lookup_mask(phantom.mask, rs.points) == 1
        s_m = np.bincount(rs.ray_index, np.where(metal, sigma, 0.0), minlength=rs.n_rays)
        s_w = np.bincount(rs.ray_index, np.where(metal, 0.0, sigma), minlength=rs.n_rays)
        a = scale * (np.multiply.outer(s_w, ctx.gamma_water) + np.multiply.outer(s_m, ctx.gamma_metal))
        log_t = np.where(live, log_eta - a, -np.inf)
        # dividing by sum(eta) makes an unattenuated ray exactly zero
        log_t = np.logaddexp.reduce(log_t, axis=-1) - log_norm
        log_t = log_t.reshape(len(views), geom.n_detectors, n_sub)
        # mean over sub-rays, in the log domain
        top = log_t.max(axis=-1, keepdims=True)
        return top[..., 0] + np.log(np.mean(np.exp(log_t - top), axis=-1))

    log_t = _map_views(log_transmission, geom, threads, views_per_chunk)
    if not noise.enable_poisson:
        return Sinogram(-log_t, geom, spectrum.sha256(), np.zeros(log_t.shape, dtype=bool))
    counts = np.empty(log_t.shape)
    for v in range(geom.n_views):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(noise.seed, spawn_key=(v,))))
        counts[v] = rng.poisson(noise.incident_photons * np.exp(log_t[v]))
    clamped = counts < 1
    counts = np.maximum(counts, 1.0)
    return Sinogram(-np.log(counts / noise.incident_photons), geom, spectrum.sha256(), clamped)


def project_linear(grid, geom: ScanGeometry, cfg: SamplingConfig, threads: int = 1,
                   views_per_chunk: int = 16) -> Sinogram:
    """Line integrals ``0.1 * sum(value * dx)`` along the centre ray of each cell.

    LAC and density grids are sampled bilinearly, masks by nearest neighbour.
    """
    if isinstance(grid, MetalMask):
        def lookup(points):
            return lookup_mask(grid, points).astype(np.float64)
    else:
        def lookup(points):
            return lookup_bilinear(grid, points)

    def integrate(views):
        o, d, t0, t1 = fan_rays(geom, views)
        rs = sample_bundle(o, d, t0, t1, cfg.delta_x)
        s = np.bincount(rs.ray_index, lookup(rs.points), minlength=rs.n_rays)
        return (MM_TO_CM * cfg.delta_x * s).reshape(len(views), geom.n_detectors)

    return Sinogram(_map_views(integrate, geom, threads, views_per_chunk), geom, NO_SPECTRUM)


def metal_trace(mask: MetalMask, geom: ScanGeometry, cfg: SamplingConfig) -> np.ndarray:
    """Sinogram bins whose centre ray samples at least one metal pixel."""
    return project_linear(mask, geom, cfg).values > 0


def count_components(mask: MetalMask) -> int:
    """Connected metal regions under 4-connectivity."""
    _, n = ndimage.label(mask.values)
    return int(n)
