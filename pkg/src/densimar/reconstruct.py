"""Images from a trained density field."""

from __future__ import annotations

import numpy as np

from .field import FieldParams, field_eval
from .forward import MaterialContext
from .grid import DensityGrid, GridSpec, LacGrid, MetalMask
from .spectrum import interp_mac


def render_density(params: FieldParams, spec: GridSpec, half_width: float | None = None) -> DensityGrid:
    """Evaluate the field at every pixel centre; negative output is clamped to 0.

    ``half_width`` is the field's normalisation domain and defaults to the
    square circumscribing ``spec``.
    """
    if half_width is None:
        half_width = spec.fov_half_width
    sigma = field_eval(spec.pixel_centers().reshape(-1, 2), params, half_width)
    return DensityGrid(np.maximum(sigma.astype(np.float64), 0.0).reshape(spec.shape), spec.pixel_size)


def render_lac(density: DensityGrid, mask: MetalMask, ctx: MaterialContext, energy: float) -> LacGrid:
    """Per-pixel LAC (1/cm) at ``energy`` keV from densities and the metal mask."""
    if density.spec != mask.spec:
        raise ValueError("density and mask grids differ")
    g_water = interp_mac(ctx.water, energy)
    g_metal = interp_mac(ctx.metal, energy)
    gamma = np.where(mask.values == 1, g_metal, g_water)
    return LacGrid(density.values * gamma, density.pixel_size, float(energy))


def render_lac_stack(density: DensityGrid, mask: MetalMask, ctx: MaterialContext) -> list[LacGrid]:
    """LAC images at each energy bin of the context's spectrum."""
    return [render_lac(density, mask, ctx, e) for e in ctx.spectrum.energies]


def render_monochromatic(density: DensityGrid, mask: MetalMask, ctx: MaterialContext) -> LacGrid:
    """Virtual monochromatic image at the spectrum's equivalent energy."""
    return render_lac(density, mask, ctx, ctx.equivalent_energy)


def to_hu(lac: LacGrid, ctx: MaterialContext) -> np.ndarray:
    """Hounsfield units relative to water at the image energy."""
    mu_water = interp_mac(ctx.water, lac.energy)
    return 1000.0 * (lac.values - mu_water) / mu_water
