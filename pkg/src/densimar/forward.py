"""Differentiable polychromatic acquisition model.

Densities along a ray are split into tissue (water MAC) and metal (metal MAC)
by the metal mask, turned into per-energy attenuation line integrals and
mixed through the normalised source spectrum::

    a_i  = 0.1 * dx * sum_k max(sigma_k, 0) * gamma_k(E_i)      [dx in mm]
    p    = -ln sum_i eta_i * exp(-a_i)

The sum over energies is evaluated in shifted (log-sum-exp) form because
``a_i`` easily exceeds 700 behind thick metal.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .spectrum import MacTable, Spectrum, equivalent_energy, interp_mac

MM_TO_CM = 0.1


@dataclass(frozen=True, eq=False)
class MaterialContext:
    spectrum: Spectrum
    water: MacTable
    metal: MacTable
    gamma_water: np.ndarray = field(init=False)
    gamma_metal: np.ndarray = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "gamma_water", np.atleast_1d(interp_mac(self.water, self.spectrum.energies)))
        object.__setattr__(self, "gamma_metal", np.atleast_1d(interp_mac(self.metal, self.spectrum.energies)))

    @property
    def n_bins(self) -> int:
        return self.spectrum.n_bins

    @property
    def equivalent_energy(self) -> int:
        return equivalent_energy(self.spectrum)

    def with_spectrum(self, spectrum: Spectrum) -> "MaterialContext":
        return MaterialContext(spectrum, self.water, self.metal)

    def linearized(self) -> "MaterialContext":
        """Single-energy context at this spectrum's equivalent energy.

        The forward model then reduces to the plain line integral of
        ``sigma * gamma(E*)``.
        """
        e_star = float(self.equivalent_energy)
        return self.with_spectrum(Spectrum(np.array([e_star]), np.array([1.0])))


def decompose_lac(sigma, is_metal, ctx: MaterialContext, bin: int):
    """LAC (1/cm) at energy bin ``bin``; negative densities count as zero."""
    gamma = np.where(np.asarray(is_metal) != 0, ctx.gamma_metal[bin], ctx.gamma_water[bin])
    out = np.maximum(np.asarray(sigma, dtype=np.float64), 0.0) * gamma
    return float(out) if out.ndim == 0 else out


def _check_finite(sigmas):
    if not np.all(np.isfinite(sigmas)):
        raise FloatingPointError("non-finite density passed to the forward model")


def _mix(s_water, s_metal, delta_x, ctx: MaterialContext):
    """Shared core for one or many rays.

    ``s_water``/``s_metal`` are per-ray sums of clamped density over tissue
    and metal samples. Returns ``p`` and the derivatives of ``p`` with
    respect to one unit of tissue or metal density at a single sample.
    """
    scale = MM_TO_CM * delta_x
    eta = ctx.spectrum.weights
    a = scale * (np.multiply.outer(s_water, ctx.gamma_water) + np.multiply.outer(s_metal, ctx.gamma_metal))
    live = eta > 0
    a_min = np.min(np.where(live, a, np.inf), axis=-1, keepdims=True)
    w = eta * np.exp(-(a - a_min))
    z = w.sum(axis=-1)
    # normalising by sum(eta) (1 up to rounding) keeps p exactly 0 for an empty ray
    p = a_min[..., 0] - np.log(z / eta.sum())
    d_water = scale * (w @ ctx.gamma_water) / z
    d_metal = scale * (w @ ctx.gamma_metal) / z
    return p, d_water, d_metal


def forward(sigmas, is_metal, delta_x: float, ctx: MaterialContext) -> float:
    """Predicted measurement for a single ray."""
    return forward_with_grad(sigmas, is_metal, delta_x, ctx)[0]


def forward_with_grad(sigmas, is_metal, delta_x: float, ctx: MaterialContext):
    """Predicted measurement and its gradient w.r.t. every sample density."""
    sigmas = np.asarray(sigmas, dtype=np.float64)
    metal = np.asarray(is_metal) != 0
    if sigmas.shape != metal.shape:
        raise ValueError("sigmas and is_metal must have equal length")
    _check_finite(sigmas)
    if sigmas.size == 0:
        return 0.0, np.zeros(0)
    clamped = np.maximum(sigmas, 0.0)
    p, d_water, d_metal = _mix(clamped[~metal].sum(), clamped[metal].sum(), delta_x, ctx)
    grad = np.where(metal, d_metal, d_water) * (sigmas >= 0)
    return float(p), grad


def forward_batch(sigmas, is_metal, ray_index, n_rays: int, delta_x: float, ctx: MaterialContext):
    """Vectorised forward pass over many rays with samples stored back to back.

    Returns
    -------
    p : ndarray, shape (n_rays,)
    dp_dsigma : ndarray, shape like ``sigmas``
        Derivative of each sample's ray prediction w.r.t. that sample.
    """
    _check_finite(sigmas)
    metal = np.asarray(is_metal) != 0
    clamped = np.maximum(sigmas, 0.0)
    s_metal = np.bincount(ray_index, weights=np.where(metal, clamped, 0.0), minlength=n_rays)
    s_water = np.bincount(ray_index, weights=np.where(metal, 0.0, clamped), minlength=n_rays)
    p, d_water, d_metal = _mix(s_water, s_metal, delta_x, ctx)
    grad = np.where(metal, d_metal[ray_index], d_water[ray_index]) * (sigmas >= 0)
    return p, grad
