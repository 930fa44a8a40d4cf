import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from densimar.forward import MaterialContext
from densimar.geometry import SamplingConfig, ScanGeometry, fan_rays
from densimar.grid import DensityGrid, GridSpec, LacGrid, MetalMask
from densimar.simulate import (MATERIAL_DENSITY, Ellipse, NoiseConfig, Phantom, Polygon, count_components,
                               ground_truth_lac, make_phantom, metal_trace, project_linear, project_poly)
from densimar.spectrum import Spectrum, bundled_mac

NOISELESS = NoiseConfig(enable_poisson=False, pve_subsamples=1)


def _mono_ctx(energy=60.0, metal="titanium"):
    return MaterialContext(Spectrum(np.array([energy]), np.array([1.0])), bundled_mac("water"),
                           bundled_mac(metal))


def test_titanium_density_handbook():
    assert MATERIAL_DENSITY["titanium"] == 4.506


def test_phantom_without_metal_has_empty_mask():
    ph = make_phantom("body", (32, 32), 1.0)
    assert ph.mask.n_metal == 0
    assert ph.density.values.max() > 0


@pytest.mark.parametrize("kind", ["body", "shepp_logan", "disk", "empty"])
def test_phantom_kinds(kind):
    ph = make_phantom(kind, (24, 20), 1.0)
    assert ph.density.values.shape == (24, 20)
    with pytest.raises(ValueError):
        make_phantom("banana", (8, 8))


@pytest.mark.parametrize("r", [3.0, 5.5, 9.0])
def test_disk_insert_area_within_perimeter(r):
    ph = make_phantom("empty", (40, 40), 1.0, [Ellipse(1.3, -2.1, r, r)])
    ideal = math.pi * r * r
    assert abs(ph.mask.n_metal - ideal) <= 2 * math.pi * r
    assert np.all(ph.density.values[ph.mask.values == 1] == MATERIAL_DENSITY["titanium"])


def test_two_inserts_two_components():
    ph = make_phantom("body", (48, 48), 1.0, [Ellipse(-10, 0, 3, 3), Polygon(((5, 5), (12, 5), (8, 12)))])
    assert count_components(ph.mask) == 2


def test_shape_outside_grid_rejected():
    with pytest.raises(ValueError):
        make_phantom("body", (32, 32), 1.0, [Ellipse(14, 0, 5, 5)])


def test_phantom_metal_density_positive():
    with pytest.raises(ValueError):
        Phantom(DensityGrid(np.zeros((2, 2))), MetalMask(np.eye(2)), "water", "titanium")


def test_empty_phantom_zero_sinogram(small_geom, spectrum100):
    ph = make_phantom("empty", (32, 32), 1.5)
    ctx = MaterialContext(spectrum100, bundled_mac("water"), bundled_mac("titanium"))
    sino = project_poly(ph, small_geom, SamplingConfig(0.5), spectrum100, ctx, NoiseConfig(enable_poisson=False))
    assert np.all(sino.values == 0.0)


def test_single_energy_matches_linear_projection(small_geom):
    ph = make_phantom("body", (32, 32), 1.5)
    ctx = _mono_ctx()
    cfg = SamplingConfig(0.5)
    poly = project_poly(ph, small_geom, cfg, ctx.spectrum, ctx, NOISELESS)
    lin = project_linear(ground_truth_lac(ph, ctx, 60.0), small_geom, cfg)
    assert np.allclose(poly.values, lin.values, atol=1e-6, rtol=0)


def test_beam_hardening_lowers_metal_rays(small_geom, ctx40, spectrum100):
    ph = make_phantom("disk", (32, 32), 1.5, [Ellipse(3, 2, 4, 3)])
    cfg = SamplingConfig(0.5)
    poly = project_poly(ph, small_geom, cfg, spectrum100, ctx40, NOISELESS)
    mono = project_linear(ground_truth_lac(ph, ctx40, ctx40.equivalent_energy), small_geom, cfg)
    # rays with at least 4 mm of titanium; grazing rays are dominated by tissue
    thick = project_linear(ph.mask, small_geom, cfg).values >= 0.4
    assert thick.sum() > 20
    assert np.all(poly.values[thick] < mono.values[thick])


def test_pve_invariance_for_point_footprints(spectrum100, ctx40):
    geom = ScanGeometry(200.0, 200.0, 8, 360.0, 16, 1e-7, 24.0)
    ph = make_phantom("body", (32, 32), 1.5, [Ellipse(3, 2, 4, 3)])
    a = project_poly(ph, geom, SamplingConfig(0.5), spectrum100, ctx40, NOISELESS)
    b = project_poly(ph, geom, SamplingConfig(0.5), spectrum100, ctx40,
                     NoiseConfig(enable_poisson=False, pve_subsamples=5))
    assert np.allclose(a.values, b.values, atol=1e-6)


@settings(max_examples=15)
@given(st.integers(0, 31), st.integers(0, 31), st.floats(0.1, 3.0))
def test_monotone_in_density(r, c, bump):
    geom = ScanGeometry(200.0, 200.0, 6, 360.0, 24, 3.0, 24.0)
    ctx = MaterialContext(Spectrum(np.array([40.0, 80.0]), np.array([0.5, 0.5])), bundled_mac("water"),
                          bundled_mac("titanium"))
    ph = make_phantom("body", (32, 32), 1.5)
    base = project_poly(ph, geom, SamplingConfig(1.0), ctx.spectrum, ctx, NOISELESS).values
    rho = ph.density.values.copy()
    rho[r, c] += bump
    ph2 = Phantom(DensityGrid(rho, 1.5), ph.mask, "water", "titanium")
    bumped = project_poly(ph2, geom, SamplingConfig(1.0), ctx.spectrum, ctx, NOISELESS).values
    assert np.all(bumped >= base - 1e-12)


def test_poisson_independent_of_threads(small_geom, ctx40, spectrum100):
    ph = make_phantom("body", (32, 32), 1.5, [Ellipse(3, 2, 4, 3)])
    noise = NoiseConfig(incident_photons=1e4, seed=7)
    a = project_poly(ph, small_geom, SamplingConfig(0.5), spectrum100, ctx40, noise, threads=1, views_per_chunk=5)
    b = project_poly(ph, small_geom, SamplingConfig(0.5), spectrum100, ctx40, noise, threads=3, views_per_chunk=2)
    assert np.array_equal(a.values, b.values)
    c = project_poly(ph, small_geom, SamplingConfig(0.5), spectrum100, ctx40, NoiseConfig(1e4, seed=8))
    assert not np.array_equal(a.values, c.values)
    assert a.spectrum_sha256 == spectrum100.sha256()


def test_photon_starvation_clamps(small_geom, spectrum100):
    ph = make_phantom("disk", (32, 32), 1.5, [Ellipse(0, 0, 8, 8)], "gold")
    ctx = MaterialContext(spectrum100, bundled_mac("water"), bundled_mac("gold"))
    noise = NoiseConfig(incident_photons=1e3, seed=1)
    sino = project_poly(ph, small_geom, SamplingConfig(0.5), spectrum100, ctx, noise)
    assert sino.clamped.any()
    assert np.allclose(sino.values[sino.clamped], math.log(1e3))


def test_noise_config_validation():
    with pytest.raises(ValueError):
        NoiseConfig(incident_photons=0.5)
    with pytest.raises(ValueError):
        NoiseConfig(pve_subsamples=0)


@pytest.mark.parametrize("dx", [0.5, 0.25])
def test_linear_projection_disk_chords(dx):
    geom = ScanGeometry(300.0, 300.0, 12, 360.0, 128, 0.6, 24.0)
    radius = 20.0
    spec = GridSpec(192, 192, 0.25)
    pts = spec.pixel_centers()
    # unit attenuation per mm: 10/cm, cancelling the mm to cm factor
    lac = LacGrid(10.0 * (np.hypot(pts[..., 0], pts[..., 1]) <= radius), 0.25)
    p = project_linear(lac, geom, SamplingConfig(dx)).values
    o, d, _, _ = fan_rays(geom)
    dist = np.abs(o[..., 0] * d[..., 1] - o[..., 1] * d[..., 0])
    chord = 2 * np.sqrt(np.clip(radius ** 2 - dist ** 2, 0, None))
    assert np.max(np.abs(p - chord)) <= 2 * dx


def test_linear_projection_zero_and_scaling(small_geom, rng):
    g = LacGrid(rng.random((32, 32)), 1.5)
    cfg = SamplingConfig(0.5)
    assert np.all(project_linear(LacGrid(np.zeros((32, 32)), 1.5), small_geom, cfg).values == 0)
    a = project_linear(g, small_geom, cfg).values
    b = project_linear(LacGrid(3.7 * g.values, 1.5), small_geom, cfg).values
    assert np.allclose(b, 3.7 * a, rtol=1e-9, atol=0)


def test_metal_trace_matches_mask_projection(small_geom):
    ph = make_phantom("empty", (32, 32), 1.5, [Ellipse(5, 5, 3, 3)])
    trace = metal_trace(ph.mask, small_geom, SamplingConfig(0.5))
    assert trace.shape == (small_geom.n_views, small_geom.n_detectors)
    assert 0 < trace.sum() < trace.size
    assert not metal_trace(MetalMask.empty(ph.spec), small_geom, SamplingConfig(0.5)).any()
