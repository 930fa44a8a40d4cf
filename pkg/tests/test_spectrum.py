import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from densimar.spectrum import (EnergyRangeError, MacTable, Spectrum, TableFormatError, bundled_mac,
                               equivalent_energy, interp_mac, load_mac, load_spectrum,
                               noisy_spectrum, random_spectrum, resample_spectrum, save_spectrum)


def _write(tmp_path, text, name="s.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_load_normalises_counts(tmp_path):
    s = load_spectrum(_write(tmp_path, "# header\n20,1\n40,1\n60,1\n80,1\n"))
    assert np.allclose(s.weights, 0.25)
    assert s.n_bins == 4


def test_load_single_bin(tmp_path):
    s = load_spectrum(_write(tmp_path, "60, 5\n"))
    assert s.weights.tolist() == [1.0]


@pytest.mark.parametrize("text", ["20,1\n40,-1\n", "20,1\n20,2\n", "20,1,3\n", "20,abc\n", "", "20,0\n"])
def test_load_rejects_bad_tables(tmp_path, text):
    with pytest.raises(TableFormatError):
        load_spectrum(_write(tmp_path, text))


def test_spectrum_invariants():
    with pytest.raises(ValueError):
        Spectrum(np.array([1.0, 2.0]), np.array([0.6, 0.6]))
    with pytest.raises(ValueError):
        Spectrum(np.array([2.0, 1.0]), np.array([0.5, 0.5]))
    with pytest.raises(ValueError):
        Spectrum(np.array([1.0, 2.0]), np.array([1.5, -0.5]))


def test_normalisation_idempotent(tmp_path):
    s = load_spectrum(_write(tmp_path, "20,3\n30,7\n50,11\n"))
    again = Spectrum.from_counts(s.energies, s.weights)
    assert np.allclose(again.weights, s.weights, rtol=0, atol=1e-15)


def test_save_load_preserves_digest(tmp_path, spectrum100):
    for s in (spectrum100, resample_spectrum(spectrum100, 7, 20, 120)):
        save_spectrum(s, tmp_path / "x.csv")
        assert load_spectrum(tmp_path / "x.csv").sha256() == s.sha256()


def test_resample_uniform_to_five_bins():
    e = np.arange(20.5, 120.0, 1.0)
    s = Spectrum.from_counts(e, np.ones_like(e))
    r = resample_spectrum(s, 5, 20, 120)
    assert np.allclose(r.weights, 0.2, atol=1e-12)
    assert np.allclose(r.energies, [30, 50, 70, 90, 110])


def test_resample_single_bin_midpoint(spectrum100):
    r = resample_spectrum(spectrum100, 1, 20, 120)
    assert r.energies.tolist() == [70.0] and r.weights.tolist() == [1.0]


@pytest.mark.parametrize("n", [2, 3, 7])
def test_resample_triangular_matches_integral_oracle(n):
    # counts in 1 keV bins of the density f(E) = E - 20 on [20, 120]
    e = np.arange(20.5, 120.0, 1.0)
    s = Spectrum.from_counts(e, e - 20.0)
    edges = np.linspace(20, 120, n + 1)
    exact = np.diff((edges - 20.0) ** 2 / 2.0) / (100.0 ** 2 / 2.0)
    assert np.allclose(resample_spectrum(s, n, 20, 120).weights, exact, atol=1e-4)
    if n == 2:
        assert np.allclose(resample_spectrum(s, 2, 20, 120).weights, [0.25, 0.75], atol=1e-12)


def test_resample_same_grid_reproduces(spectrum100):
    r = resample_spectrum(spectrum100, 100, 20, 120)
    assert np.allclose(r.energies, spectrum100.energies)
    assert np.allclose(r.weights, spectrum100.weights, atol=1e-9)


def test_resample_errors(spectrum100):
    with pytest.raises(ValueError):
        resample_spectrum(spectrum100, 0, 20, 120)
    with pytest.raises(ValueError):
        resample_spectrum(spectrum100, 4, 120, 20)


def test_interp_mac_knot_and_loglog_midpoint():
    t = MacTable("x", np.array([50.0, 100.0]), np.array([2.0, 0.5]))
    assert interp_mac(t, 50.0) == pytest.approx(2.0, rel=1e-14)
    assert interp_mac(t, math.sqrt(5000.0)) == pytest.approx(1.0, rel=1e-12)
    with pytest.raises(EnergyRangeError):
        interp_mac(t, 49.0)
    with pytest.raises(EnergyRangeError):
        interp_mac(t, 101.0)


@given(st.floats(10.0, 150.0), st.floats(10.0, 150.0))
def test_interp_mac_monotone_for_water(a, b):
    t = bundled_mac("water")
    lo, hi = sorted((a, b))
    assert interp_mac(t, lo) >= interp_mac(t, hi)


def test_water_60kev_against_reference_database():
    # XCOM total attenuation with coherent scattering for liquid water at 60 keV: 0.2059 cm^2/g
    assert interp_mac(bundled_mac("water"), 60.0) == pytest.approx(0.2059, rel=0.01)


def test_gold_k_edge():
    # XCOM: 2.175 cm^2/g just below and 8.904 cm^2/g just above 80.725 keV
    g = bundled_mac("gold")
    assert interp_mac(g, 80.72) == pytest.approx(2.175, rel=0.03)
    assert interp_mac(g, 80.73) == pytest.approx(8.904, rel=0.03)


def test_metals_attenuate_more_than_water():
    e = np.linspace(20, 150, 27)
    w = interp_mac(bundled_mac("water"), e)
    for m in ("titanium", "chromium", "steel", "gold"):
        assert np.all(interp_mac(bundled_mac(m), e) > w)


def test_unknown_bundled_material():
    with pytest.raises(KeyError):
        bundled_mac("unobtainium")


def test_load_mac_rejects_non_positive(tmp_path):
    with pytest.raises(TableFormatError):
        load_mac(_write(tmp_path, "10,1\n20,0\n"))


@pytest.mark.parametrize("energies, weights, expected", [
    ([40, 60, 80, 100], [0.25] * 4, 70),
    ([63.7], [1.0], 63),
    ([30, 90], [0.7, 0.3], 48),
])
def test_equivalent_energy(energies, weights, expected):
    assert equivalent_energy(Spectrum(np.array(energies, float), np.array(weights))) == expected


def test_bundled_spectrum_equivalent_energy(spectrum100):
    assert spectrum100.n_bins == 100
    assert equivalent_energy(spectrum100) == 54


def test_noisy_and_random_spectra_valid(spectrum100, rng):
    n = noisy_spectrum(spectrum100, 0.03, rng)
    assert abs(n.weights.sum() - 1) < 1e-12 and np.all(n.weights >= 0)
    assert not np.allclose(n.weights, spectrum100.weights)
    r = random_spectrum(spectrum100.energies, rng)
    assert r.n_bins == 100 and abs(r.weights.sum() - 1) < 1e-12


def test_digest_depends_on_content(spectrum100):
    other = Spectrum(spectrum100.energies + 0.1, spectrum100.weights)
    assert other.sha256() != spectrum100.sha256()
    assert len(spectrum100.sha256()) == 32
