import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from densimar.forward import MaterialContext, decompose_lac, forward, forward_batch, forward_with_grad
from densimar.spectrum import MacTable, Spectrum, bundled_mac, interp_mac


def _flat_ctx(gamma_water=0.2, gamma_metal=1.0, energies=(60.0,), weights=(1.0,)):
    e = np.array([10.0, 200.0])
    return MaterialContext(Spectrum(np.array(energies), np.array(weights)),
                           MacTable("water", e, np.full(2, gamma_water)),
                           MacTable("metal", e, np.full(2, gamma_metal)))


def test_decompose_lac_examples(ctx40):
    ctx = _flat_ctx()
    assert decompose_lac(1.0, 0, ctx, 0) == pytest.approx(0.2)
    assert decompose_lac(-0.3, 0, ctx, 0) == 0.0
    assert np.all(decompose_lac(np.zeros(ctx40.n_bins), 1, ctx40, np.arange(ctx40.n_bins)) == 0)
    assert decompose_lac(4.506, 1, ctx40, 3) == pytest.approx(4.506 * ctx40.gamma_metal[3])


def test_forward_examples(ctx40):
    assert forward(np.zeros(7), np.zeros(7), 0.5, ctx40) == 0.0
    assert forward([], [], 0.5, ctx40) == 0.0
    assert forward([1.0, 2.0], [0, 0], 1.0, _flat_ctx()) == pytest.approx(0.06, abs=1e-15)


def test_single_bin_is_line_integral(rng):
    ctx = _flat_ctx(0.3, 2.0)
    sig = rng.random(20)
    metal = rng.integers(0, 2, 20)
    expected = 0.1 * 0.5 * np.sum(sig * np.where(metal == 1, 2.0, 0.3))
    p, g = forward_with_grad(sig, metal, 0.5, ctx)
    assert p == pytest.approx(expected, rel=1e-12)
    assert np.allclose(g, 0.05 * np.where(metal == 1, 2.0, 0.3))


def test_zero_density_gradient_is_spectrum_average(ctx40):
    _, g = forward_with_grad(np.zeros(3), np.array([0, 1, 0]), 0.5, ctx40)
    eta = ctx40.spectrum.weights
    assert g[0] == pytest.approx(0.05 * eta @ ctx40.gamma_water, rel=1e-12)
    assert g[1] == pytest.approx(0.05 * eta @ ctx40.gamma_metal, rel=1e-12)


def test_negative_samples_have_zero_gradient(ctx40):
    _, g = forward_with_grad(np.array([-0.2, 0.5]), np.array([0, 0]), 0.5, ctx40)
    assert g[0] == 0.0 and g[1] > 0


def test_non_finite_rejected(ctx40):
    with pytest.raises(FloatingPointError):
        forward([1.0, np.nan], [0, 0], 0.5, ctx40)
    with pytest.raises(ValueError):
        forward([1.0, 2.0], [0], 0.5, ctx40)


def test_thick_metal_stable():
    # attenuation exponents far beyond exp underflow
    ctx = MaterialContext(Spectrum(np.array([60.0, 100.0]), np.array([0.5, 0.5])), bundled_mac("water"),
                          bundled_mac("gold"))
    p, g = forward_with_grad(np.full(4000, 19.32), np.ones(4000), 0.5, ctx)
    a = 0.05 * 19.32 * 4000 * interp_mac(ctx.metal, np.array([60.0, 100.0]))
    assert a.min() > 700
    assert p == pytest.approx(a.min() + np.log(2.0), rel=1e-12)
    assert np.all(np.isfinite(g))


def _fd_rel_error(sig, metal, dx, ctx, h=1e-4):
    _, g = forward_with_grad(sig, metal, dx, ctx)
    worst = 0.0
    for k in range(len(sig)):
        up, dn = sig.copy(), sig.copy()
        up[k] += h
        dn[k] -= h
        fd = (forward(up, metal, dx, ctx) - forward(dn, metal, dx, ctx)) / (2 * h)
        worst = max(worst, abs(fd - g[k]) / max(abs(fd), 1e-12))
    return worst


def test_gradient_matches_central_differences(ctx40):
    # 100 random rays; densities stay 1e-3 away from the clamp kink
    rng = np.random.default_rng(5)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 30))
        sig = rng.uniform(0.001, 5.0, n) * rng.choice([1.0, 1.0, 1.0, -1.0], n)
        metal = rng.integers(0, 2, n)
        if np.all(sig < 0):
            sig[0] = 1.0
        worst = max(worst, _fd_rel_error(sig, metal, float(rng.uniform(0.2, 2.0)), ctx40))
    assert worst < 1e-5


sig_lists = st.lists(st.floats(0.0, 8.0), min_size=1, max_size=25)


@given(sig_lists, st.data())
def test_physical_invariants(sigmas, data):
    ctx = MaterialContext(Spectrum(np.array([30.0, 60.0, 90.0]), np.array([0.2, 0.5, 0.3])),
                          bundled_mac("water"), bundled_mac("titanium"))
    sig = np.array(sigmas)
    metal = np.array(data.draw(st.lists(st.integers(0, 1), min_size=len(sig), max_size=len(sig))))
    p, g = forward_with_grad(sig, metal, 0.5, ctx)
    assert p >= 0.0 and np.all(g >= 0)
    a = 0.05 * (sig[metal == 0].sum() * ctx.gamma_water + sig[metal == 1].sum() * ctx.gamma_metal)
    assert p <= ctx.spectrum.weights @ a + 1e-12
    k = data.draw(st.integers(0, len(sig) - 1))
    bumped = sig.copy()
    bumped[k] += data.draw(st.floats(0.0, 3.0))
    assert forward(bumped, metal, 0.5, ctx) >= p - 1e-12


def test_jensen_equality_single_bin():
    ctx = _flat_ctx()
    sig = np.array([1.0, 3.0])
    p = forward(sig, [0, 1], 0.5, ctx)
    assert p == pytest.approx(0.05 * (0.2 * 1 + 1.0 * 3), rel=1e-14)


def test_batch_matches_per_ray(ctx40, rng):
    counts = [3, 0, 7, 1]
    sig = rng.uniform(-0.5, 4, sum(counts))
    metal = rng.integers(0, 2, sum(counts))
    idx = np.repeat(np.arange(4), counts)
    p, g = forward_batch(sig, metal, idx, 4, 0.7, ctx40)
    start = 0
    for r, n in enumerate(counts):
        pr, gr = forward_with_grad(sig[start:start + n], metal[start:start + n], 0.7, ctx40)
        assert p[r] == pytest.approx(pr, rel=1e-12, abs=1e-15)
        assert np.allclose(g[start:start + n], gr, rtol=1e-12)
        start += n


def test_linearized_context(ctx40):
    lin = ctx40.linearized()
    assert lin.n_bins == 1 and lin.spectrum.energies[0] == ctx40.equivalent_energy
