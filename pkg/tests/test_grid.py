import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from densimar.grid import (DensityGrid, GridSpec, LacGrid, MetalMask, lookup_bilinear, lookup_mask,
                           read_dimg, write_dimg, write_pgm)


def test_pixel_centres_convention():
    spec = GridSpec(3, 4, 2.0)
    c = spec.pixel_centers()
    assert c.shape == (3, 4, 2)
    assert tuple(c[0, 0]) == (-3.0, 2.0)
    assert tuple(c[2, 3]) == (3.0, -2.0)
    assert spec.fov_half_width == 4.0


def test_grid_validation():
    with pytest.raises(ValueError):
        DensityGrid(-np.ones((2, 2)))
    with pytest.raises(ValueError):
        LacGrid(np.ones(3))
    with pytest.raises(ValueError):
        MetalMask(np.full((2, 2), 0.5))
    with pytest.raises(ValueError):
        GridSpec(0, 3)


def test_bilinear_at_centres_and_midpoints():
    g = DensityGrid(np.arange(12, dtype=float).reshape(3, 4), 1.0)
    centres = g.spec.pixel_centers()
    assert np.array_equal(lookup_bilinear(g, centres), g.values)
    flat = DensityGrid(np.full((3, 3), 2.5), 1.0)
    assert lookup_bilinear(flat, np.array([0.5, 0.0])) == pytest.approx(2.5)
    assert lookup_bilinear(g, np.array([10.0, 0.0])) == 0.0


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-4.4, 4.4), st.floats(-3.4, 3.4))
def test_bilinear_reproduces_affine(a, b, x, y):
    # interior points only: the zero padding makes the outer half pixel non-affine
    spec = GridSpec(9, 11, 0.9)
    p = spec.pixel_centers()
    g = LacGrid(10.0 + a * p[..., 0] + b * p[..., 1], 0.9)
    assert lookup_bilinear(g, np.array([x, y])) == pytest.approx(10.0 + a * x + b * y, abs=1e-9)


def test_mask_lookup_and_tie_break():
    m = MetalMask(np.array([[0, 1], [0, 0]]), 1.0)
    assert lookup_mask(m, np.array([0.5, 0.5])) == 1
    assert lookup_mask(m, np.array([5.0, 0.0])) == 0
    # equidistant between (0,0) [tissue] and (0,1) [metal]: smaller column wins
    assert lookup_mask(m, np.array([0.0, 0.5])) == 0
    # equidistant between (0,1) [metal] and (1,1) [tissue]: smaller row wins
    assert lookup_mask(m, np.array([0.5, 0.0])) == 1


@given(st.lists(st.tuples(st.floats(-6, 6), st.floats(-6, 6)), min_size=1, max_size=30))
def test_mask_lookup_binary(points):
    rng = np.random.default_rng(0)
    m = MetalMask(rng.integers(0, 2, (5, 7)), 1.3)
    out = lookup_mask(m, np.array(points))
    assert set(np.unique(out)) <= {0, 1}


def test_dimg_roundtrip_density_lac_mask(tmp_path):
    d = DensityGrid(np.random.default_rng(1).random((4, 6)), 0.7)
    write_dimg(tmp_path / "d.dimg", d)
    back = read_dimg(tmp_path / "d.dimg")
    assert isinstance(back, DensityGrid) and back.pixel_size == 0.7
    assert np.allclose(back.values, d.values, atol=1e-7)
    lac = LacGrid(np.ones((2, 3)), 1.0, 54.0)
    write_dimg(tmp_path / "l.dimg", lac)
    assert read_dimg(tmp_path / "l.dimg").energy == 54.0
    m = MetalMask(np.eye(3), 1.0)
    write_dimg(tmp_path / "m.dimg", m)
    assert np.array_equal(read_dimg(tmp_path / "m.dimg", "mask").values, m.values)


def test_dimg_header_layout(tmp_path):
    write_dimg(tmp_path / "x.dimg", DensityGrid(np.zeros((2, 3)), 1.5))
    raw = (tmp_path / "x.dimg").read_bytes()
    assert raw[:4] == b"DIMG"
    assert int.from_bytes(raw[4:6], "little") == 1
    assert int.from_bytes(raw[6:10], "little") == 2 and int.from_bytes(raw[10:14], "little") == 3
    assert math.isnan(np.frombuffer(raw[22:30], "<f8")[0])
    assert len(raw) == 30 + 6 * 4


def test_dimg_rejects_corrupt(tmp_path):
    p = tmp_path / "bad.dimg"
    p.write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ValueError):
        read_dimg(p)
    write_dimg(p, DensityGrid(np.zeros((2, 2))))
    p.write_bytes(p.read_bytes()[:-1])
    with pytest.raises(ValueError):
        read_dimg(p)


def test_pgm_export(tmp_path):
    write_pgm(tmp_path / "a.pgm", np.array([[0.0, 0.5], [1.0, 2.0]]), 0.0, 1.0)
    raw = (tmp_path / "a.pgm").read_bytes()
    header = b"P5\n2 2\n65535\n"
    assert raw.startswith(header)
    px = np.frombuffer(raw[len(header):], ">u2")
    assert px.tolist() == [0, 32768, 65535, 65535]
    with pytest.raises(ValueError):
        write_pgm(tmp_path / "b.pgm", np.zeros((2, 2)), 1.0, 1.0)
