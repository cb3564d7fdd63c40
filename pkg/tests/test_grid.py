import math

import numpy as np
import pytest

from rawild import adapter, grid
from rawild.acceptance import naive_render
from rawild.grid import GridCoeffs
from rawild.numerics import make_rng
from rawild.raster import LinearRawImage


def test_zero_coefficients_identity_matrix():
    np.testing.assert_array_equal(grid.build_matrix(np.zeros(3), np.zeros(6)), np.eye(3))


def test_saturated_gain_row():
    a_hat = np.array([0.3, -0.7, 0, 0, 0, 0])
    M = grid.build_matrix([1e3, 0, 0], a_hat)
    assert M[0, 0] == pytest.approx(math.e, abs=1e-12)
    assert M[0, 1] == pytest.approx(math.e * 0.05 * math.tanh(0.3), abs=1e-12)
    assert M[0, 2] == pytest.approx(math.e * 0.05 * math.tanh(-0.7), abs=1e-12)


def test_entries_match_scalar_recomputation():
    d_hat = [0.5, -0.5, 0.0]
    a_hat = [1.0, -0.4, 0.2, 2.0, -3.0, 0.7]
    M = grid.build_matrix(d_hat, a_hat, 0.05)
    slots = {(0, 1): 0, (0, 2): 1, (1, 0): 2, (1, 2): 3, (2, 0): 4, (2, 1): 5}
    for i in range(3):
        d = math.exp(math.tanh(d_hat[i]))
        for j in range(3):
            mix = 1.0 if i == j else 0.05 * math.tanh(a_hat[slots[(i, j)]])
            assert M[i, j] == pytest.approx(d * mix, abs=1e-15)


def test_build_validation():
    with pytest.raises(ValueError):
        grid.build_matrix([np.nan, 0, 0], np.zeros(6))
    with pytest.raises(ValueError):
        grid.build_matrix(np.zeros(3), np.zeros(6), k=0.5)
    with pytest.raises(ValueError):
        GridCoeffs(np.zeros((2, 2, 2, 8)))


def test_invert_examples():
    np.testing.assert_array_equal(grid.invert_cell(np.eye(3)), np.eye(3))
    np.testing.assert_allclose(grid.invert_cell(np.diag([2.0, 1.0, 0.5])), np.diag([0.5, 1.0, 2.0]))


def test_dominance_and_inverse_many_draws():
    rng = make_rng(0)
    M = grid.build_matrices(rng.normal(0, 4, (100_000, 3)), rng.normal(0, 4, (100_000, 6)))
    diag = np.abs(np.einsum("nii->ni", M))
    assert np.all(diag > np.abs(M).sum(axis=2) - diag)
    assert np.all((diag >= math.exp(-1)) & (diag <= math.e))
    inv = grid.invert_cell(M)
    assert np.max(np.abs(inv @ M - np.eye(3))) < 1e-10


def test_gain_decoupling():
    rng = make_rng(1)
    d_hat, a_hat = rng.normal(size=3), rng.normal(size=6)
    c = np.array([2.0, 0.5, 3.0])
    scaled = grid.compose(c * grid.gains(d_hat), grid.mixing(a_hat))
    np.testing.assert_allclose(scaled, np.diag(c) @ grid.build_matrix(d_hat, a_hat), rtol=1e-15)


def test_constant_field_slices_exactly():
    M0 = grid.build_matrix([0.2, -0.1, 0.4], [0.5, -0.2, 0.1, 0.3, -0.9, 0.6])
    mats = np.broadcast_to(M0, (4, 3, 5, 3, 3)).copy()
    rng = make_rng(2)
    for _ in range(200):
        m = grid.slice_matrix(mats, int(rng.integers(37)), int(rng.integers(29)), float(rng.random()), 37, 29)
        np.testing.assert_array_equal(m, M0)


def test_vertex_queries_are_exact():
    rng = make_rng(3)
    mats = GridCoeffs(rng.normal(size=(8, 4, 4, 9))).materialize()
    for j in range(8):
        for h in range(4):
            for w in range(4):
                np.testing.assert_array_equal(grid.slice_matrix(mats, w * 10, h * 10, j / 8, 40, 40),
                                              mats[j, h, w])


def test_slice_matches_eight_corner_oracle():
    rng = make_rng(4)
    mats = GridCoeffs(rng.normal(size=(8, 4, 4, 9))).materialize()
    W = H = 50
    for _ in range(64):
        x, y, lum = int(rng.integers(W)), int(rng.integers(H)), float(rng.random())
        u = [lum * 8, y * 4 / H, x * 4 / W]
        lo = [min(math.floor(v), size - 2) for v, size in zip(u, (8, 4, 4))]
        fr = [min(max(v - i, 0.0), 1.0) for v, i in zip(u, lo)]
        want = np.zeros((3, 3))
        for dd in (0, 1):
            for dh in (0, 1):
                for dw in (0, 1):
                    wgt = ((fr[0] if dd else 1 - fr[0]) * (fr[1] if dh else 1 - fr[1])
                           * (fr[2] if dw else 1 - fr[2]))
                    want += wgt * mats[lo[0] + dd, lo[1] + dh, lo[2] + dw]
        np.testing.assert_allclose(grid.slice_matrix(mats, x, y, lum, W, H), want, atol=1e-6)


def test_slice_rejects_out_of_range_pixels():
    mats = GridCoeffs(np.zeros((2, 2, 2, 9))).materialize()
    with pytest.raises(ValueError):
        grid.slice_matrix(mats, 10, 0, 0.5, 10, 10)
    with pytest.raises(ValueError):
        grid.slice_matrix(mats, 0, -1, 0.5, 10, 10)


def test_weights_sum_to_one():
    w = grid.trilinear_weights(0.3, 0.9, 0.1)
    assert np.all(w >= 0) and w.sum() == pytest.approx(1.0, abs=1e-12)


def test_apply_grid_identity_and_constant():
    rng = make_rng(5)
    img = LinearRawImage(rng.random((3, 20, 30)))
    lum = adapter.luminance_map(img)
    assert grid.apply_grid(GridCoeffs.zeros(20, 30), img, lum).data.tobytes() == img.data.tobytes()
    cell = np.concatenate([[0.3, -0.2, 0.1], rng.normal(size=6)])
    g = GridCoeffs(np.broadcast_to(cell, (8, 2, 2, 9)).copy())
    M0 = g.materialize()[0, 0, 0]
    out = grid.apply_grid(g, img, lum).data
    want = np.clip(np.einsum("ij,jhw->ihw", M0, img.data.astype(np.float64)), 0, 1)
    np.testing.assert_allclose(out, want, atol=1e-6)


def test_apply_grid_matches_pixel_loop():
    rng = make_rng(6)
    g = GridCoeffs(rng.normal(size=(8, 2, 2, 9)))
    img = LinearRawImage(rng.random((3, 32, 32)))
    lum = adapter.luminance_map(img)
    out = grid.apply_grid(g, img, lum).data
    mats = g.materialize()
    for y in range(0, 32, 3):
        for x in range(0, 32, 3):
            M = grid.slice_matrix(mats, x, y, lum[y, x], 32, 32)
            want = np.clip(M @ img.data[:, y, x].astype(np.float64), 0, 1)
            np.testing.assert_allclose(out[:, y, x], want, atol=1e-6)
    np.testing.assert_allclose(out, naive_render(mats, img.data, lum), atol=1e-6)


def test_luminance_shape_mismatch():
    img = LinearRawImage(np.zeros((3, 4, 4)))
    with pytest.raises(ValueError):
        grid.apply_grid(GridCoeffs.zeros(4, 4), img, np.zeros((4, 5)))


def test_default_resolution():
    g = GridCoeffs.zeros(100, 33)
    assert (g.depth, g.height, g.width) == (8, 7, 3)


def test_serialization_roundtrip(tmp_path):
    g = GridCoeffs(make_rng(7).normal(size=(3, 2, 4, 9)), k=0.1)
    grid.save_grid(g, tmp_path / "g.json", tmp_path / "g.bin")
    back = grid.load_grid(tmp_path / "g.json", tmp_path / "g.bin")
    assert back.k == 0.1
    np.testing.assert_array_equal(back.raw, g.raw)
    buf = (tmp_path / "g.bin").read_bytes()
    with pytest.raises(ValueError):
        grid.decode_grid_payload(buf[:-8], grid.grid_header(g))
