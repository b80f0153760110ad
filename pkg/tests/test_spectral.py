import numpy as np
import pytest
from hypothesis import given, strategies as st

from stochflow.spectral import (PeriodicField, divergence, gradient, grid_nodes, interpolate, laplacian,
                                refine)


@given(st.integers(0, 2**31 - 1), st.sampled_from([(8, 2), (6, 3), (12, 2)]))
def test_periodic_field_roundtrip_and_realness(seed, shape):
    n, d = shape
    vals = np.random.default_rng(seed).standard_normal((2,) + (n,) * d)
    f = PeriodicField(vals, [0.0, 1.0], d)
    assert f.roundtrip_error() <= 1e-10
    assert f.imag_residue() <= 1e-10


def test_gradient_and_laplacian_of_mode():
    x = grid_nodes(16, 2)
    u = np.sin(2 * x[..., 0] + x[..., 1])
    g = gradient(u, 2)
    np.testing.assert_allclose(g[..., 0], 2 * np.cos(2 * x[..., 0] + x[..., 1]), atol=1e-12)
    np.testing.assert_allclose(g[..., 1], np.cos(2 * x[..., 0] + x[..., 1]), atol=1e-12)
    np.testing.assert_allclose(laplacian(u, 2), -5 * u, atol=1e-11)


def test_divergence_of_rotated_gradient_vanishes():
    rng = np.random.default_rng(1)
    psi = rng.standard_normal((16, 16))
    g = gradient(psi, 2)
    rot = np.stack([-g[..., 1], g[..., 0]], axis=-1)
    assert np.abs(divergence(rot, 2)).max() <= 1e-10


@given(st.lists(st.tuples(st.floats(-10, 10), st.floats(-10, 10)), min_size=1, max_size=5))
def test_interpolation_is_exact_for_band_limited_data(points):
    x = grid_nodes(8, 2)
    f = np.cos(x[..., 0] - 2 * x[..., 1]) + 0.5 * np.sin(3 * x[..., 1])
    p = np.array(points)
    exact = np.cos(p[:, 0] - 2 * p[:, 1]) + 0.5 * np.sin(3 * p[:, 1])
    np.testing.assert_allclose(interpolate(f, p, 2), exact, atol=1e-11)


def test_refine_keeps_nodes_of_band_limited_field():
    x = grid_nodes(8, 2)
    f = np.cos(x[..., 0]) * np.sin(3 * x[..., 1])
    fine = refine(f, 4, 2)
    np.testing.assert_allclose(fine[::4, ::4], f, atol=1e-13)
    xf = grid_nodes(32, 2)
    np.testing.assert_allclose(fine, np.cos(xf[..., 0]) * np.sin(3 * xf[..., 1]), atol=1e-13)
