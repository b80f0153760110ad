import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochflow.errors import CFLError, DataError, DomainError
from stochflow.harness.registry import taylor_green
from stochflow.lagrangian import (NSRunConfig, VelocityState, leray_project, lp_persistence_check,
                                  picard_solve, reference_spectral_ns, relative_divergence,
                                  representation_step, w_equation_residual)
from stochflow.scalars import constant, mode
from stochflow.spectral import PeriodicField, divergence, gradient, grid_nodes


def _shear(n, amplitude=1.0):
    x = grid_nodes(n, 2)
    return amplitude * np.stack([np.sin(x[..., 1]), np.zeros_like(x[..., 0])], axis=-1)


def _random_field(seed, n=8, d=2):
    return np.random.default_rng(seed).standard_normal((n,) * d + (d,))


@settings(max_examples=15)
@given(st.integers(0, 10**6), st.sampled_from([2, 3]))
def test_leray_is_idempotent_and_solenoidal(seed, d):
    F = _random_field(seed, 8, d)
    P = leray_project(F)
    np.testing.assert_allclose(leray_project(P), P, atol=1e-12)
    assert np.abs(divergence(P, d)).max() <= 1e-10 * max(1.0, np.abs(F).max())


@settings(max_examples=15)
@given(st.integers(0, 10**6))
def test_leray_is_self_adjoint(seed):
    F, G = _random_field(seed), _random_field(seed + 1)
    assert np.sum(leray_project(F) * G) == pytest.approx(np.sum(F * leray_project(G)), rel=1e-10, abs=1e-10)


def test_leray_examples():
    x = grid_nodes(16, 2)
    psi = np.cos(x[..., 0] + 2 * x[..., 1])
    assert np.abs(leray_project(gradient(psi, 2))).max() < 1e-12
    sin_x = np.stack([np.sin(x[..., 0]), np.zeros_like(psi)], axis=-1)
    assert np.abs(leray_project(sin_x)).max() < 1e-12
    sin_y = _shear(16)
    np.testing.assert_allclose(leray_project(sin_y), sin_y, atol=1e-14)
    field = PeriodicField(np.stack([sin_x, sin_y]), [0.0, 1.0], 2)
    np.testing.assert_allclose(leray_project(field).values[1], sin_y, atol=1e-14)
    with pytest.raises(DataError):
        leray_project(np.zeros((4, 4, 3)))


def test_config_defaults_and_validation():
    cfg = NSRunConfig()
    assert cfg.n_sub == 10 and cfg.sub_length == pytest.approx(0.05)
    assert NSRunConfig(T=0.1, dt=1e-2).n_sub == 10
    with pytest.raises(DomainError):
        NSRunConfig(n=7)
    with pytest.raises(DomainError):
        NSRunConfig(M=3)
    with pytest.raises(DomainError):
        NSRunConfig(T=0.1, dt=1e-2, sub_interval=0.03)
    with pytest.raises(CFLError):
        NSRunConfig(n=16, dt=0.1, T=0.5).check_cfl(np.full((16, 16, 2), 10.0))


def test_state_rejects_divergent_velocity():
    x = grid_nodes(8, 2)
    bad = np.stack([np.sin(x[..., 0]), np.zeros((8, 8))], axis=-1)
    with pytest.raises(DataError):
        VelocityState(np.array([-0.1, 0.0]), np.stack([bad, bad]), bad, 2)
    st_ = VelocityState.zero(_shear(8), 0.2, levels=3)
    np.testing.assert_allclose(st_.at(-0.05), 0.0)
    with pytest.raises(DomainError):
        st_.at(-0.3)


def test_representation_at_zero_is_projection():
    cfg = NSRunConfig(n=8, T=0.1, dt=1e-2, M=4)
    phi = _random_field(0)
    out = representation_step(VelocityState.zero(phi, 0.1), 0.0, phi, cfg)
    np.testing.assert_allclose(out.values[0], leray_project(phi))
    assert np.array_equal(out.meta["w"], phi)


def test_representation_without_drift_is_heat_decay():
    cfg = NSRunConfig(n=16, T=0.2, dt=1e-2, M=2000)
    phi = _shear(16)
    out = representation_step(VelocityState.zero(phi, 0.2), -0.2, phi, cfg)
    expect = math.exp(-0.1) * phi
    assert np.all(np.abs(out.meta["w"] - expect) <= 3 * out.meta["se_field"] + 2e-3)
    assert not out.meta["inconclusive"]


def test_representation_of_gradient_is_nearly_zero():
    cfg = NSRunConfig(n=16, T=0.2, dt=1e-2, M=200)
    x = grid_nodes(16, 2)
    phi = gradient(np.sin(x[..., 0]) * np.cos(x[..., 1]), 2)
    out = representation_step(VelocityState.zero(phi, 0.2), -0.2, phi, cfg)
    assert np.abs(out.values[0]).max() <= 0.02 * np.abs(phi).max()


def test_picard_with_zero_data_converges_immediately():
    cfg = NSRunConfig(n=8, T=0.04, dt=1e-2, M=4)
    st_ = picard_solve(np.zeros((8, 8, 2)), cfg)
    assert st_.iterations == [1] * cfg.n_sub
    assert all(h == [0.0] for h in st_.residuals)
    assert not st_.u.any() and not st_.inconclusive


def test_picard_small_amplitude_tracks_reference():
    x = grid_nodes(16, 2)
    diagonal = np.stack([np.cos(x[..., 0] + x[..., 1]), -np.cos(x[..., 0] + x[..., 1])], axis=-1)
    phi = 0.05 * (_shear(16) + diagonal)
    cfg = NSRunConfig(n=16, T=0.1, dt=2e-3, M=200, seed=1)
    st_ = picard_solve(phi, cfg)
    ref = reference_spectral_ns(phi, 0.1, 1e-3, n_saves=st_.times.size)
    np.testing.assert_allclose(ref.times, st_.times, atol=1e-12)
    err = np.abs(st_.u - ref.u).max() / np.abs(ref.u).max()
    assert err <= 0.05
    assert st_.flags["outside_standing_assumption"]
    assert max(relative_divergence(v) for v in st_.u) <= 1e-8


def test_reference_solver_zero_and_taylor_green():
    zero = reference_spectral_ns(np.zeros((8, 8, 2)), 0.1, 1e-2)
    assert not zero.u.any()
    tg = taylor_green(16)
    ref = reference_spectral_ns(tg, 0.5, 1e-3)
    for t, u in zip(ref.times, ref.u):
        np.testing.assert_allclose(u, math.exp(t) * tg, atol=1e-12)
    assert ref.flags["zero_mode_drift"] == 0.0 and ref.flags["resolved"]
    energy = [np.sum(u * u) for u in ref.u]
    assert all(a < b for a, b in zip(energy[:-1], energy[1:]))
    with pytest.raises(DomainError):
        reference_spectral_ns(tg, 0.5, 1e-3, n_saves=7)


def test_w_residual_and_export(tmp_path):
    cfg = NSRunConfig(n=16, T=0.1, dt=2e-3, M=200)
    phi = taylor_green(16)
    st_ = picard_solve(phi, cfg)
    rep = w_equation_residual(st_, phi, cfg)
    assert rep.checks["w_at_zero_is_phi"] and rep.passed
    st_.export(tmp_path, "tg")
    assert (tmp_path / "tg.grid").exists()
    lines = (tmp_path / "tg_residuals.csv").read_text().splitlines()
    assert lines[0] == "sub_interval,iteration,residual" and len(lines) == 1 + sum(st_.iterations)


def test_lp_persistence_constant_is_equality_and_mode_contracts():
    cfg = NSRunConfig(n=16, T=0.1, dt=1e-2, M=400)
    st_ = VelocityState.zero(taylor_green(16), 0.1)
    rep = lp_persistence_check(st_, [constant(2, 2.0), mode(2, [1, 0])], [2.0, math.inf], -0.1, cfg)
    assert rep.passed
    for row in rep.rows:
        if row["field"] == "constant":
            assert row["lhs"] == pytest.approx(row["rhs"], rel=1e-12)
    with pytest.raises(DataError):
        lp_persistence_check(st_, constant(3), 2.0, -0.1, cfg)
