import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import linalg

from stochflow.drifts import DriftField, make_drift
from stochflow.errors import CapabilityError, DomainError, DriftEvaluationError
from stochflow.flow import (chaos_series_gradient, malliavin_derivative, restart_flow, series_terms,
                            simulate_flow, variational_flow)
from stochflow.gridio import read_csv, read_grid
from stochflow.rng import brownian_increments

A = np.array([[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]])
XS = np.array([[0.3, 1.1, 2.5], [4.0, 0.2, 5.5]])


def _noise_sum(seed, k0, k1, M, d, dt, x):
    X = np.repeat(x[:, None, :], M, axis=1)
    for k in range(k0, k1):
        X = X + brownian_increments(seed, k, M, d, dt)
    return X


def test_zero_drift_is_start_plus_noise_bitwise():
    ens = simulate_flow(make_drift("zero", 3), 0.0, 0.05, XS, 500, 1e-3, 11)
    assert np.array_equal(ens.states[-1], _noise_sum(11, 0, 50, 500, 3, 1e-3, XS))


def test_constant_drift_shifts_paths():
    v = np.array([0.5, -1.0, 2.0])
    ens = simulate_flow(make_drift("constant", 3, value=v), 0.0, 0.1, XS, 200, 1e-3, 2)
    expect = _noise_sum(2, 0, 100, 200, 3, 1e-3, XS) + 0.1 * v
    np.testing.assert_allclose(ens.states[-1], expect, atol=1e-12)


def test_ou_moments():
    b = make_drift("ou", 3)  # b = -x, unbounded
    x0 = np.array([[1.0, -2.0, 0.5]])
    t, M = 0.5, 20000
    X = simulate_flow(b, 0.0, t, x0, M, 1e-3, 4, periodic=False).states[-1, 0]
    mean_se = X.std(axis=0, ddof=1) / math.sqrt(M)
    assert np.all(np.abs(X.mean(axis=0) - x0[0] * math.exp(-t)) <= 3 * mean_se)
    var = X.var(axis=0, ddof=1)
    target = (1 - math.exp(-2 * t)) / 2
    assert np.all(np.abs(var - target) <= 3 * var * math.sqrt(2 / (M - 1)) + 2e-3)


def test_noise_sanity_gate_and_checkpoints():
    ens = simulate_flow(make_drift("zero", 2), 0.0, 0.1, XS[:, :2], 400, 1e-2, 0, checkpoints=[0.05, 0.1])
    mean, bound, ok = ens.noise_sanity()
    assert ok and mean <= bound
    np.testing.assert_allclose(ens.checkpoint_times, [0.05, 0.1])
    with pytest.raises(DomainError):
        simulate_flow(make_drift("zero", 2), 0.0, 0.1, XS[:, :2], 10, 1e-2, 0, checkpoints=[0.055])
    with pytest.raises(DomainError):
        simulate_flow(make_drift("zero", 2), 0.0, 0.105, XS[:, :2], 10, 1e-2, 0)


@given(st.integers(0, 2**32 - 1), st.integers(1, 2))
def test_common_noise_is_independent_of_the_point_set(seed, keep):
    b = make_drift("taylor_green", 3)
    both = simulate_flow(b, 0.0, 0.02, XS, 16, 1e-3, seed)
    alone = simulate_flow(b, 0.0, 0.02, XS[keep - 1:keep], 16, 1e-3, seed)
    assert np.array_equal(both.states[:, keep - 1], alone.states[:, 0])
    again = simulate_flow(b, 0.0, 0.02, XS, 16, 1e-3, seed)
    assert np.array_equal(both.states, again.states)


def test_nan_drift_aborts_with_location():
    def val(t, x):
        out = np.zeros_like(x)
        out[..., 0] = np.where(t > 0.0035, np.nan, 0.0)
        return out

    with pytest.raises(DriftEvaluationError) as err:
        simulate_flow(DriftField(2, "bad", val), 0.0, 0.01, XS[:, :2], 4, 1e-3, 0)
    assert err.value.step == 4


def test_escape_flag_in_unbounded_mode():
    b = make_drift("constant", 2, value=[100.0, 0.0])
    ens = simulate_flow(b, 0.0, 0.1, XS[:, :2], 4, 1e-3, 0, periodic=False, escape_bound=5.0)
    assert ens.escaped.all()


def test_restart_composition_bitwise():
    b = make_drift("taylor_green", 3)
    full = simulate_flow(b, 0.0, 0.06, XS, 50, 1e-3, 9)
    part = simulate_flow(b, 0.0, 0.02, XS, 50, 1e-3, 9)
    assert np.array_equal(restart_flow(part, 0.02, 0.06).states[-1], full.states[-1])
    with pytest.raises(DomainError):
        restart_flow(part, 0.0105, 0.06)


def test_restart_zero_drift_and_ou_mean():
    z = simulate_flow(make_drift("zero", 3), 0.0, 0.02, XS, 100, 1e-3, 5)
    assert np.array_equal(restart_flow(z, 0.02, 0.05).states[-1], _noise_sum(5, 0, 50, 100, 3, 1e-3, XS))
    x0 = np.array([[2.0, 0.0, -1.0]])
    ou = simulate_flow(make_drift("ou", 3), 0.0, 0.2, x0, 20000, 1e-3, 6, periodic=False)
    X = restart_flow(ou, 0.2, 0.6).states[-1, 0]
    se = X.std(axis=0, ddof=1) / math.sqrt(X.shape[0])
    assert np.all(np.abs(X.mean(axis=0) - x0[0] * math.exp(-0.6)) <= 3 * se)


def test_variational_flow_examples():
    z = simulate_flow(make_drift("zero", 3), 0.0, 0.05, XS, 20, 1e-3, 0)
    J = variational_flow(z).matrices
    assert np.array_equal(J, np.broadcast_to(np.eye(3), J.shape))
    lin = simulate_flow(make_drift("linear", 3, A=A), 0.0, 1.0, XS[:1], 3, 1e-3, 0, periodic=False)
    J = variational_flow(lin).matrices[-1]
    assert np.abs(J - linalg.expm(A)).max() <= 2e-3
    # deterministic: every path has the same Jacobian
    assert np.array_equal(J[0, 0], J[0, 2])


def test_variational_flow_matches_common_noise_differences():
    b = make_drift("taylor_green", 3)
    h = 1e-6
    pts = np.vstack([XS[:1]] + [XS[:1] + h * np.eye(3)[j] for j in range(3)])
    ens = simulate_flow(b, 0.0, 0.2, pts, 8, 1e-3, 1)
    J = variational_flow(ens).matrices[-1, 0]
    for j in range(3):
        fd = (ens.states[-1, j + 1] - ens.states[-1, 0]) / h
        np.testing.assert_allclose(fd, J[:, :, j], atol=1e-4)


def test_missing_gradient_is_a_capability_error():
    b = DriftField(2, "plain", lambda t, x: np.zeros_like(x))
    ens = simulate_flow(b, 0.0, 0.01, XS[:, :2], 2, 1e-3, 0)
    with pytest.raises(CapabilityError):
        variational_flow(ens)


def test_chaos_series_terms_and_convergence():
    lin = simulate_flow(make_drift("linear", 3, A=0.5 * A), 0.0, 1.0, XS[:1], 2, 1e-3, 0, periodic=False)
    partial = chaos_series_gradient(lin, n_max=5)
    terms = series_terms(partial)
    assert np.array_equal(partial[0].matrices, np.broadcast_to(np.eye(3), partial[0].matrices.shape))
    for n, term in enumerate(terms[:5]):
        exact = np.linalg.matrix_power(0.5 * A, n) / math.factorial(n)
        assert np.abs(term[-1, 0, 0] - exact).max() <= 0.01 * np.abs(exact).max()
    J = variational_flow(lin).matrices[-1]
    gaps = [np.abs(p.matrices[-1] - J).max() for p in partial]
    assert all(b < a for a, b in zip(gaps[:-1], gaps[1:]))
    with pytest.raises(DomainError):
        chaos_series_gradient(lin, n_max=7)


def test_chaos_terms_vanish_for_constant_drift():
    c = simulate_flow(make_drift("constant", 3), 0.0, 0.1, XS, 4, 1e-2, 0)
    for term in series_terms(chaos_series_gradient(c, n_max=3))[1:]:
        assert not term.any()


def test_malliavin_examples():
    z = simulate_flow(make_drift("zero", 3), 0.0, 0.08, XS, 10, 1e-3, 0, checkpoints=[0.04, 0.08])
    rec = malliavin_derivative(z)
    eye = np.eye(3)
    for c, t in enumerate(rec.times):
        for s, sig in enumerate(rec.sigmas):
            expect = eye if sig <= t + 1e-12 else np.zeros((3, 3))
            assert np.array_equal(rec.matrices[c, s], np.broadcast_to(expect, rec.matrices[c, s].shape))
    lin = simulate_flow(make_drift("linear", 3, A=A), 0.0, 1.0, XS[:1], 2, 1e-3, 0, periodic=False,
                        checkpoints=[0.5, 1.0])
    rec = malliavin_derivative(lin, sigmas=[0.0, 0.25, 0.5])
    for s, sig in enumerate(rec.sigmas):
        assert np.abs(rec.matrices[-1, s, 0, 0] - linalg.expm(A * (1.0 - sig))).max() <= 2e-3
    # chaining through the intermediate time: D_0 X_1 = D_{1/2} X_1 D_0 X_{1/2}
    D = rec.matrices
    residual = D[1, 0] - D[1, 2] @ D[0, 0]
    assert np.abs(residual).max() <= 10 * lin.dt


def test_jacobian_determinant_for_divergence_free_drift():
    b = make_drift("taylor_green", 3)
    rng = np.random.default_rng(0)
    pts = rng.uniform(0, 2 * np.pi, (20, 3))
    ens = simulate_flow(b, 0.0, 0.5, pts, 100, 1e-3, 3)
    det = np.linalg.det(variational_flow(ens).matrices[-1])
    assert np.all(det > 0)
    se = det.std(ddof=1) / math.sqrt(det.size)
    assert abs(det.mean() - 1.0) <= 3 * se + 1e-3


def test_gaussian_fourth_moment_of_increments():
    d, h = 3, 0.02
    ens = simulate_flow(make_drift("zero", d), 0.0, 0.04, XS, 20000, 1e-3, 8, checkpoints=[0.02, 0.04])
    inc = np.sum((ens.states[1] - ens.states[0]) ** 2, axis=-1) ** 2
    se = inc.std(ddof=1) / math.sqrt(inc.size)
    assert abs(inc.mean() - d * (d + 2) * h**2) <= 3 * se


def test_export(tmp_path):
    ens = simulate_flow(make_drift("taylor_green", 2), 0.0, 0.02, XS[:, :2], 5, 1e-3, 0, checkpoints=[0.01, 0.02])
    ens.export(tmp_path / "run", variational_flow(ens))
    arr, meta = read_grid(tmp_path / "run.grid")
    assert np.array_equal(arr, ens.states)
    np.testing.assert_allclose(meta["times"], [0.01, 0.02])
    rows = read_csv(tmp_path / "run_summary.csv")
    assert len(rows) == 4 and "grad_norm_mean" in rows[0]
