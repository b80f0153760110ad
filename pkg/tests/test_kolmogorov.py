import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochflow.drifts import make_drift
from stochflow.errors import CFLError, DomainError
from stochflow.harness.registry import apriori_mode_oracle, embedding_ratios
from stochflow.kolmogorov import (apriori_probe, feynman_kac_check, fractional_sobolev_norm,
                                  iterated_integral_duality, shifted_ratio, solve_backward)
from stochflow.norms import MixedNormSpec, mixed_norm
from stochflow.scalars import constant, gaussian_bump, mode
from stochflow.spectral import PeriodicField, bessel_symbol, grid_nodes

# mpmath evaluation of the zero-drift probe ratio for cos(x), d=3, p=6, q=4, T=0.5
APRIORI_MODE_RATIO = 1.49572931229351987


def _mode_profile(rate, tau):
    return (1 - math.exp(-rate * tau)) / rate


def test_constant_forcing_gives_remaining_time():
    rep = solve_backward(None, 1.0, 0.2, 0.7, 8, 1e-2, d=2)
    expect = 0.7 - rep.solution.times
    np.testing.assert_allclose(rep.solution.values.reshape(len(expect), -1).T, np.broadcast_to(expect, (64, len(expect))),
                               atol=1e-12)
    np.testing.assert_allclose(rep.dudt.values, -1.0, atol=1e-10)


def test_mode_forcing_zero_drift_is_exact():
    k = np.array([2.0, 1.0])
    rep = solve_backward(None, mode(2, k), 0.0, 0.5, 16, 1e-2, d=2)
    x = grid_nodes(16, 2)
    expect = _mode_profile(0.5 * k @ k, 0.5) * np.cos(x @ k)
    np.testing.assert_allclose(rep.solution.values[0], expect, atol=1e-12)


def test_forward_direction_mirrors_backward():
    f = mode(2, [1, 1])
    bw = solve_backward(None, f, 0.0, 0.3, 16, 1e-2, d=2)
    fw = solve_backward(None, f, 0.0, 0.3, 16, 1e-2, d=2, direction="forward")
    np.testing.assert_allclose(fw.solution.values[-1], bw.solution.values[0], atol=1e-13)


def test_constant_drift_complex_rate():
    v, k, T = np.array([0.7, -0.4]), np.array([1.0, 2.0]), 0.4
    b = make_drift("constant", 2, value=v)
    rep = solve_backward(b, mode(2, k), 0.0, T, 16, 1e-3)
    z = -0.5 * k @ k + 1j * (k @ v)
    c = (np.exp(z * T) - 1) / z
    x = grid_nodes(16, 2)
    expect = np.real(c * np.exp(1j * (x @ k)))
    np.testing.assert_allclose(rep.solution.values[0], expect, atol=1e-5)


def test_step_must_divide_window_and_respect_cfl():
    with pytest.raises(DomainError):
        solve_backward(None, 1.0, 0.0, 0.5, 8, 0.3, d=2)
    with pytest.raises(CFLError):
        solve_backward(make_drift("constant", 2, value=[50.0, 0.0]), 1.0, 0.0, 0.5, 32, 0.05)


@settings(max_examples=15)
@given(st.floats(-5, 5), st.floats(-5, 5))
def test_solution_is_linear_in_forcing(a, c):
    b = make_drift("taylor_green", 2)
    f, g = mode(2, [1, 0]), gaussian_bump(2)
    ua = solve_backward(b, f, 0.0, 0.1, 8, 1e-2).solution.values
    ub = solve_backward(b, g, 0.0, 0.1, 8, 1e-2).solution.values
    both = solve_backward(b, lambda t, x: a * f(t, x) + c * g(t, x), 0.0, 0.1, 8, 1e-2).solution.values
    np.testing.assert_allclose(both, a * ua + c * ub, atol=1e-10 * (1 + abs(a) + abs(c)))


def test_sobolev_norm_of_order_zero_is_plain_norm():
    u = solve_backward(None, gaussian_bump(2), 0.0, 0.2, 16, 1e-2, d=2, direction="forward").solution
    spec = MixedNormSpec(2, 3.0, 2.0)
    assert float(fractional_sobolev_norm(u, 0.0, spec)) == mixed_norm(u.values, spec, (0.0, 0.2), u.times)


def test_bessel_symbols_are_inverse():
    s = bessel_symbol(16, 3, 1.7) * bessel_symbol(16, 3, -1.7)
    np.testing.assert_allclose(s, 1.0, rtol=1e-14)
    assert np.array_equal(bessel_symbol(16, 3, 0.0), np.ones((16,) * 3))


def test_mode_sobolev_norm_matches_weight():
    k = np.array([3.0, 0.0])
    vals = np.cos(grid_nodes(16, 2) @ k)
    f = PeriodicField(np.stack([vals, vals]), [0.0, 1.0], 2)
    spec = MixedNormSpec(2, 2.0, 2.0)
    ratio = fractional_sobolev_norm(f, 2.0, spec) / fractional_sobolev_norm(f, 0.0, spec)
    assert ratio == pytest.approx(1 + k @ k, rel=1e-12)


def test_apriori_oracle_matches_frozen_value():
    spec = MixedNormSpec(3, 6.0, 4.0)
    assert apriori_mode_oracle(1.0, spec, 0.5) == pytest.approx(APRIORI_MODE_RATIO, rel=1e-9)


def test_apriori_probe_zero_drift_matches_oracle():
    spec = MixedNormSpec(3, 6.0, 4.0)
    rep = apriori_probe([("zero", make_drift("zero", 3))], [mode(3, [1, 0, 0])], spec, 0, T=0.5, n=16)
    assert rep.measured["max_ratio"] == pytest.approx(APRIORI_MODE_RATIO, rel=1e-3)
    assert rep.passed


def test_apriori_probe_divergence_forcing_runs():
    spec = MixedNormSpec(2, 4.0, 4.0)
    rep = apriori_probe([("tg", make_drift("taylor_green", 2))], [(gaussian_bump(2), 0)], spec, -1, T=0.2,
                        n=16)
    assert rep.passed and math.isfinite(rep.measured["max_ratio"])
    with pytest.raises(DomainError):
        apriori_probe([], [], spec, 1)


def test_shifted_ratio_stays_bounded_as_shift_grows():
    spec = MixedNormSpec(2, 2.0, 2.0)
    ratios = [shifted_ratio(gaussian_bump(2), lam, spec, T=0.2, n=16, dt=1e-2) for lam in (0, 1, 10, 100, 1000)]
    assert max(ratios) <= 3 * min(ratios)


def test_feynman_kac_small():
    rep = feynman_kac_check(make_drift("taylor_green", 2), mode(2, [1, 1]), 0.0, 0.2,
                            [[0.5, 1.0], [3.0, 2.0]], M=2000, dt=1e-2, seed=1, n=16, antithetic=True)
    assert rep.passed, rep.summary()


def test_feynman_kac_constant_forcing_is_exact():
    rep = feynman_kac_check(make_drift("taylor_green", 2), constant(2, 2.0), 0.0, 0.3, [[0.1, 0.2]],
                            M=10, dt=1e-2, seed=0, n=8)
    assert rep.measured["max_abs_diff"] < 1e-10


def test_iterated_duality_small():
    fs = [gaussian_bump(2), mode(2, [1, 0])]
    rep = iterated_integral_duality(fs, [0, 0], make_drift("taylor_green", 2), 0.0, 0.3, [[2.0, 3.0]],
                                    M=2000, dt=1e-2, seed=3, n=16)
    assert rep.checks["duality"], rep.summary()
    with pytest.raises(DomainError):
        iterated_integral_duality(fs * 2, [0] * 4, make_drift("zero", 2), 0.0, 0.3, [[0.0, 0.0]],
                                  M=4, dt=1e-2, seed=0)


def test_embedding_ratios_stable_under_refinement():
    coarse = embedding_ratios(16, 2e-3, 0.4)
    fine = embedding_ratios(32, 1e-3, 0.4)
    for a, b in zip(coarse.rows, fine.rows):
        assert a["kind"] == b["kind"]
        assert math.isfinite(a["ratio"]) and a["lhs"] <= 10 * a["rhs"]
        assert abs(a["ratio"] - b["ratio"]) <= 0.1 * b["ratio"]
