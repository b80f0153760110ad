import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stochflow.drifts import make_drift
from stochflow.errors import DomainError
from stochflow.estimators import (cauchy_convergence, cauchy_from_ensembles, compactness_statistics,
                                  gradient_moment, holder_moments, krylov_check, malliavin_stats,
                                  mollified_levels, region_grid, torus_grid)
from stochflow.flow import simulate_flow
from stochflow.norms import MixedNormSpec
from stochflow.scalars import constant, mode

INCREMENTS = [0.002, 0.004, 0.008, 0.016, 0.032]


def test_region_grid_fills_the_cube():
    pts, vol = region_grid([1.0, 2.0], 0.5, 4, 2)
    assert pts.shape == (16, 2) and vol == pytest.approx(1 / 16)
    np.testing.assert_allclose(pts.mean(axis=0), [1.0, 2.0])
    assert np.all(np.abs(pts - [1.0, 2.0]) < 0.5)
    assert torus_grid(3, 3).shape == (27, 3)


def test_krylov_constant_forcing_is_window_length():
    spec = MixedNormSpec(2, 4.0, 4.0)
    rep = krylov_check([("zero", make_drift("zero", 2))], constant(2), spec, (0.0, 0.2), M=8, dt=1e-2, seed=0,
                       x_per_axis=2)
    one = next(r for r in rep.rows if r["scale"] == 1.0)
    assert one["left"] == pytest.approx(0.2, abs=1e-12)
    assert rep.measured["linearity_error"] <= 1e-12


def test_krylov_zero_drift_heat_oracle():
    spec = MixedNormSpec(2, 4.0, 4.0)
    rep = krylov_check([("zero", make_drift("zero", 2))], mode(2, [1, 0]), spec, (0.0, 0.25), M=2000, dt=1e-3,
                       seed=4, x_per_axis=4)
    assert rep.passed
    one = next(r for r in rep.rows if r["scale"] == 1.0)
    # the maximising start point sits on the crest of cos(x1)
    assert abs(one["left"] - 2 * (1 - math.exp(-0.125))) <= 3 * one["se"] + 5e-3


def test_krylov_rejects_supercritical_exponents():
    with pytest.raises(DomainError):
        krylov_check([], constant(3), MixedNormSpec(3, 2.0, 2.0), (0.0, 1.0), M=2, dt=0.1, seed=0)


def test_holder_space_axis_is_exact_without_drift():
    rep = holder_moments(make_drift("zero", 3), 4.0, 1.0, "x", xs=[[0.1, 0.2, 0.3]], s=0.0, t=0.05,
                         increments=INCREMENTS, M=50, dt=1e-3, seed=0)
    assert rep.measured["slope"] == pytest.approx(4.0, abs=1e-9)
    assert rep.measured["residual"] <= 1e-9
    for row in rep.rows:
        assert row["moment"] == pytest.approx(row["increment"] ** 4, rel=1e-9)


def test_holder_time_axis_slope_is_half_the_moment():
    rep = holder_moments(make_drift("zero", 3), 4.0, 0.5, "t", xs=[[0.0, 0.0, 0.0], [1.0, 2.0, 3.0]], s=0.0,
                         t=0.064, increments=INCREMENTS, M=4000, dt=1e-3, seed=2, slope_tol=0.05)
    assert rep.passed
    assert abs(rep.measured["slope"] - 2.0) <= 0.05


def test_holder_start_axis_and_bad_axis():
    rep = holder_moments(make_drift("taylor_green", 2), 2.0, 0.5, "s", xs=[[1.0, 1.0]], s=0.0, t=0.1,
                         increments=INCREMENTS[:4], M=200, dt=1e-3, seed=0)
    assert rep.verdict in ("pass", "fail") and rep.measured["slope"] > 0
    few = holder_moments(make_drift("zero", 2), 2.0, 0.5, "t", xs=[[0.0, 0.0]], s=0.0, t=0.01,
                         increments=INCREMENTS[:2], M=20, dt=1e-3, seed=0)
    assert few.verdict == "inconclusive"
    with pytest.raises(DomainError):
        holder_moments(make_drift("zero", 2), 2.0, 0.5, "y", xs=[[0.0, 0.0]], s=0.0, t=0.01, increments=[0.001],
                       M=2, dt=1e-3, seed=0)


def test_gradient_moment_vanishes_without_drift():
    pts, vol = region_grid([1.0, 1.0], 0.5, 2, 2)
    rep = gradient_moment([("zero", make_drift("zero", 2))], 2.0, 2.0, xs=pts, cell_volume=vol, s=0.0,
                          times=[0.05, 0.1], M=4, dt=1e-2, seed=0)
    assert rep.passed and rep.measured["quantity_max"] == 0
    with pytest.raises(DomainError):
        gradient_moment([], 1.0, 2.0, xs=pts, cell_volume=vol, s=0.0, times=[0.1], M=4, dt=1e-2, seed=0)


def test_gradient_moment_grows_in_time_for_smooth_drift():
    pts, vol = region_grid([1.0, 2.0], 0.5, 2, 2)
    rep = gradient_moment([("tg", make_drift("taylor_green", 2))], 2.0, 2.0, xs=pts, cell_volume=vol, s=0.0,
                          times=[0.05, 0.1, 0.2], M=50, dt=1e-2, seed=0)
    assert rep.passed and rep.fits["theta[tg]"].slope > 0


def test_compactness_statistics_without_drift():
    d, t = 2, 0.2
    pts, vol = region_grid([3.0, 3.0], 0.5, 2, d)
    st_ = compactness_statistics(make_drift("zero", d), xs=pts, cell_volume=vol, s=0.0, t=t, M=4, dt=1e-2,
                                 seed=0, beta=0.25, fd_h=0.05)
    region = pts.shape[0] * vol
    assert st_["A2"] == pytest.approx(d * t * region, rel=1e-12)
    assert st_["A3"] == 0.0
    assert st_["A1_grad"] == pytest.approx(d * region, rel=1e-9)
    assert st_["fd_consistency"] <= 1e-9


def test_malliavin_stats_levels_agree_without_drift():
    pts, vol = region_grid([3.0, 3.0], 0.5, 2, 2)
    rep = malliavin_stats([(1, make_drift("zero", 2)), (2, make_drift("zero", 2))], xs=pts, cell_volume=vol,
                          s=0.0, t=0.1, M=4, dt=1e-2, seed=0)
    assert rep.passed


def test_cauchy_identical_levels_give_zero():
    b = make_drift("zero", 2)
    ens = [(k, simulate_flow(b, 0.0, 0.05, [[0.0, 0.0]], 10, 1e-2, 1)) for k in (4, 8, 16)]
    rep = cauchy_from_ensembles(ens, 1.0)
    assert all(r["distance"] == 0 for r in rep.rows) and rep.passed


def test_cauchy_rejects_mismatched_ensembles():
    b = make_drift("zero", 2)
    a = simulate_flow(b, 0.0, 0.05, [[0.0, 0.0]], 10, 1e-2, 1)
    c = simulate_flow(b, 0.0, 0.05, [[0.0, 0.0]], 10, 1e-2, 2)
    with pytest.raises(DomainError):
        cauchy_from_ensembles([(1, a), (2, c)], 1.0)


def test_cauchy_singular_drift_small():
    pts, vol = region_grid([2.0, 2.0], 0.5, 2, 2)
    rep = cauchy_convergence(make_drift("singular", 2, gamma=0.5), [4, 8, 16, 32], xs=pts, cell_volume=vol,
                             s=0.0, t=0.1, M=50, dt=1e-3, seed=0)
    assert rep.measured["inversions"] <= 1
    assert [r["level"] for r in rep.rows] == [4, 8, 16]


@settings(max_examples=10)
@given(st.lists(st.sampled_from([2, 4, 8, 16]), min_size=1, max_size=3, unique=True))
def test_mollified_levels_keep_order(levels):
    out = mollified_levels(make_drift("taylor_green", 2), levels)
    assert [k for k, _ in out] == levels
