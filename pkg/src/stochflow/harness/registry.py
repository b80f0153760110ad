"""The fixed experiment registry.

Every entry maps a flat parameter dict (defaults below, overridable from a
config file) to one :class:`EstimateReport`.  Defaults are sized to run in
seconds; acceptance-scale runs pass larger overrides.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Callable

import numpy as np
from scipy import integrate, linalg, special

from ..drifts import make_drift, mollify, remainder_K, MollifierKernel
from ..errors import ConfigError, DomainError
from ..estimators import (cauchy_convergence, gradient_moment, holder_moments, krylov_check,
                          malliavin_stats, mollified_levels, region_grid)
from ..flow import chaos_series_gradient, malliavin_derivative, series_terms, simulate_flow, variational_flow
from ..kolmogorov import (apriori_probe, feynman_kac_check, iterated_integral_duality,
                          parabolic_embedding_probe, solve_backward)
from ..lagrangian import (NSRunConfig, VelocityState, leray_project, lp_persistence_check, picard_solve,
                          reference_spectral_ns, relative_divergence, w_equation_residual)
from ..norms import MixedNormSpec, lps_index
from ..report import EstimateReport, spread
from ..rng import brownian_increments
from ..scalars import gaussian_bump, make_scalar, mode
from ..spectral import TWO_PI, grid_nodes

MODULES = ("norms_and_drifts", "flow_sim", "kolmogorov_pde", "estimator_suite", "lagrangian_ns")


@dataclass(frozen=True)
class Experiment:
    id: str
    module: str
    description: str
    anchor: str
    defaults: dict
    run: Callable[[dict, int, Path], EstimateReport]
    validate: Callable[[dict], None] | None = None


REGISTRY: dict[str, Experiment] = {}


def _register(id, module, description, anchor, defaults, validate=None):
    def deco(fn):
        REGISTRY[id] = Experiment(id, module, description, anchor, defaults, fn, validate)
        return fn
    return deco


def list_experiments(module: str | None = None) -> list[Experiment]:
    if module is not None and module not in MODULES:
        raise ConfigError(f"unknown module '{module}'; modules: {', '.join(MODULES)}")
    return [e for _, e in sorted(REGISTRY.items()) if module is None or e.module == module]


def get(id: str) -> Experiment:
    try:
        return REGISTRY[id]
    except KeyError:
        raise ConfigError(f"unknown experiment '{id}'") from None


# --------------------------------------------------------------------------
# precondition helpers, all raising ConfigError before any compute

def _on_lattice(p: dict, *keys: str, dt_key: str = "dt") -> None:
    dt = p[dt_key]
    if dt <= 0:
        raise ConfigError(f"{dt_key} must be positive")
    for key in keys:
        for v in np.atleast_1d(p[key]):
            k = round(v / dt)
            if abs(v - k * dt) > 1e-9 * max(1.0, abs(v)):
                raise ConfigError(f"{key}={v} is not a multiple of {dt_key}={dt}")


def _positive(p: dict, *keys: str) -> None:
    for key in keys:
        if np.any(np.asarray(p[key]) <= 0):
            raise ConfigError(f"{key} must be positive")


def _window(p: dict, lo: str, hi: str) -> None:
    if not p[hi] > p[lo]:
        raise ConfigError(f"{hi} must exceed {lo}")


def _chain(*checks):
    def run(p):
        for c in checks:
            c(p)
    return run


def _drift(p: dict, d: int):
    name = p["drift"]
    if name == "ou":
        return make_drift("ou", d, rate=p.get("rate", 1.0), periodic=True)
    if name == "singular":
        return mollify(make_drift("singular", d, gamma=p["gamma"]), p["m"])
    return make_drift(name, d)


def _check_drift_name(p):
    if p["drift"] not in ("zero", "ou", "singular"):
        raise ConfigError("drift must be one of zero, ou, singular")


def _points(d: int, count: int) -> np.ndarray:
    """Fixed deterministic start points spread over the torus."""
    base = np.array([[0.3, 1.1, 2.5], [math.pi, 0.7, 4.0], [5.0, 3.3, 1.9], [2.2, 5.6, 0.4],
                     [1.5, 4.4, 5.9], [4.6, 2.0, 3.1]])
    return base[:count, :d].copy()


def _report_checks(exp_id: str, seed: int, checks: dict, measured: dict, rows=(), tolerances=None,
                   notes=()) -> EstimateReport:
    rep = EstimateReport(exp_id, measured=dict(measured), tolerances=dict(tolerances or {}),
                         rows=list(rows), notes=list(notes), seed=seed)
    rep.checks = dict(checks)
    return rep.finalize()


# --------------------------------------------------------------------------
# norms_and_drifts

@_register("norms.lps_classification", "norms_and_drifts",
           "criticality index and regime label over a sweep of (d, p, q)",
           "integrability threshold d/p + 2/q = 1", {"d": 3, "ps": [2.0, 3.0, 6.0, 12.0], "qs": [2.0, 4.0, 8.0]})
def _lps(p, seed, out):
    rows, ok = [], True
    for pp in p["ps"]:
        for q in p["qs"]:
            spec = MixedNormSpec(p["d"], pp, q)
            idx = lps_index(spec)
            kappa = 1 - p["d"] / pp - 2 / q
            expect = "critical" if abs(kappa) <= 1e-12 else ("above-critical" if kappa > 0 else "below-critical")
            ok &= abs(idx.kappa - kappa) <= 1e-12 and idx.label == expect
            rows.append({"p": pp, "q": q, "kappa": idx.kappa, "label": idx.label})
    return _report_checks("norms.lps_classification", seed, {"labels_consistent": bool(ok)},
                          {"cases": len(rows)}, rows)


@_register("drifts.mollifier_mass", "norms_and_drifts",
           "unit mass and Fourier transform of the bump mollifier",
           "mollifier normalisation", {"d": 3, "ms": [4, 8, 16], "tol": 1e-10},
           validate=lambda p: _positive(p, "ms"))
def _mass(p, seed, out):
    rows, worst_mass, worst_ft = [], 0.0, 0.0
    for m in p["ms"]:
        ker = MollifierKernel(m, p["d"])
        a = ker.support_radius
        mass = integrate.quad(lambda r: ker.radial(np.array([r]))[0] * r ** (p["d"] - 1), 0, a)[0] \
            * 2 * math.pi ** (p["d"] / 2) / math.gamma(p["d"] / 2)
        ks = np.array([1.0, 3.0, 7.0])
        ft = ker.transform(ks)
        # independent radial Hankel quadrature
        nu = p["d"] / 2 - 1
        ft_exact = np.array([(TWO_PI) ** (p["d"] / 2) * k ** (-nu) * integrate.quad(
            lambda r: ker.radial(np.array([r]))[0] * r ** (p["d"] / 2) * special.jv(nu, k * r), 0, a,
            epsabs=1e-14, epsrel=1e-13)[0] for k in ks])
        worst_mass = max(worst_mass, abs(mass - 1))
        worst_ft = max(worst_ft, float(np.abs(ft - ft_exact).max()))
        rows.append({"m": m, "mass": mass, "transform_error": float(np.abs(ft - ft_exact).max())})
    return _report_checks("drifts.mollifier_mass", seed,
                          {"unit_mass": worst_mass <= p["tol"], "transform": worst_ft <= p["tol"]},
                          {"mass_error": worst_mass, "transform_error": worst_ft}, rows, {"tol": p["tol"]})


@_register("drifts.remainder_decay", "norms_and_drifts",
           "mollification remainder of the singular drift in L^d shrinks as m grows",
           "vanishing critical-norm remainder under mollification",
           {"d": 3, "gamma": 0.5, "ms": [4, 8, 16, 32], "n": 32},
           validate=lambda p: _positive(p, "ms"))
def _remainder(p, seed, out):
    b = make_drift("singular", p["d"], gamma=p["gamma"])
    spec = MixedNormSpec(p["d"], float(p["d"]), math.inf)
    vals = [remainder_K(b, m, spec, n=p["n"]) for m in p["ms"]]
    rows = [{"m": m, "remainder": v} for m, v in zip(p["ms"], vals)]
    dec = all(b2 < a for a, b2 in zip(vals[:-1], vals[1:]))
    return _report_checks("drifts.remainder_decay", seed, {"decreasing": dec}, {"last": vals[-1]}, rows)


# --------------------------------------------------------------------------
# flow_sim

@_register("flow.zero_drift", "flow_sim",
           "zero drift: paths equal start plus summed noise bitwise; Jacobian and Malliavin derivative identity",
           "flow of the pure noise equation", {"d": 3, "M": 2000, "dt": 1e-3, "t": 0.1, "points": 2},
           validate=lambda p: _on_lattice(p, "t"))
def _zero(p, seed, out):
    d, M, dt = p["d"], p["M"], p["dt"]
    xs = _points(d, p["points"])
    t0 = time.perf_counter()
    ens = simulate_flow(make_drift("zero", d), 0.0, p["t"], xs, M, dt, seed)
    elapsed = time.perf_counter() - t0
    X = np.repeat(xs[:, None, :], M, axis=1)
    for k in range(round(p["t"] / dt)):
        X = X + brownian_increments(seed, k, M, d, dt)
    grad = variational_flow(ens).matrices
    mall = malliavin_derivative(ens).matrices
    eye = np.eye(d)
    checks = {"paths_bitwise": bool(np.array_equal(ens.states[-1], X)),
              "jacobian_identity": bool(np.array_equal(grad, np.broadcast_to(eye, grad.shape))),
              "malliavin_identity": bool(np.array_equal(mall, np.broadcast_to(eye, mall.shape)))}
    return _report_checks("flow.zero_drift", seed, checks, {"seconds": elapsed},
                          notes=["timing lives in measured values only, not in the CSV rows"])


_A_DEFAULT = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, -1.0]]


@_register("flow.linear_expm", "flow_sim",
           "linear drift: Jacobian of the flow against the matrix exponential",
           "Jacobian of a linear flow is exp(tA)", {"A": [x for r in _A_DEFAULT for x in r], "dt": 1e-3, "t": 1.0,
                                                   "M": 4},
           validate=lambda p: _on_lattice(p, "t"))
def _linear(p, seed, out):
    A = np.asarray(p["A"], float).reshape(3, 3)
    ens = simulate_flow(make_drift("linear", 3, A=A), 0.0, p["t"], _points(3, 1), p["M"], p["dt"], seed,
                        periodic=False)
    J = variational_flow(ens).matrices[-1]
    err = float(np.abs(J - linalg.expm(p["t"] * A)).max())
    rows = [{"entry": f"{i}{j}", "value": float(J[0, 0, i, j]), "exact": float(linalg.expm(p["t"] * A)[i, j])}
            for i in range(3) for j in range(3)]
    return _report_checks("flow.linear_expm", seed, {"within_2dt": err <= 2 * p["dt"]},
                          {"max_entry_error": err}, rows, {"entry": 2 * p["dt"]})


@_register("flow.chaos_terms", "flow_sim",
           "linear drift: terms of the iterated-integral series for the Jacobian against A^n t^n / n!",
           "exponential series of the Jacobian", {"A": [x for r in _A_DEFAULT for x in r], "dt": 1e-3, "t": 1.0,
                                                  "n_max": 4, "rel_tol": 0.01},
           validate=lambda p: _on_lattice(p, "t"))
def _chaos(p, seed, out):
    A = np.asarray(p["A"], float).reshape(3, 3)
    ens = simulate_flow(make_drift("linear", 3, A=A), 0.0, p["t"], _points(3, 1), 2, p["dt"], seed,
                        periodic=False)
    terms = series_terms(chaos_series_gradient(ens, n_max=p["n_max"]))
    rows, worst = [], 0.0
    for n, term in enumerate(terms):
        exact = np.linalg.matrix_power(A, n) * p["t"] ** n / math.factorial(n)
        rel = float(np.abs(term[-1, 0, 0] - exact).max() / np.abs(exact).max())
        worst = max(worst, rel)
        rows.append({"order": n, "relative_error": rel})
    return _report_checks("flow.chaos_terms", seed, {"terms": worst <= p["rel_tol"]},
                          {"worst_relative_error": worst}, rows, {"relative": p["rel_tol"]})


@_register("flow.restart_markov", "flow_sim",
           "restarting a flow at an intermediate time reproduces the uninterrupted paths",
           "flow composition X_{s,t} = X_{r,t} o X_{s,r}", {"d": 2, "M": 200, "dt": 1e-3, "r": 0.05, "t": 0.1},
           validate=lambda p: _on_lattice(p, "r", "t"))
def _restart(p, seed, out):
    from ..flow import restart_flow
    b = make_drift("taylor_green", p["d"])
    xs = _points(p["d"], 3)
    full = simulate_flow(b, 0.0, p["t"], xs, p["M"], p["dt"], seed, checkpoints=[p["r"], p["t"]])
    half = simulate_flow(b, 0.0, p["r"], xs, p["M"], p["dt"], seed)
    cont = restart_flow(half, p["r"], p["t"])
    diff = float(np.abs(cont.states[-1] - full.states[-1]).max())
    return _report_checks("flow.restart_markov", seed, {"bitwise": diff == 0.0}, {"max_difference": diff})


# --------------------------------------------------------------------------
# kolmogorov_pde

_FK_DEFAULTS = {"d": 3, "drift": "zero", "gamma": 0.5, "m": 16, "rate": 1.0, "M": 2000, "dt": 1e-3,
                "S0": 0.0, "S1": 0.25, "n": 16, "k": [1, 1, 0], "points": 2, "se_mult": 3.0, "dt_mult": 5.0}


@_register("kolmogorov.feynman_kac", "kolmogorov_pde",
           "backward Kolmogorov solution against Monte Carlo expectations of the time integral",
           "duality between the Kolmogorov equation and expected path integrals", _FK_DEFAULTS,
           validate=_chain(_check_drift_name, lambda p: _on_lattice(p, "S0", "S1"), lambda p: _window(p, "S0", "S1")))
def _fk(p, seed, out):
    d = p["d"]
    return feynman_kac_check(_drift(p, d), mode(d, p["k"][:d]), p["S0"], p["S1"], _points(d, p["points"]),
                             M=p["M"], dt=p["dt"], seed=seed, n=p["n"], se_mult=p["se_mult"],
                             dt_mult=p["dt_mult"], antithetic=True, experiment_id="kolmogorov.feynman_kac")


@_register("kolmogorov.iterated_duality", "kolmogorov_pde",
           "nested PDE for the two-fold iterated integral against the simplex Monte Carlo value",
           "iterated integrals along the flow via nested Kolmogorov equations",
           {"d": 2, "drift": "zero", "gamma": 0.5, "m": 8, "rate": 1.0, "M": 4000, "dt": 1e-3, "S0": 0.0,
            "S1": 0.25, "n": 16, "points": 2, "p": 2.0, "n_windows": 5},
           validate=_chain(_check_drift_name, lambda p: _on_lattice(p, "S0", "S1"), lambda p: _window(p, "S0", "S1")))
def _iter(p, seed, out):
    d = p["d"]
    fs = [mode(d, [1] + [0] * (d - 1)), mode(d, [0, 1] + [0] * (d - 2))]
    return iterated_integral_duality(fs, [0, 1], _drift(p, d), p["S0"], p["S1"], _points(d, p["points"]),
                                     M=p["M"], dt=p["dt"], seed=seed, n=p["n"], p=p["p"],
                                     n_windows=p["n_windows"], experiment_id="kolmogorov.iterated_duality")


def apriori_mode_oracle(k2: float, spec: MixedNormSpec, T: float, alpha: float = 0.0) -> float:
    """Closed-form probe ratio for ``b = 0`` and forcing ``cos(k.x)``.

    The forward solution is ``(1 - e^{-lam t})/lam cos(k.x)`` with ``lam = |k|^2/2``;
    spatial factors cancel and only the Bessel weight ``(1+|k|^2)`` survives.
    """
    lam = 0.5 * k2
    q = spec.q

    def tnorm(g):
        if math.isinf(q):
            ts = np.linspace(0, T, 2001)
            return float(np.abs(g(ts)).max())
        return integrate.quad(lambda t: abs(g(t)) ** q, 0, T, limit=200)[0] ** (1 / q)

    num = tnorm(lambda t: np.exp(-lam * t)) + (1 + k2) * tnorm(lambda t: (1 - np.exp(-lam * t)) / lam)
    return num / tnorm(lambda t: np.ones_like(t))


@_register("kolmogorov.apriori", "kolmogorov_pde",
           "a-priori ratio of solution to forcing norms: mode oracle at zero drift, bounded spread across m",
           "second-order a-priori estimate for the Kolmogorov equation",
           {"d": 3, "p": 6.0, "q": 4.0, "T": 0.5, "n": 16, "gamma": 0.5, "ms": [4, 8], "k": [1, 0, 0],
            "oracle_tol": 0.01, "max_spread": 2.0},
           validate=lambda p: _positive(p, "ms", "T"))
def _apriori(p, seed, out):
    d = p["d"]
    spec = MixedNormSpec(d, p["p"], p["q"])
    f = mode(d, p["k"][:d])
    zero = apriori_probe([("zero", make_drift("zero", d))], [f], spec, 0, T=p["T"], n=p["n"])
    oracle = apriori_mode_oracle(float(np.sum(np.square(p["k"][:d]))), spec, p["T"])
    measured = zero.measured["max_ratio"]
    rel = abs(measured - oracle) / oracle
    b = make_drift("singular", d, gamma=p["gamma"])
    sing = apriori_probe([(m, bm) for m, bm in mollified_levels(b, p["ms"])],
                         [f, gaussian_bump(d)], spec, 0, T=p["T"], n=p["n"], max_spread=p["max_spread"])
    rows = [{"level": "zero", "ratio": measured, "oracle": oracle}] + \
        [{"level": r["level"], "ratio": r["ratio"], "oracle": ""} for r in sing.rows]
    return _report_checks("kolmogorov.apriori", seed,
                          {"mode_oracle": rel <= p["oracle_tol"], "singular_spread": sing.passed},
                          {"zero_ratio": measured, "oracle": oracle, "relative_error": rel,
                           "singular_spread": sing.measured["spread"]}, rows,
                          {"oracle": p["oracle_tol"], "spread": p["max_spread"]})


_EMBED_CASES = [{"kind": "sobolev1", "p": 2.0, "q": 2.0, "r": 4.0, "s": 4.0},
                {"kind": "sobolev2", "p": 1.5, "q": 1.5, "r": 6.0, "s": 6.0},
                {"kind": "morrey", "p": 4.0, "q": 4.0, "theta": 0.25}]


def embedding_ratios(n: int, dt: float, T: float) -> EstimateReport:
    """Embedding probe on the zero-drift solution forced by a Gaussian bump (d = 2)."""
    rep = solve_backward(None, gaussian_bump(2), 0.0, T, n, dt, d=2, direction="forward", max_saves=41)
    return parabolic_embedding_probe(rep.solution, rep.dudt, 0.0, _EMBED_CASES)


@_register("kolmogorov.embedding", "kolmogorov_pde",
           "parabolic Sobolev and Morrey ratios, stable under grid and step refinement",
           "parabolic Sobolev and Morrey embeddings",
           {"n": 16, "dt": 2e-3, "T": 0.4, "stability_tol": 0.1},
           validate=_chain(lambda p: _positive(p, "n", "dt", "T"), lambda p: _on_lattice(p, "T")))
def _embed(p, seed, out):
    coarse = embedding_ratios(p["n"], p["dt"], p["T"])
    fine = embedding_ratios(2 * p["n"], p["dt"] / 2, p["T"])
    rows, worst = [], 0.0
    finite = True
    for a, b in zip(coarse.rows, fine.rows):
        finite &= math.isfinite(a["ratio"]) and math.isfinite(b["ratio"])
        change = abs(b["ratio"] - a["ratio"]) / abs(b["ratio"])
        worst = max(worst, change)
        rows.append({"case": a["case"], "kind": a["kind"], "coarse": a["ratio"], "fine": b["ratio"],
                     "relative_change": change})
    return _report_checks("kolmogorov.embedding", seed,
                          {"finite": bool(finite), "stable": worst <= p["stability_tol"]},
                          {"worst_change": worst}, rows, {"stability": p["stability_tol"]})


# --------------------------------------------------------------------------
# estimator_suite

@_register("krylov.zero_drift", "estimator_suite",
           "Krylov-type constant at zero drift, with the Gaussian (heat) oracle for the expectation",
           "Krylov estimate for expected occupation integrals",
           {"d": 2, "p": 4.0, "q": 4.0, "T": 0.25, "M": 2000, "dt": 1e-3, "x_per_axis": 4},
           validate=_chain(lambda p: _on_lattice(p, "T")))
def _krylov(p, seed, out):
    d = p["d"]
    f = mode(d, [1] + [0] * (d - 1))
    spec = MixedNormSpec(d, p["p"], p["q"])
    rep = krylov_check([("zero", make_drift("zero", d))], f, spec, (0.0, p["T"]), M=p["M"], dt=p["dt"],
                       seed=seed, x_per_axis=p["x_per_axis"], experiment_id="krylov.zero_drift")
    # E int_0^T cos(x1 + W_t) dt at x = 0 is int_0^T e^{-t/2} dt
    oracle = 2 * (1 - math.exp(-p["T"] / 2))
    row = next(r for r in rep.rows if r["scale"] == 1.0)
    gap = abs(row["left"] - oracle)
    rep.measured.update({"oracle": oracle, "oracle_gap": gap})
    rep.checks["gaussian_oracle"] = gap <= 3 * row["se"] + 5 * p["dt"]
    return rep.finalize()


@_register("holder.zero_drift", "estimator_suite",
           "moment scaling of time and space increments of the pure noise flow",
           "Hölder moment bounds for the flow",
           {"d": 3, "r": 4.0, "M": 4000, "dt": 1e-3, "s": 0.0, "t": 0.064,
            "increments": [0.002, 0.004, 0.008, 0.016, 0.032], "slope_tol": 0.05, "points": 4},
           validate=lambda p: _on_lattice(p, "s", "t", "increments"))
def _holder0(p, seed, out):
    d = p["d"]
    b = make_drift("zero", d)
    xs = _points(d, p["points"])
    tr = holder_moments(b, p["r"], 0.5, "t", xs=xs, s=p["s"], t=p["t"], increments=p["increments"],
                        M=p["M"], dt=p["dt"], seed=seed, experiment_id="holder.zero_drift")
    xr = holder_moments(b, p["r"], 1.0, "x", xs=xs, s=p["s"], t=p["t"], increments=p["increments"],
                        M=p["M"], dt=p["dt"], seed=seed)
    t_slope, x_fit = tr.fits["moment"].slope, xr.fits["moment"]
    rep = EstimateReport("holder.zero_drift", rows=tr.rows + xr.rows, seed=seed, fits={"t": tr.fits["moment"],
                                                                                      "x": x_fit})
    rep.measured.update({"t_slope": t_slope, "x_slope": x_fit.slope, "x_residual": x_fit.residual})
    rep.tolerances.update({"t_slope": p["slope_tol"], "x_residual": 1e-9})
    rep.checks = {"t_slope": abs(t_slope - p["r"] / 2) <= p["slope_tol"],
                  "x_slope": abs(x_fit.slope - p["r"]) <= 1e-9 and x_fit.residual <= 1e-9}
    return rep.finalize()


@_register("holder.singular", "estimator_suite",
           "moment scaling of increments under the mollified singular drift, against beta r",
           "Hölder moment bounds for the flow",
           {"d": 3, "gamma": 0.5, "m": 16, "r": 4.0, "beta": 0.45, "M": 1000, "dt": 1e-3, "s": 0.0, "t": 0.064,
            "increments": [0.002, 0.004, 0.008, 0.016, 0.032], "axes": ["t", "s", "x"], "points": 4},
           validate=lambda p: _on_lattice(p, "s", "t", "increments"))
def _holderb(p, seed, out):
    d = p["d"]
    b = mollify(make_drift("singular", d, gamma=p["gamma"]), p["m"])
    xs = np.full((p["points"], d), math.pi) + 0.3 * _points(d, p["points"]) / TWO_PI
    rows, checks, measured = [], {}, {}
    for axis in p["axes"]:
        rep = holder_moments(b, p["r"], p["beta"], axis, xs=xs, s=p["s"], t=p["t"], increments=p["increments"],
                             M=p["M"], dt=p["dt"], seed=seed)
        rows.extend(rep.rows)
        checks[f"{axis}_slope"] = rep.passed
        measured[f"{axis}_slope"] = rep.measured["slope"]
    return _report_checks("holder.singular", seed, checks, measured, rows,
                          {"slope_floor": 0.9 * p["beta"] * p["r"]})


def _region(p):
    d = p["d"]
    return region_grid(np.full(d, math.pi), p["half_width"], p["per_axis"], d)


_REGION = {"d": 3, "gamma": 0.5, "ms": [4, 8, 16, 32], "half_width": 0.5, "per_axis": 2, "M": 100,
           "dt": 1e-3, "s": 0.0}


@_register("estimators.gradient_moment", "estimator_suite",
           "spatial moments of the flow Jacobian, uniform across mollification levels",
           "uniform gradient bounds for the flow",
           {**_REGION, "r": 2.0, "p": 2.0, "times": [0.032, 0.064]},
           validate=lambda p: _on_lattice(p, "s", "times"))
def _gradmom(p, seed, out):
    xs, vol = _region(p)
    b = make_drift("singular", p["d"], gamma=p["gamma"])
    return gradient_moment(mollified_levels(b, p["ms"]), p["r"], p["p"], xs=xs, cell_volume=vol, s=p["s"],
                           times=p["times"], M=p["M"], dt=p["dt"], seed=seed,
                           experiment_id="estimators.gradient_moment")


@_register("estimators.compactness", "estimator_suite",
           "spatial energy, Malliavin energy and Malliavin Hölder quotient, uniform across m",
           "relative compactness criterion on Wiener space",
           {**_REGION, "t": 0.064, "beta": 0.25, "fd_h": 0.05, "n_sigma": 4},
           validate=lambda p: _on_lattice(p, "s", "t"))
def _compact(p, seed, out):
    xs, vol = _region(p)
    b = make_drift("singular", p["d"], gamma=p["gamma"])
    return malliavin_stats(mollified_levels(b, p["ms"]), xs=xs, cell_volume=vol, s=p["s"], t=p["t"],
                           M=p["M"], dt=p["dt"], seed=seed, beta=p["beta"], fd_h=p["fd_h"],
                           n_sigma=p["n_sigma"], experiment_id="estimators.compactness")


@_register("estimators.cauchy", "estimator_suite",
           "L2 distances between flows of consecutive mollification levels decrease",
           "strong convergence of approximating flows",
           {**_REGION, "ms": [4, 8, 16, 32, 64], "t": 0.064},
           validate=lambda p: _on_lattice(p, "s", "t"))
def _cauchy(p, seed, out):
    xs, vol = _region(p)
    b = make_drift("singular", p["d"], gamma=p["gamma"])
    return cauchy_convergence(b, p["ms"], xs=xs, cell_volume=vol, s=p["s"], t=p["t"], M=p["M"], dt=p["dt"],
                              seed=seed, experiment_id="estimators.cauchy")


# --------------------------------------------------------------------------
# lagrangian_ns

def taylor_green(n: int, amplitude: float = 1.0) -> np.ndarray:
    x = grid_nodes(n, 2)
    return amplitude * np.stack([np.cos(x[..., 0]) * np.sin(x[..., 1]),
                                 -np.sin(x[..., 0]) * np.cos(x[..., 1])], axis=-1)


def _ns_cfg(p, seed) -> NSRunConfig:
    try:
        return NSRunConfig(n=p["n"], d=2, T=p["T"], M=p["M"], dt=p["dt"], max_iter=p["max_iter"], seed=seed,
                           tol=p["tol"], refine=p["refine"])
    except DomainError as exc:
        raise ConfigError(str(exc)) from None


_NS = {"n": 16, "T": 0.1, "M": 100, "dt": 2e-3, "max_iter": 6, "tol": 1e-3, "refine": 4}


def _validate_ns(p):
    _ns_cfg(p, 0)


@_register("leray.idempotent", "lagrangian_ns",
           "Leray projection: idempotent, annihilates gradients, self-adjoint, divergence-free output",
           "projection onto divergence-free fields", {"n": 64, "d": 2, "tol": 1e-10})
def _leray(p, seed, out):
    rng = np.random.default_rng(seed)
    n, d = p["n"], p["d"]
    F = rng.standard_normal((n,) * d + (d,))
    G = rng.standard_normal((n,) * d + (d,))
    PF = leray_project(F)
    idem = float(np.abs(leray_project(PF) - PF).max() / np.abs(PF).max())
    from ..spectral import gradient
    psi = rng.standard_normal((n,) * d)
    grad = gradient(psi, d)
    annihil = float(np.abs(leray_project(grad)).max() / np.abs(grad).max())
    adj = abs(np.sum(PF * G) - np.sum(F * leray_project(G))) / (np.linalg.norm(F) * np.linalg.norm(G))
    div = relative_divergence(PF)
    tol = p["tol"]
    return _report_checks("leray.idempotent", seed,
                          {"idempotent": idem <= tol, "gradients_annihilated": annihil <= tol,
                           "self_adjoint": adj <= tol, "divergence_free": div <= tol},
                          {"idempotence": idem, "gradient_residue": annihil, "adjointness": adj,
                           "divergence": div}, tolerances={"relative": tol})


@_register("lagrangian.reference_tg", "lagrangian_ns",
           "pseudo-spectral backward Navier–Stokes on the Taylor–Green vortex against exp(t) phi",
           "backward Navier–Stokes equation", {"n": 32, "T": 0.5, "dt": 1e-3, "tol": 1e-6, "energy_tol": 1e-4},
           validate=lambda p: _on_lattice(p, "T"))
def _reference(p, seed, out):
    phi = taylor_green(p["n"])
    st = reference_spectral_ns(phi, p["T"], p["dt"])
    exact = np.exp(st.times)[:, None, None, None] * phi
    err = float(np.max([np.linalg.norm(a - e) / np.linalg.norm(e) for a, e in zip(st.u, exact)]))
    rows = [{"t": float(t), "relative_error": float(np.linalg.norm(a - e) / np.linalg.norm(e))}
            for t, a, e in zip(st.times, st.u, exact)]
    return _report_checks("lagrangian.reference_tg", seed,
                          {"exact": err <= p["tol"], "energy_budget": st.flags["energy_budget_error"] <= p["energy_tol"],
                           "zero_mode": st.flags["zero_mode_drift"] == 0.0},
                          {"max_relative_error": err, **{k: v for k, v in st.flags.items()
                                                         if isinstance(v, float)}}, rows,
                          {"relative": p["tol"], "energy": p["energy_tol"]})


def taylor_green_picard(p, seed, out: Path | None):
    cfg = _ns_cfg(p, seed)
    phi = taylor_green(cfg.n)
    t0 = time.perf_counter()
    st = picard_solve(phi, cfg)
    seconds = time.perf_counter() - t0
    if out is not None:
        st.export(out, "taylor_green")
    return cfg, phi, st, seconds


@_register("lagrangian.picard_tg", "lagrangian_ns",
           "Picard iteration of the stochastic representation on the Taylor–Green vortex",
           "stochastic Lagrangian fixed point for backward Navier–Stokes",
           {**_NS, "max_error": 5e-2}, validate=_validate_ns)
def _picard(p, seed, out):
    cfg, phi, st, seconds = taylor_green_picard(p, seed, out)
    exact = np.exp(st.times)[:, None, None, None] * phi
    err = float(max(np.linalg.norm(a - e) / np.linalg.norm(e) for a, e in zip(st.u, exact)))
    rep = EstimateReport("lagrangian.picard_tg", rows=st.residual_rows(), seed=seed)
    rep.measured.update({"max_relative_error": err, "max_iterations": max(st.iterations),
                         "max_std_error": float(st.std_errors.max())})
    rep.tolerances.update({"relative_error": p["max_error"], "iterations": p["max_iter"]})
    rep.checks = {"converged": not st.inconclusive and max(st.iterations) <= p["max_iter"],
                  "exact_solution": err <= p["max_error"]}
    rep.notes.append("two-dimensional validation run, outside the three-dimensional standing assumption")
    return rep.finalize()


@_register("lagrangian.w_residual", "lagrangian_ns",
           "residual of the unprojected field's evolution equation on the converged Taylor–Green state",
           "evolution equation of the unprojected representation", {**_NS, "residual_tol": 5e-2},
           validate=_validate_ns)
def _wres(p, seed, out):
    cfg, phi, st, _ = taylor_green_picard(p, seed, None)
    rep = w_equation_residual(st, phi, cfg, tol=p["residual_tol"])
    rep.experiment_id = "lagrangian.w_residual"
    return rep


@_register("lagrangian.lp_persistence", "lagrangian_ns",
           "L^q norms of expectations along divergence-free flows do not grow (catalog of test fields)",
           "L^q persistence under divergence-free transport",
           {**_NS, "qs": [2.0, 4.0], "fields": ["constant", "mode", "bump"]}, validate=_validate_ns)
def _lp(p, seed, out):
    cfg = _ns_cfg(p, seed)
    phi = taylor_green(cfg.n)
    states = {"zero": VelocityState.zero(phi, cfg.T), "taylor_green": picard_solve(phi, cfg)}
    fields = [make_scalar(name, 2, **({"value": 1.5} if name == "constant" else {})) for name in p["fields"]]
    rows, checks = [], {}
    for label, st in states.items():
        rep = lp_persistence_check(st, fields, p["qs"], -cfg.T, cfg)
        rows.extend({"velocity": label, **r} for r in rep.rows)
        checks.update({f"{label}/{k}": v for k, v in rep.checks.items()})
    return _report_checks("lagrangian.lp_persistence", seed, checks, {"cases": len(rows)}, rows)
