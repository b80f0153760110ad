"""Kolmogorov equations on the torus and their probabilistic duals.

All solvers march forward in a marching variable ``tau``.  For the
backward equation ``du/dt + Lap u/2 + b.grad u + g = 0`` with ``u(S1) = 0``
we set ``t = S1 - tau``; the forward equation ``du/dt = Lap u/2 + b.grad u + g``
with ``u(S0) = 0`` uses ``t = S0 + tau``.  In both cases

    d u / d tau = Lap u / 2 - lam u + b(t).grad u + g(t),

stepped with second-order exponential time differencing: the diagonal part
is integrated exactly per Fourier mode, transport and forcing explicitly.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .drifts import DriftField, mollify
from .errors import CFLError, DataError, DomainError
from .flow import simulate_flow, step_index
from .norms import MixedNormSpec, mixed_norm, spatial_norms
from .report import EstimateReport, fit_loglog, spread
from .scalars import ScalarField
from .spectral import (PeriodicField, _odd_wavenumbers, bessel_symbol, fft, grid_nodes, grid_spacing,
                       high_mode_fraction, ifft, interpolate, k_squared, space_axes)

Array = np.ndarray


class MeasuredNorm(float):
    """A norm value that remembers its grid and whether the grid resolved it."""

    def __new__(cls, value, *, grid: int = 0, high_fraction: float = 0.0, threshold: float = 0.1):
        obj = super().__new__(cls, value)
        obj.grid = grid
        obj.high_fraction = high_fraction
        obj.resolved = high_fraction <= threshold
        return obj


def _as_field(field_or_values, times=None, d=None) -> PeriodicField:
    if isinstance(field_or_values, PeriodicField):
        return field_or_values
    if d is None or times is None:
        raise DataError("raw arrays need explicit times and dimension")
    return PeriodicField(field_or_values, times, d)


def fractional_sobolev_norm(f: PeriodicField, s: float, spec: MixedNormSpec, window=None) -> MeasuredNorm:
    """Mixed ``L^p_q`` norm of ``(1 - Lap)^{s/2} f`` on the stored time grid."""
    window = (f.times[0], f.times[-1]) if window is None else window
    frac = high_mode_fraction(f.values, f.d, leading=1)
    if s == 0:
        vals = f.values
    else:
        sym = bessel_symbol(f.n, f.d, s)
        shape = (1,) + sym.shape + (1,) * (f.values.ndim - 1 - f.d)
        vals = ifft(f.spectral * sym.reshape(shape), f.d, leading=1)
    return MeasuredNorm(mixed_norm(vals, spec, window, f.times), grid=f.n, high_fraction=frac)


# --------------------------------------------------------------------------
# time stepping

def _phi_functions(z: Array) -> tuple[Array, Array, Array]:
    E = np.exp(z)
    small = np.abs(z) < 1e-2
    zs = np.where(small, 1.0, z)
    phi1 = np.where(small, 1 + z / 2 + z**2 / 6 + z**3 / 24 + z**4 / 120, np.expm1(zs) / zs)
    phi2 = np.where(small, 0.5 + z / 6 + z**2 / 24 + z**3 / 120 + z**4 / 720, (np.expm1(zs) - zs) / zs**2)
    return E, phi1, phi2


def _forcing_sampler(g, n: int, d: int) -> Callable[[float], Array]:
    x = grid_nodes(n, d)
    if g is None:
        zero = np.zeros((n,) * d)
        return lambda t: zero
    if isinstance(g, (int, float)):
        const = np.full((n,) * d, float(g))
        return lambda t: const
    if isinstance(g, np.ndarray):
        arr = np.asarray(g, dtype=float)
        return lambda t: arr
    if isinstance(g, ScalarField) and not g.time_dependent:
        arr = g(0.0, x)
        return lambda t: arr
    return lambda t: np.asarray(g(t, x), dtype=float)


def _drift_sampler(b: DriftField | None, n: int, d: int) -> Callable[[float], Array | None]:
    if b is None or (b.modes is not None and b.modes.ks.shape[0] == 0):
        return lambda t: None
    x = grid_nodes(n, d)
    if not b.time_dependent:
        arr = b(0.0, x)
        return lambda t: arr
    return lambda t: b(t, x)


def _check_cfl(bs: Callable, times: Sequence[float], dt: float, h: float) -> float:
    bmax = 0.0
    for t in times:
        v = bs(t)
        if v is not None:
            bmax = max(bmax, float(np.sqrt((v**2).sum(axis=-1)).max()))
    if bmax * dt > h:
        raise CFLError(f"max|b| dt = {bmax * dt:.3g} exceeds grid spacing {h:.3g}",
                       required_dt=0.5 * h / bmax)
    return bmax


def _nonlinear(U_hat: Array, bvals: Array | None, force: Array, ks: list[Array], d: int) -> Array:
    """Spectrum of ``b.grad U + force`` for a stack of scalar unknowns ``U``."""
    if bvals is None:
        return fft(force, d, leading=U_hat.ndim - d)
    lead = U_hat.ndim - d
    acc = force.copy()
    for j in range(d):
        dj = ifft(1j * ks[j] * U_hat, d, leading=lead)
        acc += bvals[..., j] * dj
    return fft(acc, d, leading=lead)


def _march_system(U0: Array, rhs: Callable[[float, Array, Array], Array], L: Array, dt: float,
                  nsteps: int, time_of: Callable[[int], float], save_steps: set[int], d: int):
    """ETD2 integration of ``dU/dtau = L U + N(t, U)``; ``rhs(t, U, U_hat)`` returns ``N_hat``."""
    E, phi1, phi2 = _phi_functions(L * dt)
    lead = U0.ndim - d
    U_hat = fft(U0, d, leading=lead)
    saved = {}
    U = U0.copy()
    if 0 in save_steps:
        saved[0] = U.copy()
    for j in range(nsteps):
        Nn = rhs(time_of(j), U, U_hat)
        A_hat = E * U_hat + dt * phi1 * Nn
        A = ifft(A_hat, d, leading=lead)
        Na = rhs(time_of(j + 1), A, A_hat)
        U_hat = A_hat + dt * phi2 * (Na - Nn)
        U = ifft(U_hat, d, leading=lead)
        if j + 1 in save_steps:
            if not np.all(np.isfinite(U)):
                raise DataError(f"non-finite solution at t={time_of(j + 1)}")
            saved[j + 1] = U.copy()
    return saved


def _save_steps(nsteps: int, max_saves: int) -> list[int]:
    every = 1
    while nsteps // every + 1 > max_saves or nsteps % every:
        every += 1
        if every > nsteps:
            every = nsteps
            break
    return list(range(0, nsteps + 1, every))


def _n_steps(S0: float, S1: float, dt: float) -> int:
    if not S1 > S0:
        raise DomainError("empty time window")
    nsteps = round((S1 - S0) / dt)
    if abs(nsteps * dt - (S1 - S0)) > 1e-9 * (S1 - S0):
        raise DomainError(f"dt={dt} does not divide the window length {S1 - S0}")
    return int(nsteps)


@dataclass
class PDESolveReport:
    solution: PeriodicField
    dudt: PeriodicField
    forcing: PeriodicField
    dt: float
    n: int
    direction: str
    norms: dict = field(default_factory=dict)
    ratio: float = math.nan

    def at(self, t: float, points) -> Array:
        i = int(np.argmin(np.abs(self.solution.times - t)))
        if abs(self.solution.times[i] - t) > 1e-9:
            raise DomainError(f"time {t} is not stored")
        return interpolate(self.solution.values[i], points, self.solution.d)

    def norm_rows(self) -> list[dict]:
        return [{"quantity": k, "value": float(v)} for k, v in self.norms.items()] + \
               [{"quantity": "ratio", "value": self.ratio}]


def solve_backward(b: DriftField | None, g, S0: float, S1: float, n: int, dt: float | None, *,
                   d: int | None = None, direction: str = "backward", zero_order: float = 0.0,
                   max_saves: int = 101, spec: MixedNormSpec | None = None,
                   alpha: float = 0.0) -> PDESolveReport:
    """Solve the Kolmogorov equation on ``[S0, S1]`` with zero terminal (or initial) data.

    ``g`` is a :class:`ScalarField`, a callable ``g(t, x)``, a number or a
    fixed grid array.  ``dt=None`` picks the largest step allowed by the
    transport CFL bound ``max|b| dt <= h/2`` (capped at 0.01).
    """
    d = b.d if b is not None else d
    if d is None:
        raise DomainError("dimension required when no drift is given")
    if direction not in ("backward", "forward"):
        raise DomainError("direction is 'backward' or 'forward'")
    h = grid_spacing(n)
    bs = _drift_sampler(b, n, d)
    gs = _forcing_sampler(g, n, d)
    probe_times = (S0, 0.5 * (S0 + S1), S1)
    if dt is None:
        bmax = _check_cfl(bs, probe_times, 0.0, h)
        dt_max = min(0.01, 0.5 * h / bmax) if bmax > 0 else 0.01
        dt = (S1 - S0) / math.ceil((S1 - S0) / dt_max)
    _check_cfl(bs, probe_times, dt, h)
    nsteps = _n_steps(S0, S1, dt)
    ks = _odd_wavenumbers(n, d)
    L = -0.5 * k_squared(n, d) - zero_order
    time_of = (lambda j: S1 - j * dt) if direction == "backward" else (lambda j: S0 + j * dt)

    def rhs(t, U, U_hat):
        return _nonlinear(U_hat, bs(t), gs(t), ks, d)

    steps = _save_steps(nsteps, max_saves)
    saved = _march_system(np.zeros((n,) * d), rhs, L, dt, nsteps, time_of, set(steps), d)
    order = steps[::-1] if direction == "backward" else steps
    times = np.array([time_of(j) for j in order])
    u = np.stack([saved[j] for j in order])
    sign = -1.0 if direction == "backward" else 1.0
    dudt = np.empty_like(u)
    forcing = np.empty_like(u)
    for i, t in enumerate(times):
        u_hat = fft(u[i], d)
        forcing[i] = gs(t)
        rate = ifft(L * u_hat + _nonlinear(u_hat, bs(t), forcing[i], ks, d), d)
        dudt[i] = sign * rate
    meta = {"grid": n, "dt": dt, "direction": direction}
    rep = PDESolveReport(PeriodicField(u, times, d, dict(meta)), PeriodicField(dudt, times, d, dict(meta)),
                         PeriodicField(forcing, times, d, dict(meta)), dt, n, direction)
    if spec is not None:
        _fill_norms(rep, spec, alpha)
    return rep


def _fill_norms(rep: PDESolveReport, spec: MixedNormSpec, alpha: float) -> None:
    un = fractional_sobolev_norm(rep.solution, alpha + 2, spec)
    dn = fractional_sobolev_norm(rep.dudt, alpha, spec)
    fnm = fractional_sobolev_norm(rep.forcing, alpha, spec)
    rep.norms = {"u_high": un, "dtu": dn, "f": fnm}
    rep.ratio = float((un + dn) / fnm) if fnm > 0 else 0.0


# --------------------------------------------------------------------------
# a-priori probe

def _derivative_forcing(F: ScalarField, j: int) -> Callable:
    return lambda t, x: F.gradient(t, x)[..., j]


def apriori_probe(b_levels, forcings, spec: MixedNormSpec, alpha: int = 0, *, T: float = 0.5,
                  n: int = 16, dt: float | None = None, max_spread: float = 2.0,
                  experiment_id: str = "kolmogorov.apriori") -> EstimateReport:
    """Ratios ``(||u_t||_{H^a} + ||u||_{H^{a+2}}) / ||f||_{H^a}`` per drift level and forcing.

    ``b_levels`` is a sequence of ``(label, DriftField)``.  With ``alpha=-1``
    each forcing is ``(F, j)`` and the equation is driven by ``d_j F``.
    """
    if alpha not in (0, -1):
        raise DomainError("alpha must be 0 or -1")
    rows, per_level = [], {}
    for label, b in b_levels:
        worst = 0.0
        for fi, f in enumerate(forcings):
            g = _derivative_forcing(*f) if alpha == -1 else f
            rep = solve_backward(b, g, 0.0, T, n, dt, d=spec.d, direction="forward", spec=spec, alpha=alpha)
            worst = max(worst, rep.ratio)
            rows.append({"level": label, "forcing": fi, "ratio": rep.ratio, "u_norm": rep.norms["u_high"],
                         "dtu_norm": rep.norms["dtu"], "f_norm": rep.norms["f"], "dt": rep.dt,
                         "resolved": all(v.resolved for v in rep.norms.values())})
        per_level[label] = worst
    sp = spread(per_level.values())
    rep = EstimateReport(experiment_id, measured={"max_ratio": max(per_level.values()), "spread": sp},
                         tolerances={"max_spread": max_spread},
                         axis={"levels": list(per_level), "alpha": alpha, "p": spec.p, "q": spec.q, "T": T,
                               "grid": n},
                         rows=rows)
    rep.checks = {"finite": all(math.isfinite(v) for v in per_level.values()),
                  "spread": len(per_level) < 2 or sp <= max_spread}
    return rep.finalize()


def shifted_ratio(f: ScalarField, lam: float, spec: MixedNormSpec, *, T: float = 0.5, n: int = 16,
                  dt: float = 1e-3) -> float:
    """``(||u_t|| + ||Hess u||/2 + lam ||u||) / ||f||`` for ``u_t = Lap u/2 - lam u + f``, b = 0."""
    rep = solve_backward(None, f, 0.0, T, n, dt, d=spec.d, direction="forward", zero_order=lam)
    u = rep.solution
    hess = []
    ks = _odd_wavenumbers(n, spec.d)
    kfull = [k.astype(float) for k in np.meshgrid(*([np.fft.fftfreq(n, 1.0 / n)] * spec.d), indexing="ij")]
    for i in range(spec.d):
        for j in range(spec.d):
            sym = -(kfull[i] * kfull[j]) if i == j else -(ks[i] * ks[j])
            hess.append(ifft(u.spectral * sym[None], spec.d, leading=1))
    H = np.stack(hess, axis=-1)
    window = (0.0, T)
    num = (mixed_norm(rep.dudt.values, spec, window, u.times) + 0.5 * mixed_norm(H, spec, window, u.times)
           + lam * mixed_norm(u.values, spec, window, u.times))
    den = mixed_norm(rep.forcing.values, spec, window, u.times)
    return num / den if den > 0 else 0.0


# --------------------------------------------------------------------------
# probabilistic duals

def feynman_kac_check(b: DriftField, g: ScalarField, S0: float, S1: float, xs, *, M: int, dt: float,
                      seed: int, n: int = 32, pde_dt: float | None = None, se_mult: float = 3.0,
                      dt_mult: float = 5.0, antithetic: bool = False,
                      experiment_id: str = "kolmogorov.feynman_kac") -> EstimateReport:
    """Compare ``E int_S0^S1 g(t, X_t^x) dt`` with the PDE value ``u(S0, x)``."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    pde = solve_backward(b, g, S0, S1, n, pde_dt or dt)
    u0 = interpolate(pde.solution.values[0], xs, b.d)
    ens = simulate_flow(b, S0, S1, xs, M, dt, seed, functionals={"g": g}, antithetic=antithetic)
    vals = ens.integrals["g"]
    mc = vals.mean(axis=1)
    se = _standard_error(vals, antithetic)
    diff = np.abs(mc - u0)
    allowed = se_mult * se + dt_mult * dt
    rows = [{"point": i, **{f"x{j}": xs[i, j] for j in range(b.d)}, "pde": u0[i], "mc": mc[i],
             "se": se[i], "abs_diff": diff[i], "allowed": allowed[i]} for i in range(xs.shape[0])]
    rep = EstimateReport(experiment_id, measured={"max_abs_diff": float(diff.max())},
                         std_errors={"max_se": float(se.max())},
                         tolerances={"se_mult": se_mult, "dt_mult": dt_mult},
                         axis={"drift": b.tag, "M": M, "dt": dt, "grid": n, "window": (S0, S1)},
                         rows=rows, seed=seed)
    rep.checks = {"duality": bool(np.all(diff <= allowed))}
    return rep.finalize()


def _standard_error(vals: Array, antithetic: bool) -> Array:
    """Standard error of the path mean along the last axis."""
    M = vals.shape[-1]
    if antithetic and M % 2 == 0:
        pairs = 0.5 * (vals[..., 0::2] + vals[..., 1::2])
        return pairs.std(axis=-1, ddof=1) / math.sqrt(pairs.shape[-1])
    return vals.std(axis=-1, ddof=1) / math.sqrt(M)


def iterated_pde(b: DriftField | None, fs: Sequence[ScalarField], alphas: Sequence[int], S0: float,
                 S1: float, n: int, dt: float, d: int) -> PeriodicField:
    """Nested backward recursion ``u_{k}`` with forcing ``(d_{alpha_k} f_k) u_{k+1}``, ``u_{n+1} = 1``.

    All levels are marched together; returns ``u_1`` on the stored times.
    """
    order = len(fs)
    nsteps = _n_steps(S0, S1, dt)
    h = grid_spacing(n)
    bs = _drift_sampler(b, n, d)
    _check_cfl(bs, (S0, S1), dt, h)
    x = grid_nodes(n, d)
    ks = _odd_wavenumbers(n, d)
    L = -0.5 * k_squared(n, d)
    derivs = [(lambda f, a: (lambda t: f.gradient(t, x)[..., a]))(f, a) for f, a in zip(fs, alphas)]

    def rhs(t, U, U_hat):
        force = np.empty_like(U)
        for k in range(order):
            nxt = U[k + 1] if k + 1 < order else 1.0
            force[k] = derivs[k](t) * nxt
        return _nonlinear(U_hat, bs(t), force, ks, d)

    steps = _save_steps(nsteps, 10**9)
    saved = _march_system(np.zeros((order,) + (n,) * d), rhs, L, dt, nsteps, lambda j: S1 - j * dt,
                          set(steps), d)
    times = np.array([S1 - j * dt for j in steps[::-1]])
    return PeriodicField(np.stack([saved[j][0] for j in steps[::-1]]), times, d)


def iterated_integral_duality(fs: Sequence[ScalarField], alphas: Sequence[int], b: DriftField, S0: float,
                              S1: float, xs, *, M: int, dt: float, seed: int, n: int = 32, p: float = 2.0,
                              n_windows: int = 5, se_mult: float = 3.0, dt_mult: float = 10.0,
                              experiment_id: str = "kolmogorov.iterated_duality") -> EstimateReport:
    """Simplex integral ``E int_{S0<t1<..<tn<S1} prod d_{a_i} f_i(t_i, X_{t_i}) dt`` two ways."""
    order = len(fs)
    if not 1 <= order <= 3 or len(alphas) != order:
        raise DomainError("iterated integrals are supported for n = 1, 2, 3")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d = b.d
    # PDE side
    u1 = iterated_pde(b, fs, alphas, S0, S1, n, dt, d)
    pde_vals = interpolate(u1.values[0], xs, d)
    # Monte Carlo side: K_i(t) = int_{S0}^t h_i(s) K_{i-1}(s) ds by the trapezoid rule
    state: dict = {}

    def observe(t, X, final):
        h = [f.gradient(t, X)[..., a] for f, a in zip(fs, alphas)]
        if "K" not in state:
            state["K"] = [np.zeros(X.shape[:-1]) for _ in range(order)]
        else:
            prevK, prevh = state["K"], state["h"]
            newK, lower_new, lower_old = [], 1.0, 1.0
            for i in range(order):
                k_new = prevK[i] + 0.5 * dt * (prevh[i] * lower_old + h[i] * lower_new)
                lower_old, lower_new = prevK[i], k_new
                newK.append(k_new)
            state["K"] = newK
        state["h"] = h

    simulate_flow(b, S0, S1, xs, M, dt, seed, observer=observe)
    vals = state["K"][-1]
    mc = vals.mean(axis=1)
    se = _standard_error(vals, False)
    diff = np.abs(mc - pde_vals)
    allowed = se_mult * se + dt_mult * dt
    rows = [{"kind": "point", "point": i, "pde": pde_vals[i], "mc": mc[i], "se": se[i], "abs_diff": diff[i],
             "allowed": allowed[i]} for i in range(xs.shape[0])]
    # growth of ||u_1(S1 - L)||_{L^p} as the window L shrinks
    lengths = (S1 - S0) / 2.0 ** np.arange(n_windows)
    spec = MixedNormSpec(d, p, math.inf)
    lp = []
    for Lw in lengths:
        i = int(np.argmin(np.abs(u1.times - (S1 - Lw))))
        lp.append(float(spatial_norms(u1.values[i][None], d, p)[0]))
    rows += [{"kind": "window", "window": Lw, "lp_norm": v} for Lw, v in zip(lengths, lp)]
    checks = {"duality": bool(np.all(diff <= allowed))}
    fits = {}
    if all(v > 0 for v in lp):
        fits["window_growth"] = fit_loglog(lengths, lp)
        checks["positive_growth"] = fits["window_growth"].slope > 0
    else:
        checks["positive_growth"] = False
    rep = EstimateReport(experiment_id, measured={"max_abs_diff": float(diff.max()), "order": order},
                         fits=fits, std_errors={"max_se": float(se.max())},
                         tolerances={"se_mult": se_mult, "dt_mult": dt_mult},
                         axis={"drift": b.tag, "M": M, "dt": dt, "grid": n, "p": p}, rows=rows, seed=seed,
                         checks=checks)
    all_zero = all(f.is_constant for f in fs[:1]) or any(f.is_constant for f in fs)
    if all_zero:
        rep.notes.append("a constant factor makes both sides vanish")
        rep.checks.pop("positive_growth", None)
    return rep.finalize()


# --------------------------------------------------------------------------
# parabolic embeddings

def _recip(x):
    return 0.0 if math.isinf(x) else 1.0 / x


def parabolic_embedding_probe(u: PeriodicField, dudt: PeriodicField | None, alpha: float, cases: Sequence[dict],
                              *, experiment_id: str = "kolmogorov.embedding") -> EstimateReport:
    """Left/right sides of the parabolic Sobolev and Morrey inequalities.

    Each case is a dict with ``kind`` in {"sobolev1", "sobolev2", "morrey"}
    and exponents ``p, q`` plus ``r, s`` (Sobolev) or ``theta`` (Morrey).
    """
    d = u.d
    if dudt is None:
        dudt = PeriodicField(np.gradient(u.values, u.times, axis=0), u.times, d)
    rows, worst = [], {}
    for ci, case in enumerate(cases):
        kind = case["kind"]
        p, q = float(case["p"]), float(case["q"])
        spec = MixedNormSpec(d, p, q)
        rhs = fractional_sobolev_norm(dudt, alpha, spec) + fractional_sobolev_norm(u, alpha + 2, spec)
        if kind in ("sobolev1", "sobolev2"):
            r, s = float(case["r"]), float(case["s"])
            shift = 1.0 if kind == "sobolev1" else 2.0
            lhs_scale = d / p + 2 / q
            if not (r > p and s > q and lhs_scale > shift
                    and abs(lhs_scale - (d * _recip(r) + 2 * _recip(s) + shift)) <= 1e-9):
                raise DomainError(f"exponents violate the {kind} relation: {case}")
            order = alpha + (1.0 if kind == "sobolev1" else 0.0)
            lhs = fractional_sobolev_norm(u, order, MixedNormSpec(d, r, s))
        elif kind == "morrey":
            theta = float(case["theta"])
            if not 0.0 <= theta < 1.0 - 1.0 / q:
                raise DomainError(f"theta must lie in [0, 1 - 1/q): {case}")
            lifted = ifft(u.spectral * bessel_symbol(u.n, d, alpha + 2 * theta)[None], d, leading=1) \
                if not u.is_vector else None
            sp = spatial_norms
            lhs = 0.0
            nt = u.times.size
            for i in range(nt):
                diffs = lifted[i + 1:] - lifted[i]
                if diffs.shape[0] == 0:
                    continue
                gaps = u.times[i + 1:] - u.times[i]
                quot = sp(diffs, d, p) / gaps ** (1 - 1 / q - theta)
                lhs = max(lhs, float(quot.max()))
        else:
            raise DomainError(f"unknown embedding case {kind}")
        ratio = float(lhs / rhs) if rhs > 0 else 0.0
        worst[ci] = ratio
        rows.append({"case": ci, "kind": kind, "lhs": float(lhs), "rhs": float(rhs), "ratio": ratio})
    rep = EstimateReport(experiment_id, measured={"worst_ratio": max(worst.values()) if worst else 0.0},
                         axis={"alpha": alpha, "grid": u.n, "n_times": u.times.size}, rows=rows)
    rep.checks = {"finite": all(math.isfinite(v) for v in worst.values())}
    return rep.finalize()
