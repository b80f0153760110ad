"""Euler-Maruyama simulation of the stochastic flow and its derivative processes.

Noise is common across initial points: the increment of path ``j`` at
absolute step ``k`` (time ``k*dt``) depends only on ``(seed, k, j)``.  Flows
started at different times or from different points therefore see the same
Brownian path, which makes restarts bitwise composable and finite
differences meaningful.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import rng
from .drifts import DriftField, wrap
from .errors import CapabilityError, DomainError, DriftEvaluationError
from .gridio import write_csv, write_grid

Array = np.ndarray


def step_index(time: float, dt: float, what: str = "time") -> int:
    """Absolute lattice index of ``time``; raises if it is off the dt-lattice."""
    k = round(time / dt)
    if abs(time - k * dt) > 1e-9 * max(1.0, abs(time)):
        raise DomainError(f"{what} {time} is not a multiple of dt={dt}")
    return int(k)


@dataclass(frozen=True, eq=False)
class FlowEnsemble:
    """Paths ``X_{s,t}^x`` for every initial point ``x`` and path index.

    ``states`` has shape ``(n_checkpoints, P, M, d)``.  Brownian increments
    are kept in counter-addressed form and regenerated by :meth:`increment`.
    """

    drift: DriftField
    s: float
    t: float
    dt: float
    xs: Array
    n_paths: int
    seed: int
    checkpoint_times: Array
    states: Array
    periodic: bool = True
    antithetic: bool = False
    start: float | None = None
    start_state: Array | None = None
    escaped: Array | None = None
    integrals: dict = field(default_factory=dict)

    @property
    def d(self) -> int:
        return self.xs.shape[-1]

    @property
    def origin(self) -> float:
        """Time at which this ensemble's integration loop began."""
        return self.s if self.start is None else self.start

    @property
    def n_steps(self) -> int:
        return step_index(self.t, self.dt) - step_index(self.origin, self.dt)

    def increment(self, k: int) -> Array:
        """Brownian increment ``W_{(k+1)dt} - W_{k dt}`` for all paths, shape ``(M, d)``."""
        return rng.brownian_increments(self.seed, k, self.n_paths, self.d, self.dt,
                                       antithetic=self.antithetic)

    def state_at(self, time: float) -> Array:
        idx = np.flatnonzero(np.isclose(self.checkpoint_times, time, rtol=0, atol=1e-9 * max(1, abs(time))))
        if idx.size == 0:
            raise DomainError(f"{time} is not a checkpoint")
        return self.states[idx[0]]

    def initial_state(self) -> Array:
        if self.start_state is not None:
            return self.start_state
        return np.broadcast_to(self.xs[:, None, :], (self.xs.shape[0], self.n_paths, self.d)).copy()

    def noise_sanity(self) -> tuple[float, float, bool]:
        """Largest per-component mean of standardized increments vs its 4/sqrt(M*steps) gate."""
        k0 = step_index(self.origin, self.dt)
        total = np.zeros(self.d)
        for k in range(k0, k0 + self.n_steps):
            total += self.increment(k).sum(axis=0)
        n = self.n_paths * self.n_steps
        mean = np.abs(total / (n * math.sqrt(self.dt)))
        bound = 4.0 / math.sqrt(n)
        return float(mean.max()), bound, bool(mean.max() <= bound)

    def export(self, prefix, derivative: "DerivativeRecord | None" = None) -> None:
        """Write checkpoint states as a grid file and a per-checkpoint CSV summary."""
        write_grid(f"{prefix}.grid", self.states, d=self.d, kind="ensemble",
                   times=self.checkpoint_times, components=self.d)
        rows = []
        for c, time in enumerate(self.checkpoint_times):
            for p in range(self.xs.shape[0]):
                x = self.states[c, p]
                row = {"time": time, "point": p}
                for j in range(self.d):
                    row[f"mean_{j}"] = float(x[:, j].mean())
                for j in range(self.d):
                    row[f"var_{j}"] = float(x[:, j].var(ddof=1)) if self.n_paths > 1 else 0.0
                if derivative is not None:
                    fro = np.linalg.norm(derivative.matrices[c, p], axis=(-2, -1))
                    row["grad_norm_mean"] = float(fro.mean())
                    row["grad_norm_max"] = float(fro.max())
                rows.append(row)
        write_csv(f"{prefix}_summary.csv", rows)


@dataclass(frozen=True, eq=False)
class DerivativeRecord:
    """d x d matrices per checkpoint and path.

    ``matrices`` is ``(C, P, M, d, d)`` for spatial records and
    ``(C, S, P, M, d, d)`` for Malliavin records over ``sigmas``.
    """

    kind: str
    times: Array
    matrices: Array
    sigmas: Array | None = None
    meta: dict = field(default_factory=dict)


StepVisitor = Callable[[int, float, Array, "Array | None", bool], None]


def _march(b: DriftField, X: Array, k_start: int, k_end: int, dt: float, seed: int, n_paths: int,
           *, antithetic: bool, periodic: bool, record_steps: set[int], need_grad: bool = False,
           visit: StepVisitor | None = None, escape_bound: float | None = None):
    """In-place Euler-Maruyama loop over absolute steps ``[k_start, k_end)``.

    ``visit(k, t_k, X_k, grad_k, final)`` runs at every grid time before the
    state moves (and once more at the final time with ``final=True``).
    Returns the recorded states keyed by step and the escape flags.
    """
    d = X.shape[-1]
    recorded = {}
    escaped = np.zeros(X.shape[:-1], dtype=bool) if escape_bound is not None else None
    if k_start in record_steps:
        recorded[k_start] = X.copy()
    for k in range(k_start, k_end):
        tk = k * dt
        drift = b(tk, X)
        if not np.all(np.isfinite(drift)):
            bad = np.argwhere(~np.isfinite(drift))[0][:-1]
            raise DriftEvaluationError(f"non-finite drift at step {k}, t={tk}, point/path {tuple(bad)}",
                                       k, tk, tuple(int(i) for i in bad))
        if visit is not None:
            grad = b.gradient(tk, X) if need_grad else None
            visit(k, tk, X, grad, False)
        drift *= dt
        X += drift
        X += rng.brownian_increments(seed, k, n_paths, d, dt, antithetic=antithetic)
        if escaped is not None:
            escaped |= np.abs(X).max(axis=-1) > escape_bound
        if k + 1 in record_steps:
            recorded[k + 1] = X.copy()
    if visit is not None:
        visit(k_end, k_end * dt, X, None, True)
    return recorded, escaped


def _checkpoint_steps(s: float, t: float, dt: float, checkpoints) -> tuple[Array, list[int]]:
    k_s, k_t = step_index(s, dt, "start time"), step_index(t, dt, "end time")
    if k_t < k_s:
        raise DomainError("end time precedes start time")
    times = [t] if checkpoints is None else sorted(set(float(c) for c in checkpoints))
    steps = []
    for c in times:
        k = step_index(c, dt, "checkpoint")
        if not k_s <= k <= k_t:
            raise DomainError(f"checkpoint {c} outside [{s}, {t}]")
        steps.append(k)
    return np.array([k * dt for k in steps]), steps


def simulate_flow(b: DriftField, s: float, t: float, xs, M: int, dt: float, seed: int, *,
                  checkpoints=None, periodic: bool | None = None, antithetic: bool = False,
                  escape_bound: float | None = None, functionals: dict | None = None,
                  observer: Callable[[float, Array, bool], None] | None = None) -> FlowEnsemble:
    """Simulate ``X_{s,r}^x`` for ``r`` in the checkpoint set (default ``{t}``).

    ``functionals`` maps names to ``f(t, X) -> (P, M)`` whose time integrals
    along each path are accumulated by the trapezoid rule into
    ``ens.integrals``.  ``observer(t, X, final)`` sees the state at every
    grid time, for path functionals that need more than a time integral.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    if xs.shape[-1] != b.d:
        raise DomainError("initial points and drift disagree on dimension")
    periodic = b.periodic if periodic is None else periodic
    cp_times, cp_steps = _checkpoint_steps(s, t, dt, checkpoints)
    X = np.broadcast_to(xs[:, None, :], (xs.shape[0], M, b.d)).copy()
    visit, acc = _functional_visitor(functionals, dt)
    if observer is not None:
        inner = visit

        def visit(k, tk, X, grad, final):
            if inner is not None:
                inner(k, tk, X, grad, final)
            observer(tk, X, final)
    rec, escaped = _march(b, X, step_index(s, dt), step_index(t, dt), dt, seed, M,
                          antithetic=antithetic, periodic=periodic, record_steps=set(cp_steps),
                          visit=visit, escape_bound=None if periodic else escape_bound)
    states = np.stack([rec[k] for k in cp_steps])
    return FlowEnsemble(b, float(s), float(t), float(dt), xs, int(M), int(seed), cp_times, states,
                        periodic=periodic, antithetic=antithetic, escaped=escaped, integrals=acc)


def _functional_visitor(functionals, dt):
    acc: dict = {}
    if not functionals:
        return None, acc
    prev: dict = {}

    def visit(k, tk, X, grad, final):
        for name, f in functionals.items():
            cur = np.asarray(f(tk, X), dtype=float)
            if name in prev:
                acc[name] = acc.get(name, 0.0) + 0.5 * dt * (prev[name] + cur)
            else:
                acc[name] = np.zeros_like(cur)
            prev[name] = cur

    return visit, acc


def restart_flow(ens: FlowEnsemble, r: float, t_new: float, *, checkpoints=None) -> FlowEnsemble:
    """Continue every path from its state at checkpoint ``r`` up to ``t_new``."""
    step_index(r, ens.dt, "restart time")
    X = ens.state_at(r).copy()
    cp_times, cp_steps = _checkpoint_steps(r, t_new, ens.dt, checkpoints)
    rec, escaped = _march(ens.drift, X, step_index(r, ens.dt), step_index(t_new, ens.dt), ens.dt,
                          ens.seed, ens.n_paths, antithetic=ens.antithetic, periodic=ens.periodic,
                          record_steps=set(cp_steps))
    states = np.stack([rec[k] for k in cp_steps])
    return FlowEnsemble(ens.drift, ens.s, float(t_new), ens.dt, ens.xs, ens.n_paths, ens.seed, cp_times,
                        states, periodic=ens.periodic, antithetic=ens.antithetic, start=float(r),
                        start_state=ens.state_at(r).copy(), escaped=escaped)


def _replay(ens: FlowEnsemble, b: DriftField, visit: StepVisitor) -> None:
    if not b.has_gradient:
        raise CapabilityError(f"drift {b.tag} has no gradient")
    X = ens.initial_state()
    cp_steps = {step_index(c, ens.dt) for c in ens.checkpoint_times}
    _march(b, X, step_index(ens.origin, ens.dt), step_index(ens.t, ens.dt), ens.dt, ens.seed,
           ens.n_paths, antithetic=ens.antithetic, periodic=ens.periodic, record_steps=cp_steps,
           need_grad=True, visit=visit)


def _identity_stack(shape, d):
    J = np.zeros(shape + (d, d))
    J[..., range(d), range(d)] = 1.0
    return J


def variational_flow(ens: FlowEnsemble, b: DriftField | None = None) -> DerivativeRecord:
    """Jacobian ``grad X`` along each path: ``J_{k+1} = J_k + grad b(t_k, X_k) J_k dt``."""
    b = ens.drift if b is None else b
    d = ens.d
    J = _identity_stack(ens.states.shape[1:3], d)
    cp = {step_index(c, ens.dt): i for i, c in enumerate(ens.checkpoint_times)}
    out = np.empty(ens.states.shape[:3] + (d, d))

    def visit(k, tk, X, grad, final):
        if k in cp:
            out[cp[k]] = J
        if not final:
            J[...] = J + (grad @ J) * ens.dt

    _replay(ens, b, visit)
    return DerivativeRecord("spatial", ens.checkpoint_times.copy(), out)


def malliavin_derivative(ens: FlowEnsemble, b: DriftField | None = None, sigmas=None) -> DerivativeRecord:
    """``D_sigma X_t``: identity at ``t = sigma``, the variational ODE afterwards, zero before."""
    b = ens.drift if b is None else b
    d = ens.d
    if sigmas is None:
        sigmas = np.linspace(ens.origin, ens.t, 8)
        sigmas = np.array([round(sg / ens.dt) * ens.dt for sg in sigmas])
    sigmas = np.asarray(sigmas, dtype=float)
    sig_steps = np.array([step_index(sg, ens.dt, "sigma") for sg in sigmas])
    k0, k1 = step_index(ens.origin, ens.dt), step_index(ens.t, ens.dt)
    if np.any(sig_steps < k0) or np.any(sig_steps > k1):
        raise DomainError("every sigma must lie in the simulated window")
    P, M = ens.states.shape[1:3]
    D = np.zeros((sigmas.size, P, M, d, d))
    cp = {step_index(c, ens.dt): i for i, c in enumerate(ens.checkpoint_times)}
    out = np.zeros((len(cp), sigmas.size, P, M, d, d))
    eye = np.eye(d)

    def visit(k, tk, X, grad, final):
        started = sig_steps == k
        D[started] = eye
        if k in cp:
            out[cp[k]] = D
        if not final:
            active = sig_steps <= k
            if active.any():
                D[active] = D[active] + (grad[None] @ D[active]) * ens.dt

    _replay(ens, b, visit)
    return DerivativeRecord("malliavin", ens.checkpoint_times.copy(), out, sigmas=sigmas)


def chaos_series_gradient(ens: FlowEnsemble, b: DriftField | None = None, n_max: int = 4
                          ) -> list[DerivativeRecord]:
    """Partial sums ``S_0..S_nmax`` of the time-ordered series for ``grad X``.

    Term ``n`` is the left-point Riemann sum over strictly ordered step
    indices ``k_1 < ... < k_n`` of ``grad b(t_{k_n}) ... grad b(t_{k_1}) dt^n``.
    """
    b = ens.drift if b is None else b
    if not 0 <= n_max <= 6:
        raise DomainError("series order must be between 0 and 6")
    if n_max > ens.n_steps:
        raise DomainError(f"order {n_max} exceeds the {ens.n_steps} steps of the path grid")
    d = ens.d
    shape = ens.states.shape[1:3]
    terms = [_identity_stack(shape, d)] + [np.zeros(shape + (d, d)) for _ in range(n_max)]
    cp = {step_index(c, ens.dt): i for i, c in enumerate(ens.checkpoint_times)}
    out = np.empty((n_max + 1, len(cp)) + shape + (d, d))

    def visit(k, tk, X, grad, final):
        if k in cp:
            for n in range(n_max + 1):
                out[n, cp[k]] = terms[n]
        if not final:
            for n in range(n_max, 0, -1):
                terms[n] += (grad @ terms[n - 1]) * ens.dt

    if n_max > 0:
        _replay(ens, b, visit)
    else:
        out[0] = _identity_stack(shape, d)
    sums = np.cumsum(out, axis=0)
    norms = [float(np.abs(out[n]).max()) for n in range(n_max + 1)]
    diverging = n_max >= 2 and norms[-1] > norms[-2] > 0
    return [DerivativeRecord("spatial-series", ens.checkpoint_times.copy(), sums[n],
                             meta={"order": n, "term_max": norms[n], "diverging": diverging})
            for n in range(n_max + 1)]


def series_terms(partial_sums: list[DerivativeRecord]) -> list[Array]:
    """Individual series terms recovered from consecutive partial sums."""
    mats = [r.matrices for r in partial_sums]
    return [mats[0]] + [b - a for a, b in zip(mats[:-1], mats[1:])]
