"""Monte Carlo verification of moment, Krylov and compactness estimates."""
from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .drifts import DriftField, mollify, truncate
from .errors import DomainError
from .flow import FlowEnsemble, malliavin_derivative, simulate_flow, variational_flow
from .norms import MixedNormSpec, mixed_norm
from .report import EstimateReport, fit_loglog, spread
from .scalars import ScalarField
from .spectral import grid_nodes

Array = np.ndarray


def region_grid(center, half_width: float, n: int, d: int) -> tuple[Array, float]:
    """Cell-centred ``n^d`` points filling a cube; returns points and cell volume."""
    c = np.broadcast_to(np.asarray(center, dtype=float), (d,))
    h = 2.0 * half_width / n
    g = -half_width + h * (np.arange(n) + 0.5)
    pts = np.stack(np.meshgrid(*([g] * d), indexing="ij"), axis=-1).reshape(-1, d) + c
    return pts, h**d


def torus_grid(n: int, d: int) -> Array:
    return grid_nodes(n, d).reshape(-1, d)


def mollified_levels(b: DriftField, levels: Sequence[int], truncated: bool = False):
    """``[(k, b_k)]`` with ``b_k = b * rho_k`` (optionally after truncation at level k)."""
    out = []
    for k in levels:
        base = truncate(b, k) if truncated else b
        out.append((k, mollify(base, k)))
    return out


# --------------------------------------------------------------------------

def krylov_check(b_levels, f: ScalarField, spec: MixedNormSpec, window: tuple[float, float], *, M: int,
                 dt: float, seed: int, x_per_axis: int = 8, scales=(0.25, 0.5, 1.0, 2.0, 4.0),
                 norm_grid: int = 32, max_spread: float = 2.0, linearity_tol: float = 1e-12,
                 experiment_id: str = "krylov.check") -> EstimateReport:
    """Estimate ``sup_x E int_s^T lam f(t, X_{s,t}^x) dt`` against ``||lam f||_{L^p_q}``."""
    if not spec.scaling < 2.0:
        raise DomainError("the Krylov estimate needs d/p + 2/q < 2")
    s, T = window
    d = spec.d
    xs = torus_grid(x_per_axis, d)
    fs = {f"scale{i}": f.scaled(lam) for i, lam in enumerate(scales)}
    grid_vals = f.sample(norm_grid)
    base_norm = mixed_norm(np.stack([grid_vals, grid_vals]), spec, window)
    rows, consts = [], {}
    lin_err = 0.0
    for label, b in b_levels:
        ens = simulate_flow(b, s, T, xs, M, dt, seed, functionals=fs)
        lefts, norms = [], []
        for i, lam in enumerate(scales):
            vals = ens.integrals[f"scale{i}"]
            means = vals.mean(axis=1)
            j = int(np.argmax(means))
            se = vals[j].std(ddof=1) / math.sqrt(M)
            lefts.append(float(means[j]))
            norms.append(abs(lam) * base_norm)
            rows.append({"level": label, "scale": lam, "f_norm": norms[-1], "left": lefts[-1], "se": se,
                         "argmax_point": j})
        lefts, norms = np.array(lefts), np.array(norms)
        C = float(lefts @ norms / (norms @ norms))
        consts[label] = C
        ref = lefts[list(scales).index(1.0)] if 1.0 in scales else lefts[0] / scales[0]
        lin_err = max(lin_err, float(np.max(np.abs(lefts - np.asarray(scales) * ref)) / max(abs(ref), 1e-300)))
    sp = spread(consts.values())
    rep = EstimateReport(experiment_id, measured={"constant_max": max(consts.values()), "spread": sp,
                                                  "linearity_error": lin_err},
                         tolerances={"max_spread": max_spread, "linearity": linearity_tol},
                         axis={"levels": list(consts), "p": spec.p, "q": spec.q, "window": window,
                               "x_points": xs.shape[0], "M": M, "dt": dt},
                         rows=rows, seed=seed)
    for label, C in consts.items():
        rep.measured[f"constant[{label}]"] = C
    rep.checks = {"linearity": lin_err <= linearity_tol, "spread": sp <= max_spread}
    return rep.finalize()


# --------------------------------------------------------------------------

def _moment_stats(delta: Array, r: float) -> tuple[float, float]:
    vals = np.linalg.norm(delta, axis=-1) ** r  # (P, M)
    flat = vals.mean(axis=0)
    return float(vals.mean()), float(flat.std(ddof=1) / math.sqrt(flat.size))


def holder_moments(b: DriftField, r: float, beta: float, axis: str, *, xs, s: float, t: float,
                   increments: Sequence[float], M: int, dt: float, seed: int, slope_tol: float = 0.1,
                   min_scales: int = 4, experiment_id: str | None = None) -> EstimateReport:
    """Log-log slope of ``E|Delta X|^r`` against the increment on one pair axis.

    ``t``: ``X_{s,t}`` vs ``X_{s,t+h}``; ``s``: ``X_{s,t}`` vs ``X_{s+h,t}``;
    ``x``: ``X_{s,t}^x`` vs ``X_{s,t}^{x+h e_1}``.
    """
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    d = b.d
    hs = np.asarray(sorted(increments), dtype=float)
    moments, ses = [], []
    if axis == "t":
        ens = simulate_flow(b, s, t + hs.max(), xs, M, dt, seed, checkpoints=[t, *(t + hs)])
        base = ens.state_at(t)
        for h in hs:
            m_, se = _moment_stats(ens.state_at(t + h) - base, r)
            moments.append(m_), ses.append(se)
        threshold = beta * r
    elif axis == "s":
        base = simulate_flow(b, s, t, xs, M, dt, seed).states[-1]
        for h in hs:
            other = simulate_flow(b, s + h, t, xs, M, dt, seed).states[-1]
            m_, se = _moment_stats(other - base, r)
            moments.append(m_), ses.append(se)
        threshold = beta * (r - d)
    elif axis == "x":
        e1 = np.zeros(d)
        e1[0] = 1.0
        pts = np.concatenate([xs] + [xs + h * e1 for h in hs])
        ens = simulate_flow(b, s, t, pts, M, dt, seed)
        P = xs.shape[0]
        base = ens.states[-1, :P]
        for j in range(hs.size):
            m_, se = _moment_stats(ens.states[-1, P * (j + 1):P * (j + 2)] - base, r)
            moments.append(m_), ses.append(se)
        threshold = r - d
    else:
        raise DomainError("axis must be 't', 's' or 'x'")
    rows = [{"axis": axis, "increment": h, "moment": mo, "se": se, "log_increment": math.log(h),
             "log_moment": math.log(mo) if mo > 0 else -math.inf} for h, mo, se in zip(hs, moments, ses)]
    rep = EstimateReport(experiment_id or f"holder.{axis}", tolerances={"slope_tol": slope_tol},
                         axis={"axis": axis, "r": r, "beta": beta, "threshold": threshold, "drift": b.tag,
                               "M": M, "dt": dt}, rows=rows, seed=seed)
    if hs.size < min_scales or min(moments) <= 0:
        rep.notes.append("too few increment scales or vanishing moments for a fit")
        return rep.finalize(inconclusive=True)
    fit = fit_loglog(hs, moments)
    rep.fits["moment"] = fit
    rep.measured.update({"slope": fit.slope, "residual": fit.residual})
    rep.checks = {"slope": fit.slope >= threshold - slope_tol * threshold}
    return rep.finalize()


# --------------------------------------------------------------------------

def _frobenius(a: Array) -> Array:
    return np.sqrt(np.sum(a * a, axis=(-2, -1)))


def gradient_moment(b_levels, r: float, p: float, *, xs, cell_volume: float, s: float, times: Sequence[float],
                    M: int, dt: float, seed: int, max_spread: float = 2.0,
                    experiment_id: str = "gradient.moment") -> EstimateReport:
    """``(sum_x (E|grad X_{s,t} - I|^r)^p vol)^{1/(pr)}`` across t and drift levels."""
    if r < 2:
        raise DomainError("gradient moments need r >= 2")
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    times = sorted(times)
    d = xs.shape[1]
    eye = np.eye(d)
    rows, finals, thetas = [], {}, {}
    for label, b in b_levels:
        ens = simulate_flow(b, s, times[-1], xs, M, dt, seed, checkpoints=times)
        J = variational_flow(ens, b).matrices  # (C, P, M, d, d)
        qs = []
        for c, tc in enumerate(times):
            mom = np.mean(_frobenius(J[c] - eye) ** r, axis=1)  # (P,)
            q = float((np.sum(mom**p) * cell_volume) ** (1.0 / (p * r)))
            qs.append(q)
            rows.append({"level": label, "time": tc, "quantity": q})
        finals[label] = qs[-1]
        if all(q > 0 for q in qs) and len(qs) >= 2:
            thetas[label] = fit_loglog(np.asarray(times) - s, qs)
    sp = spread(finals.values())
    rep = EstimateReport(experiment_id, measured={"spread": sp, "quantity_max": max(finals.values())},
                         tolerances={"max_spread": max_spread},
                         axis={"levels": list(finals), "r": r, "p": p, "times": list(times), "M": M, "dt": dt},
                         rows=rows, seed=seed)
    for label, fit in thetas.items():
        rep.fits[f"theta[{label}]"] = fit
    all_zero = all(v == 0 for v in finals.values())
    rep.checks = {"spread": all_zero or sp <= max_spread,
                  "theta_positive": all_zero or (bool(thetas) and all(f.slope > 0 for f in thetas.values()))}
    if all_zero:
        rep.notes.append("quantity vanishes identically")
    return rep.finalize()


# --------------------------------------------------------------------------

def _trapezoid_weights(x: Array) -> Array:
    w = np.zeros_like(x)
    dx = np.diff(x)
    w[:-1] += 0.5 * dx
    w[1:] += 0.5 * dx
    return w


def compactness_statistics(b: DriftField, *, xs, cell_volume: float, s: float, t: float, M: int, dt: float,
                           seed: int, beta: float, fd_h: float, n_sigma: int = 8) -> dict:
    """The three compactness statistics for one drift level."""
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    P, d = xs.shape
    eye = np.eye(d)
    shifted = [xs]
    for h in (fd_h, 0.5 * fd_h):
        for j in range(d):
            shifted += [xs + h * eye[j], xs - h * eye[j]]
    ens = simulate_flow(b, s, t, np.concatenate(shifted), M, dt, seed)
    X = ens.states[-1]
    base = X[:P]

    def fd_grad(offset, h):
        cols = [(X[(offset + 2 * j) * P:(offset + 2 * j + 1) * P] - X[(offset + 2 * j + 1) * P:(offset + 2 * j + 2) * P])
                / (2 * h) for j in range(d)]
        return np.stack(cols, axis=-1)  # (P, M, d, d)

    g1 = fd_grad(1, fd_h)
    g2 = fd_grad(1 + 2 * d, 0.5 * fd_h)
    a1 = float(np.sum(np.mean(np.sum(base**2, -1) + _frobenius(g1) ** 2, axis=1)) * cell_volume)
    a1_grad = float(np.sum(np.mean(_frobenius(g1) ** 2, axis=1)) * cell_volume)
    fd_consistency = float(np.sqrt(np.mean(_frobenius(g1 - g2) ** 2)) / max(np.sqrt(np.mean(_frobenius(g2) ** 2)), 1e-300))
    # Malliavin part on the base points only
    base_ens = FlowEnsemble(ens.drift, ens.s, ens.t, ens.dt, xs, ens.n_paths, ens.seed, ens.checkpoint_times,
                            ens.states[:, :P], periodic=ens.periodic, antithetic=ens.antithetic)
    sig = np.array([round(v / dt) * dt for v in np.linspace(s, t, n_sigma)])
    D = malliavin_derivative(base_ens, b, sig).matrices[-1]  # (S, P, M, d, d)
    w = _trapezoid_weights(sig)
    sq = np.mean(_frobenius(D) ** 2, axis=2)  # (S, P)
    a2 = float(np.sum(w[:, None] * sq) * cell_volume)
    a3 = 0.0
    for i in range(sig.size):
        for j in range(sig.size):
            if i == j:
                continue
            num = np.mean(_frobenius(D[i] - D[j]) ** 2, axis=1)  # (P,)
            a3 += w[i] * w[j] * float(num.sum()) / abs(sig[i] - sig[j]) ** (1 + 2 * beta)
    a3 *= cell_volume
    return {"A1": a1, "A1_grad": a1_grad, "A2": a2, "A3": a3, "fd_consistency": fd_consistency,
            "pairs": sig.size * (sig.size - 1) // 2}


def malliavin_stats(b_levels, *, xs, cell_volume: float, s: float, t: float, M: int, dt: float, seed: int,
                    beta: float = 0.25, fd_h: float = 0.05, n_sigma: int = 8, max_ratio: float = 2.0,
                    experiment_id: str = "malliavin.stats") -> EstimateReport:
    """Compactness statistics per approximation level; pass if each stays within
    ``max_ratio`` of its finest-level value."""
    rows, stats = [], {}
    for label, b in b_levels:
        st = compactness_statistics(b, xs=xs, cell_volume=cell_volume, s=s, t=t, M=M, dt=dt, seed=seed,
                                    beta=beta, fd_h=fd_h, n_sigma=n_sigma)
        stats[label] = st
        rows.append({"level": label, **{k: v for k, v in st.items()}})
    finest = list(stats)[-1]
    rep = EstimateReport(experiment_id, tolerances={"max_ratio": max_ratio},
                         axis={"levels": list(stats), "beta": beta, "fd_h": fd_h, "n_sigma": n_sigma, "M": M,
                               "dt": dt, "window": (s, t)}, rows=rows, seed=seed)
    inconclusive = stats[finest]["pairs"] < 4
    for key in ("A1", "A2", "A3"):
        ref = stats[finest][key]
        vals = [st[key] for st in stats.values()]
        rep.measured[f"{key}_spread"] = spread(vals)
        rep.checks[key] = (max(vals) <= max_ratio * ref) if ref > 0 else max(vals) == 0
    if inconclusive:
        rep.notes.append("sigma grid too coarse for the Holder statistic")
    return rep.finalize(inconclusive=inconclusive)


# --------------------------------------------------------------------------

def cauchy_from_ensembles(labelled: Sequence[tuple], cell_volume: float, *,
                          experiment_id: str = "cauchy.convergence", allowed_inversions: int = 1) -> EstimateReport:
    """Consecutive ``E sum_x |X(k) - X(k')|^2 vol`` for ensembles on a shared grid."""
    ref = labelled[0][1]
    for _, e in labelled[1:]:
        if (e.s, e.t, e.dt, e.seed, e.n_paths, e.antithetic) != (ref.s, ref.t, ref.dt, ref.seed, ref.n_paths,
                                                                  ref.antithetic) \
                or e.xs.shape != ref.xs.shape or not np.array_equal(e.xs, ref.xs):
            raise DomainError("ensembles must share times, step, seed, paths and initial points")
    rows, dists = [], []
    for (k0, e0), (k1, e1) in zip(labelled[:-1], labelled[1:]):
        diff = e1.states[-1] - e0.states[-1]
        dist = float(np.sum(np.mean(np.sum(diff**2, -1), axis=1)) * cell_volume)
        dists.append(dist)
        rows.append({"level": k0, "next_level": k1, "distance": dist})
    inversions = sum(1 for a, b in zip(dists[:-1], dists[1:]) if b > a)
    rep = EstimateReport(experiment_id, measured={"inversions": inversions, "last_distance": dists[-1] if dists else 0.0},
                         tolerances={"allowed_inversions": allowed_inversions},
                         axis={"levels": [k for k, _ in labelled]}, rows=rows, seed=ref.seed)
    rep.checks = {"decreasing": inversions <= allowed_inversions}
    return rep.finalize()


def cauchy_convergence(b: DriftField, levels: Sequence[int], *, xs, cell_volume: float, s: float, t: float,
                       M: int, dt: float, seed: int, truncated: bool = False,
                       experiment_id: str = "cauchy.convergence") -> EstimateReport:
    ens = [(k, simulate_flow(bk, s, t, xs, M, dt, seed)) for k, bk in mollified_levels(b, levels, truncated)]
    return cauchy_from_ensembles(ens, cell_volume, experiment_id=experiment_id)
