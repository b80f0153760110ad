"""Drift fields, test functions, mollification and truncation.

Fields are evaluated with ``field(t, x)`` where ``x`` has shape ``(..., d)``.
Vector fields return ``(..., d)``; gradients return ``(..., d, d)`` with
``G[..., i, j] = d_j b_i``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, special
from scipy.interpolate import CubicHermiteSpline

from .errors import CapabilityError, DataError, DomainError
from .norms import MixedNormSpec, mixed_norm, spatial_norms
from .spectral import TWO_PI, divergence, fft, grid_nodes, ifft, wavenumbers

Array = np.ndarray


def sphere_area(d: int) -> float:
    """Surface area of the unit sphere in R^d."""
    return 2.0 * math.pi ** (d / 2) / math.gamma(d / 2)


def wrap(y: Array) -> Array:
    """Minimal-image displacement on the torus, in [-pi, pi)."""
    return (y + math.pi) % TWO_PI - math.pi


# --------------------------------------------------------------------------
# mollifier

def _bump(s: Array) -> Array:
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


def _bump_dlog_over_s(s: Array) -> Array:
    """(d/ds log bump)(s) / s = -2 / (1 - s^2)^2, finite at s = 0."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = s < 1.0
    out[inside] = -2.0 / (1.0 - s[inside] ** 2) ** 2
    return out


@lru_cache(maxsize=None)
def _bump_mass_constant(d: int) -> float:
    val, _ = integrate.quad(lambda r: math.exp(-1.0 / (1.0 - r * r)) * r ** (d - 1), 0.0, 1.0,
                            epsabs=1e-15, epsrel=1e-13, limit=200)
    return 1.0 / (sphere_area(d) * val)


_GL_X, _GL_W = np.polynomial.legendre.leggauss(128)
_GL_R = 0.5 * (_GL_X + 1.0)
_GL_RW = 0.5 * _GL_W


@lru_cache(maxsize=None)
def _unit_transform_table(d: int) -> tuple[Array, Array]:
    # transform of the unit-scale kernel on a radial frequency grid
    xi = np.linspace(0.0, 400.0, 40001)
    vals = _hankel(xi, d)
    return xi, vals


def _hankel(xi: Array, d: int) -> Array:
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    c = _bump_mass_constant(d)
    rho = c * _bump(_GL_R)
    nu = d / 2 - 1
    out = np.ones_like(xi)
    nz = xi > 1e-12
    z = np.outer(xi[nz], _GL_R)
    integrand = rho * special.jv(nu, z) * _GL_R ** (d / 2)
    out[nz] = (TWO_PI ** (d / 2)) * xi[nz] ** (1 - d / 2) * (integrand @ _GL_RW)
    return out


@dataclass(frozen=True)
class MollifierKernel:
    """The normalized bump ``rho`` rescaled as ``rho_m(x) = m^d rho(m x)``."""

    m: int
    d: int

    def __post_init__(self):
        if self.m < 1:
            raise DomainError("mollifier scale must be >= 1")

    @property
    def support_radius(self) -> float:
        return 1.0 / self.m

    def radial(self, r: Array) -> Array:
        c = _bump_mass_constant(self.d)
        return self.m**self.d * c * _bump(self.m * np.asarray(r, dtype=float))

    def radial_derivative_over_r(self, r: Array) -> Array:
        """rho_m'(r) / r, smooth through r = 0."""
        s = self.m * np.asarray(r, dtype=float)
        c = _bump_mass_constant(self.d)
        return self.m ** (self.d + 2) * c * _bump(s) * _bump_dlog_over_s(s)

    def __call__(self, x: Array) -> Array:
        return self.radial(np.linalg.norm(x, axis=-1))

    def gradient(self, x: Array) -> Array:
        r = np.linalg.norm(x, axis=-1)
        return self.radial_derivative_over_r(r)[..., None] * x

    def transform(self, k: Array) -> Array:
        """Fourier transform ``int rho_m(x) exp(-i k.x) dx`` as a function of |k|."""
        kk = np.asarray(k, dtype=float) / self.m
        xi, vals = _unit_transform_table(self.d)
        inside = kk <= xi[-1]
        out = np.empty_like(kk)
        # table lookup with exact evaluation off-table
        out[inside] = _hankel(kk[inside], self.d) if kk[inside].size < 64 else np.interp(kk[inside], xi, vals)
        if (~inside).any():
            out[~inside] = _hankel(kk[~inside], self.d)
        return out

    def transform_exact(self, k: Array) -> Array:
        return _hankel(np.asarray(k, dtype=float).ravel() / self.m, self.d).reshape(np.shape(k))


def mollify_grid(values: Array, m: int, d: int, leading: int = 0) -> Array:
    """Spectral convolution of grid data with ``rho_m`` (exact in mode space)."""
    n = values.shape[leading]
    ks = wavenumbers(n, d)
    kn = np.sqrt(sum(k**2 for k in ks))
    uniq, inv = np.unique(kn, return_inverse=True)
    sym = MollifierKernel(m, d).transform_exact(uniq)[inv].reshape(kn.shape)
    hat = fft(values, d, leading)
    shape = (1,) * leading + sym.shape + (1,) * (hat.ndim - leading - d)
    return ifft(hat * sym.reshape(shape), d, leading)


# --------------------------------------------------------------------------
# trigonometric polynomials

@dataclass(frozen=True, eq=False)
class TrigModes:
    """Real trigonometric polynomial ``sum_j a_j cos(k_j.x) + c_j sin(k_j.x)``.

    ``ks`` is ``(K, d)``; ``a`` and ``c`` are ``(K, comp)``.
    """

    ks: Array
    a: Array
    c: Array

    @classmethod
    def from_function(cls, f: Callable[[Array], Array], d: int, n: int = 8, tol: float = 1e-12):
        x = grid_nodes(n, d)
        vals = np.asarray(f(x), dtype=float)
        if vals.ndim == d:
            vals = vals[..., None]
        hat = fft(vals, d) / n**d
        ks_all = np.stack([k.ravel() for k in wavenumbers(n, d)], axis=1)
        flat = hat.reshape(-1, vals.shape[-1])
        ks, a, c = [], [], []
        for idx, k in enumerate(ks_all):
            if not _in_half_space(k):
                continue
            coef = flat[idx]
            if np.abs(coef).max() < tol:
                continue
            scale = 1.0 if not k.any() else 2.0
            ks.append(k)
            a.append(scale * coef.real)
            c.append(-scale * coef.imag)
        comp = vals.shape[-1]
        return cls(np.array(ks, dtype=float).reshape(-1, d),
                   np.array(a).reshape(-1, comp), np.array(c).reshape(-1, comp))

    def value(self, x: Array) -> Array:
        ph = x @ self.ks.T
        return np.cos(ph) @ self.a + np.sin(ph) @ self.c

    def gradient(self, x: Array) -> Array:
        ph = x @ self.ks.T
        w = np.einsum("...j,ji->...ji", -np.sin(ph), self.a) + np.einsum("...j,ji->...ji", np.cos(ph), self.c)
        return np.einsum("...ji,jl->...il", w, self.ks)

    def scaled(self, factors: Array) -> "TrigModes":
        return TrigModes(self.ks, self.a * factors[:, None], self.c * factors[:, None])


def _in_half_space(k: Array) -> bool:
    for v in k:
        if v > 0:
            return True
        if v < 0:
            return False
    return True  # zero mode


# --------------------------------------------------------------------------
# radial profiles (the singular family and its truncations)

def _h(t: Array) -> Array:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos])
    return out


def _dh(t: Array) -> Array:
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    pos = t > 0
    out[pos] = np.exp(-1.0 / t[pos]) / t[pos] ** 2
    return out


def cutoff(r: Array) -> Array:
    """Smooth radial cutoff: 1 on r <= 1, 0 on r >= 2."""
    a, b = _h(2.0 - r), _h(np.asarray(r) - 1.0)
    return a / (a + b)


def cutoff_derivative(r: Array) -> Array:
    r = np.asarray(r, dtype=float)
    a, b = _h(2.0 - r), _h(r - 1.0)
    da, db = -_dh(2.0 - r), _dh(r - 1.0)
    return (da * b - a * db) / (a + b) ** 2


@dataclass(frozen=True)
class RadialProfile:
    """``b(x) = phi(|y|) y/|y|`` with ``y`` the (wrapped) offset from ``center``.

    ``phi(r) = cutoff(r) r^-gamma``, optionally zeroed where it exceeds ``cap``.
    """

    gamma: float
    center: tuple[float, ...]
    cap: float = math.inf
    support: float = 2.0

    def phi(self, r: Array) -> Array:
        r = np.asarray(r, dtype=float)
        with np.errstate(divide="ignore"):
            out = np.where(r > 0, cutoff(r) * np.where(r > 0, r, 1.0) ** (-self.gamma), 0.0)
        if math.isfinite(self.cap):
            out = np.where(out <= self.cap, out, 0.0)
        return out

    def dphi(self, r: Array) -> Array:
        r = np.asarray(r, dtype=float)
        rs = np.where(r > 0, r, 1.0)
        out = cutoff_derivative(r) * rs ** (-self.gamma) - self.gamma * cutoff(r) * rs ** (-self.gamma - 1)
        out = np.where(r > 0, out, 0.0)
        if math.isfinite(self.cap):
            out = np.where(self.phi(r) > 0, out, 0.0)
        return out

    def breakpoints(self) -> list[float]:
        if not math.isfinite(self.cap) or self.cap <= 0:
            return []
        # phi is decreasing on (0, 2); locate phi = cap
        f = lambda r: float(self.phi_uncapped(r)) - self.cap
        hi = self.support
        if f(hi - 1e-12) > 0:
            return []
        return [float(_bisect(f, 1e-16, hi - 1e-12))]

    def phi_uncapped(self, r):
        return replace(self, cap=math.inf).phi(r)

    def capped(self, m: float) -> "RadialProfile":
        return replace(self, cap=min(self.cap, m))


def _bisect(f, lo, hi, iters=200):
    flo = f(lo)
    for _ in range(iters):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
    return 0.5 * (lo + hi)


def _offset(center, periodic, x):
    y = x - center
    if periodic:
        y = wrap(y)
    r = np.linalg.norm(y, axis=-1)
    safe = np.where(r > 0, r, 1.0)
    return y, r, safe


class _RadialField:
    """Value and gradient of ``psi(|y|) y/|y|`` for a tabulated or analytic psi."""

    def __init__(self, psi, dpsi, center, periodic, dpsi0=None):
        self.psi, self.dpsi = psi, dpsi
        self.center = np.asarray(center, dtype=float)
        self.periodic = periodic
        self.dpsi0 = dpsi0

    def value(self, t, x):
        y, r, safe = _offset(self.center, self.periodic, x)
        return (np.where(r > 0, self.psi(r) / safe, 0.0))[..., None] * y

    def gradient(self, t, x):
        y, r, safe = _offset(self.center, self.periodic, x)
        d = y.shape[-1]
        e = y / safe[..., None]
        small = r < 1e-12
        psi_over_r = np.where(small, 0.0, self.psi(r) / safe)
        dpsi = self.dpsi(r)
        if self.dpsi0 is not None:
            psi_over_r = np.where(small, self.dpsi0, psi_over_r)
            dpsi = np.where(small, self.dpsi0, dpsi)
        eye = np.eye(d)
        ee = e[..., :, None] * e[..., None, :]
        return dpsi[..., None, None] * ee + psi_over_r[..., None, None] * (eye - ee)


@lru_cache(maxsize=64)
def _radial_mollified_table(profile: RadialProfile, d: int, m: int, n_nodes: int = 48):
    """Tabulate psi_m = radial profile of the mollified field and its derivative."""
    eps = 1.0 / m
    rmax = profile.support + eps
    fine = np.linspace(0.0, 4.0 * eps, 257)
    coarse_n = max(int(math.ceil((rmax - 4.0 * eps) / 2e-3)), 2)
    coarse = np.linspace(4.0 * eps, rmax, coarse_n + 1)[1:]
    r = np.concatenate([fine, coarse])
    psi, dpsi = _radial_convolve(profile, d, m, r, n_nodes)
    return r, psi, dpsi


def _radial_convolve(profile: RadialProfile, d: int, m: int, rs: Array, n_nodes: int):
    kern = MollifierKernel(m, d)
    eps = kern.support_radius
    gx, gw = np.polynomial.legendre.leggauss(n_nodes)
    u, uw = 0.5 * (gx + 1.0), 0.5 * gw
    area = sphere_area(d - 1) if d > 1 else 1.0
    psi = np.zeros_like(rs)
    dpsi = np.zeros_like(rs)
    brk = profile.breakpoints()
    for i, r in enumerate(rs):
        edges = [max(0.0, r - eps)]
        if r < eps:
            edges.append(eps - r)
        edges.append(r + eps)
        edges = sorted(set(edges + [b for b in brk if edges[0] < b < edges[-1]]))
        tot, dtot = 0.0, 0.0
        for a, b in zip(edges[:-1], edges[1:]):
            if b - a <= 0:
                continue
            if a == 0.0:
                # rho = b * s^2 clusters nodes at the origin singularity
                rho = (b - a) * u**2
                wr = (b - a) * 2.0 * u * uw
            else:
                rho = a + (b - a) * u
                wr = (b - a) * uw
            if r > 0:
                cmax = np.clip((r * r + rho * rho - eps * eps) / (2.0 * r * np.maximum(rho, 1e-300)), -1.0, 1.0)
                tmax = np.arccos(cmax)
            else:
                tmax = np.where(rho < eps, math.pi, 0.0)
            theta = tmax[:, None] * u[None, :]
            wt = tmax[:, None] * uw[None, :]
            ct, st = np.cos(theta), np.sin(theta)
            D2 = np.maximum(r * r + rho[:, None] ** 2 - 2.0 * r * rho[:, None] * ct, 0.0)
            D = np.sqrt(D2)
            ang = ct * st ** (d - 2) * wt
            rad = profile.phi(rho) * rho ** (d - 1) * wr
            k0 = kern.radial(D)
            k1 = kern.radial_derivative_over_r(D) * (r - rho[:, None] * ct)
            tot += float(rad @ (k0 * ang).sum(axis=1))
            dtot += float(rad @ (k1 * ang).sum(axis=1))
        psi[i] = area * tot
        dpsi[i] = area * dtot
    return psi, dpsi


# --------------------------------------------------------------------------
# drift fields

@dataclass(frozen=True, eq=False)
class DriftField:
    """Time-dependent vector field with optional analytic gradient and lineage."""

    d: int
    name: str
    value_fn: Callable[[float, Array], Array]
    grad_fn: Callable[[float, Array], Array] | None = None
    smooth: bool = True
    lineage: tuple = ("base",)
    params: dict = field(default_factory=dict)
    div_free: bool = False
    time_dependent: bool = False
    periodic: bool = True
    modes: TrigModes | None = None
    radial: RadialProfile | None = None
    affine: bool = False

    def __call__(self, t: float, x: Array) -> Array:
        return self.value_fn(t, np.asarray(x, dtype=float))

    def gradient(self, t: float, x: Array) -> Array:
        if self.grad_fn is None:
            raise CapabilityError(f"drift {self.tag} has no gradient")
        return self.grad_fn(t, np.asarray(x, dtype=float))

    @property
    def has_gradient(self) -> bool:
        return self.grad_fn is not None

    @property
    def tag(self) -> str:
        parts = [self.name] + [f"{kind}({lvl:g})" for kind, lvl in self.lineage[1:]]
        return "/".join(parts)

    def sample(self, n: int, t: float = 0.0) -> Array:
        """Values on the ``n^d`` torus grid, shape ``(n,)*d + (d,)``."""
        return self(t, grid_nodes(n, self.d))


def certify_divergence_free(b: DriftField, n: int = 32, t: float = 0.0, tol: float = 1e-10) -> bool:
    vals = b.sample(n, t)
    scale = max(np.abs(vals).max(), 1e-300) * (n / 2)
    return bool(np.abs(divergence(vals, b.d)).max() <= tol * scale)


def _trig_field(name, d, modes: TrigModes, params, div_free=False) -> DriftField:
    return DriftField(d=d, name=name, value_fn=lambda t, x: modes.value(x),
                      grad_fn=lambda t, x: modes.gradient(x), params=params,
                      div_free=div_free, modes=modes)


def _affine_field(name, d, A, c, params, periodic=False) -> DriftField:
    A = np.asarray(A, dtype=float)
    c = np.asarray(c, dtype=float)

    if periodic:
        center = np.asarray(params.get("center", np.full(d, math.pi)))

        def val(t, x):
            return wrap(x - center) @ A.T

        def grad(t, x):
            return np.broadcast_to(A, x.shape[:-1] + (d, d)).copy()

        return DriftField(d=d, name=name, value_fn=val, grad_fn=grad, params=params, periodic=True)

    def val(t, x):
        return x @ A.T + c

    def grad(t, x):
        return np.broadcast_to(A, x.shape[:-1] + (d, d)).copy()

    return DriftField(d=d, name=name, value_fn=val, grad_fn=grad, params=params,
                      periodic=False, affine=True)


def taylor_green_velocity(x: Array) -> Array:
    d = x.shape[-1]
    if d == 2:
        return np.stack([np.cos(x[..., 0]) * np.sin(x[..., 1]),
                         -np.sin(x[..., 0]) * np.cos(x[..., 1])], axis=-1)
    c3 = np.cos(x[..., 2])
    return np.stack([np.sin(x[..., 0]) * np.cos(x[..., 1]) * c3,
                     -np.cos(x[..., 0]) * np.sin(x[..., 1]) * c3,
                     np.zeros_like(c3)] + [np.zeros_like(c3)] * (d - 3), axis=-1)


def singular_drift(d: int, gamma: float = 0.5, center=None) -> DriftField:
    """``cutoff(|y|) y/|y|^{1+gamma}`` around ``center`` (default: torus middle)."""
    if not 0.0 < gamma < 1.0:
        raise DomainError("singular family needs gamma in (0, 1)")
    center = tuple(np.full(d, math.pi) if center is None else np.asarray(center, dtype=float))
    prof = RadialProfile(float(gamma), center)
    rf = _RadialField(prof.phi, prof.dphi, center, True)
    return DriftField(d=d, name="singular", value_fn=rf.value, grad_fn=rf.gradient, smooth=False,
                      params={"gamma": gamma}, radial=prof)


DRIFT_CATALOG = ("zero", "constant", "linear", "ou", "shear", "taylor_green", "cosine", "singular")


def make_drift(name: str, d: int = 3, **params) -> DriftField:
    """Catalog constructor, addressable by string id from configs."""
    if name == "zero":
        return _trig_field("zero", d, TrigModes(np.zeros((0, d)), np.zeros((0, d)), np.zeros((0, d))),
                           params, div_free=True)
    if name == "constant":
        v = np.broadcast_to(np.asarray(params.get("value", 1.0), dtype=float), (d,)).copy()
        f = _affine_field("constant", d, np.zeros((d, d)), v, {"value": v.tolist()})
        return replace(f, div_free=True, periodic=True)
    if name == "linear":
        A = np.asarray(params["A"], dtype=float)
        return _affine_field("linear", d, A, np.zeros(d), {"A": A.tolist()})
    if name == "ou":
        rate = float(params.get("rate", 1.0))
        periodic = bool(params.get("periodic", False))
        if periodic:
            center = np.asarray(params.get("center", np.full(d, math.pi)), dtype=float)
            return _affine_field("ou", d, -rate * np.eye(d), np.zeros(d),
                                 {"rate": rate, "periodic": True, "center": center.tolist()}, periodic=True)
        center = np.asarray(params.get("center", np.zeros(d)), dtype=float)
        return _affine_field("ou", d, -rate * np.eye(d), rate * center,
                             {"rate": rate, "periodic": False, "center": center.tolist()})
    if name == "shear":
        amp = float(params.get("amplitude", 1.0))
        modes = TrigModes.from_function(
            lambda x: np.stack([amp * np.sin(x[..., 1])] + [np.zeros(x.shape[:-1])] * (d - 1), axis=-1), d)
        return _trig_field("shear", d, modes, {"amplitude": amp}, div_free=True)
    if name == "taylor_green":
        amp = float(params.get("amplitude", 1.0))
        modes = TrigModes.from_function(lambda x: amp * taylor_green_velocity(x), d)
        return _trig_field("taylor_green", d, modes, {"amplitude": amp}, div_free=True)
    if name == "cosine":
        k = np.asarray(params.get("k", [1] + [0] * (d - 1)), dtype=float)
        comp = int(params.get("component", 0))
        amp = float(params.get("amplitude", 1.0))
        a = np.zeros((1, d))
        a[0, comp] = amp
        modes = TrigModes(k[None, :], a, np.zeros((1, d)))
        return _trig_field("cosine", d, modes, {"k": k.tolist(), "component": comp, "amplitude": amp})
    if name == "singular":
        return singular_drift(d, float(params.get("gamma", 0.5)), params.get("center"))
    raise DomainError(f"unknown drift '{name}'; catalog: {', '.join(DRIFT_CATALOG)}")


# --------------------------------------------------------------------------
# mollification and truncation

def mollify(b: DriftField, m: int, *, quad_nodes: int | None = None) -> DriftField:
    """``b * rho_m`` with an analytic gradient obtained from the kernel."""
    if m < 1:
        raise DomainError("mollification level must be >= 1")
    lineage = b.lineage + (("mollified", m),)
    if b.affine:
        # symmetric unit-mass kernel reproduces affine maps exactly
        return replace(b, lineage=lineage)
    if b.modes is not None:
        kern = MollifierKernel(m, b.d)
        factors = kern.transform_exact(np.linalg.norm(b.modes.ks, axis=1))
        modes = b.modes.scaled(factors)
        return replace(b, value_fn=lambda t, x: modes.value(x), grad_fn=lambda t, x: modes.gradient(x),
                       modes=modes, lineage=lineage, smooth=True)
    if b.radial is not None and not b.time_dependent:
        r, psi, dpsi = _radial_mollified_table(b.radial, b.d, int(m))
        spline = CubicHermiteSpline(r, psi, dpsi, extrapolate=False)
        dspline = spline.derivative()
        rmax = r[-1]
        f = lambda rr: np.where(rr < rmax, np.nan_to_num(spline(np.minimum(rr, rmax))), 0.0)
        df = lambda rr: np.where(rr < rmax, np.nan_to_num(dspline(np.minimum(rr, rmax))), 0.0)
        rf = _RadialField(f, df, b.radial.center, True, dpsi0=float(dpsi[0]))
        return replace(b, value_fn=rf.value, grad_fn=rf.gradient, lineage=lineage, smooth=True,
                       radial=None, params={**b.params, "table": (r, psi, dpsi)})
    return _quadrature_mollify(b, m, lineage, quad_nodes)


def radial_table(b: DriftField) -> tuple[Array, Array, Array]:
    """(r, psi, dpsi) of a radially mollified field."""
    if "table" not in b.params:
        raise CapabilityError("not a radially mollified field")
    return b.params["table"]


def _quadrature_mollify(b: DriftField, m: int, lineage, quad_nodes) -> DriftField:
    d = b.d
    nq = quad_nodes or (16 if d <= 2 else 10)
    kern = MollifierKernel(m, d)
    h = 2.0 / (m * nq)
    g1 = -1.0 / m + h * (np.arange(nq) + 0.5)
    y = np.stack(np.meshgrid(*([g1] * d), indexing="ij"), axis=-1).reshape(-1, d)
    w = kern(y)
    keep = w > 0
    y, w = y[keep], w[keep]
    scale = 1.0 / w.sum()
    wv = w * scale
    wg = kern.gradient(y) * scale  # (Q, d)

    def val(t, x):
        x = np.asarray(x, dtype=float)
        pts = x[..., None, :] - y  # (..., Q, d)
        return np.einsum("...qi,q->...i", b(t, pts), wv)

    def grad(t, x):
        x = np.asarray(x, dtype=float)
        pts = x[..., None, :] - y
        return np.einsum("...qi,qj->...ij", b(t, pts), wg)

    return replace(b, value_fn=val, grad_fn=grad, lineage=lineage, smooth=True, radial=None,
                   modes=None, affine=False)


def truncate(b: DriftField, m: float) -> DriftField:
    """``b 1_{|b| <= m}``: values with norm above ``m`` are zeroed."""
    if not m > 0:
        raise DomainError("truncation level must be positive")
    base_val, base_grad = b.value_fn, b.grad_fn

    def val(t, x):
        v = base_val(t, x)
        keep = np.linalg.norm(v, axis=-1) <= m
        return np.where(keep[..., None], v, 0.0)

    grad = None
    if base_grad is not None:
        def grad(t, x):
            keep = np.linalg.norm(base_val(t, x), axis=-1) <= m
            return np.where(keep[..., None, None], base_grad(t, x), 0.0)

    radial = b.radial.capped(m) if b.radial is not None else None
    return replace(b, value_fn=val, grad_fn=grad, smooth=False, radial=radial, modes=None,
                   affine=False, div_free=False, lineage=b.lineage + (("truncated", m),))


# --------------------------------------------------------------------------
# remainder functionals

def _radial_integral(fun, d: int, rmax: float, brk=()) -> float:
    pts = sorted({0.0, *[b for b in brk if 0 < b < rmax], rmax})
    total = 0.0
    for a, b in zip(pts[:-1], pts[1:]):
        val, _ = integrate.quad(lambda r: fun(np.array([r]))[0] * r ** (d - 1), a, b, limit=400,
                                epsabs=1e-13, epsrel=1e-10)
        total += val
    return sphere_area(d) * total


def _sampled_lp(b: DriftField, n: int, times, p: float) -> Array:
    vals = np.stack([b.sample(n, t) for t in times])
    if not np.all(np.isfinite(vals)):
        raise DataError("non-integrable (non-finite) drift samples")
    return vals


def remainder_K(b: DriftField, m: int, spec: MixedNormSpec, *, n: int = 32,
                times=(0.0,)) -> float:
    """``sup_t ||b(t) - b(t)*rho_m||_{L^d}``."""
    if spec.p != spec.d or not math.isinf(spec.q):
        raise DomainError("the K remainder is measured in L^d in space and L^inf in time")
    if b.affine or (b.modes is not None and b.modes.ks.size and not np.abs(b.modes.ks).any()):
        return 0.0
    if b.radial is not None and not b.time_dependent:
        r, psi, dpsi = _radial_mollified_table(b.radial, b.d, int(m))
        spline = CubicHermiteSpline(r, psi, dpsi, extrapolate=False)
        prof = b.radial
        diff = lambda rr: np.abs(prof.phi(rr) - np.nan_to_num(spline(np.minimum(rr, r[-1])))) ** b.d
        brk = [1.0 / m, 2.0 / m, *prof.breakpoints()]
        return _radial_integral(diff, b.d, r[-1], brk) ** (1.0 / b.d)
    vals = _sampled_lp(b, n, times, spec.p)
    smooth = mollify_grid(vals, m, b.d, leading=1)
    return float(spatial_norms(vals - smooth, b.d, spec.p).max())


def remainder_K_truncation(b: DriftField, m: float, spec: MixedNormSpec, window=(0.0, 1.0), *,
                           n: int = 32, nt: int = 9) -> float:
    """``||b - b 1_{|b|<=m}||`` in the mixed norm of ``spec`` over ``window``."""
    S, T = window
    if b.radial is not None and not b.time_dependent:
        prof = b.radial
        tail = lambda rr: np.where(prof.phi(rr) > m, prof.phi(rr), 0.0) ** spec.p
        brk = replace(prof, cap=m).breakpoints()
        if math.isinf(spec.p):
            raise DomainError("sup-norm remainder of a singular field is infinite")
        space = _radial_integral(tail, b.d, prof.support, brk) ** (1.0 / spec.p)
        return space * (T - S) ** (1.0 / spec.q if math.isfinite(spec.q) else 0.0)
    times = np.linspace(S, T, nt)
    vals = _sampled_lp(b, n, times, spec.p)
    norms = np.linalg.norm(vals, axis=-1)
    rem = np.where((norms > m)[..., None], vals, 0.0)
    return mixed_norm(rem, spec, window, times)


def time_modulus(b: DriftField, delta: float, spec: MixedNormSpec, window=(0.0, 1.0), *,
                 n: int = 32, nt: int = 33) -> float:
    """``sup_S ||b||_{L^p_q(S, S+delta)}`` over start times inside ``window``."""
    if not b.time_dependent:
        if b.radial is not None:
            prof = b.radial
            space = _radial_integral(lambda rr: prof.phi(rr) ** spec.p, b.d, prof.support,
                                     prof.breakpoints()) ** (1.0 / spec.p)
        else:
            space = float(spatial_norms(b.sample(n)[None], b.d, spec.p)[0])
        return space * (delta ** (1.0 / spec.q) if math.isfinite(spec.q) else 1.0)
    S, T = window
    starts = np.linspace(S, T - delta, nt)
    best = 0.0
    for s0 in starts:
        times = np.linspace(s0, s0 + delta, 9)
        vals = np.stack([b.sample(n, t) for t in times])
        best = max(best, mixed_norm(vals, spec, (s0, s0 + delta), times))
    return best


# --------------------------------------------------------------------------
# maximal function

def _offset_distances(n: int, d: int) -> Array:
    off = np.minimum(np.arange(n), n - np.arange(n)).astype(float)
    grids = np.meshgrid(*([off] * d), indexing="ij")
    return np.sqrt(sum(g**2 for g in grids)) * (TWO_PI / n)


def dyadic_radii(n: int) -> Array:
    h = TWO_PI / n
    radii = [0.0]
    r = h
    while r <= math.pi * math.sqrt(3) + 1e-12:
        radii.append(r)
        r *= 2.0
    return np.array(radii)


def ball_average(values: Array, radius: float, d: int) -> Array:
    """Average of ``values`` over periodic balls of the given radius around every node."""
    n = values.shape[0]
    dist = _offset_distances(n, d)
    ball = (dist <= radius * (1 + 1e-12)).astype(float)
    ball /= ball.sum()
    # the ball is symmetric, so correlation and convolution agree
    return ifft(fft(values, d) * fft(ball, d), d)


def maximal_function(values: Array, d: int) -> Array:
    """Discrete Hardy-Littlewood maximal function over dyadic ball radii."""
    a = np.abs(values) if values.ndim == d else np.linalg.norm(values, axis=-1)
    out = a.copy()
    for r in dyadic_radii(a.shape[0])[1:]:
        out = np.maximum(out, ball_average(a, r, d))
    return out
