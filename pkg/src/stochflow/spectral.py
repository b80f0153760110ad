"""Spectral toolkit on the torus [0, 2*pi)^d.

Arrays store space on the leading ``d`` axes (after an optional time axis)
and vector components last.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

TWO_PI = 2.0 * np.pi


def grid_spacing(n: int) -> float:
    return TWO_PI / n


def grid_nodes(n: int, d: int) -> np.ndarray:
    """Node coordinates, shape ``(n,)*d + (d,)``."""
    x = np.arange(n) * grid_spacing(n)
    return np.stack(np.meshgrid(*([x] * d), indexing="ij"), axis=-1)


def wavenumbers(n: int, d: int) -> list[np.ndarray]:
    """Integer wavenumber arrays, each of shape ``(n,)*d``."""
    k = np.fft.fftfreq(n, 1.0 / n)
    return list(np.meshgrid(*([k] * d), indexing="ij"))


def k_squared(n: int, d: int) -> np.ndarray:
    return sum(k**2 for k in wavenumbers(n, d))


def bessel_symbol(n: int, d: int, s: float) -> np.ndarray:
    """Symbol of (1 - Laplacian)^{s/2} on the torus."""
    return (1.0 + k_squared(n, d)) ** (0.5 * s)


def space_axes(d: int, leading: int = 0) -> tuple[int, ...]:
    return tuple(range(leading, leading + d))


def fft(values: np.ndarray, d: int, leading: int = 0) -> np.ndarray:
    return np.fft.fftn(values, axes=space_axes(d, leading))


def ifft(values_hat: np.ndarray, d: int, leading: int = 0) -> np.ndarray:
    return np.fft.ifftn(values_hat, axes=space_axes(d, leading)).real


def _expand(symbol: np.ndarray, arr: np.ndarray, leading: int) -> np.ndarray:
    # broadcast a (n,)*d symbol against (time?, *grid, comp?) arrays
    shape = (1,) * leading + symbol.shape + (1,) * (arr.ndim - leading - symbol.ndim)
    return symbol.reshape(shape)


def apply_symbol(values: np.ndarray, symbol: np.ndarray, d: int, leading: int = 0) -> np.ndarray:
    hat = fft(values, d, leading)
    return ifft(hat * _expand(symbol, hat, leading), d, leading)


def gradient(values: np.ndarray, d: int) -> np.ndarray:
    """Spectral gradient of a single-time scalar (``(n,)*d``) or vector field.

    For a vector field ``v`` the result ``G`` has ``G[..., i, j] = d_j v_i``.
    Odd derivatives drop the Nyquist mode.
    """
    n = values.shape[0]
    ks = _odd_wavenumbers(n, d)
    hat = fft(values, d)
    parts = [ifft(hat * _expand(1j * k, hat, 0), d) for k in ks]
    return np.stack(parts, axis=-1)


def _odd_wavenumbers(n: int, d: int) -> list[np.ndarray]:
    ks = wavenumbers(n, d)
    if n % 2 == 0:
        ks = [np.where(np.abs(k) == n // 2, 0.0, k) for k in ks]
    return ks


def divergence(v: np.ndarray, d: int) -> np.ndarray:
    n = v.shape[0]
    ks = _odd_wavenumbers(n, d)
    hat = fft(v, d)
    return ifft(sum(1j * ks[j] * hat[..., j] for j in range(d)), d)


def laplacian(values: np.ndarray, d: int) -> np.ndarray:
    n = values.shape[0]
    return apply_symbol(values, -k_squared(n, d), d)


def dealias_mask(n: int, d: int) -> np.ndarray:
    """Two-thirds rule: keep modes with every |k_i| < n/3."""
    return np.logical_and.reduce([np.abs(k) < n / 3.0 for k in wavenumbers(n, d)])


def high_mode_fraction(values: np.ndarray, d: int, leading: int = 0) -> float:
    """Share of spectral energy in the top third of the resolved band."""
    n = values.shape[leading]
    hat = np.abs(fft(values, d, leading)) ** 2
    total = hat.sum()
    if total == 0.0:
        return 0.0
    mask = _expand(~dealias_mask(n, d), hat, leading)
    return float((hat * mask).sum() / total)


def interpolate(values: np.ndarray, points: np.ndarray, d: int) -> np.ndarray:
    """Trigonometric interpolant of a single-time grid field at arbitrary points.

    Exact for band-limited data; the Nyquist mode is read symmetrically.
    """
    n = values.shape[0]
    pts = np.atleast_2d(points)
    hat = fft(values, d) / n**d
    k1 = np.fft.fftfreq(n, 1.0 / n)
    # separable evaluation: contract one axis at a time
    out = hat
    for axis in range(d):
        phase = np.exp(1j * np.outer(pts[:, axis], k1))  # (P, n)
        if axis == 0:
            out = np.tensordot(phase, out, axes=([1], [0]))  # (P, n, ..., comp)
        else:
            out = np.einsum("pk,pk...->p...", phase, out)
    return out.real


def refine(values: np.ndarray, factor: int, d: int) -> np.ndarray:
    """Spectral zero-padding of a single-time field onto an n*factor grid."""
    n = values.shape[0]
    big = n * factor
    hat = fft(values, d)
    for axis in range(d):
        hat = _pad_axis(hat, axis, n, big)
    return ifft(hat, d) * factor**d


def _pad_axis(hat: np.ndarray, axis: int, n: int, big: int) -> np.ndarray:
    shape = list(hat.shape)
    shape[axis] = big
    out = np.zeros(shape, dtype=complex)
    half = n // 2
    src = [slice(None)] * hat.ndim
    dst = [slice(None)] * hat.ndim
    src[axis] = slice(0, half + (n % 2))
    dst[axis] = slice(0, half + (n % 2))
    out[tuple(dst)] = hat[tuple(src)]
    src[axis] = slice(n - half + (0 if n % 2 else 1), n)
    dst[axis] = slice(big - half + (0 if n % 2 else 1), big)
    out[tuple(dst)] = hat[tuple(src)]
    if n % 2 == 0:
        # split the Nyquist coefficient between +n/2 and -n/2
        src[axis] = slice(half, half + 1)
        ny = hat[tuple(src)] * 0.5
        dst[axis] = slice(half, half + 1)
        out[tuple(dst)] = ny
        dst[axis] = slice(big - half, big - half + 1)
        out[tuple(dst)] = ny
    return out


@dataclass
class PeriodicField:
    """Scalar or vector field on a periodic grid at a set of stored times.

    ``values`` has shape ``(nt,) + (n,)*d`` for scalars and an extra trailing
    component axis for vectors.
    """

    values: np.ndarray
    times: np.ndarray
    d: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        if self.values.shape[0] != self.times.size:
            raise ValueError("values and times disagree on the number of samples")
        if self.values.ndim not in (1 + self.d, 2 + self.d):
            raise ValueError("values must be (nt, *grid) or (nt, *grid, comp)")

    @classmethod
    def single(cls, values: np.ndarray, d: int, time: float = 0.0) -> "PeriodicField":
        return cls(np.asarray(values)[None], np.array([time]), d)

    @property
    def n(self) -> int:
        return self.values.shape[1]

    @property
    def is_vector(self) -> bool:
        return self.values.ndim == 2 + self.d

    @property
    def spacing(self) -> float:
        return grid_spacing(self.n)

    @cached_property
    def spectral(self) -> np.ndarray:
        return fft(self.values, self.d, leading=1)

    def snapshot(self, i: int = -1) -> np.ndarray:
        return self.values[i]

    def interpolate(self, points: np.ndarray, i: int = -1) -> np.ndarray:
        return interpolate(self.values[i], points, self.d)

    def roundtrip_error(self) -> float:
        back = np.fft.ifftn(self.spectral, axes=space_axes(self.d, 1))
        scale = max(np.abs(self.values).max(), 1e-300)
        return float(np.abs(back - self.values).max() / scale)

    def imag_residue(self) -> float:
        back = np.fft.ifftn(self.spectral, axes=space_axes(self.d, 1))
        scale = max(np.abs(self.values).max(), 1e-300)
        return float(np.abs(back.imag).max() / scale)
