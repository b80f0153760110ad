"""Mixed space-time Lebesgue norms and the criticality index."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DataError, DomainError
from .spectral import TWO_PI

INF = math.inf


def _recip(x: float) -> float:
    return 0.0 if math.isinf(x) else 1.0 / x


@dataclass(frozen=True)
class MixedNormSpec:
    """Exponents of the space ``H^{s,p}_q``: d space dims, p in space, q in time."""

    d: int
    p: float
    q: float
    s: float = 0.0

    def __post_init__(self):
        if int(self.d) != self.d or self.d < 1:
            raise DomainError(f"dimension must be a positive integer, got {self.d}")
        for name in ("p", "q"):
            v = float(getattr(self, name))
            if math.isnan(v) or v <= 1.0:
                raise DomainError(f"{name} must lie in (1, inf], got {v}")
        if not math.isfinite(self.s):
            raise DomainError("derivative order must be finite")

    @property
    def kappa(self) -> float:
        return 1.0 - self.d * _recip(self.p) - 2.0 * _recip(self.q)

    @property
    def scaling(self) -> float:
        """d/p + 2/q."""
        return self.d * _recip(self.p) + 2.0 * _recip(self.q)

    def with_order(self, s: float) -> "MixedNormSpec":
        return MixedNormSpec(self.d, self.p, self.q, s)


class LPSIndex(NamedTuple):
    kappa: float
    label: str
    aliases: tuple[str, ...]


# Both names circulate for the regime kappa > 0; report them side by side.
_ALIASES = {
    "above-critical": ("supercritical", "subcritical"),
    "critical": ("critical",),
    "below-critical": (),
}


def lps_index(spec: MixedNormSpec, *, atol: float = 1e-12) -> LPSIndex:
    """Criticality index ``1 - d/p - 2/q`` with its regime label."""
    kappa = spec.kappa
    if abs(kappa) <= atol:
        kappa, label = 0.0, "critical"
    elif kappa > 0:
        label = "above-critical"
    else:
        label = "below-critical"
    return LPSIndex(kappa, label, _ALIASES[label])


def _check_samples(values: np.ndarray) -> None:
    if values.size == 0:
        raise DataError("no samples")
    if not np.all(np.isfinite(values)):
        raise DataError("non-finite sample in field")


def spatial_norms(values: np.ndarray, d: int, p: float) -> np.ndarray:
    """L^p norm over the torus for each leading time sample.

    ``values`` has shape ``(nt, *grid)`` or ``(nt, *grid, comp)``; vectors use
    the Euclidean length pointwise.
    """
    a = np.abs(values) if values.ndim == 1 + d else np.sqrt(np.sum(values**2, axis=-1))
    a = a.reshape(a.shape[0], -1)
    if math.isinf(p):
        return a.max(axis=1)
    n_nodes = a.shape[1]
    cell = TWO_PI**d / n_nodes
    return (np.sum(a**p, axis=1) * cell) ** (1.0 / p)


def time_norm(samples: np.ndarray, times: np.ndarray, q: float) -> float:
    """Trapezoid-rule L^q norm of a nonnegative time series."""
    if math.isinf(q):
        return float(samples.max())
    return float(np.trapezoid(samples**q, times) ** (1.0 / q))


def mixed_norm(values: np.ndarray, spec: MixedNormSpec, window: tuple[float, float],
               times: np.ndarray | None = None) -> float:
    """``(int_S^T (int |f|^p dx)^{q/p} dt)^{1/q}`` on a periodic space grid.

    ``values`` carries time on axis 0; ``times`` defaults to a uniform grid
    spanning ``window``.
    """
    values = np.asarray(values, dtype=float)
    S, T = map(float, window)
    if not T > S:
        raise DataError(f"empty window [{S}, {T}]")
    if values.ndim not in (spec.d + 1, spec.d + 2):
        raise DataError(f"expected (nt, *grid[, comp]) with d={spec.d}, got {values.shape}")
    _check_samples(values)
    nt = values.shape[0]
    if times is None:
        times = np.linspace(S, T, nt)
    times = np.asarray(times, dtype=float)
    if times.size != nt:
        raise DataError("times and samples disagree")
    if nt < 2 and not math.isinf(spec.q):
        raise DataError("a finite time exponent needs at least two time samples")
    return time_norm(spatial_norms(values, spec.d, spec.p), times, spec.q)
