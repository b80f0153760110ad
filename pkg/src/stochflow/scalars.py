"""Scalar test functions (forcings, observables) on the torus."""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .drifts import wrap
from .errors import DomainError
from .spectral import TWO_PI, grid_nodes

Array = np.ndarray


@dataclass(frozen=True, eq=False)
class ScalarField:
    d: int
    name: str
    value_fn: Callable[[float, Array], Array]
    grad_fn: Callable[[float, Array], Array]
    params: dict = field(default_factory=dict)
    time_dependent: bool = False
    is_constant: bool = False

    def __call__(self, t: float, x: Array) -> Array:
        return self.value_fn(t, np.asarray(x, dtype=float))

    def gradient(self, t: float, x: Array) -> Array:
        return self.grad_fn(t, np.asarray(x, dtype=float))

    def partial(self, j: int) -> "ScalarField":
        """The derivative along coordinate ``j`` as a scalar field (no gradient)."""
        return ScalarField(self.d, f"d{j}({self.name})", lambda t, x: self.grad_fn(t, x)[..., j],
                           _no_grad, {**self.params, "partial": j}, self.time_dependent,
                           is_constant=self.is_constant)

    def scaled(self, lam: float) -> "ScalarField":
        return ScalarField(self.d, f"{lam:g}*{self.name}", lambda t, x: lam * self.value_fn(t, x),
                           lambda t, x: lam * self.grad_fn(t, x), {**self.params, "scale": lam},
                           self.time_dependent, self.is_constant)

    def sample(self, n: int, t: float = 0.0) -> Array:
        return self(t, grid_nodes(n, self.d))


def _no_grad(t, x):
    raise NotImplementedError("derived field carries no gradient")


def constant(d: int, c: float = 1.0) -> ScalarField:
    return ScalarField(d, "constant", lambda t, x: np.full(x.shape[:-1], float(c)),
                       lambda t, x: np.zeros(x.shape), {"value": c}, is_constant=True)


def mode(d: int, k, amplitude: float = 1.0, phase: float = 0.0) -> ScalarField:
    """``amplitude * cos(k.x + phase)``."""
    k = np.asarray(k, dtype=float)
    if k.shape != (d,):
        raise DomainError("wavevector must have d entries")
    return ScalarField(
        d, "mode",
        lambda t, x: amplitude * np.cos(x @ k + phase),
        lambda t, x: -amplitude * np.sin(x @ k + phase)[..., None] * k,
        {"k": k.tolist(), "amplitude": amplitude, "phase": phase},
        is_constant=not k.any())


def gaussian_bump(d: int, center=None, width: float = 0.5, amplitude: float = 1.0) -> ScalarField:
    """Periodized Gaussian ``exp(-|y|^2 / 2w^2)`` around ``center``."""
    c = np.full(d, math.pi) if center is None else np.asarray(center, dtype=float)
    images = np.array(list(itertools.product((-1, 0, 1), repeat=d)), dtype=float) * TWO_PI

    def val(t, x):
        y = wrap(x - c)[..., None, :] - images
        return amplitude * np.exp(-np.sum(y**2, axis=-1) / (2 * width**2)).sum(axis=-1)

    def grad(t, x):
        y = wrap(x - c)[..., None, :] - images
        g = np.exp(-np.sum(y**2, axis=-1) / (2 * width**2))
        return -amplitude * np.einsum("...i,...ij->...j", g, y) / width**2

    return ScalarField(d, "bump", val, grad, {"center": c.tolist(), "width": width,
                                               "amplitude": amplitude})


def bump_heat_average(d: int, x, t: float, center=None, width: float = 0.5,
                      amplitude: float = 1.0, n_images: int = 2) -> Array:
    """``E f(x + W_t)`` for the periodized bump (Gaussian convolution identity)."""
    c = np.full(d, math.pi) if center is None else np.asarray(center, dtype=float)
    rng_ = range(-n_images, n_images + 1)
    images = np.array(list(itertools.product(rng_, repeat=d)), dtype=float) * TWO_PI
    y = np.atleast_2d(x)[:, None, :] - c - images
    var = width**2 + t
    return amplitude * (width**2 / var) ** (d / 2) * np.exp(-np.sum(y**2, -1) / (2 * var)).sum(-1)


SCALAR_CATALOG = ("constant", "mode", "bump")


def make_scalar(name: str, d: int = 3, **params) -> ScalarField:
    if name == "constant":
        return constant(d, float(params.get("value", 1.0)))
    if name == "mode":
        k = params.get("k", [1] + [0] * (d - 1))
        return mode(d, k, float(params.get("amplitude", 1.0)), float(params.get("phase", 0.0)))
    if name == "bump":
        return gaussian_bump(d, params.get("center"), float(params.get("width", 0.5)),
                             float(params.get("amplitude", 1.0)))
    raise DomainError(f"unknown scalar field '{name}'; catalog: {', '.join(SCALAR_CATALOG)}")
