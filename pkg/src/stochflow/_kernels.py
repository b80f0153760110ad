"""Compiled inner loops for many-path transport by gridded velocities.

Fields are packed as ``F[flat_node, channel]`` on an ``n^d`` periodic grid in
C order; positions are interpolated multilinearly with periodic wrap.
Channels ``0..d-1`` hold the velocity and ``d..d+d*d-1`` its gradient
``G[i, j] = d_j u_i`` in row-major order.
"""
from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def _weights(x, n, h, base, frac):
    d = x.shape[0]
    for a in range(d):
        s = x[a] / h
        f = np.floor(s)
        frac[a] = s - f
        base[a] = int(f) % n


@njit(cache=True)
def _gather(F, n, base, frac, out):
    d = base.shape[0]
    C = F.shape[1]
    for c in range(C):
        out[c] = 0.0
    for corner in range(1 << d):
        w = 1.0
        flat = 0
        for a in range(d):
            bit = (corner >> a) & 1
            i = base[a] + bit
            if i == n:
                i = 0
            if bit:
                w *= frac[a]
            else:
                w *= 1.0 - frac[a]
            flat = flat * n + i
        for c in range(C):
            out[c] += w * F[flat, c]


@njit(cache=True)
def interpolate_points(F, n, h, pts, out):
    d = pts.shape[1]
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    vals = np.empty(F.shape[1])
    for p in range(pts.shape[0]):
        _weights(pts[p], n, h, base, frac)
        _gather(F, n, base, frac, vals)
        for c in range(F.shape[1]):
            out[p, c] = vals[c]


@njit(cache=True)
def advance(X, J, F, n, h, dW, dt, with_jac):
    """One Euler step of ``X`` (and ``J += G J dt``) for every node and path."""
    P, M, d = X.shape
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    vals = np.empty(F.shape[1])
    newJ = np.empty((d, d))
    for p in range(P):
        for m in range(M):
            _weights(X[p, m], n, h, base, frac)
            _gather(F, n, base, frac, vals)
            if with_jac:
                for i in range(d):
                    for k in range(d):
                        acc = 0.0
                        for j in range(d):
                            acc += vals[d + i * d + j] * J[p, m, j, k]
                        newJ[i, k] = J[p, m, i, k] + acc * dt
                for i in range(d):
                    for k in range(d):
                        J[p, m, i, k] = newJ[i, k]
            for a in range(d):
                X[p, m, a] = X[p, m, a] + vals[a] * dt + dW[m, a]


@njit(cache=True)
def transpose_apply(X, J, W, n, h, out):
    """``out[p, m] = J[p, m]^T w(X[p, m])`` for a gridded vector field ``w``."""
    P, M, d = X.shape
    base = np.empty(d, np.int64)
    frac = np.empty(d)
    vals = np.empty(W.shape[1])
    for p in range(P):
        for m in range(M):
            _weights(X[p, m], n, h, base, frac)
            _gather(W, n, base, frac, vals)
            for k in range(d):
                acc = 0.0
                for i in range(d):
                    acc += J[p, m, i, k] * vals[i]
                out[p, m, k] = acc
