"""Counter-addressed Gaussian noise.

Every Brownian increment is a pure function of ``(seed, step, path)``: the
bit generator is numpy's Philox keyed by the seed, with the absolute step
index in the counter.  A path is a fixed position inside the per-step block,
so any subset of steps can be regenerated without replaying the others and
results do not depend on how work is scheduled.
"""
from __future__ import annotations

import numpy as np

_U64 = 2**64


def _generator(seed: int, step: int, stream: int) -> np.random.Generator:
    counter = np.array([0, step % _U64, stream % _U64, 0], dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=int(seed) % 2**128, counter=counter))


def step_normals(seed: int, step: int, n_paths: int, d: int, *,
                 stream: int = 0, antithetic: bool = False) -> np.ndarray:
    """Standard normals of shape ``(n_paths, d)`` for one absolute time step.

    With ``antithetic`` the paths come in pairs ``(z, -z)``; an odd trailing
    path keeps its own draw.
    """
    gen = _generator(seed, step, stream)
    if not antithetic:
        return gen.standard_normal((n_paths, d))
    half = (n_paths + 1) // 2
    base = gen.standard_normal((half, d))
    out = np.empty((n_paths, d))
    out[0::2] = base[: (n_paths + 1) // 2]
    out[1::2] = -base[: n_paths // 2]
    return out


def brownian_increments(seed: int, step: int, n_paths: int, d: int, dt: float, *,
                        antithetic: bool = False) -> np.ndarray:
    return np.sqrt(dt) * step_normals(seed, step, n_paths, d, antithetic=antithetic)


def derive_seed(seed: int, *labels: int) -> int:
    """Deterministic child seed, e.g. one per Picard sub-interval."""
    ss = np.random.SeedSequence([int(seed) % _U64, *[int(x) % _U64 for x in labels]])
    return int(ss.generate_state(2, dtype=np.uint64)[0])
