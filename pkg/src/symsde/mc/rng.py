"""Counter-based random streams, one independent stream per path.

Path ``p`` of a run with seed ``s`` draws from a Philox generator keyed by
``s`` whose counter starts at ``[0, 0, p, 0]``. Draws therefore depend only
on ``(seed, path index)``, never on chunking or thread scheduling.
"""

from __future__ import annotations

import numpy as np
from scipy.special import ndtri

_SCALE = 2.0**-53


def path_generator(seed: int, path: int) -> np.random.Philox:
    if not 0 <= int(seed) < 2**64:
        raise ValueError("seed must fit in 64 unsigned bits")
    return np.random.Philox(key=int(seed), counter=[0, 0, int(path), 0])


def uniforms(seed: int, path: int, count: int) -> np.ndarray:
    """``count`` open-interval uniforms ``(k + 0.5) 2^-53`` for one path."""
    raw = path_generator(seed, path).random_raw(count)
    return ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * _SCALE


def standard_normals(seed: int, path_start: int, path_stop: int, count: int) -> np.ndarray:
    """Array ``(path_stop - path_start, count)`` of N(0, 1) draws by inverse CDF."""
    out = np.empty((path_stop - path_start, count))
    for row, p in enumerate(range(path_start, path_stop)):
        out[row] = uniforms(seed, p, count)
    return ndtri(out, out=out)


def brownian_increments(seed: int, path_start: int, path_stop: int, steps: int, m: int, dt: float) -> np.ndarray:
    """Increments ``(P, steps, m)`` with variance ``dt`` for paths ``[path_start, path_stop)``."""
    z = standard_normals(seed, path_start, path_stop, steps * m)
    z *= np.sqrt(dt)
    return z.reshape(path_stop - path_start, steps, m)
