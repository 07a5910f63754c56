"""Euler-Maruyama path simulation, chunked and thread-parallel.

Paths are generated in chunks of ``chunk_size``. Each chunk is an
independent :class:`PathEnsemble` whose random draws depend only on the
seed and the global path indices, so any per-path statistic assembled in
path order is identical for every chunk size and thread count.
"""

from __future__ import annotations

import os
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ..errors import NumericalBlowup, ShapeError
from ..sde import SdeModel
from .rng import brownian_increments

OVERFLOW_GUARD = 1e12
DEFAULT_CHUNK = 4096


@dataclass(frozen=True)
class SimulationConfig:
    """Monte Carlo run parameters.

    ``horizon`` must be an integer multiple of ``dt`` (to 1e-9 relative).
    """

    n_paths: int
    dt: float
    horizon: float
    seed: int = 0
    chunk_size: int = DEFAULT_CHUNK
    threads: int = None

    def __post_init__(self):
        if int(self.n_paths) < 1:
            raise ValueError("n_paths must be positive")
        if not self.dt > 0 or not self.horizon > 0:
            raise ValueError("dt and horizon must be positive")
        k = round(self.horizon / self.dt)
        if k < 1 or abs(k * self.dt - self.horizon) > 1e-9 * self.horizon:
            raise ValueError(f"horizon {self.horizon} is not a multiple of dt {self.dt}")
        if int(self.chunk_size) < 1:
            raise ValueError("chunk_size must be positive")
        if not 0 <= int(self.seed) < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")

    @property
    def steps(self) -> int:
        return int(round(self.horizon / self.dt))

    @property
    def time_grid(self) -> np.ndarray:
        return np.arange(self.steps + 1) * self.dt

    def step_index(self, t: float) -> int:
        """Grid index of time ``t``; ``t`` must lie on the grid."""
        k = round(t / self.dt)
        if k < 0 or k > self.steps or abs(k * self.dt - t) > 1e-9 * max(self.dt, abs(t)):
            raise ValueError(f"time {t} is not on the simulation grid")
        return int(k)

    def n_threads(self) -> int:
        if self.threads is not None:
            return max(1, int(self.threads))
        env = os.environ.get("SYMSDE_THREADS")
        if env:
            return max(1, int(env))
        return max(1, min(4, os.cpu_count() or 1))


@dataclass
class PathEnsemble:
    """Simulated paths: ``states`` is ``(P, K+1, n)`` and ``increments`` ``(P, K, m)``."""

    time_grid: np.ndarray
    states: np.ndarray
    increments: np.ndarray
    weights: np.ndarray = None
    seed: int = 0
    path_offset: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.weights is None:
            self.weights = np.ones(self.states.shape[0])

    @property
    def n_paths(self) -> int:
        return self.states.shape[0]

    @property
    def steps(self) -> int:
        return self.states.shape[1] - 1

    @property
    def n(self) -> int:
        return self.states.shape[2]

    @property
    def m(self) -> int:
        return self.increments.shape[2]

    @property
    def dt(self) -> float:
        return float(self.time_grid[1] - self.time_grid[0])

    def brownian_path(self) -> np.ndarray:
        """Cumulative Brownian path ``(P, K+1, m)`` starting at 0."""
        w = np.zeros((self.n_paths, self.steps + 1, self.m))
        np.cumsum(self.increments, axis=1, out=w[:, 1:])
        return w


def _constant_sigma(model: SdeModel):
    from ..expr import Const

    rows = model.sigma.entries
    if all(isinstance(e, Const) for r in rows for e in r):
        return np.array([[e.value for e in r] for r in rows])
    return None


def _euler_chunk(model: SdeModel, cfg: SimulationConfig, p0: int, p1: int) -> PathEnsemble:
    K, n, m, dt = cfg.steps, model.n, model.m, cfg.dt
    grid = cfg.time_grid
    dW = brownian_increments(cfg.seed, p0, p1, K, m, dt)
    P = p1 - p0
    X = np.empty((P, K + 1, n))
    X[:, 0] = np.asarray(model.initial_point, dtype=float)
    logs = list(model.log_coordinates)
    lin = [i for i in range(n) if i not in logs and not (model.time_is_state and i == n - 1)]
    sig_const = _constant_sigma(model)
    mu_field = model.mu
    sig_field = model.sigma
    time_idx = n - 1 if model.time_is_state else None
    for k in range(K):
        x = X[:, k]
        pts = model.points_from_state(x, grid[k])
        mu = mu_field.evaluate(pts)
        if sig_const is not None:
            noise = dW[:, k] @ sig_const.T
        else:
            sig = sig_field.evaluate(pts)
            noise = (sig @ dW[:, k, :, None])[..., 0]
        xn = X[:, k + 1]
        if lin:
            xn[:, lin] = x[:, lin] + mu[:, lin] * dt + noise[:, lin]
        if logs:
            xi = x[:, logs]
            if sig_const is not None:
                a_ii = np.sum(sig_const[logs] ** 2, axis=1)[None, :]
            else:
                a_ii = np.einsum("pia,pia->pi", sig[:, logs], sig[:, logs])
            du = (mu[:, logs] / xi - 0.5 * a_ii / (xi * xi)) * dt + noise[:, logs] / xi
            xn[:, logs] = xi * np.exp(du)
        if time_idx is not None:
            xn[:, time_idx] = grid[k + 1]
        if not np.isfinite(xn).all() or np.abs(xn).max() > OVERFLOW_GUARD:
            bad = ~np.isfinite(xn).all(axis=1) | (np.abs(xn) > OVERFLOW_GUARD).any(axis=1)
            raise NumericalBlowup("state left the representable range", path=p0 + int(np.flatnonzero(bad)[0]), step=k + 1)
    return PathEnsemble(grid, X, dW, None, cfg.seed, p0)


def chunk_bounds(cfg: SimulationConfig):
    return [(s, min(s + cfg.chunk_size, cfg.n_paths)) for s in range(0, cfg.n_paths, cfg.chunk_size)]


def map_chunks(model: SdeModel, cfg: SimulationConfig, fn: Callable[[PathEnsemble], dict]) -> dict:
    """Simulate chunk by chunk and concatenate the per-path arrays returned by ``fn``.

    ``fn`` receives a chunk ensemble and returns a dict of arrays whose first
    axis indexes the chunk's paths. Output order is global path order.
    """

    def job(bounds):
        return fn(_euler_chunk(model, cfg, *bounds))

    bounds = chunk_bounds(cfg)
    threads = min(cfg.n_threads(), len(bounds))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(job, bounds))
    else:
        parts = [job(b) for b in bounds]
    return {k: np.concatenate([p[k] for p in parts], axis=0) for k in parts[0]}


def simulate(model: SdeModel, cfg: SimulationConfig) -> PathEnsemble:
    """Simulate all paths and keep them in memory."""
    out = map_chunks(model, cfg, lambda e: {"states": e.states, "increments": e.increments})
    return PathEnsemble(cfg.time_grid, out["states"], out["increments"], None, cfg.seed, 0)


# ---------------------------------------------------------------------------
# binary persistence

_MAGIC = b"SYMSDEPE"
_HEADER = struct.Struct("<8sIQQIIdQ")  # magic, version, n_paths, K, n, m, dt, seed
_VERSION = 1


def save_ensemble(ensemble: PathEnsemble, path) -> None:
    """Write a little-endian binary dump: header then row-major float64 arrays.

    Layout: header ``(magic, version, n_paths, K, n, m, dt, seed)``, then
    ``time_grid[K+1]``, ``states[n_paths, K+1, n]``,
    ``increments[n_paths, K, m]`` and ``weights[n_paths]``.
    """
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(_MAGIC, _VERSION, ensemble.n_paths, ensemble.steps, ensemble.n, ensemble.m,
                              ensemble.dt, int(ensemble.seed)))
        for arr in (ensemble.time_grid, ensemble.states, ensemble.increments, ensemble.weights):
            np.ascontiguousarray(arr, dtype="<f8").tofile(fh)


def load_ensemble(path) -> PathEnsemble:
    with open(path, "rb") as fh:
        magic, version, P, K, n, m, dt, seed = _HEADER.unpack(fh.read(_HEADER.size))
        if magic != _MAGIC or version != _VERSION:
            raise ShapeError("not a path ensemble dump")
        grid = np.fromfile(fh, "<f8", K + 1)
        states = np.fromfile(fh, "<f8", P * (K + 1) * n).reshape(P, K + 1, n)
        inc = np.fromfile(fh, "<f8", P * K * m).reshape(P, K, m)
        w = np.fromfile(fh, "<f8", P)
    if len(w) != P:
        raise ShapeError("truncated path ensemble dump")
    return PathEnsemble(grid, states, inc, w, seed, 0, {"dt": dt})
