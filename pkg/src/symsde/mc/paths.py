"""Pathwise action of a transformation on simulated paths.

Given paths ``(X, W)`` and ``T = (Phi, B, eta, h)`` the transformed paths are::

    X'_t  = Phi(X_s, s),  s = f^{-1}(t)
    dW'   = sqrt(eta) B (dW - h dt),  then read on the new clock

and ``Z = exp(int h dW - 1/2 int |h|^2 dt)`` is the Girsanov density that
makes ``(X', W')`` a solution of the transformed equation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import NumericalBlowup, ShapeError
from ..fields import MatrixField, VectorField, check_special_orthogonal
from ..sde import SdeModel
from .engine import PathEnsemble

LOG_WEIGHT_LIMIT = 50.0


def _field_fn(obj, kind):
    if isinstance(obj, (MatrixField, VectorField)):
        return obj.evaluate
    if callable(obj):
        return obj
    raise TypeError(f"{kind} must be a field or a callable on points")


def step_points(ensemble: PathEnsemble, model: SdeModel, k_stop: int = None) -> np.ndarray:
    """Extended points ``(P, k_stop, N)`` at the left end of each step."""
    k_stop = ensemble.steps if k_stop is None else k_stop
    return model.points_from_state(ensemble.states[:, :k_stop], ensemble.time_grid[:k_stop])


def rotate_brownian(ensemble: PathEnsemble, model: SdeModel, rotation, check: bool = True) -> np.ndarray:
    """Rotated increments ``B(X_k, t_k) dW_k`` with shape ``(P, K, m)``.

    The result is again a Brownian increment sequence (Lévy's
    characterisation), whatever the adapted rotation field.
    """
    fn = _field_fn(rotation, "rotation")
    pts = step_points(ensemble, model).reshape(-1, model.N)
    B = fn(pts)
    if check:
        sample = pts[:: max(1, len(pts) // 256)]
        rep = check_special_orthogonal(fn, sample, 1e-9)
        if not rep.passed:
            raise ShapeError(f"rotation field is not special orthogonal (deviation {rep.worst:.3g})")
    B = B.reshape(ensemble.n_paths, ensemble.steps, model.m, model.m)
    return (B @ ensemble.increments[..., None])[..., 0]


@dataclass
class GirsanovWeights:
    log_weight: np.ndarray
    weight: np.ndarray
    flagged: np.ndarray
    limit: float

    @property
    def n_flagged(self) -> int:
        return int(self.flagged.sum())


def girsanov_weight(
    ensemble: PathEnsemble, model: SdeModel, shift, k_stop: int = None, limit: float = LOG_WEIGHT_LIMIT,
    strict: bool = False,
) -> GirsanovWeights:
    """``Z = exp(sum h(X_k) . dW_k - 1/2 sum |h(X_k)|^2 dt)`` over steps ``k < k_stop``.

    The Itô integral uses left-point sums. Paths whose log-weight exceeds
    ``limit`` in magnitude are flagged (and counted by callers) rather than
    clipped; with ``strict=True`` they raise :class:`NumericalBlowup`.
    """
    fn = _field_fn(shift, "shift")
    k_stop = ensemble.steps if k_stop is None else k_stop
    P = ensemble.n_paths
    if k_stop == 0:
        z = np.zeros(P)
    else:
        pts = step_points(ensemble, model, k_stop).reshape(-1, model.N)
        h = np.asarray(fn(pts), dtype=float).reshape(P, k_stop, model.m)
        dW = ensemble.increments[:, :k_stop]
        dt = np.diff(ensemble.time_grid[: k_stop + 1])
        z = np.einsum("pka,pka->p", h, dW) - 0.5 * np.einsum("pka,pka,k->p", h, h, dt)
    flagged = np.abs(z) > limit
    if strict and flagged.any():
        i = int(np.flatnonzero(flagged)[0])
        raise NumericalBlowup(f"log-weight {z[i]:.3g} exceeds {limit}", path=ensemble.path_offset + i, step=k_stop)
    with np.errstate(over="ignore"):
        w = np.exp(z)
    return GirsanovWeights(z, w, flagged, limit)


def interpolate_states(ensemble: PathEnsemble, s) -> np.ndarray:
    """States at times ``s`` (scalar or per output time) by linear interpolation.

    Returns ``(P, n)`` for scalar ``s`` and ``(P, len(s), n)`` otherwise.
    Times within ``1e-12 dt`` of a grid point snap to it exactly.
    """
    return _interp(ensemble.states, ensemble.time_grid, s)


def _interp(values, grid, s):
    scalar = np.ndim(s) == 0
    s = np.atleast_1d(np.asarray(s, dtype=float))
    dt = grid[1] - grid[0]
    if np.any(s < grid[0] - 1e-12 * dt) or np.any(s > grid[-1] + 1e-12 * dt):
        raise ShapeError("interpolation time outside the simulated horizon")
    u = (s - grid[0]) / dt
    near = np.round(u)
    u = np.where(np.abs(u - near) <= 1e-12 * np.maximum(1.0, near), near, u)
    i = np.clip(np.floor(u).astype(int), 0, len(grid) - 2)
    w = u - i
    out = values[:, i] * (1.0 - w)[None, :, None] + values[:, np.minimum(i + 1, len(grid) - 1)] * w[None, :, None]
    exact = w == 0.0
    if exact.any():
        out[:, exact] = values[:, i[exact]]
    return out[:, 0] if scalar else out


@dataclass
class TransformedEnsemble:
    """Transformed paths on the new clock ``time_grid``."""

    time_grid: np.ndarray
    states: np.ndarray
    brownian: np.ndarray

    @property
    def increments(self) -> np.ndarray:
        return np.diff(self.brownian, axis=1)


def apply_path_transformation(T, ensemble: PathEnsemble, model: SdeModel, time_grid=None) -> TransformedEnsemble:
    """Apply ``T`` pathwise and return ``(P_T(X), P_T(W))`` on a new time grid.

    The default grid uses the original step on ``[0, f(horizon)]``.
    """
    if T.vars.names != model.vars.names:
        raise ShapeError("transformation and model use different variables")
    horizon = ensemble.time_grid[-1]
    if time_grid is None:
        f_end = float(T.time_change(np.array([horizon]))[0])
        n_out = int(np.floor(f_end / ensemble.dt * (1 + 1e-12)))
        time_grid = np.arange(n_out + 1) * ensemble.dt
    time_grid = np.asarray(time_grid, dtype=float)
    s = np.asarray(T.time_inverse(time_grid), dtype=float)
    P, N, m = ensemble.n_paths, model.N, model.m
    xs = _interp(ensemble.states, ensemble.time_grid, s)
    pts = model.points_from_state(xs, s)
    new_pts = T.phi.value(pts.reshape(-1, N)).reshape(P, len(time_grid), N)
    new_states = model.state_from_points(new_pts)
    # transformed Brownian motion on the original clock, then re-read on the new one
    K = ensemble.steps
    left = step_points(ensemble, model).reshape(-1, N)
    B = T.rotation(left).reshape(P, K, m, m)
    h = T.shift(left).reshape(P, K, m)
    eta = np.asarray(T.eta(ensemble.time_grid[:-1]), dtype=float)
    dt = np.diff(ensemble.time_grid)
    dw = np.sqrt(eta)[None, :, None] * (B @ (ensemble.increments - h * dt[None, :, None])[..., None])[..., 0]
    w = np.zeros((P, K + 1, m))
    np.cumsum(dw, axis=1, out=w[:, 1:])
    w_new = _interp(w, ensemble.time_grid, s)
    return TransformedEnsemble(time_grid, new_states, w_new)
