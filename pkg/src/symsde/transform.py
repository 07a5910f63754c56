"""Finite transformations of SDEs and their action on coefficients.

A transformation ``T = (Phi, B, eta, h)`` acts on extended coordinates
(state then time). ``Phi`` is a diffeomorphism whose time component is the
time change ``f(t) = integral_0^t eta``. ``B`` is a rotation-valued field
(the noise gauge), ``eta > 0`` is the clock rate and ``h`` is the Girsanov
drift shift. The pushed-forward coefficients are::

    mu'    = (1/eta) (L Phi + DPhi sigma h)     evaluated at Phi^{-1}
    sigma' = (1/sqrt(eta)) DPhi sigma B^{-1}     evaluated at Phi^{-1}

Maps are handled numerically through their 2-jets (value, Jacobian,
Hessian), so composition and inversion work for symbolic maps, flows and
their combinations alike.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy.interpolate import PchipInterpolator

from .errors import NonInvertiblePhi, ShapeError, TimeOutOfRange, TransformationError, VarError
from .expr import ONE, ZERO, Var, antiderivative, diff, simplify
from .fields import VarSet, check_special_orthogonal, exprs_of, sample_points
from .sde import TransformedSde, generator_on_jets

NEWTON_TOL = 1e-12
NEWTON_MAX_ITER = 50


def _pts(points, N=None) -> np.ndarray:
    p = np.atleast_2d(np.asarray(points, dtype=float))
    if N is not None and p.shape[-1] != N:
        raise ShapeError(f"points have {p.shape[-1]} coordinates, expected {N}")
    return p


class _LastCache:
    """Remember the result for the most recent input array."""

    def __init__(self):
        self.key = None
        self.value = None

    def get(self, arr, compute):
        key = (arr.shape, arr.tobytes())
        if self.key != key:
            self.value = compute(arr)
            self.key = key
        return self.value


class Map:
    """Smooth invertible map on extended coordinates with numeric 2-jets."""

    vars: VarSet

    @property
    def N(self) -> int:
        return len(self.vars)

    def value(self, points) -> np.ndarray:
        return self.jets(points, 0)[0]

    def jacobian(self, points) -> np.ndarray:
        return self.jets(points, 1)[1]

    def hessian(self, points) -> np.ndarray:
        return self.jets(points, 2)[2]

    def jets(self, points, order: int = 2):
        raise NotImplementedError

    def time_value(self, t) -> np.ndarray:
        raise NotImplementedError

    def time_inverse(self, t) -> np.ndarray:
        raise NotImplementedError

    def inverse(self) -> "Map":
        raise NotImplementedError


class MonotoneInverse:
    """Inverse of a strictly increasing scalar function on ``[0, inf)``.

    A PCHIP interpolant of the inverse on an adaptively extended grid gives
    the starting point; Newton steps then polish it to machine precision.
    """

    def __init__(self, fn: Callable, dfn: Callable, t_max: float = 1.0, n: int = 257):
        self.fn, self.dfn, self.n = fn, dfn, n
        self.t_max = 0.0
        self._build(max(t_max, 1e-3))

    def _build(self, t_max):
        grid = np.linspace(0.0, t_max, self.n)
        vals = np.asarray(self.fn(grid), dtype=float)
        if not np.all(np.diff(vals) > 0):
            raise TransformationError("time change is not strictly increasing")
        self.t_max, self.lo, self.hi = t_max, vals[0], vals[-1]
        self.interp = PchipInterpolator(vals, grid, extrapolate=True)

    def __call__(self, y):
        y = np.asarray(y, dtype=float)
        if y.size == 0:
            return y.copy()
        if np.any(y < self.lo - 1e-12 * max(1.0, abs(self.lo))):
            raise TimeOutOfRange(f"time {float(y.min())} precedes the image of t = 0")
        guard = 0
        while np.max(y) > self.hi:
            guard += 1
            if guard > 60:
                raise TimeOutOfRange("time change is bounded; target time is outside its range")
            self._build(2.0 * self.t_max)
        t = np.clip(self.interp(y), 0.0, None)
        for _ in range(8):
            step = (np.asarray(self.fn(t), dtype=float) - y) / np.asarray(self.dfn(t), dtype=float)
            t = np.maximum(t - step, 0.0)
            if np.max(np.abs(step)) <= 1e-15 * max(1.0, float(np.max(np.abs(t)))):
                break
        return t


class ExprMap(Map):
    """Map given by symbolic component expressions (time component last)."""

    def __init__(self, exprs, vars, box=None):
        self.vars = VarSet.of(vars)
        self.exprs = tuple(simplify(e) for e in exprs_of(exprs, self.vars))
        if len(self.exprs) != self.N:
            raise ShapeError(f"map needs {self.N} components, got {len(self.exprs)}")
        extra = self.exprs[-1].free_vars - {self.vars.time}
        if extra:
            raise VarError(f"time component may depend on time only, found {sorted(extra)}")
        self.box = box
        self._cache = _LastCache()

    @cached_property
    def jac_exprs(self):
        return tuple(tuple(simplify(diff(e, v)) for v in self.vars) for e in self.exprs)

    @cached_property
    def hess_exprs(self):
        return tuple(
            tuple(tuple(simplify(diff(d, v)) for v in self.vars) for d in row) for row in self.jac_exprs
        )

    @cached_property
    def is_affine_spatial(self) -> bool:
        """True when the spatial part is affine in the spatial variables."""
        ns = self.N - 1
        return all(self.hess_exprs[i][a][b] == ZERO for i in range(ns) for a in range(ns) for b in range(ns))

    @staticmethod
    def _eval_all(exprs, env, shape):
        return np.stack([np.broadcast_to(np.asarray(e.compiled(env), dtype=float), shape) for e in exprs], axis=-1)

    def _jets(self, p):
        env = {name: p[:, i] for i, name in enumerate(self.vars)}
        shape = (p.shape[0],)
        N = self.N
        val = self._eval_all(self.exprs, env, shape)
        jac = self._eval_all([e for row in self.jac_exprs for e in row], env, shape).reshape(-1, N, N)
        hes = self._eval_all(
            [e for row in self.hess_exprs for col in row for e in col], env, shape
        ).reshape(-1, N, N, N)
        return val, jac, hes

    def jets(self, points, order=2):
        p = _pts(points, self.N)
        if order == 0:
            env = {name: p[:, i] for i, name in enumerate(self.vars)}
            return (self._eval_all(self.exprs, env, (p.shape[0],)),)
        return self._cache.get(p, self._jets)

    def time_value(self, t):
        t = np.asarray(t, dtype=float)
        return np.broadcast_to(np.asarray(self.exprs[-1].compiled({self.vars.time: t}), dtype=float), t.shape).copy()

    @cached_property
    def _time_rate(self):
        return self.jac_exprs[-1][-1]

    @cached_property
    def _monotone(self):
        tv = self.vars.time
        rate = self._time_rate

        def dfn(t):
            return np.broadcast_to(np.asarray(rate.compiled({tv: t}), dtype=float), np.shape(t))

        hi = self.box[-1][1] if self.box is not None else 1.0
        return MonotoneInverse(self.time_value, dfn, t_max=max(hi, 1.0))

    def time_inverse(self, t):
        if self.exprs[-1] == Var(self.vars.time):
            return np.asarray(t, dtype=float).copy()
        return self._monotone(t)

    def inverse(self):
        return InverseMap(self)


class InverseMap(Map):
    """Numerical inverse of a map: Newton in space, monotone inversion in time."""

    def __init__(self, base: Map):
        self.base = base
        self.vars = base.vars
        self._cache = _LastCache()
        self._jcache = _LastCache()

    def inverse(self):
        return self.base

    def time_value(self, t):
        return self.base.time_inverse(t)

    def time_inverse(self, t):
        return self.base.time_value(t)

    def solve(self, q) -> np.ndarray:
        q = _pts(q, self.N)
        return self._cache.get(q, self._solve)

    def _solve(self, q):
        t = self.base.time_inverse(q[:, -1])
        base = self.base
        if isinstance(base, ExprMap) and base.is_affine_spatial:
            p0 = np.concatenate([np.zeros_like(q[:, :-1]), t[:, None]], axis=1)
            val, jac, _ = base.jets(p0, 1)
            a = jac[:, :-1, :-1]
            rhs = q[:, :-1] - val[:, :-1]
            try:
                x = np.linalg.solve(a, rhs[..., None])[..., 0]
            except np.linalg.LinAlgError:
                raise NonInvertiblePhi("singular spatial Jacobian") from None
            return np.concatenate([x, t[:, None]], axis=1)
        x = self._newton(q, t, q[:, :-1].copy())
        return np.concatenate([x, t[:, None]], axis=1)

    def _residual(self, x, t, target):
        p = np.concatenate([x, t[:, None]], axis=1)
        return self.base.value(p)[:, :-1] - target

    def _newton(self, q, t, x):
        target = q[:, :-1]
        if x.shape[1] == 0:
            return x
        r = self._residual(x, t, target)
        done = np.zeros(len(x), dtype=bool)
        for _ in range(NEWTON_MAX_ITER):
            active = ~done
            if not active.any():
                return x
            p = np.concatenate([x[active], t[active, None]], axis=1)
            jac = self.base.jets(p, 1)[1][:, :-1, :-1]
            try:
                dx = np.linalg.solve(jac, r[active][..., None])[..., 0]
            except np.linalg.LinAlgError:
                raise NonInvertiblePhi("singular Jacobian during Newton iteration") from None
            # damped step: halve until the residual does not grow
            step = np.ones(active.sum())
            xa, ra = x[active], r[active]
            rnorm = np.abs(ra).max(axis=1)
            for _ in range(30):
                xn = xa - step[:, None] * dx
                rn = self._residual(xn, t[active], target[active])
                worse = np.abs(rn).max(axis=1) > rnorm * (1 - 1e-4 * step) + 1e-300
                worse &= rnorm > NEWTON_TOL
                if not worse.any():
                    break
                step = np.where(worse, 0.5 * step, step)
            x[active], r[active] = xn, rn
            conv = (np.abs(step[:, None] * dx).max(axis=1) <= NEWTON_TOL * (1.0 + np.abs(xn).max(axis=1))) | (
                np.abs(rn).max(axis=1) <= NEWTON_TOL * (1.0 + np.abs(target[active]).max(axis=1))
            )
            idx = np.flatnonzero(active)
            done[idx[conv]] = True
        if not done.all():
            bad = np.flatnonzero(~done)[0]
            raise NonInvertiblePhi(f"Newton did not converge for target {tuple(q[bad])}")
        return x

    def _jets(self, q):
        p = self.solve(q)
        _, jac, hes = self.base.jets(p, 2)
        try:
            jinv = np.linalg.inv(jac)
        except np.linalg.LinAlgError:
            raise NonInvertiblePhi("singular Jacobian") from None
        inner = np.einsum("pjkl,pka,plb->pjab", hes, jinv, jinv)
        hinv = -np.einsum("pij,pjab->piab", jinv, inner)
        return p, jinv, hinv

    def jets(self, points, order=2):
        q = _pts(points, self.N)
        if order == 0:
            return (self.solve(q),)
        return self._jcache.get(q, self._jets)


class ComposedMap(Map):
    """``outer o inner`` with jets from the first and second order chain rule."""

    def __init__(self, outer: Map, inner: Map):
        if outer.vars.names != inner.vars.names:
            raise VarError("composed maps must share variables")
        self.outer, self.inner, self.vars = outer, inner, outer.vars
        self._cache = _LastCache()

    def _jets(self, p):
        vi, ji, hi = self.inner.jets(p, 2)
        vo, jo, ho = self.outer.jets(vi, 2)
        jac = np.einsum("pij,pja->pia", jo, ji)
        hes = np.einsum("pijk,pja,pkb->piab", ho, ji, ji) + np.einsum("pij,pjab->piab", jo, hi)
        return vo, jac, hes

    def jets(self, points, order=2):
        p = _pts(points, self.N)
        if order == 0:
            return (self.outer.value(self.inner.value(p)),)
        return self._cache.get(p, self._jets)

    def time_value(self, t):
        return self.outer.time_value(self.inner.time_value(t))

    def time_inverse(self, t):
        return self.inner.time_inverse(self.outer.time_inverse(t))

    def inverse(self):
        return ComposedMap(self.inner.inverse(), self.outer.inverse())


@dataclass(frozen=True, eq=False)
class FiniteTransformation:
    """``T = (Phi, B, eta, h)`` with numerically evaluable components.

    ``eta`` maps times to clock rates, ``rotation`` maps ``(P, N)`` points to
    ``(P, m, m)`` rotations and ``shift`` maps points to ``(P, m)`` vectors.
    """

    vars: VarSet
    m: int
    phi: Map
    eta: Callable
    rotation: Callable
    shift: Callable
    label: str = ""
    strong_hint: bool = False

    @property
    def N(self) -> int:
        return len(self.vars)

    def time_change(self, t):
        return self.phi.time_value(t)

    def time_inverse(self, t):
        return self.phi.time_inverse(t)

    def evaluate(self, points) -> dict:
        p = _pts(points, self.N)
        return {
            "phi": self.phi.value(p),
            "B": self.rotation(p),
            "eta": np.asarray(self.eta(p[:, -1]), dtype=float),
            "h": self.shift(p),
        }

    # -- constructors ----------------------------------------------------
    @classmethod
    def from_exprs(cls, vars, phi, eta="1", rotation=None, shift=None, m: int = None, box=None, check=True, label=""):
        """Build from expressions.

        ``phi`` lists the spatial components; its time component is the
        antiderivative of ``eta`` (which may depend on time only).
        """
        vars = VarSet.of(vars)
        phi = exprs_of(phi, vars)
        if len(phi) == len(vars):
            phi = phi[:-1]
        if len(phi) != len(vars) - 1:
            raise ShapeError(f"phi needs {len(vars) - 1} spatial components")
        eta_e = simplify(exprs_of([eta], vars)[0])
        if eta_e.free_vars - {vars.time}:
            raise VarError("eta may depend on time only")
        if m is None:
            m = len(rotation) if rotation is not None else len(shift) if shift is not None else None
        if m is None:
            raise ShapeError("cannot infer the noise dimension m")
        if rotation is None:
            rotation = [["1" if i == j else "0" for j in range(m)] for i in range(m)]
        if shift is None:
            shift = ["0"] * m
        rot = tuple(exprs_of(r, vars) for r in rotation)
        sh = exprs_of(shift, vars)
        if len(rot) != m or any(len(r) != m for r in rot):
            raise ShapeError(f"B must be {m}x{m}")
        if len(sh) != m:
            raise ShapeError(f"h must have {m} components")
        f = antiderivative(eta_e, vars.time)
        if box is None:
            box = [(-1.0, 1.0)] * (len(vars) - 1) + [(0.0, 1.0)]
        phi_map = ExprMap(tuple(phi) + (f,), vars, box=box)
        t = vars.time

        def eta_fn(tt, _e=eta_e):
            tt = np.asarray(tt, dtype=float)
            return np.broadcast_to(np.asarray(_e.compiled({t: tt}), dtype=float), tt.shape).copy()

        rot_fn = _matrix_fn(rot, vars)
        sh_fn = _vector_fn(sh, vars)
        strong = eta_e == ONE and all(e == ZERO for e in sh) and all(
            rot[i][j] == (ONE if i == j else ZERO) for i in range(m) for j in range(m)
        )
        T = cls(vars, m, phi_map, eta_fn, rot_fn, sh_fn, label, strong)
        if check:
            T.validate(sample_points(box, 64))
        return T

    @classmethod
    def identity(cls, vars, m):
        vars = VarSet.of(vars)
        return cls.from_exprs(vars, list(vars.spatial), "1", m=m, label="identity")

    @classmethod
    def from_descriptor(cls, d: dict, vars, m: int, box=None):
        vars = VarSet.of(vars)
        phi = d.get("phi", list(vars.spatial))
        return cls.from_exprs(vars, phi, d.get("eta", "1"), d.get("B"), d.get("h"), m=m, box=box)

    def validate(self, points, tol: float = 1e-9) -> None:
        p = _pts(points, self.N)
        eta = np.asarray(self.eta(p[:, -1]))
        if np.any(eta <= 0) or not np.all(np.isfinite(eta)):
            raise TransformationError("eta must be positive")
        rep = check_special_orthogonal(self.rotation, p, tol)
        if not rep.passed:
            raise TransformationError(f"B is not a rotation (deviation {rep.worst:.3g} at {rep.worst_point})")
        ts = np.unique(np.concatenate([[0.0], p[:, -1]]))
        f = self.time_change(ts)
        if abs(f[0]) > 1e-12 or np.any(np.diff(f) <= 0):
            raise TransformationError("time change must fix 0 and increase")


def _matrix_fn(rows, vars):
    rows = tuple(tuple(simplify(e) for e in r) for r in rows)
    m1, m2 = len(rows), len(rows[0])

    def fn(points):
        p = _pts(points, len(vars))
        env = {name: p[:, i] for i, name in enumerate(vars)}
        out = np.empty((p.shape[0], m1, m2))
        for i in range(m1):
            for j in range(m2):
                out[:, i, j] = rows[i][j].compiled(env)
        return out

    return fn


def _vector_fn(comps, vars):
    comps = tuple(simplify(e) for e in comps)

    def fn(points):
        p = _pts(points, len(vars))
        env = {name: p[:, i] for i, name in enumerate(vars)}
        out = np.empty((p.shape[0], len(comps)))
        for i, e in enumerate(comps):
            out[:, i] = e.compiled(env)
        return out

    return fn


# ---------------------------------------------------------------------------
# group operations


def compose(t2: FiniteTransformation, t1: FiniteTransformation) -> FiniteTransformation:
    """``T2 o T1``: apply ``T1`` first, then ``T2``."""
    if t2.vars.names != t1.vars.names or t2.m != t1.m:
        raise VarError("transformations act on different spaces")
    phi = ComposedMap(t2.phi, t1.phi)

    def eta(t):
        t = np.asarray(t, dtype=float)
        return np.asarray(t2.eta(t1.time_change(t))) * np.asarray(t1.eta(t))

    def rotation(points):
        p = _pts(points)
        return np.einsum("pij,pjk->pik", t2.rotation(t1.phi.value(p)), t1.rotation(p))

    def shift(points):
        p = _pts(points)
        b1 = t1.rotation(p)
        e1 = np.asarray(t1.eta(p[:, -1]))
        h2 = t2.shift(t1.phi.value(p))
        return np.sqrt(e1)[:, None] * np.einsum("pji,pj->pi", b1, h2) + t1.shift(p)

    label = f"({t2.label}) o ({t1.label})" if t1.label or t2.label else ""
    return FiniteTransformation(t1.vars, t1.m, phi, eta, rotation, shift, label, t1.strong_hint and t2.strong_hint)


def invert(T: FiniteTransformation) -> FiniteTransformation:
    """Group inverse of ``T``."""
    inv = T.phi.inverse()

    def eta(t):
        return 1.0 / np.asarray(T.eta(T.time_inverse(t)))

    def rotation(points):
        return np.swapaxes(T.rotation(inv.value(_pts(points))), -1, -2)

    def shift(points):
        p = inv.value(_pts(points))
        e = np.asarray(T.eta(p[:, -1]))
        return -np.einsum("pij,pj->pi", T.rotation(p), T.shift(p)) / np.sqrt(e)[:, None]

    return FiniteTransformation(T.vars, T.m, inv, eta, rotation, shift, f"inv({T.label})" if T.label else "", T.strong_hint)


def is_strong(T: FiniteTransformation, points=None, tol: float = 1e-12) -> bool:
    """True when ``eta = 1``, ``B = I`` and ``h = 0`` (only ``Phi`` acts)."""
    if T.strong_hint:
        return True
    if points is None:
        points = sample_points([(-1.0, 1.0)] * (T.N - 1) + [(0.0, 1.0)], 64)
    p = _pts(points, T.N)
    ev = T.evaluate(p)
    return bool(
        np.abs(ev["eta"] - 1.0).max() <= tol
        and np.abs(ev["B"] - np.eye(T.m)).max() <= tol
        and np.abs(ev["h"]).max() <= tol
    )


# ---------------------------------------------------------------------------
# action on coefficients


def coefficients_at_image(T: FiniteTransformation, model, p, jets=None):
    """Transformed drift and diffusion at ``Phi(p)``, computed from the preimage ``p``.

    Returns ``(Phi(p), mu', sigma')``. ``jets`` may supply precomputed
    ``(value, jacobian, hessian)`` of ``Phi`` at ``p``.
    """
    p = _pts(p, T.N)
    val, jac, hes = jets if jets is not None else T.phi.jets(p, 2)
    s = model.diffusion(p)
    lphi = generator_on_jets(model, p, jac, hes)
    h = T.shift(p)
    eta = np.asarray(T.eta(p[:, -1]), dtype=float)
    mu = (lphi + np.einsum("pij,pjk,pk->pi", jac, s, h)) / eta[:, None]
    sig = np.einsum("pij,pjk,plk->pil", jac, s, T.rotation(p)) / np.sqrt(eta)[:, None, None]
    return val, mu, sig


def transform_coefficients(T: FiniteTransformation, model) -> TransformedSde:
    """The model ``E_T(model)`` with coefficients evaluated through ``Phi^{-1}``."""
    if T.vars.names != model.vars.names:
        raise VarError("transformation and model use different variables")
    if T.m != model.m:
        raise ShapeError(f"transformation has m={T.m} but model has m={model.m}")
    inv = T.phi.inverse()
    cache = _LastCache()

    def both(q):
        return cache.get(q, lambda qq: coefficients_at_image(T, model, inv.value(qq))[1:])

    return TransformedSde(
        model.vars, model.m, lambda q: both(q)[0], lambda q: both(q)[1], getattr(model, "domain_box", ())
    )


# ---------------------------------------------------------------------------
# convenience constructors for the elementary kinds


def pure_rotation(vars, rotation, box=None):
    vars = VarSet.of(vars)
    return FiniteTransformation.from_exprs(vars, list(vars.spatial), "1", rotation, None, box=box, label="rotation")


def pure_time_change(vars, eta, m, box=None):
    vars = VarSet.of(vars)
    return FiniteTransformation.from_exprs(vars, list(vars.spatial), eta, None, None, m=m, box=box, label="time change")


def pure_measure_change(vars, shift, box=None):
    vars = VarSet.of(vars)
    return FiniteTransformation.from_exprs(vars, list(vars.spatial), "1", None, shift, box=box, label="measure change")


def pure_diffeomorphism(vars, phi, m, box=None):
    return FiniteTransformation.from_exprs(vars, phi, "1", None, None, m=m, box=box, label="diffeomorphism")


__all__ = [
    "Map", "ExprMap", "InverseMap", "ComposedMap", "MonotoneInverse", "FiniteTransformation",
    "compose", "invert", "is_strong", "transform_coefficients", "coefficients_at_image",
    "pure_rotation", "pure_time_change", "pure_measure_change", "pure_diffeomorphism",
]
