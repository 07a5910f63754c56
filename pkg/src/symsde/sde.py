"""Itô SDE models, their generator and gauge equivalence.

A model is ``dX = mu(X, t) dt + sigma(X, t) dW`` on the state variables of a
:class:`~symsde.fields.VarSet`. Geometric operations work in *extended*
coordinates, the state followed by time. When the time variable is itself a
state coordinate (drift component 1, zero diffusion row) the state already
is the extended point. Otherwise a unit drift and a zero diffusion row are
appended internally.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Protocol, Sequence

import numpy as np

from .errors import ShapeError, VarError, VarMismatch
from .expr import ONE, ZERO, Const, Expr, add, diff, mul, parse, simplify
from .fields import MatrixField, ScalarField, VarSet, VectorField, exprs_of, sample_points


class NumericSde(Protocol):
    """Anything exposing extended drift and diffusion on ``(P, N)`` points."""

    vars: VarSet
    m: int

    def drift(self, points: np.ndarray) -> np.ndarray: ...

    def diffusion(self, points: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class SdeModel:
    """Symbolic Itô SDE.

    ``mu`` has one component per state variable and ``sigma`` is
    ``n x m``. ``domain_box`` gives one ``(low, high)`` interval per
    variable of ``vars`` (time included); it is the working region for
    residual grids. ``log_coordinates`` lists state indices that the
    simulator advances in logarithmic form to keep them positive.
    """

    vars: VarSet
    mu: VectorField
    sigma: MatrixField
    domain_box: tuple
    initial_point: tuple
    log_coordinates: tuple = ()
    name: str = ""
    parameters: dict = field(default_factory=dict)

    def __post_init__(self):
        vars = VarSet.of(self.vars)
        object.__setattr__(self, "vars", vars)
        mu = self.mu if isinstance(self.mu, VectorField) else VectorField(exprs_of(self.mu, vars), vars)
        sigma = self.sigma
        if not isinstance(sigma, MatrixField):
            sigma = MatrixField(tuple(exprs_of(row, vars) for row in sigma), vars)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        n, N = len(mu), len(vars)
        if sigma.shape[0] != n:
            raise ShapeError(f"sigma has {sigma.shape[0]} rows but mu has {n} components")
        if sigma.shape[1] < 1:
            raise ShapeError("sigma needs at least one column")
        if n not in (N, N - 1):
            raise ShapeError(f"{n} state components do not match {N} variables (time last)")
        if n == N:
            if simplify(mu[n - 1]) != ONE or any(simplify(e) != ZERO for e in sigma.entries[n - 1]):
                raise ShapeError("a time state coordinate needs drift 1 and a zero diffusion row")
        box = tuple((float(lo), float(hi)) for lo, hi in self.domain_box)
        if len(box) != N:
            raise ShapeError(f"domain box has {len(box)} intervals, expected {N}")
        object.__setattr__(self, "domain_box", box)
        x0 = tuple(float(v) for v in self.initial_point)
        if len(x0) == N - 1 and n == N:
            x0 = x0 + (0.0,)
        if len(x0) != n:
            raise ShapeError(f"initial point has {len(x0)} entries, expected {n}")
        object.__setattr__(self, "initial_point", x0)
        object.__setattr__(self, "log_coordinates", tuple(int(i) for i in self.log_coordinates))
        for i in self.log_coordinates:
            if not 0 <= i < len(vars.spatial) or x0[i] <= 0:
                raise ShapeError("log coordinates must be spatial and start positive")

    # -- sizes -----------------------------------------------------------
    @property
    def n(self) -> int:
        return len(self.mu)

    @property
    def m(self) -> int:
        return self.sigma.shape[1]

    @property
    def N(self) -> int:
        return len(self.vars)

    @property
    def time_is_state(self) -> bool:
        return self.n == self.N

    # -- extended coefficients ------------------------------------------
    @cached_property
    def ext_mu(self) -> tuple:
        comps = tuple(self.mu.components)
        return comps if self.time_is_state else comps + (ONE,)

    @cached_property
    def ext_sigma(self) -> tuple:
        rows = tuple(self.sigma.entries)
        return rows if self.time_is_state else rows + (tuple(ZERO for _ in range(self.m)),)

    @cached_property
    def ext_mu_field(self) -> VectorField:
        return VectorField(self.ext_mu, self.vars)

    @cached_property
    def ext_sigma_field(self) -> MatrixField:
        return MatrixField(self.ext_sigma, self.vars)

    @cached_property
    def ext_a(self) -> tuple:
        """Diffusion matrix ``a = sigma sigma^T`` in extended coordinates."""
        s = self.ext_sigma
        N = self.N
        return tuple(
            tuple(simplify(_sum(mul(s[i][k], s[j][k]) for k in range(self.m))) for j in range(N)) for i in range(N)
        )

    def drift(self, points) -> np.ndarray:
        return self.ext_mu_field.evaluate(points)

    def diffusion(self, points) -> np.ndarray:
        return self.ext_sigma_field.evaluate(points)

    # -- state/point conversion -----------------------------------------
    def points_from_state(self, states: np.ndarray, t) -> np.ndarray:
        """Extended points from state arrays ``(..., n)`` at times ``t``."""
        states = np.asarray(states, dtype=float)
        if self.time_is_state:
            pts = states.copy()
            pts[..., -1] = t
            return pts
        tt = np.broadcast_to(np.asarray(t, dtype=float), states.shape[:-1])
        return np.concatenate([states, tt[..., None]], axis=-1)

    def state_from_points(self, points: np.ndarray) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return points if self.time_is_state else points[..., :-1]

    def sample_grid(self, n: int = 128) -> np.ndarray:
        return sample_points(self.domain_box, n)

    # -- descriptor ------------------------------------------------------
    def to_descriptor(self) -> dict:
        return {
            "n": self.n,
            "m": self.m,
            "vars": list(self.vars.names),
            "mu": [str(c) for c in self.mu.components],
            "sigma": [[str(e) for e in row] for row in self.sigma.entries],
            "domain_box": [list(b) for b in self.domain_box],
            "initial_point": list(self.initial_point),
            "log_coordinates": list(self.log_coordinates),
        }

    @classmethod
    def from_descriptor(cls, d: dict, name: str = "") -> "SdeModel":
        vars = VarSet(tuple(d["vars"]))
        mu = tuple(parse(s, vars.names) for s in d["mu"])
        sigma = tuple(tuple(parse(s, vars.names) for s in row) for row in d["sigma"])
        if "n" in d and int(d["n"]) != len(mu):
            raise ShapeError(f"descriptor says n={d['n']} but mu has {len(mu)} components")
        if "m" in d and sigma and int(d["m"]) != len(sigma[0]):
            raise ShapeError(f"descriptor says m={d['m']} but sigma has {len(sigma[0])} columns")
        box = d.get("domain_box")
        if box is None:
            box = [[-1.0, 1.0]] * (len(vars) - 1) + [[0.0, 1.0]]
        x0 = d.get("initial_point", [0.0] * len(mu))
        return cls(vars, mu, sigma, box, x0, tuple(d.get("log_coordinates", ())), name or d.get("name", ""))


def _sum(terms) -> Expr:
    out = ZERO
    for t in terms:
        out = add(out, t)
    return out


def apply_generator(model: SdeModel, f) -> ScalarField:
    """Symbolic ``L f = mu . grad f + 1/2 a : Hess f`` (including the time derivative)."""
    if isinstance(f, ScalarField):
        if f.vars.names != model.vars.names:
            raise VarMismatch(f"field over {f.vars.names} applied to model over {model.vars.names}")
        e = f.expr
    elif isinstance(f, Expr):
        e = f
    else:
        e = parse(f, model.vars.names)
    extra = e.free_vars - set(model.vars.names)
    if extra:
        raise VarMismatch(f"expression uses variables {sorted(extra)} unknown to the model")
    return ScalarField(generator_expr(model, e), model.vars)


def generator_expr(model: SdeModel, e: Expr) -> Expr:
    names = model.vars.names
    grad = [simplify(diff(e, v)) for v in names]
    out = _sum(mul(model.ext_mu[i], grad[i]) for i in range(len(names)))
    a = model.ext_a
    second = ZERO
    for i, vi in enumerate(names):
        if grad[i] == ZERO:
            continue
        for j, vj in enumerate(names):
            if a[i][j] == ZERO:
                continue
            second = add(second, mul(a[i][j], diff(grad[i], vj)))
    return simplify(add(out, mul(Const(0.5), second)))


def generator_on_jets(model, points, jac, hess) -> np.ndarray:
    """Numeric ``L Phi`` from the Jacobian ``(P,N,N)`` and Hessian ``(P,N,N,N)`` of a map."""
    mu = model.drift(points)
    s = model.diffusion(points)
    a = np.einsum("pjk,plk->pjl", s, s)
    return np.einsum("pij,pj->pi", jac, mu) + 0.5 * np.einsum("pijl,pjl->pi", hess, a)


@dataclass(frozen=True)
class GaugeReport:
    equivalent: bool
    drift_deviation: float
    diffusion_deviation: float
    worst_point: tuple
    tol: float

    def __bool__(self):
        return self.equivalent


def gauge_equivalent(a, b, points=None, tol: float = 1e-9) -> GaugeReport:
    """Compare drifts and diffusion matrices ``sigma sigma^T`` pointwise.

    Two models are gauge equivalent when they differ only by a rotation of
    the driving noise, which leaves ``sigma sigma^T`` unchanged.
    """
    if tuple(a.vars.names) != tuple(b.vars.names):
        raise VarMismatch("models are over different variables")
    if points is None:
        src = a if isinstance(a, SdeModel) else b
        points = sample_points(src.domain_box, 64)
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    dmu = np.abs(a.drift(pts) - b.drift(pts)).max(axis=1)
    sa, sb = a.diffusion(pts), b.diffusion(pts)
    aa = np.einsum("pik,pjk->pij", sa, sa)
    bb = np.einsum("pik,pjk->pij", sb, sb)
    dsig = np.abs(aa - bb).max(axis=(1, 2))
    worst = np.maximum(dmu, dsig)
    k = int(np.argmax(worst))
    return GaugeReport(
        bool(worst[k] <= tol), float(dmu.max()), float(dsig.max()), tuple(pts[k]), tol
    )


def rotate(model: SdeModel, rotation) -> SdeModel:
    """Model with diffusion ``sigma B^{-1} = sigma B^T`` for a rotation field ``B``."""
    if not isinstance(rotation, MatrixField):
        rotation = MatrixField(tuple(exprs_of(r, model.vars) for r in rotation), model.vars)
    if rotation.shape != (model.m, model.m):
        raise ShapeError(f"rotation must be {model.m}x{model.m}")
    s = model.sigma.entries
    new = tuple(
        tuple(simplify(_sum(mul(s[i][k], rotation[j, k]) for k in range(model.m))) for j in range(model.m))
        for i in range(model.n)
    )
    return SdeModel(
        model.vars, model.mu, MatrixField(new, model.vars), model.domain_box, model.initial_point,
        model.log_coordinates, model.name, dict(model.parameters),
    )


@dataclass(eq=False)
class TransformedSde:
    """Numerically represented coefficients produced by a transformation."""

    vars: VarSet
    m: int
    drift_fn: object
    diffusion_fn: object
    domain_box: tuple = ()

    def drift(self, points) -> np.ndarray:
        return self.drift_fn(np.atleast_2d(np.asarray(points, dtype=float)))

    def diffusion(self, points) -> np.ndarray:
        return self.diffusion_fn(np.atleast_2d(np.asarray(points, dtype=float)))


def check_vars_time_only(e: Expr, vars: VarSet, what: str) -> None:
    extra = e.free_vars - {vars.time}
    if extra:
        raise VarError(f"{what} may depend on {vars.time!r} only, found {sorted(extra)}")


def model_from_strings(vars: Sequence[str], mu, sigma, box, x0, **kw) -> SdeModel:
    vs = VarSet(tuple(vars))
    return SdeModel(vs, exprs_of(mu, vs), tuple(exprs_of(r, vs) for r in sigma), box, x0, **kw)
