"""Infinitesimal symmetries, determining equations and flow reconstruction.

An infinitesimal symmetry ``V = (Y, C, tau, H)`` has a spatial vector field
``Y``, a time component ``m(t)`` with ``m' = tau``, an antisymmetric gauge
generator ``C`` and a Girsanov generator ``H``. In extended coordinates the
vector field is ``(Y, m)``. For a model with generator ``L`` the weak
determining equations read::

    Y(mu) - L(Y) - sigma H + tau mu = 0
    [Y, sigma] + tau/2 sigma + sigma C = 0

where ``[Y, sigma]^i_a = Y^k d_k sigma^i_a - d_k Y^i sigma^k_a``. The
diffusion-matrix (G-weak) variant replaces the second equation by
``Y(a) - DY a - a DY^T + tau a = 0`` with ``a = sigma sigma^T``.

The one-parameter group generated by ``V`` solves, from the identity::

    dPhi/dl = Y(Phi)     dB/dl = C(Phi) B
    deta/dl = tau(f) eta  dh/dl = sqrt(eta) B^{-1} H(Phi)
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .errors import FlowEscapedBox, ShapeError, StepSizeUnderflow, SymmetryError, VarError
from .expr import ZERO, Const, Expr, add, diff, mul, simplify, sub, to_string
from .fields import VarSet, check_antisymmetric, exprs_of, sample_points
from .quad import adaptive_simpson
from .sde import SdeModel, _sum, generator_expr
from .transform import FiniteTransformation, Map, _LastCache, _pts, coefficients_at_image

DEFAULT_STEPS = 1000


@dataclass(frozen=True, eq=False)
class InfinitesimalSymmetry:
    """``V = (Y, C, tau, H)`` over the variables of a model.

    ``Y`` lists the spatial components and ``m`` is the time component.
    """

    vars: VarSet
    Y: tuple
    m: Expr
    C: tuple
    tau: Expr
    H: tuple
    label: str = ""
    check_box: tuple = field(default=None)

    def __post_init__(self):
        vars = VarSet.of(self.vars)
        object.__setattr__(self, "vars", vars)
        Y = exprs_of(self.Y, vars)
        (m,) = exprs_of([self.m], vars)
        (tau,) = exprs_of([self.tau], vars)
        C = tuple(exprs_of(r, vars) for r in self.C)
        H = exprs_of(self.H, vars)
        if len(Y) == len(vars):
            Y = Y[:-1]
        if len(Y) != len(vars) - 1:
            raise ShapeError(f"Y needs {len(vars) - 1} spatial components")
        k = len(H)
        if len(C) != k or any(len(r) != k for r in C):
            raise ShapeError(f"C must be {k}x{k} to match H")
        for what, e in (("m", m), ("tau", tau)):
            extra = e.free_vars - {vars.time}
            if extra:
                raise VarError(f"{what} may depend on {vars.time!r} only, found {sorted(extra)}")
        for name, val in (("Y", Y), ("m", m), ("C", C), ("tau", tau), ("H", H)):
            object.__setattr__(self, name, val)
        self._validate()

    def _validate(self):
        t = self.vars.time
        box = self.check_box or [(-1.0, 1.0)] * (len(self.vars) - 1) + [(0.0, 1.0)]
        sym = [[simplify(add(self.C[i][j], self.C[j][i])) for j in range(self.noise_dim)] for i in range(self.noise_dim)]
        if any(e != ZERO for r in sym for e in r):
            rep = check_antisymmetric(self._c_fn, sample_points(box, 64), 1e-9)
            if not rep.passed:
                raise SymmetryError(f"C is not antisymmetric (deviation {rep.worst:.3g})")
        t_hi = box[-1][1]
        for s in np.linspace(0.0, t_hi, 9):
            integral = adaptive_simpson(lambda u: float(self.tau.compiled({t: u})), 0.0, float(s), tol=1e-13)
            mval = float(self.m.compiled({t: float(s)}))
            if abs(mval - integral) > 1e-9 * max(1.0, abs(integral)):
                raise SymmetryError(f"m(t) differs from the integral of tau at t={s}: {mval} vs {integral}")

    @property
    def noise_dim(self) -> int:
        return len(self.H)

    @property
    def N(self) -> int:
        return len(self.vars)

    @cached_property
    def y_ext(self) -> tuple:
        """Extended vector field ``(Y, m)``."""
        return tuple(self.Y) + (self.m,)

    @cached_property
    def dy_ext(self) -> tuple:
        return tuple(tuple(simplify(diff(e, v)) for v in self.vars) for e in self.y_ext)

    @cached_property
    def d2y_ext(self) -> tuple:
        return tuple(tuple(tuple(simplify(diff(d, v)) for v in self.vars) for d in row) for row in self.dy_ext)

    @cached_property
    def c_time_only(self) -> bool:
        return all(not (e.free_vars - {self.vars.time}) for r in self.C for e in r)

    @cached_property
    def h_is_zero(self) -> bool:
        return all(simplify(e) == ZERO for e in self.H)

    def _c_fn(self, points):
        return _eval_matrix(self.C, self.vars, _pts(points))

    def apply(self, f: Expr) -> Expr:
        """Directional derivative ``Y(f)`` along the extended field."""
        return simplify(_sum(mul(self.y_ext[i], diff(f, v)) for i, v in enumerate(self.vars)))

    def to_descriptor(self) -> dict:
        return {
            "Y": [to_string(e) for e in self.Y],
            "m": to_string(self.m),
            "C": [[to_string(e) for e in r] for r in self.C],
            "tau": to_string(self.tau),
            "H": [to_string(e) for e in self.H],
        }

    @classmethod
    def from_descriptor(cls, d: dict, vars, label: str = "", check_box=None) -> "InfinitesimalSymmetry":
        vars = VarSet.of(vars)
        Y = exprs_of(d["Y"], vars)
        m = d.get("m")
        if len(Y) == len(vars):
            if m is None:
                m = Y[-1]
            Y = Y[:-1]
        if m is None:
            raise SymmetryError("the time component m is required")
        H = d["H"]
        C = d.get("C", [["0"] * len(H) for _ in H])
        return cls(vars, Y, m, C, d["tau"], H, label or d.get("label", ""), check_box)


def _eval_vector(exprs, vars, p):
    env = {name: p[:, i] for i, name in enumerate(vars)}
    out = np.empty((p.shape[0], len(exprs)))
    for i, e in enumerate(exprs):
        out[:, i] = e.compiled(env)
    return out


def _eval_matrix(rows, vars, p):
    env = {name: p[:, i] for i, name in enumerate(vars)}
    r = len(rows)
    c = len(rows[0]) if r else 0
    out = np.empty((p.shape[0], r, c))
    for i in range(r):
        for j in range(c):
            out[:, i, j] = rows[i][j].compiled(env)
    return out


# ---------------------------------------------------------------------------
# determining equations


@dataclass(frozen=True, eq=False)
class DeterminingResidual:
    """Symbolic residuals plus their sup norm on a grid of points."""

    drift: tuple
    diffusion: tuple
    vars: VarSet
    points: np.ndarray
    drift_values: np.ndarray
    diffusion_values: np.ndarray

    @property
    def drift_sup(self) -> float:
        return float(np.abs(self.drift_values).max()) if self.drift_values.size else 0.0

    @property
    def diffusion_sup(self) -> float:
        return float(np.abs(self.diffusion_values).max()) if self.diffusion_values.size else 0.0

    @property
    def sup(self) -> float:
        return max(self.drift_sup, self.diffusion_sup)

    @property
    def worst_point(self) -> tuple:
        per = np.maximum(
            np.abs(self.drift_values).reshape(len(self.points), -1).max(axis=1),
            np.abs(self.diffusion_values).reshape(len(self.points), -1).max(axis=1),
        )
        return tuple(self.points[int(np.argmax(per))])

    def passed(self, tol: float) -> bool:
        return self.sup <= tol

    def as_dict(self) -> dict:
        return {
            "drift": [to_string(e) for e in self.drift],
            "diffusion": [[to_string(e) for e in r] for r in self.diffusion],
            "drift_sup": self.drift_sup,
            "diffusion_sup": self.diffusion_sup,
            "sup": self.sup,
            "worst_point": list(self.worst_point),
            "n_points": len(self.points),
        }


def _check_compatible(model: SdeModel, V: InfinitesimalSymmetry):
    if model.vars.names != V.vars.names:
        raise VarError(f"model variables {model.vars.names} differ from symmetry variables {V.vars.names}")
    if model.m != V.noise_dim:
        raise ShapeError(f"model has m={model.m} but the symmetry has {V.noise_dim} noise components")


def _drift_residual(model, V):
    names = model.vars.names
    mu, s = model.ext_mu, model.ext_sigma
    out = []
    for i in range(model.N):
        y_mu = _sum(mul(V.y_ext[k], diff(mu[i], names[k])) for k in range(model.N))
        l_y = generator_expr(model, V.y_ext[i])
        s_h = _sum(mul(s[i][a], V.H[a]) for a in range(model.m))
        out.append(simplify(add(sub(sub(y_mu, l_y), s_h), mul(V.tau, mu[i]))))
    return tuple(out)


def _grid(model, points, n=128):
    return model.sample_grid(n) if points is None else _pts(points, model.N)


def weak_determining_residual(model: SdeModel, V: InfinitesimalSymmetry, points=None) -> DeterminingResidual:
    """Residuals of the weak determining equations (drift and diffusion)."""
    _check_compatible(model, V)
    names = model.vars.names
    s, N, m = model.ext_sigma, model.N, model.m
    r1 = _drift_residual(model, V)
    half_tau = mul(Const(0.5), V.tau)
    r2 = []
    for i in range(N):
        row = []
        for a in range(m):
            bracket = sub(
                _sum(mul(V.y_ext[k], diff(s[i][a], names[k])) for k in range(N)),
                _sum(mul(V.dy_ext[i][k], s[k][a]) for k in range(N)),
            )
            sc = _sum(mul(s[i][b], V.C[b][a]) for b in range(m))
            row.append(simplify(add(add(bracket, mul(half_tau, s[i][a])), sc)))
        r2.append(tuple(row))
    p = _grid(model, points)
    return DeterminingResidual(r1, tuple(r2), model.vars, p, _eval_vector(r1, model.vars, p), _eval_matrix(r2, model.vars, p))


def gweak_determining_residual(model: SdeModel, V: InfinitesimalSymmetry, points=None) -> DeterminingResidual:
    """Residuals with the diffusion equation stated for ``a = sigma sigma^T``."""
    _check_compatible(model, V)
    names = model.vars.names
    a, N = model.ext_a, model.N
    r1 = _drift_residual(model, V)
    r2 = []
    for i in range(N):
        row = []
        for j in range(N):
            ya = _sum(mul(V.y_ext[k], diff(a[i][j], names[k])) for k in range(N))
            left = _sum(mul(V.dy_ext[i][k], a[k][j]) for k in range(N))
            right = _sum(mul(a[i][k], V.dy_ext[j][k]) for k in range(N))
            row.append(simplify(add(sub(sub(ya, left), right), mul(V.tau, a[i][j]))))
        r2.append(tuple(row))
    p = _grid(model, points)
    return DeterminingResidual(r1, tuple(r2), model.vars, p, _eval_vector(r1, model.vars, p), _eval_matrix(r2, model.vars, p))


# ---------------------------------------------------------------------------
# flow reconstruction


@dataclass
class FlowData:
    """Components of ``T_lambda`` at a batch of points."""

    lam: float
    points: np.ndarray
    phi: np.ndarray
    B: np.ndarray
    eta: np.ndarray
    h: np.ndarray
    jacobian: np.ndarray = None
    hessian: np.ndarray = None
    richardson_error: float = None

    @property
    def f(self) -> np.ndarray:
        return self.phi[:, -1]


def _polar(b):
    """Nearest rotation (polar factor) of each matrix in a batch."""
    if b.shape[-1] == 2:
        theta = np.arctan2(b[..., 1, 0] - b[..., 0, 1], b[..., 0, 0] + b[..., 1, 1])
        c, s = np.cos(theta), np.sin(theta)
        out = np.empty_like(b)
        out[..., 0, 0], out[..., 0, 1], out[..., 1, 0], out[..., 1, 1] = c, -s, s, c
        return out
    if b.shape[-1] == 1:
        return np.sign(b)
    u, _, vt = np.linalg.svd(b)
    return u @ vt


def _check_steps(lam, steps):
    if steps < 1:
        raise StepSizeUnderflow("at least one integration step is required")
    if lam != 0.0 and abs(lam) / steps < 1e-14 * max(1.0, abs(lam)):
        raise StepSizeUnderflow(f"step size {abs(lam) / steps:.3g} is below the resolvable limit")


def _integrate_full(V, lam, p, steps, jets, box=None, phi_only=False):
    """RK4 flow of the full system. ``phi_only`` skips ``B``, ``eta`` and ``h``,
    which do not feed back into ``Phi``."""
    _check_steps(lam, steps)
    vars = V.vars
    P, N, m = p.shape[0], V.N, V.noise_dim
    y_ext = V.y_ext
    dy = V.dy_ext if jets >= 1 else None
    d2y = V.d2y_ext if jets >= 2 else None
    h_zero = V.h_is_zero

    def rhs(state):
        phi, B, eta, h, J, Hs = state
        dphi = _eval_vector(y_ext, vars, phi)
        if phi_only:
            return (dphi, None, None, None, None, None)
        dB = _eval_matrix(V.C, vars, phi) @ B
        deta = np.asarray(V.tau.compiled({vars.time: phi[:, -1]}), dtype=float) * eta
        if h_zero:
            dh = np.zeros_like(h)
        else:
            hv = _eval_vector(V.H, vars, phi)
            dh = np.sqrt(eta)[:, None] * (np.swapaxes(B, 1, 2) @ hv[..., None])[..., 0]
        dJ = dHs = None
        if J is not None:
            DY = _eval_matrix(dy, vars, phi)
            dJ = DY @ J
            if Hs is not None:
                D2Y = _eval_matrix([[e for col in row for e in col] for row in d2y], vars, phi).reshape(P, N, N, N)
                dHs = np.einsum("pijk,pja,pkb->piab", D2Y, J, J) + np.einsum("pij,pjab->piab", DY, Hs)
        return (dphi, dB, deta, dh, dJ, dHs)

    def axpy(state, k, c):
        return tuple(None if s is None else s + c * d for s, d in zip(state, k))

    if phi_only:
        jets = 0
    state = (
        p.copy(),
        None if phi_only else np.broadcast_to(np.eye(m), (P, m, m)).copy(),
        None if phi_only else np.ones(P),
        None if phi_only else np.zeros((P, m)),
        np.broadcast_to(np.eye(N), (P, N, N)).copy() if jets >= 1 else None,
        np.zeros((P, N, N, N)) if jets >= 2 else None,
    )
    hstep = lam / steps
    for _ in range(steps):
        k1 = rhs(state)
        k2 = rhs(axpy(state, k1, 0.5 * hstep))
        k3 = rhs(axpy(state, k2, 0.5 * hstep))
        k4 = rhs(axpy(state, k3, hstep))
        state = tuple(
            None if s is None else s + (hstep / 6.0) * (a + 2.0 * b + 2.0 * c + d)
            for s, a, b, c, d in zip(state, k1, k2, k3, k4)
        )
        phi, B = state[0], None if phi_only else _polar(state[1])
        state = (phi, B) + state[2:]
        if not np.all(np.isfinite(phi)):
            raise FlowEscapedBox("flow produced non-finite values")
        if box is not None:
            lo, hi = np.asarray(box)[:, 0], np.asarray(box)[:, 1]
            if np.any(phi < lo - 1e-12) or np.any(phi > hi + 1e-12):
                raise FlowEscapedBox("flow left the working box")
    return state


def _integrate_time(V, lam, t, steps, rotation=False):
    """Flow of the time-only subsystem ``(f, eta[, B])`` started at times ``t``."""
    _check_steps(lam, steps)
    tv = V.vars.time
    t = np.asarray(t, dtype=float)
    m = V.noise_dim

    def c_at(f):
        out = np.empty(f.shape + (m, m))
        for i in range(m):
            for j in range(m):
                out[..., i, j] = V.C[i][j].compiled({tv: f})
        return out

    def rhs(f, eta, B):
        df = np.broadcast_to(np.asarray(V.m.compiled({tv: f}), dtype=float), f.shape)
        deta = np.asarray(V.tau.compiled({tv: f}), dtype=float) * eta
        dB = c_at(f) @ B if rotation else None
        return df, deta, dB

    f, eta = t.copy(), np.ones_like(t)
    B = np.broadcast_to(np.eye(m), t.shape + (m, m)).copy() if rotation else None
    hs = lam / steps
    for _ in range(steps):
        a = rhs(f, eta, B)
        b = rhs(f + 0.5 * hs * a[0], eta + 0.5 * hs * a[1], None if B is None else B + 0.5 * hs * a[2])
        c = rhs(f + 0.5 * hs * b[0], eta + 0.5 * hs * b[1], None if B is None else B + 0.5 * hs * b[2])
        d = rhs(f + hs * c[0], eta + hs * c[1], None if B is None else B + hs * c[2])
        f = f + hs / 6.0 * (a[0] + 2 * b[0] + 2 * c[0] + d[0])
        eta = eta + hs / 6.0 * (a[1] + 2 * b[1] + 2 * c[1] + d[1])
        if B is not None:
            B = _polar(B + hs / 6.0 * (a[2] + 2 * b[2] + 2 * c[2] + d[2]))
    return f, eta, B


def reconstruct_flow(
    V: InfinitesimalSymmetry, lam: float, points, steps: int = DEFAULT_STEPS, jets: int = 0, box=None,
    richardson: bool = False,
) -> FlowData:
    """Integrate the flow of ``V`` up to ``lam`` at each of ``points`` by RK4.

    ``B`` is projected back onto the rotations (polar factor) after every
    step. ``jets`` selects how many derivatives of ``Phi`` are carried by the
    variational equations. With ``richardson=True`` the run is repeated at
    half the step size and the largest difference is reported.
    """
    p = _pts(points, V.N)
    phi, B, eta, h, J, Hs = _integrate_full(V, float(lam), p, int(steps), jets, box)
    err = None
    if richardson:
        fine = _integrate_full(V, float(lam), p, 2 * int(steps), 0, box)
        err = float(max(np.abs(fine[0] - phi).max(), np.abs(fine[1] - B).max(), np.abs(fine[3] - h).max(initial=0.0)))
    return FlowData(float(lam), p, phi, B, eta, h, J, Hs, err)


class FlowMap(Map):
    """``Phi_lambda`` of a symmetry, with jets from the variational equations."""

    def __init__(self, V: InfinitesimalSymmetry, lam: float, steps: int = DEFAULT_STEPS):
        self.V, self.lam, self.steps = V, float(lam), int(steps)
        self.vars = V.vars
        self._cache0 = _LastCache()
        self._cache2 = _LastCache()

    def jets(self, points, order=2):
        p = _pts(points, self.N)
        if order == 0:
            if self._cache2.key == (p.shape, p.tobytes()):
                return (self._cache2.value[0],)
            return (self._cache0.get(p, lambda q: _integrate_full(self.V, self.lam, q, self.steps, 0, phi_only=True)[0]),)

        def run(q):
            st = _integrate_full(self.V, self.lam, q, self.steps, 2)
            return st[0], st[4], st[5]

        return self._cache2.get(p, run)

    def time_value(self, t):
        t = np.asarray(t, dtype=float)
        uniq, inv = np.unique(t.ravel(), return_inverse=True)
        return _integrate_time(self.V, self.lam, uniq, self.steps)[0][inv].reshape(t.shape)

    def time_inverse(self, t):
        t = np.asarray(t, dtype=float)
        uniq, inv = np.unique(t.ravel(), return_inverse=True)
        return _integrate_time(self.V, -self.lam, uniq, self.steps)[0][inv].reshape(t.shape)

    def inverse(self):
        return FlowMap(self.V, -self.lam, self.steps)


def flow_transformation(V: InfinitesimalSymmetry, lam: float, steps: int = DEFAULT_STEPS) -> FiniteTransformation:
    """The finite transformation ``T_lambda`` generated by ``V``.

    Components that depend on time only (``eta`` always, ``B`` when ``C``
    depends on time only) are integrated once per distinct time.
    """
    lam = float(lam)
    phi = FlowMap(V, lam, steps)
    full = _LastCache()

    def full_state(p):
        return full.get(p, lambda q: _integrate_full(V, lam, q, steps, 0))

    def eta(t):
        t = np.asarray(t, dtype=float)
        uniq, inv = np.unique(t.ravel(), return_inverse=True)
        return _integrate_time(V, lam, uniq, steps)[1][inv].reshape(t.shape)

    def rotation(points):
        p = _pts(points, V.N)
        if V.c_time_only:
            uniq, inv = np.unique(p[:, -1], return_inverse=True)
            return _integrate_time(V, lam, uniq, steps, rotation=True)[2][inv]
        return full_state(p)[1]

    def shift(points):
        p = _pts(points, V.N)
        if V.h_is_zero:
            return np.zeros((p.shape[0], V.noise_dim))
        return full_state(p)[3]

    label = f"flow({V.label}, {lam:g})" if V.label else f"flow({lam:g})"
    return FiniteTransformation(V.vars, V.noise_dim, phi, eta, rotation, shift, label)


# ---------------------------------------------------------------------------
# finite symmetry check


@dataclass
class FiniteSymmetryReport:
    lambdas: list
    drift_violation: list
    diffusion_violation: list
    tol: float
    kind: str

    @property
    def violation(self) -> list:
        return [max(a, b) for a, b in zip(self.drift_violation, self.diffusion_violation)]

    @property
    def passed(self) -> bool:
        return all(v <= self.tol for v in self.violation)

    def __bool__(self):
        return self.passed

    def as_dict(self) -> dict:
        return {
            "lambdas": list(self.lambdas),
            "drift_violation": list(self.drift_violation),
            "diffusion_violation": list(self.diffusion_violation),
            "tol": self.tol,
            "kind": self.kind,
            "passed": self.passed,
        }


def _fd_hessian(vals, v0, P, N, pairs, base, h):
    hes = np.empty((P, N, N, N))
    for a in range(N):
        wp, wm = vals[base + 2 * a], vals[base + 2 * a + 1]
        hes[:, :, a, a] = (wp - 2 * v0 + wm) / h**2
    off = base + 2 * N
    for k, (a, b) in enumerate(pairs):
        pp, pm, mp, mm = vals[off + 4 * k: off + 4 * k + 4]
        hes[:, :, a, b] = hes[:, :, b, a] = (pp - pm - mp + mm) / (4 * h**2)
    return hes


def fd_jets(value_fn, p, step: float = 1e-5, step2: float = 1e-3):
    """Central finite-difference Jacobian and Hessian of a map at ``p``.

    The Hessian uses second differences at ``step2`` and ``2*step2``
    combined by Richardson extrapolation (fourth order in the step).
    """
    P, N = p.shape
    eye = np.eye(N)
    pairs = [(a, b) for a in range(N) for b in range(a + 1, N)]
    stencil = [p]
    for a in range(N):
        stencil += [p + step * eye[a], p - step * eye[a]]

    def second(h):
        pts = []
        for a in range(N):
            pts += [p + h * eye[a], p - h * eye[a]]
        for a, b in pairs:
            ea, eb = h * eye[a], h * eye[b]
            pts += [p + ea + eb, p + ea - eb, p - ea + eb, p - ea - eb]
        return pts

    base1 = len(stencil)
    stencil += second(step2)
    base2 = len(stencil)
    stencil += second(2 * step2)
    vals = value_fn(np.concatenate(stencil, axis=0)).reshape(len(stencil), P, N)
    v0 = vals[0]
    jac = np.empty((P, N, N))
    for a in range(N):
        jac[:, :, a] = (vals[1 + 2 * a] - vals[2 + 2 * a]) / (2 * step)
    h1 = _fd_hessian(vals, v0, P, N, pairs, base1, step2)
    h2 = _fd_hessian(vals, v0, P, N, pairs, base2, 2 * step2)
    return v0, jac, (4.0 * h1 - h2) / 3.0


def verify_finite_symmetry(
    model: SdeModel, V: InfinitesimalSymmetry, lambdas, points=None, tol: float = 1e-5, kind: str = "weak",
    steps: int = DEFAULT_STEPS, derivatives: str = "fd", fd_step: float = 1e-5, fd_step2: float = 1e-3,
) -> FiniteSymmetryReport:
    """Check that ``T_lambda`` maps the model's coefficients onto themselves.

    For each ``lambda`` the transformed coefficients are computed at
    ``Phi(p)`` from the preimage grid ``p`` and compared with the original
    coefficients at ``Phi(p)``: drift and ``sigma`` for ``kind='weak'``,
    drift and ``sigma sigma^T`` for ``kind='gweak'``.
    """
    _check_compatible(model, V)
    if kind not in ("weak", "gweak"):
        raise ValueError("kind must be 'weak' or 'gweak'")
    p = model.sample_grid(64) if points is None else _pts(points, model.N)
    dv, sv = [], []
    for lam in lambdas:
        T = flow_transformation(V, lam, steps)
        if derivatives == "fd":
            jets = fd_jets(T.phi.value, p, fd_step, fd_step2)
        elif derivatives == "variational":
            jets = T.phi.jets(p, 2)
        else:
            raise ValueError("derivatives must be 'fd' or 'variational'")
        q, mu_t, sig_t = coefficients_at_image(T, model, p, jets)
        mu0, sig0 = model.drift(q), model.diffusion(q)
        dv.append(float(np.abs(mu_t - mu0).max()))
        if kind == "weak":
            sv.append(float(np.abs(sig_t - sig0).max()))
        else:
            a_t = np.einsum("pik,pjk->pij", sig_t, sig_t)
            a_0 = np.einsum("pik,pjk->pij", sig0, sig0)
            sv.append(float(np.abs(a_t - a_0).max()))
    return FiniteSymmetryReport([float(x) for x in lambdas], dv, sv, tol, kind)
