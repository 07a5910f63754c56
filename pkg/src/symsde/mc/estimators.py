"""Monte Carlo estimators for quasi-invariance and integration by parts.

Each estimator returns an :class:`EstimatorResult` whose ``estimate`` is a
sample mean that should vanish, with a standard error from the per-path
totals. Every per-path quantity is assembled in global path order before
reduction, so results do not depend on chunking or threads.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from ..errors import MomentDiagnosticWarning, TimeOutOfRange, UnboundedFunctionalWarning, VarMismatch
from ..expr import ZERO, Const, Expr, Unary, Binary, Var, diff, mul, parse, simplify
from ..fields import ScalarField, VarSet
from ..sde import SdeModel, generator_expr
from ..symmetry import InfinitesimalSymmetry, _eval_matrix, _eval_vector
from ..transform import FiniteTransformation
from .engine import SimulationConfig, map_chunks
from .paths import LOG_WEIGHT_LIMIT, girsanov_weight, interpolate_states, step_points
from .rng import standard_normals

MOMENT_BOUND = 1e8


@dataclass
class EstimatorResult:
    """Sample mean of a quantity expected to be zero, with its diagnostics."""

    estimate: float
    std_error: float
    n_paths: int
    n_effective: float
    terms: dict
    term_std_errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def within(self, k: float = 3.0, abs_tol: float = 0.0, target: float = 0.0) -> bool:
        return abs(self.estimate - target) <= k * self.std_error + abs_tol

    def as_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "std_error": self.std_error,
            "n_paths": self.n_paths,
            "n_effective": self.n_effective,
            "terms": dict(self.terms),
            "term_std_errors": dict(self.term_std_errors),
            "diagnostics": dict(self.diagnostics),
        }


def _mean_se(x: np.ndarray):
    n = len(x)
    return float(np.mean(x)), float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else float("nan")


def _scalar(expr_or_str, vars: VarSet) -> Expr:
    if isinstance(expr_or_str, ScalarField):
        if expr_or_str.vars.names != vars.names:
            raise VarMismatch("functional is defined over different variables")
        return expr_or_str.expr
    if isinstance(expr_or_str, Expr):
        extra = expr_or_str.free_vars - set(vars.names)
        if extra:
            raise VarMismatch(f"functional uses unknown variables {sorted(extra)}")
        return expr_or_str
    return parse(expr_or_str, vars.names)


def _eval(e: Expr, vars: VarSet, pts: np.ndarray) -> np.ndarray:
    env = {name: pts[..., i] for i, name in enumerate(vars)}
    return np.broadcast_to(np.asarray(e.compiled(env), dtype=float), pts.shape[:-1])


# ---------------------------------------------------------------------------
# quasi-invariance


def estimate_quasi_invariance(
    model: SdeModel, T: FiniteTransformation, g, t: float, cfg: SimulationConfig,
    common_random_numbers: bool = True, log_weight_limit: float = LOG_WEIGHT_LIMIT,
) -> EstimatorResult:
    """Estimate ``E[g(X_t)] - E[g(X'_t) Z]`` for a symmetry ``T`` of the model.

    ``X'_t = Phi(X_s, s)`` with ``s = f^{-1}(t)`` (linear interpolation
    between grid points) and ``Z`` is the Girsanov density taken at the first
    grid time not before ``max(t, s)``; by the martingale property any later
    time gives the same expectation. ``t`` must be on the simulation grid.
    """
    ge = _scalar(g, model.vars)
    k_t = cfg.step_index(t)
    s = float(np.asarray(T.time_inverse(np.array([t])))[0])
    if s > cfg.horizon * (1 + 1e-12):
        raise TimeOutOfRange(f"f^-1(t) = {s} exceeds the simulated horizon {cfg.horizon}")
    k_z = min(cfg.steps, max(k_t, int(np.ceil(s / cfg.dt - 1e-9))))

    def direct(ens):
        return {"direct": _eval(ge, model.vars, model.points_from_state(ens.states[:, k_t], t))}

    def transformed(ens):
        xs = interpolate_states(ens, s)
        q = T.phi.value(model.points_from_state(xs, s))
        gz = girsanov_weight(ens, model, T.shift, k_z, log_weight_limit)
        return {"transformed": _eval(ge, model.vars, q) * gz.weight, "z": gz.weight, "flag": gz.flagged}

    if common_random_numbers:
        out = map_chunks(model, cfg, lambda e: {**direct(e), **transformed(e)})
        second = out
    else:
        out = map_chunks(model, cfg, direct)
        alt = SimulationConfig(cfg.n_paths, cfg.dt, cfg.horizon, (cfg.seed + 0x9E3779B97F4A7C15) % 2**64,
                               cfg.chunk_size, cfg.threads)
        second = map_chunks(model, alt, transformed)
    d_mean, d_se = _mean_se(out["direct"])
    t_mean, t_se = _mean_se(second["transformed"])
    if common_random_numbers:
        est, se = _mean_se(out["direct"] - second["transformed"])
    else:
        est, se = d_mean - t_mean, float(np.hypot(d_se, t_se))
    z = second["z"]
    ess = float(z.sum() ** 2 / np.sum(z * z)) if np.all(np.isfinite(z)) else float("nan")
    z_mean, z_se = _mean_se(z)
    return EstimatorResult(
        est, se, cfg.n_paths, ess,
        {"direct": d_mean, "transformed": -t_mean},
        {"direct": d_se, "transformed": t_se},
        {
            "preimage_time": s, "weight_time": k_z * cfg.dt, "mean_weight": z_mean, "mean_weight_se": z_se,
            "n_flagged": int(second["flag"].sum()), "common_random_numbers": common_random_numbers,
        },
    )


# ---------------------------------------------------------------------------
# integration by parts


_BOUNDED_FUNCS = ("sin", "cos", "tanh")


def structurally_bounded(e: Expr, bounded_vars=()) -> bool:
    """Conservative syntactic test that ``e`` is bounded on the whole space.

    Only constants, variables listed in ``bounded_vars`` (such as time on a
    finite horizon), sin/cos/tanh of anything, exp of bounded arguments and
    sums, products and positive powers of bounded parts count as bounded.
    """
    if isinstance(e, Const):
        return True
    if isinstance(e, Var):
        return e.name in bounded_vars
    if isinstance(e, Unary):
        if e.op in _BOUNDED_FUNCS:
            return True
        if e.op in ("neg", "exp"):
            return structurally_bounded(e.arg, bounded_vars)
        return False
    if isinstance(e, Binary):
        if e.op == "pow":
            return e.right.value >= 0 and structurally_bounded(e.left, bounded_vars)
        if e.op == "div":
            return False
        return structurally_bounded(e.left, bounded_vars) and structurally_bounded(e.right, bounded_vars)
    return False


def check_functional(F: Expr, vars: VarSet, strict: bool = False) -> bool:
    """Check that ``F`` and its first two derivatives look bounded.

    Unbounded (for example polynomial) functionals are allowed with a
    warning, or rejected when ``strict``.
    """
    names = vars.names
    d1 = [simplify(diff(F, v)) for v in names]
    d2 = [simplify(diff(a, v)) for a in d1 for v in names]
    ok = all(structurally_bounded(e, (vars.time,)) for e in [F] + d1 + d2)
    if not ok:
        msg = "functional or its derivatives may be unbounded; the estimator relies on finite moments"
        if strict:
            raise ValueError(msg)
        warnings.warn(msg, UnboundedFunctionalWarning, stacklevel=3)
    return ok


def estimate_ibp(
    model: SdeModel, V: InfinitesimalSymmetry, F, t: float, cfg: SimulationConfig, strict: bool = False,
    moment_bound: float = MOMENT_BOUND,
) -> EstimatorResult:
    """Estimate the four-term integration by parts identity for ``V`` at time ``t``::

        -m(t) E[L F(X_t)] + E[F(X_t) int_0^t H dW] + E[Y F(X_t)] - E[Y F(X_0)] = 0

    The stochastic integral uses left-point Itô sums on the Euler grid.
    """
    if model.vars.names != V.vars.names:
        raise VarMismatch("model and symmetry use different variables")
    Fe = simplify(_scalar(F, model.vars))
    check_functional(Fe, model.vars, strict)
    vars = model.vars
    LF = generator_expr(model, Fe)
    YF = V.apply(Fe)
    m_t = float(V.m.compiled({vars.time: t}))
    k_t = cfg.step_index(t)
    H = tuple(simplify(h) for h in V.H)
    h_zero = all(h == ZERO for h in H)
    CH = tuple(simplify(sum((mul(V.C[a][b], H[b]) for b in range(len(H))), ZERO)) for a in range(len(H)))
    LY = tuple(generator_expr(model, y) for y in V.y_ext)
    YH = tuple(V.apply(h) for h in H)
    diag_exprs = {"H": H, "CH": CH, "LY": LY, "YH": YH}
    sample_steps = np.unique(np.linspace(0, max(k_t - 1, 0), 11).astype(int))

    def fn(ens):
        pts_t = model.points_from_state(ens.states[:, k_t], t)
        pts_0 = model.points_from_state(ens.states[:, 0], 0.0)
        gen = -m_t * _eval(LF, vars, pts_t)
        Ft = _eval(Fe, vars, pts_t)
        if h_zero or k_t == 0:
            ito = np.zeros(ens.n_paths)
        else:
            pts = step_points(ens, model, k_t).reshape(-1, model.N)
            hv = _eval_vector(H, vars, pts).reshape(ens.n_paths, k_t, -1)
            ito = np.einsum("pka,pka->p", hv, ens.increments[:, :k_t])
        out = {
            "generator": gen,
            "stochastic": Ft * ito,
            "transport_t": _eval(YF, vars, pts_t),
            "transport_0": -_eval(YF, vars, pts_0),
        }
        sp = model.points_from_state(ens.states[:, sample_steps], ens.time_grid[sample_steps]).reshape(-1, model.N)
        for name, exprs in diag_exprs.items():
            vals = _eval_vector(exprs, vars, sp).reshape(ens.n_paths, len(sample_steps), -1)
            out["m2_" + name] = (vals**2).mean(axis=1)
        return out

    out = map_chunks(model, cfg, fn)
    names = ("generator", "stochastic", "transport_t", "transport_0")
    total = sum(out[k] for k in names)
    est, se = _mean_se(total)
    terms, term_se = {}, {}
    for k in names:
        terms[k], term_se[k] = _mean_se(out[k])
    moments = {k[3:]: out[k].mean(axis=0).tolist() for k in out if k.startswith("m2_")}
    worst = max((max(v) for v in moments.values() if v), default=0.0)
    if worst > moment_bound:
        warnings.warn(f"second moment {worst:.3g} exceeds {moment_bound:.3g}", MomentDiagnosticWarning, stacklevel=2)
    return EstimatorResult(
        est, se, cfg.n_paths, float(cfg.n_paths), terms, term_se,
        {"m_t": m_t, "second_moments": moments, "moment_bound": moment_bound, "max_second_moment": worst},
    )


# ---------------------------------------------------------------------------
# Gaussian special cases


def _gaussian_pairs(t: float, cfg: SimulationConfig, fn):
    """Exact draws of ``(X_t, Y_t) ~ N(0, t I)`` fed to ``fn`` in chunks of paths."""
    parts = []
    for p0 in range(0, cfg.n_paths, cfg.chunk_size):
        p1 = min(p0 + cfg.chunk_size, cfg.n_paths)
        z = standard_normals(cfg.seed, p0, p1, 2) * np.sqrt(t)
        parts.append(fn(z[:, 0], z[:, 1]))
    return {k: np.concatenate([p[k] for p in parts]) for k in parts[0]}


def _planar(F, vars=("x", "y", "z")):
    vs = VarSet(tuple(vars))
    return _scalar(F, vs), vs


def _two_sided(out, t_left, t_right, cfg, extra=None):
    est, se = _mean_se(out["lhs"] - out["rhs"])
    l_mean, l_se = _mean_se(out["lhs"])
    r_mean, r_se = _mean_se(out["rhs"])
    diag = {"lhs": l_mean, "lhs_se": l_se, "rhs": r_mean, "rhs_se": r_se}
    diag.update(extra or {})
    return EstimatorResult(est, se, cfg.n_paths, float(cfg.n_paths), {t_left: l_mean, t_right: -r_mean},
                           {t_left: l_se, t_right: r_se}, diag)


def estimate_stein(t: float, F, cfg: SimulationConfig) -> EstimatorResult:
    """Planar Stein identity ``t E[Laplacian F] = E[X . grad F]`` with exact Gaussian draws."""
    Fe, vs = _planar(F)
    Fx, Fy = simplify(diff(Fe, "x")), simplify(diff(Fe, "y"))
    lap = simplify(diff(Fx, "x") + diff(Fy, "y"))

    def fn(x, y):
        env = {"x": x, "y": y, "z": np.full_like(x, t)}
        lhs = t * np.broadcast_to(lap.compiled(env), x.shape)
        rhs = x * np.broadcast_to(Fx.compiled(env), x.shape) + y * np.broadcast_to(Fy.compiled(env), x.shape)
        return {"lhs": lhs, "rhs": rhs}

    return _two_sided(_gaussian_pairs(t, cfg, fn), "t_laplacian", "x_dot_grad", cfg, {"t": t})


def estimate_isserlis(t: float, F, cfg: SimulationConfig) -> EstimatorResult:
    """Rotation identity ``E[Y dF/dx] = E[X dF/dy]`` with exact Gaussian draws."""
    Fe, vs = _planar(F)
    Fx, Fy = simplify(diff(Fe, "x")), simplify(diff(Fe, "y"))

    def fn(x, y):
        env = {"x": x, "y": y, "z": np.full_like(x, t)}
        lhs = y * np.broadcast_to(Fx.compiled(env), x.shape)
        rhs = x * np.broadcast_to(Fy.compiled(env), x.shape)
        return {"lhs": lhs, "rhs": rhs}

    return _two_sided(_gaussian_pairs(t, cfg, fn), "y_dfdx", "x_dfdy", cfg, {"t": t})


def estimate_expectation(model: SdeModel, g, t: float, cfg: SimulationConfig) -> EstimatorResult:
    """Plain Monte Carlo estimate of ``E[g(X_t)]``."""
    ge = _scalar(g, model.vars)
    k = cfg.step_index(t)
    out = map_chunks(model, cfg, lambda e: {"g": _eval(ge, model.vars, model.points_from_state(e.states[:, k], t))})
    est, se = _mean_se(out["g"])
    return EstimatorResult(est, se, cfg.n_paths, float(cfg.n_paths), {"g": est}, {"g": se}, {})
