"""Worked models and their symmetry families.

* ``bm2d``: planar Brownian motion with time as a state coordinate.
* ``additive_bm``: rotationally symmetric drift ``a(r^2) x - b(r^2) y``,
  ``a(r^2) y + b(r^2) x`` driven by planar Brownian motion.
* ``lotka_volterra``: stochastic predator-prey model with multiplicative
  noise, simulated in logarithmic coordinates.

Every symmetry returned by a constructor here has passed its determining
residual check on the model's working grid (unless ``check=False``).
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import ParameterError, SymmetryError, VarError
from .expr import ZERO, Const, Expr, Var, antiderivative, diff, neg, parse, simplify, substitute
from .fields import VarSet
from .sde import SdeModel
from .symmetry import InfinitesimalSymmetry, weak_determining_residual

VARS = VarSet(("x", "y", "z"))
TIME_BOX = (0.0, 1.0)

RESIDUAL_TOL = {"bm2d": 1e-9, "additive_bm": 1e-7, "lotka_volterra": 1e-7}


def _time_expr(value, what: str) -> Expr:
    e = value if isinstance(value, Expr) else parse(value, VARS.names)
    extra = e.free_vars - {"z"}
    if extra:
        raise VarError(f"{what} may depend on the time variable z only, found {sorted(extra)}")
    return simplify(e)


def _radial_expr(value, what: str) -> Expr:
    """Parse a function of ``r2`` (the squared radius)."""
    e = value if isinstance(value, Expr) else parse(value, ("r2",))
    extra = e.free_vars - {"r2"}
    if extra:
        raise VarError(f"{what} may depend on r2 only, found {sorted(extra)}")
    return simplify(e)


def _gate(model: SdeModel, V: InfinitesimalSymmetry, family: str, check: bool) -> InfinitesimalSymmetry:
    if check:
        res = weak_determining_residual(model, V)
        tol = RESIDUAL_TOL[family]
        if not res.passed(tol):
            raise SymmetryError(
                f"{V.label} fails the determining equations: residual {res.sup:.3g} > {tol:g} at {res.worst_point}"
            )
    return V


def _p(s: str) -> Expr:
    return parse(s, VARS.names)


# ---------------------------------------------------------------------------
# planar Brownian motion


def bm2d(initial_point=(0.0, 0.0), box=((-3.0, 3.0), (-3.0, 3.0), TIME_BOX)) -> SdeModel:
    """``dX = dW`` in the plane, with time ``z`` carried as a state coordinate."""
    return SdeModel(VARS, ("0", "0", "1"), (("1", "0"), ("0", "1"), ("0", "0")), box, initial_point, name="bm2d")


def v_alpha(alpha="1", model: SdeModel = None, check: bool = True) -> InfinitesimalSymmetry:
    """Space-time scaling family ``Y = alpha/2 (x, y)``, ``m = int alpha``, ``H = -alpha'/2 (x, y)``."""
    a = _time_expr(alpha, "alpha")
    da = simplify(diff(a, "z"))
    half = Const(0.5)
    Y = (simplify(half * a * Var("x")), simplify(half * a * Var("y")))
    H = (simplify(neg(half * da * Var("x"))), simplify(neg(half * da * Var("y"))))
    V = InfinitesimalSymmetry(
        VARS, Y, antiderivative(a, "z"), ((ZERO, ZERO), (ZERO, ZERO)), a, H, f"v_alpha[{a}]",
        check_box=(model or bm2d()).domain_box,
    )
    return _gate(model or bm2d(), V, "bm2d", check)


def v_beta(beta="1", model: SdeModel = None, check: bool = True) -> InfinitesimalSymmetry:
    """Time-dependent rotation family ``Y = beta (y, -x)``, ``C = beta J``, ``H = beta' (-y, x)``."""
    b = _time_expr(beta, "beta")
    db = simplify(diff(b, "z"))
    Y = (simplify(b * Var("y")), simplify(neg(b * Var("x"))))
    C = ((ZERO, b), (simplify(neg(b)), ZERO))
    H = (simplify(neg(db * Var("y"))), simplify(db * Var("x")))
    V = InfinitesimalSymmetry(VARS, Y, ZERO, C, ZERO, H, f"v_beta[{b}]", check_box=(model or bm2d()).domain_box)
    return _gate(model or bm2d(), V, "bm2d", check)


# ---------------------------------------------------------------------------
# additive noise with rotationally symmetric drift


def _radial(e: Expr) -> Expr:
    return simplify(substitute(e, {"r2": _p("x^2 + y^2")}))


def additive_bm(a="-1", b="0", initial_point=(0.0, 0.0), box=((-2.0, 2.0), (-2.0, 2.0), TIME_BOX), check=True) -> SdeModel:
    """Planar model with drift ``(a x - b y, a y + b x)`` where ``a, b`` are functions of ``r2 = x^2 + y^2``.

    ``a`` must be negative on the working box.
    """
    ae, be = _radial_expr(a, "a"), _radial_expr(b, "b")
    A, B = _radial(ae), _radial(be)
    x, y = Var("x"), Var("y")
    model = SdeModel(
        VARS, (simplify(A * x - B * y), simplify(A * y + B * x), Const(1.0)),
        (("1", "0"), ("0", "1"), ("0", "0")), box, initial_point, name="additive_bm",
        parameters={"a": str(ae), "b": str(be)},
    )
    if check:
        grid = model.sample_grid(128)
        vals = A.compiled({"x": grid[:, 0], "y": grid[:, 1]})
        if np.any(np.asarray(vals) >= 0):
            raise ParameterError("a(r^2) must be negative on the working box")
    return model


def _additive_parts(model: SdeModel):
    ae = _radial_expr(model.parameters.get("a", "-1"), "a")
    be = _radial_expr(model.parameters.get("b", "0"), "b")
    return ae, be


def additive_v_alpha(model: SdeModel, alpha="1", check: bool = True) -> InfinitesimalSymmetry:
    """Scaling family of the additive model.

    ``Y = alpha/2 (x, y)``, ``m = int alpha``, ``tau = alpha`` and
    ``H = -alpha'/2 (x, y) + alpha mu + alpha r^2 (a' x - b' y, a' y + b' x)``.
    """
    ae, be = _additive_parts(model)
    A, B = _radial(ae), _radial(be)
    Ap, Bp = _radial(diff(ae, "r2")), _radial(diff(be, "r2"))
    al = _time_expr(alpha, "alpha")
    dal = simplify(diff(al, "z"))
    x, y, half = Var("x"), Var("y"), Const(0.5)
    r2 = _p("x^2 + y^2")
    Y = (simplify(half * al * x), simplify(half * al * y))
    H1 = simplify(neg(half * dal * x) + al * (A * x - B * y) + al * r2 * (Ap * x - Bp * y))
    H2 = simplify(neg(half * dal * y) + al * (A * y + B * x) + al * r2 * (Ap * y + Bp * x))
    V = InfinitesimalSymmetry(
        VARS, Y, antiderivative(al, "z"), ((ZERO, ZERO), (ZERO, ZERO)), al, (H1, H2),
        f"additive_v_alpha[{al}]", check_box=model.domain_box,
    )
    return _gate(model, V, "additive_bm", check)


def additive_v_beta(model: SdeModel, beta="1", check: bool = True) -> InfinitesimalSymmetry:
    """Rotation family of the additive model (same form as for Brownian motion)."""
    b = _time_expr(beta, "beta")
    db = simplify(diff(b, "z"))
    Y = (simplify(b * Var("y")), simplify(neg(b * Var("x"))))
    C = ((ZERO, b), (simplify(neg(b)), ZERO))
    H = (simplify(neg(db * Var("y"))), simplify(db * Var("x")))
    V = InfinitesimalSymmetry(VARS, Y, ZERO, C, ZERO, H, f"additive_v_beta[{b}]", check_box=model.domain_box)
    return _gate(model, V, "additive_bm", check)


# ---------------------------------------------------------------------------
# Lotka-Volterra


LV_DEFAULTS = {"alpha": 1.0, "beta": 1.0, "gamma": 1.0, "delta": 1.0, "sigma": 1.0}


def lotka_volterra(
    alpha=1.0, beta=1.0, gamma=1.0, delta=1.0, sigma=1.0, initial_point=(1.0, 1.0),
    box=((0.2, 5.0), (0.2, 5.0), TIME_BOX),
) -> SdeModel:
    """``dx = x(alpha - beta y) dt + sigma x dW1``, ``dy = y(delta x - gamma) dt + sigma y dW2``."""
    params = {"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta, "sigma": sigma}
    for k, v in params.items():
        if not isinstance(v, (int, float)) or v != v:
            raise ParameterError(f"{k} must be a real number")
    if sigma == 0:
        raise ParameterError("sigma must be non-zero: the symmetry shifts divide by it")
    for k, v in params.items():
        if v <= 0:
            raise ParameterError(f"{k} must be positive")
    c = {k: Const(float(v)) for k, v in params.items()}
    x, y = Var("x"), Var("y")
    mu = (simplify(x * (c["alpha"] - c["beta"] * y)), simplify(y * (c["delta"] * x - c["gamma"])), Const(1.0))
    sig = ((simplify(c["sigma"] * x), ZERO), (ZERO, simplify(c["sigma"] * y)), (ZERO, ZERO))
    if any(v <= 0 for v in initial_point):
        raise ParameterError("populations must start positive")
    return SdeModel(VARS, mu, sig, box, initial_point, (0, 1), "lotka_volterra", {k: float(v) for k, v in params.items()})


def _lv_consts(model: SdeModel):
    p = {**LV_DEFAULTS, **model.parameters}
    return {k: Const(float(p[k])) for k in LV_DEFAULTS}


def lv_v_a(model: SdeModel, a="1", check: bool = True) -> InfinitesimalSymmetry:
    """Logarithmic scaling family ``Y = a/2 (x ln x, y ln y)``, ``m = int a``, ``tau = a``."""
    c = _lv_consts(model)
    ae = _time_expr(a, "a")
    dae = simplify(diff(ae, "z"))
    x, y = Var("x"), Var("y")
    lnx, lny = _p("ln(x)"), _p("ln(y)")
    s = c["sigma"]
    half, quarter = Const(0.5), Const(0.25)
    Y = (simplify(half * ae * x * lnx), simplify(half * ae * y * lny))
    k = half / s
    H1 = simplify(
        neg(quarter * ae * s) + k * ae * (c["alpha"] - c["beta"] * y) - k * dae * lnx - k * c["beta"] * ae * y * lny
    )
    H2 = simplify(
        neg(quarter * ae * s) + k * ae * (c["delta"] * x - c["gamma"]) - k * dae * lny + k * c["delta"] * ae * x * lnx
    )
    V = InfinitesimalSymmetry(
        VARS, Y, antiderivative(ae, "z"), ((ZERO, ZERO), (ZERO, ZERO)), ae, (H1, H2), f"lv_v_a[{ae}]",
        check_box=model.domain_box,
    )
    return _gate(model, V, "lotka_volterra", check)


def lv_v_b(model: SdeModel, b="1", check: bool = True) -> InfinitesimalSymmetry:
    """Rotational family ``Y = b (x ln y, -y ln x)``, ``C = b J``, ``m = tau = 0``.

    ``H1 = sigma b/2 - (b/sigma)(delta x - gamma) - (b'/sigma) ln y + (beta b/sigma) y ln x`` and
    ``H2 = -sigma b/2 + (b/sigma)(alpha - beta y) + (b'/sigma) ln x + (delta b/sigma) x ln y``.
    """
    c = _lv_consts(model)
    be = _time_expr(b, "b")
    dbe = simplify(diff(be, "z"))
    x, y = Var("x"), Var("y")
    lnx, lny = _p("ln(x)"), _p("ln(y)")
    s = c["sigma"]
    half = Const(0.5)
    Y = (simplify(be * x * lny), simplify(neg(be * y * lnx)))
    C = ((ZERO, simplify(be)), (simplify(neg(be)), ZERO))
    H1 = simplify(
        s * be * half - (be / s) * (c["delta"] * x - c["gamma"]) - (dbe / s) * lny + (c["beta"] * be / s) * y * lnx
    )
    H2 = simplify(
        neg(s * be * half) + (be / s) * (c["alpha"] - c["beta"] * y) + (dbe / s) * lnx + (c["delta"] * be / s) * x * lny
    )
    V = InfinitesimalSymmetry(VARS, Y, ZERO, C, ZERO, (H1, H2), f"lv_v_b[{be}]", check_box=model.domain_box)
    return _gate(model, V, "lotka_volterra", check)


# ---------------------------------------------------------------------------
# registry


MODELS: dict = {
    "bm2d": lambda **kw: bm2d(**kw),
    "additive_bm": lambda **kw: additive_bm(**kw),
    "lotka_volterra": lambda **kw: lotka_volterra(**kw),
}

SYMMETRIES: dict = {
    ("bm2d", "v_alpha"): lambda model, **kw: v_alpha(kw.get("alpha", "1"), model, kw.get("check", True)),
    ("bm2d", "v_beta"): lambda model, **kw: v_beta(kw.get("beta", "1"), model, kw.get("check", True)),
    ("additive_bm", "v_alpha"): lambda model, **kw: additive_v_alpha(model, kw.get("alpha", "1"), kw.get("check", True)),
    ("additive_bm", "v_beta"): lambda model, **kw: additive_v_beta(model, kw.get("beta", "1"), kw.get("check", True)),
    ("lotka_volterra", "v_a"): lambda model, **kw: lv_v_a(model, kw.get("a", "1"), kw.get("check", True)),
    ("lotka_volterra", "v_b"): lambda model, **kw: lv_v_b(model, kw.get("b", "1"), kw.get("check", True)),
}


def build_model(model_id: str, **params) -> SdeModel:
    try:
        ctor: Callable = MODELS[model_id]
    except KeyError:
        raise ParameterError(f"unknown model {model_id!r}; known: {sorted(MODELS)}") from None
    return ctor(**params)


def build_symmetry(model: SdeModel, symmetry_id: str, **params) -> InfinitesimalSymmetry:
    try:
        ctor = SYMMETRIES[(model.name, symmetry_id)]
    except KeyError:
        known = sorted(s for m, s in SYMMETRIES if m == model.name)
        raise ParameterError(f"unknown symmetry {symmetry_id!r} for model {model.name!r}; known: {known}") from None
    return ctor(model, **params)
