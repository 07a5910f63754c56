"""Typed scalar, vector and matrix fields over an ordered variable set.

The last name of a :class:`VarSet` is always the time variable. Points are
numpy arrays whose last axis lists the coordinates in ``VarSet`` order, or
mappings from variable name to value.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from scipy.stats import qmc

from .errors import DomainError, ShapeError, VarError
from .expr import Expr, as_expr, diff, parse, simplify, to_string


@dataclass(frozen=True)
class VarSet:
    """Ordered, duplicate-free variable names; the last one is time."""

    names: tuple

    def __post_init__(self):
        names = tuple(self.names)
        if not names:
            raise VarError("a variable set needs at least the time variable")
        if len(set(names)) != len(names):
            raise VarError(f"duplicate variable names in {names}")
        object.__setattr__(self, "names", names)

    @classmethod
    def of(cls, names) -> "VarSet":
        return names if isinstance(names, VarSet) else cls(tuple(names))

    @property
    def time(self) -> str:
        return self.names[-1]

    @property
    def spatial(self) -> tuple:
        return self.names[:-1]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def __len__(self):
        return len(self.names)

    def __iter__(self):
        return iter(self.names)

    def __getitem__(self, i):
        return self.names[i]


def environment(points, vars: VarSet) -> dict:
    """Name-to-array environment for evaluating expressions at ``points``."""
    if isinstance(points, dict):
        return points
    pts = np.asarray(points, dtype=float)
    if pts.shape[-1] != len(vars):
        raise ShapeError(f"points have {pts.shape[-1]} coordinates, expected {len(vars)}")
    return {name: pts[..., i] for i, name in enumerate(vars.names)}


def _batch_shape(points, vars):
    if isinstance(points, dict):
        shapes = [np.shape(v) for v in points.values()]
        return np.broadcast_shapes(*shapes) if shapes else ()
    return np.shape(points)[:-1]


def _eval_expr(e: Expr, env, shape, component):
    try:
        val = e.compiled(env)
    except DomainError as err:
        raise err.at_component(component) from None
    return np.broadcast_to(np.asarray(val, dtype=float), shape)


def _check_vars(exprs, vars):
    allowed = set(vars.names)
    for e in exprs:
        extra = e.free_vars - allowed
        if extra:
            raise VarError(f"expression {to_string(e)!r} uses unknown variables {sorted(extra)}")


@dataclass(frozen=True, eq=False)
class ScalarField:
    expr: Expr
    vars: VarSet

    def __post_init__(self):
        object.__setattr__(self, "vars", VarSet.of(self.vars))
        object.__setattr__(self, "expr", as_expr(self.expr))
        _check_vars([self.expr], self.vars)

    @classmethod
    def parse(cls, source, vars) -> "ScalarField":
        vars = VarSet.of(vars)
        return cls(parse(source, vars.names), vars)

    def evaluate(self, points) -> np.ndarray:
        env = environment(points, self.vars)
        return np.array(_eval_expr(self.expr, env, _batch_shape(points, self.vars), None))

    def diff(self, var: str) -> "ScalarField":
        return ScalarField(simplify(diff(self.expr, var)), self.vars)

    def __str__(self):
        return to_string(self.expr)


@dataclass(frozen=True, eq=False)
class VectorField:
    components: tuple
    vars: VarSet

    def __post_init__(self):
        object.__setattr__(self, "vars", VarSet.of(self.vars))
        object.__setattr__(self, "components", tuple(as_expr(c) for c in self.components))
        _check_vars(self.components, self.vars)

    @classmethod
    def parse(cls, sources: Sequence, vars) -> "VectorField":
        vars = VarSet.of(vars)
        return cls(tuple(parse(s, vars.names) for s in sources), vars)

    def __len__(self):
        return len(self.components)

    def __getitem__(self, i) -> Expr:
        return self.components[i]

    def evaluate(self, points) -> np.ndarray:
        env = environment(points, self.vars)
        shape = _batch_shape(points, self.vars)
        out = np.empty(shape + (len(self.components),))
        for i, e in enumerate(self.components):
            out[..., i] = _eval_expr(e, env, shape, (i,))
        return out

    @cached_property
    def jacobian(self) -> "MatrixField":
        """Matrix field of partial derivatives ``d component_i / d var_j``."""
        rows = tuple(tuple(simplify(diff(c, v)) for v in self.vars) for c in self.components)
        return MatrixField(rows, self.vars)

    def __str__(self):
        return "(" + ", ".join(to_string(c) for c in self.components) + ")"


@dataclass(frozen=True, eq=False)
class MatrixField:
    entries: tuple
    vars: VarSet

    def __post_init__(self):
        object.__setattr__(self, "vars", VarSet.of(self.vars))
        rows = tuple(tuple(as_expr(e) for e in row) for row in self.entries)
        if rows and len({len(r) for r in rows}) != 1:
            raise ShapeError("ragged matrix field")
        object.__setattr__(self, "entries", rows)
        _check_vars([e for r in rows for e in r], self.vars)

    @classmethod
    def parse(cls, sources: Sequence[Sequence], vars) -> "MatrixField":
        vars = VarSet.of(vars)
        return cls(tuple(tuple(parse(s, vars.names) for s in row) for row in sources), vars)

    @property
    def shape(self) -> tuple:
        return (len(self.entries), len(self.entries[0]) if self.entries else 0)

    def __getitem__(self, ij) -> Expr:
        i, j = ij
        return self.entries[i][j]

    def transpose(self) -> "MatrixField":
        r, c = self.shape
        return MatrixField(tuple(tuple(self.entries[i][j] for i in range(r)) for j in range(c)), self.vars)

    def evaluate(self, points) -> np.ndarray:
        env = environment(points, self.vars)
        shape = _batch_shape(points, self.vars)
        r, c = self.shape
        out = np.empty(shape + (r, c))
        for i in range(r):
            for j in range(c):
                out[..., i, j] = _eval_expr(self.entries[i][j], env, shape, (i, j))
        return out

    @cached_property
    def depends_on(self) -> frozenset:
        out = frozenset()
        for row in self.entries:
            for e in row:
                out |= e.free_vars
        return out

    def __str__(self):
        return "[" + "; ".join(", ".join(to_string(e) for e in row) for row in self.entries) + "]"


def sample_points(box: Sequence[Sequence[float]], n: int = 64) -> np.ndarray:
    """Deterministic low-discrepancy (Halton) points in an axis-aligned box."""
    box = np.asarray(box, dtype=float)
    if box.ndim != 2 or box.shape[1] != 2:
        raise ShapeError("box must be a sequence of (low, high) pairs")
    if np.any(box[:, 1] < box[:, 0]):
        raise ValueError("box bounds must satisfy low <= high")
    unit = qmc.Halton(d=len(box), scramble=False).random(n + 1)[1:]
    return box[:, 0] + unit * (box[:, 1] - box[:, 0])


@dataclass(frozen=True)
class CheckReport:
    passed: bool
    worst: float
    worst_point: tuple
    n_points: int
    detail: str = ""

    def __bool__(self):
        return self.passed


def _as_matrix_values(field, points):
    if isinstance(field, MatrixField):
        return field.evaluate(points)
    return np.asarray(field(points), dtype=float)


def check_special_orthogonal(field, points, tol: float = 1e-9) -> CheckReport:
    """Check ``B^T B = I`` and ``det B = 1`` at each point.

    ``field`` is a :class:`MatrixField` or a callable returning ``(P, m, m)``.
    """
    if isinstance(field, MatrixField) and field.shape[0] != field.shape[1]:
        raise ShapeError(f"rotation field must be square, got {field.shape}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    b = _as_matrix_values(field, pts)
    if b.shape[-1] != b.shape[-2]:
        raise ShapeError(f"rotation values must be square, got {b.shape[-2:]}")
    eye = np.eye(b.shape[-1])
    orth = np.abs(np.einsum("pki,pkj->pij", b, b) - eye).max(axis=(1, 2))
    det = np.abs(np.linalg.det(b) - 1.0)
    err = np.maximum(orth, det)
    k = int(np.argmax(err))
    return CheckReport(bool(err[k] <= tol), float(err[k]), tuple(pts[k]), len(pts), "max(|B^T B - I|, |det B - 1|)")


def check_antisymmetric(field, points, tol: float = 1e-9) -> CheckReport:
    """Check ``C + C^T = 0`` at each point."""
    if isinstance(field, MatrixField) and field.shape[0] != field.shape[1]:
        raise ShapeError(f"field must be square, got {field.shape}")
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    c = _as_matrix_values(field, pts)
    err = np.abs(c + np.swapaxes(c, -1, -2)).max(axis=(1, 2))
    k = int(np.argmax(err))
    return CheckReport(bool(err[k] <= tol), float(err[k]), tuple(pts[k]), len(pts), "max |C + C^T|")


def field_from_any(value, vars, kind):
    """Coerce strings, nested lists or field objects into a field of ``kind``."""
    vars = VarSet.of(vars)
    if kind == "scalar":
        if isinstance(value, ScalarField):
            return value
        if isinstance(value, Expr):
            return ScalarField(value, vars)
        return ScalarField.parse(value, vars)
    if kind == "vector":
        if isinstance(value, VectorField):
            return value
        return VectorField(tuple(v if isinstance(v, Expr) else parse(v, vars.names) for v in value), vars)
    if isinstance(value, MatrixField):
        return value
    return MatrixField(
        tuple(tuple(v if isinstance(v, Expr) else parse(v, vars.names) for v in row) for row in value), vars
    )


def exprs_of(items: Iterable, vars: VarSet) -> tuple:
    return tuple(v if isinstance(v, Expr) else parse(v, vars.names) for v in items)
