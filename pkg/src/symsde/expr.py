"""Symbolic scalar expressions over named real variables.

Expressions are immutable trees built by :func:`parse` or by the smart
constructors in this module. They support exact symbolic differentiation,
light algebraic simplification, substitution, printing that parses back,
and vectorised evaluation on numpy arrays with explicit domain checks.

Grammar (whitespace is insignificant)::

    expr   := term (('+' | '-') term)*
    term   := factor (('*' | '/') factor)*
    factor := '-' factor | atom ('^' ['-'] number)?
    atom   := number | ident | ident '(' expr ')' | '(' expr ')'

Exponentiation binds tighter than unary minus, so ``-x^2`` is ``-(x^2)``.
Exponents must be numeric literals. Recognised functions are ``ln``,
``exp``, ``sin``, ``cos``, ``sqrt`` and ``tanh``.
"""

from __future__ import annotations

import math
import re
from dataclasses import dataclass
from functools import cached_property
from typing import Callable, Iterable, Mapping

import numpy as np

from .errors import DomainError, ExprSyntaxError, UnknownIdentifier, VarError
from .quad import adaptive_simpson

FUNCTIONS = ("ln", "exp", "sin", "cos", "sqrt", "tanh")

_PREC = {"add": 1, "sub": 1, "mul": 2, "div": 2, "neg": 3, "pow": 4}
_SYMBOL = {"add": "+", "sub": "-", "mul": "*", "div": "/"}


class Expr:
    """Base class of expression nodes."""

    __slots__ = ()

    # Operator sugar routes through the simplifying constructors.
    def __add__(self, other):
        return add(self, as_expr(other))

    def __radd__(self, other):
        return add(as_expr(other), self)

    def __sub__(self, other):
        return sub(self, as_expr(other))

    def __rsub__(self, other):
        return sub(as_expr(other), self)

    def __mul__(self, other):
        return mul(self, as_expr(other))

    def __rmul__(self, other):
        return mul(as_expr(other), self)

    def __truediv__(self, other):
        return div(self, as_expr(other))

    def __rtruediv__(self, other):
        return div(as_expr(other), self)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, float(k))

    def __str__(self):
        return to_string(self)

    @cached_property
    def compiled(self) -> Callable:
        """Closure evaluating the expression on an environment of arrays."""
        return _compile(self)

    @cached_property
    def free_vars(self) -> frozenset:
        return _free_vars(self)

    def evaluate(self, point: Mapping[str, float]) -> float:
        return float(self.compiled(point))

    def diff(self, var: str) -> "Expr":
        return diff(self, var)


@dataclass(frozen=True, eq=True, repr=False)
class Const(Expr):
    value: float

    def __repr__(self):
        return f"Const({self.value!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Var(Expr):
    name: str

    def __repr__(self):
        return f"Var({self.name!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Unary(Expr):
    """Unary node: ``neg`` or one of :data:`FUNCTIONS`."""

    op: str
    arg: Expr

    def __repr__(self):
        return f"Unary({self.op!r}, {self.arg!r})"


@dataclass(frozen=True, eq=True, repr=False)
class Binary(Expr):
    """Binary node. For ``pow`` the right operand is always a :class:`Const`."""

    op: str
    left: Expr
    right: Expr

    def __post_init__(self):
        if self.op == "pow" and not isinstance(self.right, Const):
            raise TypeError("exponent must be a constant")

    def __repr__(self):
        return f"Binary({self.op!r}, {self.left!r}, {self.right!r})"


@dataclass(frozen=True, eq=True, repr=False)
class TimeIntegral(Expr):
    """``integral_0^var integrand(s) ds`` for an integrand depending on ``var`` only.

    Used when no closed-form antiderivative is known; evaluated by adaptive
    Simpson quadrature.
    """

    integrand: Expr
    var: str

    def __post_init__(self):
        extra = self.integrand.free_vars - {self.var}
        if extra:
            raise VarError(f"integrand may depend on {self.var!r} only, found {sorted(extra)}")

    def __repr__(self):
        return f"TimeIntegral({self.integrand!r}, {self.var!r})"


ZERO = Const(0.0)
ONE = Const(1.0)


def as_expr(value) -> Expr:
    if isinstance(value, Expr):
        return value
    if isinstance(value, (int, float, np.floating, np.integer)):
        return Const(float(value))
    raise TypeError(f"cannot convert {value!r} to an expression")


def _is_const(e, value=None):
    return isinstance(e, Const) and (value is None or e.value == value)


# ---------------------------------------------------------------------------
# smart constructors (constant folding and 0/1 identities)


def add(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value + b.value)
    if _is_const(a, 0.0):
        return b
    if _is_const(b, 0.0):
        return a
    return Binary("add", a, b)


def sub(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value - b.value)
    if _is_const(b, 0.0):
        return a
    if _is_const(a, 0.0):
        return neg(b)
    return Binary("sub", a, b)


def mul(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b):
        return Const(a.value * b.value)
    if _is_const(a, 0.0) or _is_const(b, 0.0):
        return ZERO
    if _is_const(a, 1.0):
        return b
    if _is_const(b, 1.0):
        return a
    return Binary("mul", a, b)


def div(a: Expr, b: Expr) -> Expr:
    if _is_const(a) and _is_const(b) and b.value != 0.0:
        return Const(a.value / b.value)
    if _is_const(a, 0.0):
        return ZERO
    if _is_const(b, 1.0):
        return a
    return Binary("div", a, b)


def power(a: Expr, k: float) -> Expr:
    k = float(k)
    if k == 0.0:
        return ONE
    if k == 1.0:
        return a
    if _is_const(a):
        folded = _fold_pow(a.value, k)
        if folded is not None:
            return Const(folded)
    return Binary("pow", a, Const(k))


def neg(a: Expr) -> Expr:
    if _is_const(a):
        return Const(-a.value)
    if isinstance(a, Unary) and a.op == "neg":
        return a.arg
    return Unary("neg", a)


def func(name: str, a: Expr) -> Expr:
    if name not in FUNCTIONS:
        raise ValueError(f"unknown function {name!r}")
    if _is_const(a):
        folded = _fold_func(name, a.value)
        if folded is not None:
            return Const(folded)
    return Unary(name, a)


def _fold_pow(base, k):
    if k.is_integer():
        if base == 0.0 and k < 0:
            return None
        try:
            return float(base ** int(k))
        except OverflowError:
            return None
    if base < 0 or (base == 0.0 and k < 0):
        return None
    return float(base**k)


def _fold_func(name, v):
    try:
        if name == "ln":
            return math.log(v) if v > 0 else None
        if name == "sqrt":
            return math.sqrt(v) if v >= 0 else None
        if name == "exp":
            return math.exp(v)
        return float(getattr(math, name)(v))
    except OverflowError:
        return None


def _rebuild(e: Expr) -> Expr:
    """Reconstruct ``e`` bottom-up through the smart constructors."""
    if isinstance(e, (Const, Var)):
        return e
    if isinstance(e, TimeIntegral):
        return TimeIntegral(_rebuild(e.integrand), e.var)
    if isinstance(e, Unary):
        arg = _rebuild(e.arg)
        return neg(arg) if e.op == "neg" else func(e.op, arg)
    left = _rebuild(e.left)
    if e.op == "pow":
        return power(left, e.right.value)
    right = _rebuild(e.right)
    return {"add": add, "sub": sub, "mul": mul, "div": div}[e.op](left, right)


def simplify(e: Expr) -> Expr:
    """Constant folding plus 0/1 identities, iterated to a fixed point.

    The result agrees with ``e`` at every point where ``e`` is defined, and
    ``simplify(simplify(e)) == simplify(e)``.
    """
    for _ in range(64):
        nxt = _rebuild(e)
        if nxt == e:
            return nxt
        e = nxt
    return e


# ---------------------------------------------------------------------------
# differentiation, substitution, variables


def diff(e: Expr, var: str) -> Expr:
    """Exact partial derivative of ``e`` with respect to ``var``."""
    if isinstance(e, Const):
        return ZERO
    if isinstance(e, Var):
        return ONE if e.name == var else ZERO
    if isinstance(e, TimeIntegral):
        return e.integrand if e.var == var else ZERO
    if isinstance(e, Unary):
        u = e.arg
        du = diff(u, var)
        if _is_const(du, 0.0):
            return ZERO
        op = e.op
        if op == "neg":
            return neg(du)
        if op == "ln":
            return div(du, u)
        if op == "exp":
            return mul(e, du)
        if op == "sin":
            return mul(func("cos", u), du)
        if op == "cos":
            return mul(neg(func("sin", u)), du)
        if op == "sqrt":
            return div(du, mul(Const(2.0), e))
        if op == "tanh":
            return mul(sub(ONE, power(e, 2.0)), du)
        raise AssertionError(op)
    op = e.op
    a, b = e.left, e.right
    if op == "pow":
        k = b.value
        da = diff(a, var)
        return mul(mul(Const(k), power(a, k - 1.0)), da)
    da, db = diff(a, var), diff(b, var)
    if op == "add":
        return add(da, db)
    if op == "sub":
        return sub(da, db)
    if op == "mul":
        return add(mul(da, b), mul(a, db))
    if op == "div":
        if _is_const(db, 0.0):
            return div(da, b)
        return div(sub(mul(da, b), mul(a, db)), power(b, 2.0))
    raise AssertionError(op)


def substitute(e: Expr, mapping: Mapping[str, Expr]) -> Expr:
    """Replace variables by expressions (simultaneously)."""
    if isinstance(e, Const):
        return e
    if isinstance(e, Var):
        return mapping.get(e.name, e)
    if isinstance(e, TimeIntegral):
        if e.var in mapping:
            raise VarError(f"cannot substitute the integration variable {e.var!r}")
        return e
    if isinstance(e, Unary):
        arg = substitute(e.arg, mapping)
        return neg(arg) if e.op == "neg" else func(e.op, arg)
    left = substitute(e.left, mapping)
    if e.op == "pow":
        return power(left, e.right.value)
    right = substitute(e.right, mapping)
    return {"add": add, "sub": sub, "mul": mul, "div": div}[e.op](left, right)


def _free_vars(e: Expr) -> frozenset:
    if isinstance(e, Const):
        return frozenset()
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, TimeIntegral):
        return frozenset((e.var,))
    if isinstance(e, Unary):
        return e.arg.free_vars
    return e.left.free_vars | e.right.free_vars


def is_zero(e: Expr) -> bool:
    return _is_const(simplify(e), 0.0)


# ---------------------------------------------------------------------------
# printing


def _fmt_number(v: float) -> str:
    if v.is_integer() and abs(v) < 1e15:
        return str(int(v))
    return repr(v)


def _prec(e: Expr) -> int:
    if isinstance(e, Binary):
        return _PREC[e.op]
    if isinstance(e, Unary) and e.op == "neg":
        return _PREC["neg"]
    if isinstance(e, Const) and e.value < 0:
        return _PREC["neg"]
    return 5


def to_string(e: Expr) -> str:
    """Render ``e`` in the input grammar; ``parse(to_string(e))`` evaluates identically."""
    if isinstance(e, Const):
        if not math.isfinite(e.value):
            raise ValueError("non-finite constant cannot be printed")
        return _fmt_number(e.value) if e.value >= 0 else "-" + _fmt_number(-e.value)
    if isinstance(e, Var):
        return e.name
    if isinstance(e, TimeIntegral):
        return f"integral({to_string(e.integrand)}, {e.var})"
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = to_string(e.arg)
            if _prec(e.arg) < _PREC["neg"] or _prec(e.arg) == _PREC["neg"]:
                inner = f"({inner})"
            return "-" + inner
        return f"{e.op}({to_string(e.arg)})"
    if e.op == "pow":
        base = to_string(e.left)
        if _prec(e.left) <= _PREC["pow"]:
            base = f"({base})"
        k = e.right.value
        return f"{base}^{'-' if k < 0 else ''}{_fmt_number(abs(k))}"
    p = _PREC[e.op]
    left = to_string(e.left)
    if _prec(e.left) < p:
        left = f"({left})"
    right = to_string(e.right)
    if _prec(e.right) <= p:
        right = f"({right})"
    return f"{left} {_SYMBOL[e.op]} {right}" if p == 1 else f"{left}*{right}" if e.op == "mul" else f"{left}/{right}"


# ---------------------------------------------------------------------------
# parsing

_TOKEN = re.compile(
    r"(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)|(?P<id>[A-Za-z_][A-Za-z0-9_]*)|(?P<op>[-+*/^()])"
)

_ATOM_START = ("number", "identifier", "'('", "'-'")


class _Parser:
    def __init__(self, source: str, names: frozenset):
        self.src = source
        self.names = names
        self.tokens = self._tokenize(source)
        self.i = 0

    @staticmethod
    def _tokenize(src):
        toks = []
        pos = 0
        while pos < len(src):
            if src[pos].isspace():
                pos += 1
                continue
            m = _TOKEN.match(src, pos)
            if m is None:
                raise ExprSyntaxError(f"unexpected character {src[pos]!r}", pos)
            kind = m.lastgroup
            toks.append((kind, m.group(), pos))
            pos = m.end()
        toks.append(("eof", "", len(src)))
        return toks

    def peek(self):
        return self.tokens[self.i]

    def take(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def fail(self, expected):
        kind, text, pos = self.peek()
        got = "end of input" if kind == "eof" else repr(text)
        raise ExprSyntaxError(f"unexpected {got}", pos, expected)

    def expect_op(self, op, expected=None):
        kind, text, _ = self.peek()
        if kind == "op" and text == op:
            return self.take()
        self.fail(expected or (f"'{op}'",))

    def parse(self):
        e = self.expr()
        if self.peek()[0] != "eof":
            self.fail(("'+'", "'-'", "'*'", "'/'", "'^'", "end of input"))
        return e

    def expr(self):
        e = self.term()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "+-":
                self.take()
                rhs = self.term()
                e = Binary("add" if text == "+" else "sub", e, rhs)
            else:
                return e

    def term(self):
        e = self.factor()
        while True:
            kind, text, _ = self.peek()
            if kind == "op" and text in "*/":
                self.take()
                rhs = self.factor()
                e = Binary("mul" if text == "*" else "div", e, rhs)
            else:
                return e

    def factor(self):
        kind, text, _ = self.peek()
        if kind == "op" and text == "-":
            self.take()
            return Unary("neg", self.factor())
        base = self.atom()
        kind, text, _ = self.peek()
        if kind == "op" and text == "^":
            self.take()
            sign = 1.0
            kind, text, _ = self.peek()
            if kind == "op" and text == "-":
                self.take()
                sign = -1.0
            kind, text, _ = self.peek()
            if kind != "num":
                self.fail(("number",) if sign < 0 else ("number", "'-'"))
            self.take()
            return Binary("pow", base, Const(sign * float(text)))
        return base

    def atom(self):
        kind, text, pos = self.peek()
        if kind == "num":
            self.take()
            return Const(float(text))
        if kind == "id":
            self.take()
            if text in FUNCTIONS:
                self.expect_op("(")
                arg = self.expr()
                self.expect_op(")", ("')'", "'+'", "'-'", "'*'", "'/'", "'^'"))
                return Unary(text, arg)
            if text not in self.names:
                raise UnknownIdentifier(text, pos)
            return Var(text)
        if kind == "op" and text == "(":
            self.take()
            e = self.expr()
            self.expect_op(")", ("')'", "'+'", "'-'", "'*'", "'/'", "'^'"))
            return e
        self.fail(_ATOM_START)


def parse(source: str, vars: Iterable[str]) -> Expr:
    """Parse ``source`` into an expression over the variable names ``vars``.

    >>> str(parse("x^2*ln(y)", ["x", "y"]))
    'x^2*ln(y)'
    """
    if isinstance(source, (int, float)):
        return Const(float(source))
    names = frozenset(vars)
    clash = names & set(FUNCTIONS)
    if clash:
        raise VarError(f"variable names clash with functions: {sorted(clash)}")
    return _Parser(str(source), names).parse()


# ---------------------------------------------------------------------------
# evaluation


def _check(cond, message, e):
    if np.any(cond):
        raise DomainError(message, to_string(e) if not isinstance(e, TimeIntegral) else repr(e))


def _compile(e: Expr) -> Callable:
    if isinstance(e, Const):
        v = e.value
        return lambda env: v
    if isinstance(e, Var):
        name = e.name

        def _var(env):
            try:
                return env[name]
            except KeyError:
                raise VarError(f"variable {name!r} is not bound") from None

        return _var
    if isinstance(e, TimeIntegral):
        g = e.integrand.compiled
        var = e.var

        def _scalar(s):
            return float(g({var: s}))

        def _integral(env):
            s = np.asarray(env[var], dtype=float)
            uniq, inv = np.unique(s, return_inverse=True)
            vals = np.array([adaptive_simpson(_scalar, 0.0, float(u), tol=1e-12) for u in uniq])
            out = vals[inv].reshape(s.shape)
            return out if out.ndim else float(out)

        return _integral
    if isinstance(e, Unary):
        f = e.arg.compiled
        op = e.op
        if op == "neg":
            return lambda env: -f(env)
        if op == "ln":

            def _ln(env):
                a = f(env)
                _check(np.less_equal(a, 0.0), "ln of a non-positive value", e)
                return np.log(a)

            return _ln
        if op == "sqrt":

            def _sqrt(env):
                a = f(env)
                _check(np.less(a, 0.0), "sqrt of a negative value", e)
                return np.sqrt(a)

            return _sqrt
        npf = {"exp": np.exp, "sin": np.sin, "cos": np.cos, "tanh": np.tanh}[op]
        return lambda env: npf(f(env))
    op = e.op
    fa = e.left.compiled
    if op == "pow":
        k = e.right.value
        if k == 2.0:
            return lambda env: (lambda a: a * a)(fa(env))
        if k.is_integer():
            ki = int(k)
            if ki > 0:
                return lambda env: fa(env) ** ki

            def _ipow(env):
                a = fa(env)
                _check(np.equal(a, 0.0), "negative power of zero", e)
                return np.power(np.asarray(a, dtype=float), ki)

            return _ipow

        def _fpow(env):
            a = fa(env)
            _check(np.less(a, 0.0), "fractional power of a negative value", e)
            if k < 0:
                _check(np.equal(a, 0.0), "negative power of zero", e)
            return np.power(a, k)

        return _fpow
    fb = e.right.compiled
    if op == "add":
        return lambda env: fa(env) + fb(env)
    if op == "sub":
        return lambda env: fa(env) - fb(env)
    if op == "mul":
        return lambda env: fa(env) * fb(env)

    def _div(env):
        b = fb(env)
        _check(np.equal(b, 0.0), "division by zero", e)
        return fa(env) / b

    return _div


def evaluate(e: Expr, point: Mapping[str, float]) -> float:
    """Evaluate ``e`` at a single point given as a name-to-value mapping."""
    return float(e.compiled(point))


# ---------------------------------------------------------------------------
# antiderivatives in a single variable


def _linear_coeffs(arg: Expr, var: str):
    """Return (a, b) with arg == a*var + b if ``arg`` is affine in ``var``."""
    if arg.free_vars - {var}:
        return None
    slope = simplify(diff(arg, var))
    if not isinstance(slope, Const) or slope.value == 0.0:
        return None
    try:
        b = evaluate(arg, {var: 0.0})
    except DomainError:
        return None
    return slope.value, b


def _antiderivative_raw(e: Expr, var: str):
    if var not in e.free_vars:
        return mul(e, Var(var))
    if isinstance(e, Var):
        return mul(Const(0.5), power(e, 2.0))
    if isinstance(e, Binary):
        if e.op in ("add", "sub"):
            fa = _antiderivative_raw(e.left, var)
            fb = _antiderivative_raw(e.right, var)
            if fa is None or fb is None:
                return None
            return add(fa, fb) if e.op == "add" else sub(fa, fb)
        if e.op == "mul":
            if var not in e.left.free_vars:
                inner = _antiderivative_raw(e.right, var)
                return None if inner is None else mul(e.left, inner)
            if var not in e.right.free_vars:
                inner = _antiderivative_raw(e.left, var)
                return None if inner is None else mul(inner, e.right)
            return None
        if e.op == "div" and var not in e.right.free_vars:
            inner = _antiderivative_raw(e.left, var)
            return None if inner is None else div(inner, e.right)
        if e.op == "pow" and isinstance(e.left, Var):
            k = e.right.value
            if k == -1.0 or k < 0:
                return None
            return div(power(e.left, k + 1.0), Const(k + 1.0))
        return None
    if isinstance(e, Unary):
        if e.op == "neg":
            inner = _antiderivative_raw(e.arg, var)
            return None if inner is None else neg(inner)
        if e.op in ("exp", "sin", "cos"):
            lin = _linear_coeffs(e.arg, var)
            if lin is None:
                return None
            a = Const(lin[0])
            if e.op == "exp":
                return div(e, a)
            if e.op == "sin":
                return div(neg(func("cos", e.arg)), a)
            return div(func("sin", e.arg), a)
    return None


def antiderivative(e: Expr, var: str) -> Expr:
    """``F(var) = integral_0^var e(s) ds`` for ``e`` depending on ``var`` only.

    A small table of closed forms (polynomials, exp/sin/cos of affine
    arguments) is tried first; otherwise a :class:`TimeIntegral` node is
    returned and evaluated by quadrature.
    """
    extra = e.free_vars - {var}
    if extra:
        raise VarError(f"expression must depend on {var!r} only, found {sorted(extra)}")
    raw = _antiderivative_raw(simplify(e), var)
    if raw is not None:
        raw = simplify(raw)
        try:
            offset = evaluate(raw, {var: 0.0})
        except DomainError:
            raw = None
        else:
            if math.isfinite(offset):
                return simplify(sub(raw, Const(offset)))
    return TimeIntegral(simplify(e), var)
