"""One-dimensional adaptive quadrature."""

from __future__ import annotations

import math


def adaptive_simpson(fn, a: float, b: float, tol: float = 1e-12, max_depth: int = 48) -> float:
    """Integrate ``fn`` over ``[a, b]`` by adaptive Simpson with Richardson correction."""
    if a == b:
        return 0.0
    fa, fb = fn(a), fn(b)
    c = 0.5 * (a + b)
    fc = fn(c)
    whole = (b - a) / 6.0 * (fa + 4.0 * fc + fb)
    return _recurse(fn, a, b, fa, fb, fc, whole, tol, max_depth)


def _recurse(fn, a, b, fa, fb, fc, whole, tol, depth):
    c = 0.5 * (a + b)
    d = 0.5 * (a + c)
    e = 0.5 * (c + b)
    fd, fe = fn(d), fn(e)
    left = (c - a) / 6.0 * (fa + 4.0 * fd + fc)
    right = (b - c) / 6.0 * (fc + 4.0 * fe + fb)
    delta = left + right - whole
    if depth <= 0 or abs(delta) <= 15.0 * tol or not math.isfinite(delta):
        return left + right + delta / 15.0
    return _recurse(fn, a, c, fa, fc, fd, left, 0.5 * tol, depth - 1) + _recurse(
        fn, c, b, fc, fb, fe, right, 0.5 * tol, depth - 1
    )
