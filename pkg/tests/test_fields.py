import math

import numpy as np
import pytest

from symsde.errors import DomainError, ShapeError, UnknownIdentifier
from symsde.fields import (
    MatrixField,
    ScalarField,
    VarSet,
    VectorField,
    check_antisymmetric,
    check_special_orthogonal,
    sample_points,
)
from symsde.models import bm2d, lotka_volterra

XYZ = VarSet(("x", "y", "z"))
BOX = ((-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0))


def test_varset_time_is_last():
    assert XYZ.time == "z"
    assert XYZ.spatial == ("x", "y")
    assert XYZ.index("y") == 1
    with pytest.raises(Exception):
        VarSet(("x", "x"))


def test_scalar_field_evaluates_on_batches():
    f = ScalarField.parse("x^2 + y*z", XYZ)
    pts = np.array([[1.0, 2.0, 3.0], [0.0, 1.0, 1.0]])
    np.testing.assert_allclose(f.evaluate(pts), [7.0, 1.0])
    assert f.evaluate(np.zeros((4, 5, 3))).shape == (4, 5)


def test_vector_field_jacobian():
    v = VectorField.parse(["x*y", "sin(x)", "1"], XYZ)
    p = np.array([[0.5, 2.0, 0.0]])
    J = v.jacobian.evaluate(p)[0]
    np.testing.assert_allclose(J, [[2.0, 0.5, 0.0], [math.cos(0.5), 0.0, 0.0], [0.0, 0.0, 0.0]])


def test_identity_matrix_field():
    eye = MatrixField.parse([["1", "0"], ["0", "1"]], XYZ)
    out = eye.evaluate(sample_points(BOX, 10))
    assert out.shape == (10, 2, 2)
    np.testing.assert_array_equal(out, np.broadcast_to(np.eye(2), (10, 2, 2)))


def test_bm2d_coefficients():
    model = bm2d()
    pts = sample_points(model.domain_box, 7)
    np.testing.assert_array_equal(model.diffusion(pts)[3], [[1, 0], [0, 1], [0, 0]])
    np.testing.assert_array_equal(model.drift(pts)[3], [0, 0, 1])


def test_lotka_volterra_drift_at_equilibrium():
    model = lotka_volterra()
    np.testing.assert_allclose(model.drift(np.array([[1.0, 1.0, 0.0]]))[0], [0.0, 0.0, 1.0])


def test_domain_error_reports_component():
    v = VectorField.parse(["x", "ln(y)"], XYZ)
    with pytest.raises(DomainError) as info:
        v.evaluate(np.array([[1.0, -1.0, 0.0]]))
    assert info.value.component == (1,)


def test_unknown_variable_rejected():
    with pytest.raises(UnknownIdentifier):
        ScalarField.parse("w + x", XYZ)


def test_matrix_field_rows_must_match():
    with pytest.raises((ShapeError, ValueError)):
        MatrixField.parse([["1", "0"], ["0"]], XYZ)


def test_transpose_and_dependencies():
    m = MatrixField.parse([["z", "x"], ["0", "1"]], XYZ)
    assert m.transpose()[0, 1] == m[1, 0]
    assert m.depends_on == frozenset({"x", "z"})


def test_sample_points_deterministic_and_inside_box():
    a = sample_points(BOX, 50)
    b = sample_points(BOX, 50)
    np.testing.assert_array_equal(a, b)
    lo, hi = np.array(BOX).T
    assert np.all(a >= lo) and np.all(a <= hi)
    assert len(np.unique(a[:, 0])) == 50


def _rot(theta):
    c, s = math.cos(theta), math.sin(theta)
    return [[str(c), str(s)], [str(-s), str(c)]]


def test_rotation_is_special_orthogonal():
    B = MatrixField.parse([["cos(0.7*z)", "sin(0.7*z)"], ["-sin(0.7*z)", "cos(0.7*z)"]], XYZ)
    assert check_special_orthogonal(B, sample_points(BOX, 20)).passed


@pytest.mark.parametrize("rows", [[["1", "1"], ["0", "1"]], [["0", "1"], ["1", "0"]]])
def test_non_rotations_fail(rows):
    rep = check_special_orthogonal(MatrixField.parse(rows, XYZ), sample_points(BOX, 5))
    assert not rep.passed
    assert rep.worst >= 1.0 - 1e-12


def test_rotation_check_accepts_callables():
    rep = check_special_orthogonal(lambda p: np.broadcast_to(np.eye(3), (len(p), 3, 3)), np.zeros((2, 3)))
    assert rep.passed and rep.worst == 0.0


def test_antisymmetry():
    pts = sample_points(BOX, 10)
    assert check_antisymmetric(MatrixField.parse([["0", "z"], ["-z", "0"]], XYZ), pts).passed
    assert check_antisymmetric(MatrixField.parse([["0", "0"], ["0", "0"]], XYZ), pts).passed
    assert not check_antisymmetric(MatrixField.parse([["1", "0"], ["0", "1"]], XYZ), pts).passed
