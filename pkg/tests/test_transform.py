import math

import numpy as np
import pytest

from symsde.errors import TransformationError, VarError
from symsde.fields import sample_points
from symsde.models import bm2d, lotka_volterra
from symsde.transform import (
    FiniteTransformation,
    compose,
    invert,
    is_strong,
    pure_diffeomorphism,
    pure_measure_change,
    pure_rotation,
    pure_time_change,
    transform_coefficients,
)

VARS = ("x", "y", "z")
BOX = ((-1.0, 1.0), (-1.0, 1.0), (0.0, 1.0))


def rot(angle):
    return [[f"cos({angle})", f"sin({angle})"], [f"-sin({angle})", f"cos({angle})"]]


def t_first():
    return FiniteTransformation.from_exprs(
        VARS, ["x + 0.3*sin(y)", "y + 0.1*z"], "1 + z", rot("0.5*z + 0.2*x"), ["0.3*y", "cos(x)"], box=BOX
    )


def t_second():
    return FiniteTransformation.from_exprs(
        VARS, ["2*x", "y - 0.2*x^2"], "exp(0.5*z)", rot("0.4*y"), ["sin(z)", "0.1*x"], box=BOX
    )


def grid(n=32):
    return sample_points(((-0.8, 0.8), (-0.8, 0.8), (0.05, 0.9)), n)


def test_identity_leaves_model_unchanged():
    model = bm2d()
    T = FiniteTransformation.identity(VARS, 2)
    new = transform_coefficients(T, model)
    pts = grid()
    np.testing.assert_allclose(new.drift(pts), model.drift(pts), atol=1e-14)
    np.testing.assert_allclose(new.diffusion(pts), model.diffusion(pts), atol=1e-14)


def test_pure_rotation_on_bm2d():
    T = pure_rotation(VARS, [["0", "1"], ["-1", "0"]])
    new = transform_coefficients(T, bm2d())
    pts = grid(8)
    np.testing.assert_allclose(new.drift(pts), bm2d().drift(pts), atol=1e-15)
    np.testing.assert_allclose(new.diffusion(pts)[0], [[0, -1], [1, 0], [0, 0]], atol=1e-15)


def test_pure_measure_change_shifts_drift():
    T = pure_measure_change(VARS, ["0.3", "-0.2"])
    new = transform_coefficients(T, bm2d())
    pts = grid(8)
    np.testing.assert_allclose(new.drift(pts), np.broadcast_to([0.3, -0.2, 1.0], (8, 3)), atol=1e-15)
    np.testing.assert_allclose(new.diffusion(pts), bm2d().diffusion(pts), atol=1e-15)


def test_time_change_rescales_coefficients():
    # eta = 4: drift of the clock is 1, noise is scaled by 1/2
    T = pure_time_change(VARS, "4", 2)
    new = transform_coefficients(T, bm2d())
    pts = sample_points(((-1, 1), (-1, 1), (0, 4)), 8)
    np.testing.assert_allclose(new.drift(pts)[:, 2], 1.0)
    np.testing.assert_allclose(new.diffusion(pts)[:, :2], np.broadcast_to(0.5 * np.eye(2), (8, 2, 2)))
    np.testing.assert_allclose(T.time_change(np.array([0.25])), [1.0])
    np.testing.assert_allclose(T.time_inverse(np.array([1.0])), [0.25])


def test_composed_time_changes_multiply():
    T = compose(pure_time_change(VARS, "3", 2), pure_time_change(VARS, "2", 2))
    np.testing.assert_allclose(T.eta(np.array([0.1, 0.7])), [6.0, 6.0])
    np.testing.assert_allclose(T.time_change(np.array([0.5])), [3.0])


def test_composed_rotations_add_angles():
    T = compose(pure_rotation(VARS, rot("0.4")), pure_rotation(VARS, rot("1.1")))
    B = T.rotation(grid(4))
    c, s = math.cos(1.5), math.sin(1.5)
    np.testing.assert_allclose(B, np.broadcast_to([[c, s], [-s, c]], (4, 2, 2)), atol=1e-15)


def test_inverse_of_measure_change():
    Ti = invert(pure_measure_change(VARS, ["0.5", "-1.5"]))
    ev = Ti.evaluate(grid(4))
    np.testing.assert_allclose(ev["h"], np.broadcast_to([-0.5, 1.5], (4, 2)))
    np.testing.assert_allclose(ev["B"], np.broadcast_to(np.eye(2), (4, 2, 2)))
    np.testing.assert_allclose(ev["eta"], 1.0)
    np.testing.assert_allclose(ev["phi"], grid(4), atol=1e-15)


def test_inverse_of_rotation():
    Ti = invert(pure_rotation(VARS, rot("0.9")))
    c, s = math.cos(-0.9), math.sin(-0.9)
    np.testing.assert_allclose(Ti.rotation(grid(3)), np.broadcast_to([[c, s], [-s, c]], (3, 2, 2)), atol=1e-15)


def _max_dev(T, pts):
    ev = T.evaluate(pts)
    return max(
        np.abs(ev["phi"] - pts).max(),
        np.abs(ev["B"] - np.eye(2)).max(),
        np.abs(ev["eta"] - 1.0).max(),
        np.abs(ev["h"]).max(),
    )


@pytest.mark.parametrize("order", ["right", "left"])
def test_inverse_composes_to_identity(order):
    T = t_first()
    pts = grid()
    C = compose(T, invert(T)) if order == "right" else compose(invert(T), T)
    if order == "right":
        pts = T.phi.value(pts)  # the image region, where the inverse is defined
    assert _max_dev(C, pts) <= 1e-10


def test_composition_is_associative():
    a, b, c = t_first(), t_second(), pure_rotation(VARS, rot("z"))
    pts = grid(16)
    left, right = compose(compose(c, b), a).evaluate(pts), compose(c, compose(b, a)).evaluate(pts)
    for k in left:
        np.testing.assert_allclose(left[k], right[k], atol=1e-12)


@pytest.mark.parametrize("model", [bm2d(), lotka_volterra()], ids=["bm2d", "lv"])
def test_pushforward_is_functorial(model):
    T1, T2 = t_first(), t_second()
    if model.name == "lotka_volterra":
        pts = sample_points(((0.5, 2.0), (0.5, 2.0), (0.05, 0.9)), 16)
    else:
        pts = grid(16)
    image = compose(T2, T1).phi.value(pts)
    direct = transform_coefficients(compose(T2, T1), model)
    stepwise = transform_coefficients(T2, transform_coefficients(T1, model))
    np.testing.assert_allclose(direct.drift(image), stepwise.drift(image), atol=1e-8)
    np.testing.assert_allclose(direct.diffusion(image), stepwise.diffusion(image), atol=1e-8)


def test_is_strong():
    assert is_strong(FiniteTransformation.identity(VARS, 2))
    assert is_strong(pure_diffeomorphism(VARS, ["2*x", "2*y"], 2))
    assert not is_strong(pure_rotation(VARS, rot("0.3")))
    assert not is_strong(pure_time_change(VARS, "2", 2))


def test_diffeomorphism_pushforward():
    # Phi = 2x on BM: sigma doubles, drift unchanged
    T = pure_diffeomorphism(VARS, ["2*x", "2*y"], 2)
    new = transform_coefficients(T, bm2d())
    pts = grid(6)
    np.testing.assert_allclose(new.diffusion(pts)[:, :2], np.broadcast_to(2 * np.eye(2), (6, 2, 2)))
    np.testing.assert_allclose(new.drift(pts), bm2d().drift(pts), atol=1e-15)


@pytest.mark.parametrize(
    "kwargs",
    [
        {"eta": "-1"},
        {"rotation": [["1", "1"], ["0", "1"]]},
        {"rotation": [["0", "1"], ["1", "0"]]},
    ],
)
def test_invalid_transformations_rejected(kwargs):
    args = {"eta": "1", "rotation": None, "shift": None, "m": 2}
    args.update(kwargs)
    with pytest.raises(TransformationError):
        FiniteTransformation.from_exprs(VARS, ["x", "y"], box=BOX, **args)


def test_eta_must_be_time_only():
    with pytest.raises(VarError):
        FiniteTransformation.from_exprs(VARS, ["x", "y"], "1 + x^2", m=2)


def test_inverse_map_round_trip():
    T = t_first()
    pts = grid()
    back = T.phi.inverse().value(T.phi.value(pts))
    np.testing.assert_allclose(back, pts, atol=1e-12)


def test_inverse_jacobian_is_matrix_inverse():
    T = t_second()
    pts = grid(8)
    J = T.phi.jacobian(pts)
    Ji = T.phi.inverse().jacobian(T.phi.value(pts))
    np.testing.assert_allclose(Ji @ J, np.broadcast_to(np.eye(3), (8, 3, 3)), atol=1e-12)


def test_descriptor_constructor():
    T = FiniteTransformation.from_descriptor({"phi": ["x + 1", "y"], "h": ["1", "0"]}, VARS, 2)
    ev = T.evaluate(np.array([[0.0, 0.0, 0.5]]))
    np.testing.assert_allclose(ev["phi"], [[1.0, 0.0, 0.5]])
    np.testing.assert_allclose(ev["h"], [[1.0, 0.0]])
