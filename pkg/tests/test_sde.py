import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from symsde.errors import ShapeError, VarMismatch
from symsde.fields import ScalarField, VarSet
from symsde.models import additive_bm, bm2d, lotka_volterra
from symsde.sde import SdeModel, apply_generator, gauge_equivalent, model_from_strings, rotate


def test_generator_on_bm2d():
    model = bm2d()
    pts = model.sample_grid(16)
    np.testing.assert_allclose(apply_generator(model, "x^2 + y^2").evaluate(pts), 2.0)
    np.testing.assert_allclose(apply_generator(model, "z").evaluate(pts), 1.0)


def test_generator_pure_drift():
    model = model_from_strings(("x", "t"), ["1"], [["0"]], ((-1, 1), (0, 1)), (0.0,))
    np.testing.assert_allclose(apply_generator(model, "x").evaluate(np.array([[0.3, 0.1]])), 1.0)


def test_generator_mixed_terms():
    # L(x*y*z) on 2D BM: time derivative x*y plus no second-order cross term
    model = bm2d()
    p = np.array([[0.5, -2.0, 0.3]])
    assert apply_generator(model, "x*y*z").evaluate(p)[0] == pytest.approx(-1.0)


def test_generator_rejects_foreign_field():
    with pytest.raises(VarMismatch):
        apply_generator(bm2d(), ScalarField.parse("u", VarSet(("u", "t"))))


def test_time_state_coordinate_validation():
    with pytest.raises(ShapeError):
        model_from_strings(("x", "z"), ["0", "2"], [["1"], ["0"]], ((-1, 1), (0, 1)), (0.0, 0.0))
    with pytest.raises(ShapeError):
        model_from_strings(("x", "z"), ["0", "1"], [["1"], ["1"]], ((-1, 1), (0, 1)), (0.0, 0.0))


def test_initial_point_padding_and_shapes():
    model = bm2d(initial_point=(0.5, -0.5))
    assert model.initial_point == (0.5, -0.5, 0.0)
    assert (model.n, model.m, model.N) == (3, 2, 3)
    with pytest.raises(ShapeError):
        SdeModel(model.vars, model.mu, model.sigma, model.domain_box[:2], (0, 0, 0))


def test_descriptor_round_trip():
    model = lotka_volterra(alpha=1.5, sigma=0.5)
    back = SdeModel.from_descriptor(model.to_descriptor())
    pts = model.sample_grid(20)
    np.testing.assert_allclose(back.drift(pts), model.drift(pts), rtol=1e-15)
    np.testing.assert_allclose(back.diffusion(pts), model.diffusion(pts), rtol=1e-15)
    assert back.log_coordinates == model.log_coordinates


def test_gauge_examples():
    model = bm2d()
    assert gauge_equivalent(model, model)
    c, s = math.cos(0.3), math.sin(0.3)
    assert gauge_equivalent(model, rotate(model, [[str(c), str(s)], [str(-s), str(c)]]))
    doubled = model_from_strings(("x", "y", "z"), ["0", "0", "1"], [["2", "0"], ["0", "2"], ["0", "0"]],
                                 model.domain_box, (0, 0, 0))
    rep = gauge_equivalent(model, doubled)
    assert not rep.equivalent
    assert rep.diffusion_deviation == pytest.approx(3.0)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-2.0, 2.0), st.sampled_from(["bm2d", "additive", "lv"]))
def test_rotated_models_are_gauge_equivalent(a, b, which):
    # a state-dependent rotation by angle a*z + b*x
    model = {"bm2d": bm2d, "additive": lambda: additive_bm("-(1 + r2)", "r2"), "lv": lotka_volterra}[which]()
    ang = f"({a!r})*z + ({b!r})*x"
    B = [[f"cos({ang})", f"sin({ang})"], [f"-sin({ang})", f"cos({ang})"]]
    rep = gauge_equivalent(model, rotate(model, B), tol=1e-12)
    assert rep.equivalent, rep


def test_rotation_shape_checked():
    with pytest.raises(ShapeError):
        rotate(bm2d(), [["1"]])
