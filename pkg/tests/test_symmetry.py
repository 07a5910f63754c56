import math

import numpy as np
import pytest

from symsde.errors import SymmetryError, VarError
from symsde.expr import evaluate, simplify
from symsde.models import additive_bm, additive_v_beta, bm2d, lotka_volterra, lv_v_a, v_alpha, v_beta
from symsde.symmetry import (
    FlowMap,
    InfinitesimalSymmetry,
    flow_transformation,
    gweak_determining_residual,
    reconstruct_flow,
    verify_finite_symmetry,
    weak_determining_residual,
)

VARS = ("x", "y", "z")


def sym(Y, m, tau, H, C=(("0", "0"), ("0", "0"))):
    return InfinitesimalSymmetry(VARS, Y, m, C, tau, H)


def test_known_families_solve_the_weak_equations():
    model = bm2d()
    assert weak_determining_residual(model, v_beta("1", model)).sup <= 1e-9
    assert weak_determining_residual(model, v_alpha("1", model)).sup <= 1e-9


def test_dilation_of_x_alone_is_not_a_symmetry():
    model = bm2d()
    V = sym(["x", "0"], "0", "0", ["0", "0"])
    res = weak_determining_residual(model, V)
    R2 = res.diffusion
    assert evaluate(simplify(R2[0][0]), {"x": 0.3, "y": 0.1, "z": 0.5}) == -1.0
    assert res.sup == pytest.approx(1.0)
    assert not res.passed(1e-9)


def test_pure_time_scaling_breaks_the_gweak_equations():
    model = bm2d()
    V = sym(["0", "0"], "z", "1", ["0", "0"])
    res = gweak_determining_residual(model, V)
    # R2 = tau * sigma sigma^T
    assert res.sup == pytest.approx(1.0)
    np.testing.assert_allclose(res.diffusion_values[0], np.diag([1.0, 1.0, 0.0]), atol=1e-15)


def test_residual_values_shape():
    model = bm2d()
    pts = model.sample_grid(10)
    res = weak_determining_residual(model, v_beta("z^2", model), pts)
    assert len(res.worst_point) == 3
    assert res.sup <= 1e-9


def test_c_must_be_antisymmetric():
    with pytest.raises(SymmetryError):
        sym(["0", "0"], "0", "0", ["0", "0"], C=(("1", "0"), ("0", "1")))


def test_m_must_integrate_tau():
    with pytest.raises(SymmetryError):
        sym(["0", "0"], "2*z", "1", ["0", "0"])


def test_time_functions_must_not_depend_on_space():
    with pytest.raises(VarError):
        sym(["0", "0"], "0", "x", ["0", "0"])


def test_descriptor_round_trip():
    V = v_beta("z")
    W = InfinitesimalSymmetry.from_descriptor(V.to_descriptor(), VARS)
    res = weak_determining_residual(bm2d(), W)
    assert res.sup <= 1e-9


# ---------------------------------------------------------------------------
# flows


def test_zero_parameter_flow_is_identity():
    pts = bm2d().sample_grid(12)
    flow = reconstruct_flow(v_beta("z"), 0.0, pts)
    np.testing.assert_array_equal(flow.phi, pts)
    np.testing.assert_array_equal(flow.B, np.broadcast_to(np.eye(2), (12, 2, 2)))
    np.testing.assert_array_equal(flow.eta, 1.0)
    np.testing.assert_array_equal(flow.h, 0.0)


def test_rotation_flow_quarter_turn():
    flow = reconstruct_flow(v_beta("1"), math.pi / 2, np.array([[1.0, 0.0, 0.3]]))
    np.testing.assert_allclose(flow.phi[0], [0.0, -1.0, 0.3], atol=1e-6)
    np.testing.assert_allclose(flow.B[0], [[0.0, 1.0], [-1.0, 0.0]], atol=1e-6)
    assert flow.eta[0] == pytest.approx(1.0, abs=1e-12)


def test_dilation_flow_closed_form():
    lam = 0.2
    flow = reconstruct_flow(v_alpha("1"), lam, np.array([[1.0, 1.0, 1.0]]))
    assert flow.eta[0] == pytest.approx(math.exp(lam), abs=1e-8)
    assert flow.f[0] == pytest.approx(math.exp(lam), abs=1e-8)
    np.testing.assert_allclose(flow.phi[0, :2], math.exp(lam / 2), atol=1e-8)


def test_flow_map_inverse():
    V = additive_v_beta(additive_bm("-(1 + r2)", "r2"), "z")
    pts = bm2d().sample_grid(8) * np.array([0.5, 0.5, 1.0])
    fwd = FlowMap(V, 0.4, 200)
    back = fwd.inverse().value(fwd.value(pts))
    np.testing.assert_allclose(back, pts, atol=1e-10)


def test_richardson_difference_is_small():
    flow = reconstruct_flow(v_alpha("z"), 0.5, bm2d().sample_grid(8), richardson=True)
    assert flow.richardson_error < 1e-9


def test_flow_transformation_matches_flow_data():
    V = v_beta("z")
    T = flow_transformation(V, 0.7)
    pts = bm2d().sample_grid(6)
    ev = T.evaluate(pts)
    flow = reconstruct_flow(V, 0.7, pts)
    np.testing.assert_allclose(ev["phi"], flow.phi, atol=1e-12)
    np.testing.assert_allclose(ev["B"], flow.B, atol=1e-12)
    np.testing.assert_allclose(ev["h"], flow.h, atol=1e-10)


def test_variational_and_finite_difference_jets_agree():
    model = lotka_volterra()
    V = lv_v_a(model, "1")
    pts = model.sample_grid(6)
    fd = verify_finite_symmetry(model, V, [0.2], pts, derivatives="fd", steps=400)
    var = verify_finite_symmetry(model, V, [0.2], pts, derivatives="variational", steps=400)
    assert fd.passed and var.passed


# ---------------------------------------------------------------------------
# finite symmetry criterion


def test_rotation_family_is_a_finite_gweak_symmetry():
    model = bm2d()
    rep = verify_finite_symmetry(model, v_beta("z"), [0.1, 0.5, 1.0], model.sample_grid(24), kind="gweak")
    assert rep.passed, rep.as_dict()


def test_zero_parameter_has_no_violation():
    model = bm2d()
    rep = verify_finite_symmetry(model, v_alpha("z"), [0.0], model.sample_grid(16))
    assert rep.violation[0] <= 1e-8


def test_dilation_family_is_a_finite_weak_symmetry():
    model = bm2d()
    rep = verify_finite_symmetry(model, v_alpha("1"), [0.3], model.sample_grid(24))
    assert rep.passed, rep.as_dict()


def test_non_symmetry_fails_finite_check():
    model = bm2d()
    V = sym(["x", "0"], "0", "0", ["0", "0"])
    rep = verify_finite_symmetry(model, V, [0.3], model.sample_grid(16))
    assert not rep.passed
    assert max(rep.violation) > 0.1
