"""End-to-end acceptance checks.

Each test prints one ``criterion N: PASS|FAIL`` line (collected again in
the terminal summary) and asserts the same condition. The Monte Carlo
checks use the full path counts, so this module takes several minutes.
"""

import json
import math
import time

import numpy as np
import pytest
from scipy import stats

from conftest import ACCEPTANCE_LINES
from symsde.cli import main
from symsde.fields import MatrixField, check_special_orthogonal
from symsde.mc import (
    SimulationConfig,
    estimate_ibp,
    estimate_isserlis,
    estimate_quasi_invariance,
    estimate_stein,
    girsanov_weight,
    map_chunks,
    rotate_brownian,
    simulate,
)
from symsde.models import (
    additive_bm,
    additive_v_alpha,
    additive_v_beta,
    bm2d,
    lotka_volterra,
    lv_v_a,
    lv_v_b,
    v_alpha,
    v_beta,
)
from symsde.symmetry import (
    InfinitesimalSymmetry,
    flow_transformation,
    gweak_determining_residual,
    reconstruct_flow,
    verify_finite_symmetry,
    weak_determining_residual,
)
from symsde.transform import compose, invert, transform_coefficients

pytestmark = pytest.mark.filterwarnings("ignore::symsde.errors.UnboundedFunctionalWarning")


def record(n, passed, detail):
    line = f"criterion {n}: {'PASS' if passed else 'FAIL'}  {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    return passed


def symmetry_table():
    bm = bm2d()
    add = additive_bm("-(1 + r2)", "r2")
    lv = lotka_volterra(alpha=1, beta=1, gamma=1, delta=1, sigma=1)
    return [
        ("bm2d v_alpha(z)", bm, v_alpha("z", bm)),
        ("bm2d v_beta(z^2)", bm, v_beta("z^2", bm)),
        ("additive v_alpha(z)", add, additive_v_alpha(add, "z")),
        ("additive v_beta(z)", add, additive_v_beta(add, "z")),
        ("lv v_a(1)", lv, lv_v_a(lv, "1")),
        ("lv v_b(1)", lv, lv_v_b(lv, "1")),
    ]


def test_criterion_1_determining_residuals():
    start = time.perf_counter()  # construction includes the gate check of each family
    sups = {name: weak_determining_residual(model, V).sup for name, model, V in symmetry_table()}
    elapsed = time.perf_counter() - start
    worst = max(sups.values())
    ok = worst <= 1e-7 and elapsed <= 5.0
    record(1, ok, f"worst weak residual {worst:.2e} <= 1e-7 over {len(sups)} families, {elapsed:.2f} s <= 5 s")
    assert ok, sups


def test_criterion_2_gweak_implication_and_corruption():
    sups, corrupted = {}, {}
    for name, model, V in symmetry_table():
        sups[name] = gweak_determining_residual(model, V).sup
        H = list(V.H)
        H[0] = f"-({H[0]})"
        W = InfinitesimalSymmetry(model.vars, V.Y, V.m, V.C, V.tau, H, check_box=model.domain_box)
        corrupted[name] = min(weak_determining_residual(model, W).sup, gweak_determining_residual(model, W).sup)
    worst, weakest = max(sups.values()), min(corrupted.values())
    ok = worst <= 1e-7 and weakest >= 1e-2
    record(2, ok, f"worst gweak residual {worst:.2e} <= 1e-7; corrupted H residuals >= {weakest:.3g} (need >= 1e-2)")
    assert ok, (sups, corrupted)


def test_criterion_3_rotation_flow_closed_form():
    V = v_beta("1")
    pts = bm2d().sample_grid(64)
    start = time.perf_counter()
    err, orth = 0.0, 0.0
    for lam in (0.5, 1.0, math.pi / 2):
        flow = reconstruct_flow(V, lam, pts, steps=1000)
        c, s = math.cos(lam), math.sin(lam)
        x, y = pts[:, 0], pts[:, 1]
        phi = np.stack([c * x + s * y, -s * x + c * y, pts[:, 2]], axis=1)
        B = np.array([[c, s], [-s, c]])
        err = max(err, np.abs(flow.phi - phi).max(), np.abs(flow.B - B).max())
        orth = max(orth, check_special_orthogonal(lambda p, b=flow.B: b, pts).worst)
    elapsed = time.perf_counter() - start
    ok = err <= 1e-6 and orth <= 1e-9 and elapsed <= 1.0
    record(3, ok, f"max |flow - closed form| {err:.2e} <= 1e-6, orthogonality defect {orth:.2e} <= 1e-9, "
                  f"{elapsed:.2f} s <= 1 s")
    assert ok


def test_criterion_4_finite_symmetry_and_group_laws():
    model = bm2d()
    pts = model.sample_grid(64)
    rep = verify_finite_symmetry(model, v_alpha("1", model), [0.1, 0.3], pts, tol=1e-5)
    viol = max(rep.violation)

    inner = pts * np.array([0.5, 0.5, 0.8])
    T_a = flow_transformation(v_alpha("1"), 0.3)
    T_b = flow_transformation(v_beta("z"), 0.5)
    inv_err = 0.0
    for T in (T_a, T_b):
        for C, where in ((compose(invert(T), T), inner), (compose(T, invert(T)), T.phi.value(inner))):
            ev = C.evaluate(where)
            inv_err = max(inv_err, np.abs(ev["phi"] - where).max(), np.abs(ev["B"] - np.eye(2)).max(),
                          np.abs(ev["eta"] - 1).max(), np.abs(ev["h"]).max())

    T1, T2 = flow_transformation(v_alpha("1"), 0.1), T_b
    image = compose(T2, T1).phi.value(inner)
    direct = transform_coefficients(compose(T2, T1), model)
    stepwise = transform_coefficients(T2, transform_coefficients(T1, model))
    fun_err = max(np.abs(direct.drift(image) - stepwise.drift(image)).max(),
                  np.abs(direct.diffusion(image) - stepwise.diffusion(image)).max())
    ok = rep.passed and viol <= 1e-5 and inv_err <= 1e-8 and fun_err <= 1e-8
    record(4, ok, f"finite violation {viol:.2e} <= 1e-5 at lambda 0.1, 0.3; inverse law {inv_err:.2e} <= 1e-8; "
                  f"functoriality {fun_err:.2e} <= 1e-8")
    assert ok


def _rotated_terminal(model, cfg, rotation):
    def fn(ens):
        return {"w": rotate_brownian(ens, model, rotation, check=False).sum(axis=1)}

    return map_chunks(model, cfg, fn)["w"]


def test_criterion_5_brownian_rotation_invariance():
    n, t = 200_000, 1.0
    model = bm2d()
    cfg = SimulationConfig(n, 0.01, t, seed=505)
    flow_rot = flow_transformation(v_beta("z"), 1.0).rotation
    ang = "x*y + z"
    state_rot = MatrixField.parse([[f"cos({ang})", f"sin({ang})"], [f"-sin({ang})", f"cos({ang})"]], model.vars)
    grid = model.sample_grid(64)
    so_ok = check_special_orthogonal(flow_rot, grid).passed and check_special_orthogonal(state_rot, grid).passed
    start = time.perf_counter()
    details, ok = [], so_ok
    for label, rot in (("flow B", flow_rot), ("state B", state_rot.evaluate)):
        w = _rotated_terminal(model, cfg, rot)
        cov_dev = np.abs(np.cov(w.T) - t * np.eye(2)).max()
        skew = np.abs(stats.skew(w, axis=0)).max()
        kurt = np.abs(stats.kurtosis(w, axis=0)).max()
        ok &= cov_dev <= 4 / math.sqrt(n) and skew <= 5 / math.sqrt(n) and kurt <= 10 / math.sqrt(n)
        details.append(f"{label}: cov dev {cov_dev:.4f}, |skew| {skew:.4f}, |kurt| {kurt:.4f}")
    elapsed = time.perf_counter() - start
    ok &= elapsed <= 30.0
    record(5, ok, f"{'; '.join(details)} (bounds {4 / math.sqrt(n):.4f}, {5 / math.sqrt(n):.4f}, "
                  f"{10 / math.sqrt(n):.4f}); {elapsed:.1f} s <= 30 s")
    assert ok


def _weight_mean(model, T, cfg):
    z = map_chunks(model, cfg, lambda e: {"z": girsanov_weight(e, model, T.shift).weight})["z"]
    return z.mean(), z.std(ddof=1) / math.sqrt(len(z))


def test_criterion_6_girsanov_weights():
    model = bm2d()
    mean, se = _weight_mean(model, flow_transformation(v_alpha("1"), 0.2), SimulationConfig(100_000, 1e-3, 1.0, seed=6))
    ok_stated = abs(mean - 1) <= 3 * se
    # alpha = 1 gives h = 0, so the stated case is exact; a time-dependent rate exercises a non-zero shift
    T = flow_transformation(v_alpha("z"), 0.2, steps=20)
    mean2, se2 = _weight_mean(model, T, SimulationConfig(10_000, 1e-2, 1.0, seed=66))
    ok_extra = abs(mean2 - 1) <= 3 * se2
    ok = ok_stated and ok_extra
    record(6, ok, f"alpha=1: E[Z] = {mean:.6f} (SE {se:.1e}, h is identically 0); "
                  f"alpha=z: E[Z] = {mean2:.5f} +/- {se2:.5f}, |E[Z]-1| <= 3 SE")
    assert ok


def test_criterion_7_quasi_invariance():
    cfg = SimulationConfig(100_000, 1e-3, 1.0, seed=7)
    cases = [
        ("bm2d v_alpha(1) lambda 0.2", bm2d(), flow_transformation(v_alpha("1"), 0.2), "tanh(x) + tanh(y)"),
    ]
    add = additive_bm("-1", "0")
    cases.append(("additive v_beta(1) lambda 0.5", add, flow_transformation(additive_v_beta(add, "1"), 0.5), "tanh(x)"))
    details, ok = [], True
    for label, model, T, g in cases:
        start = time.perf_counter()
        res = estimate_quasi_invariance(model, T, g, 1.0, cfg)
        elapsed = time.perf_counter() - start
        good = res.within(3, 0.01) and elapsed <= 60.0
        ok &= good
        details.append(f"{label}: {res.estimate:+.5f} (SE {res.std_error:.5f}, {elapsed:.0f} s)")
    record(7, ok, "; ".join(details) + "; need |delta| <= 3 SE + 0.01 within 60 s each")
    assert ok


def test_criterion_8_integration_by_parts():
    cfg = SimulationConfig(200_000, 1e-3, 1.0, seed=8)
    bm = bm2d()
    add = additive_bm("-(1 + r2)", "r2")
    lv = lotka_volterra()
    cases = [
        ("a", bm, v_beta("z", bm), "sin(x)*cos(y)"),
        ("b", bm, v_alpha("1", bm), "tanh(x)*tanh(y)"),
        ("c", add, additive_v_beta(add, "z"), "sin(x)*cos(y)"),
        ("d", lv, lv_v_b(lv, "1"), "tanh(x)*tanh(y)"),
    ]
    details, ok = [], True
    for label, model, V, F in cases:
        start = time.perf_counter()
        res = estimate_ibp(model, V, F, 1.0, cfg)
        elapsed = time.perf_counter() - start
        good = res.within(3, 0.01) and elapsed <= 120.0
        ok &= good
        details.append(f"({label}) {res.estimate:+.5f} SE {res.std_error:.5f} {elapsed:.0f} s")
    record(8, ok, "; ".join(details) + "; need |sum| <= 3 SE + 0.01 within 120 s each")
    assert ok


def _direct_rotation_terms(ens, t_index, t):
    """Hand-written four terms for 2D BM, beta(z) = z and F = sin(x) cos(y)."""
    X, Y = ens.states[:, t_index, 0], ens.states[:, t_index, 1]
    F = np.sin(X) * np.cos(Y)
    Fx, Fy = np.cos(X) * np.cos(Y), -np.sin(X) * np.sin(Y)
    xs, ys = ens.states[:, :t_index, 0], ens.states[:, :t_index, 1]
    dW = ens.increments[:, :t_index]
    ito = np.sum(-ys * dW[..., 0] + xs * dW[..., 1], axis=1)
    return {"generator": 0.0, "stochastic": np.mean(F * ito), "transport_t": np.mean(t * (Y * Fx - X * Fy)),
            "transport_0": 0.0}


def _direct_scaling_terms(ens, t_index, t):
    """Hand-written four terms for 2D BM, alpha = 1 and F = tanh(x) tanh(y)."""
    X, Y = ens.states[:, t_index, 0], ens.states[:, t_index, 1]
    tx, ty = np.tanh(X), np.tanh(Y)
    dx, dy = 1 - tx**2, 1 - ty**2
    lap = -2 * tx * dx * ty - 2 * ty * dy * tx
    return {"generator": np.mean(-t * 0.5 * lap), "stochastic": 0.0,
            "transport_t": np.mean(0.5 * (X * dx * ty + Y * tx * dy)), "transport_0": 0.0}


def test_criterion_9_gaussian_identities():
    n, t = 200_000, 1.0
    gcfg = SimulationConfig(n, 1.0, 1.0, seed=9)
    st = estimate_stein(t, "x^4", gcfg).diagnostics
    iss = estimate_isserlis(t, "x*y", gcfg).diagnostics
    stein_ok = abs(st["lhs"] - 12 * t * t) <= 3 * st["lhs_se"] and abs(st["rhs"] - 12 * t * t) <= 3 * st["rhs_se"]
    iss_ok = abs(iss["lhs"] - t) <= 3 * iss["lhs_se"] and abs(iss["rhs"] - t) <= 3 * iss["rhs_se"]

    cfg = SimulationConfig(4000, 0.01, 1.0, seed=99)
    model = bm2d()
    ens = simulate(model, cfg)
    k = cfg.step_index(t)
    diff = 0.0
    for V, F, direct in ((v_beta("z", model), "sin(x)*cos(y)", _direct_rotation_terms),
                         (v_alpha("1", model), "tanh(x)*tanh(y)", _direct_scaling_terms)):
        generic = estimate_ibp(model, V, F, t, cfg).terms
        hand = direct(ens, k, t)
        diff = max(diff, max(abs(generic[name] - hand[name]) for name in hand))
    ok = stein_ok and iss_ok and diff <= 1e-12
    record(9, ok, f"Stein sides {st['lhs']:.4f}, {st['rhs']:.4f} vs 12 (SE {st['lhs_se']:.4f}, {st['rhs_se']:.4f}); "
                  f"Isserlis sides {iss['lhs']:.4f}, {iss['rhs']:.4f} vs 1; generic vs direct terms {diff:.1e} <= 1e-12")
    assert ok


def _strip(report):
    return {k: v for k, v in report.items() if k not in ("wall_clock_seconds",)}


def test_criterion_10_reproducibility(tmp_path, capsys, monkeypatch):
    sim = {"n_paths": 3000, "dt": 0.01, "horizon": 1.0, "seed": 10, "chunk_size": 512}
    configs = {
        "ibp": {"model": "lotka_volterra", "symmetry": "v_b", "F": "tanh(x)*tanh(y)", "t": 1.0, "sim": sim},
        "quasi-invariance": {"model": "bm2d", "symmetry": "v_alpha", "lambda": 0.3, "g": "tanh(x) + tanh(y)",
                             "t": 1.0, "sim": sim},
        "stein": {"F": "x^4", "t": 1.0, "sim": {"n_paths": 20000, "seed": 42}},
        "simulate": {"model": "additive_bm", "sim": sim},
    }
    rerun_ok, thread_ok = True, True
    for command, cfg in configs.items():
        path = tmp_path / f"{command}.json"
        path.write_text(json.dumps(cfg))
        out = tmp_path / f"{command}.report.json"
        monkeypatch.setenv("SYMSDE_THREADS", "1")
        main([command, "--config", str(path), "--output", str(out)])
        first = json.loads(capsys.readouterr().out)
        main([command, "--config", str(out)])
        again = json.loads(capsys.readouterr().out)
        monkeypatch.setenv("SYMSDE_THREADS", "4")
        main([command, "--config", str(path)])
        threaded = json.loads(capsys.readouterr().out)
        rerun_ok &= _strip(first) == _strip(again)
        thread_ok &= _strip(first) == _strip(threaded)
    ok = rerun_ok and thread_ok
    record(10, ok, f"rerun from echoed config identical: {rerun_ok}; SYMSDE_THREADS 1 vs 4 identical: {thread_ok} "
                   f"({len(configs)} commands)")
    assert ok
