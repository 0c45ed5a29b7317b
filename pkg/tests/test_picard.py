import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenarios import SCENARIOS, scenario, two_triangle_mesh
from thermoshadow.coefficients import ProblemData, h_from_spec, make_model
from thermoshadow.diagnostics import newton_oracle
from thermoshadow.fem import ScalarField, boundary_weights
from thermoshadow.mesh import generate_rect_mesh
from thermoshadow.picard import energy_balance, run_picard, smallness_ledger


def _constant_case(mesh):
    model = make_model({"law": "constant", "value": 1.0}, {"law": "constant", "value": 0.1})
    data = ProblemData(k=10.0, h=h_from_spec(mesh, {"Gamma": 1.0, "Sigma": -1 / 3}),
                       h_sharp=1.0, h_one=-1 / 3)
    return model, data


def test_constant_coefficients_converge_with_energy_balance():
    mesh = generate_rect_mesh(16, 16, "left")
    model, data = _constant_case(mesh)
    theta, phi, rep = run_picard(mesh, model, data)
    assert rep.converged
    assert energy_balance(mesh, model, data, theta, phi) <= 1e-8


def test_two_triangle_case_matches_newton():
    mesh = two_triangle_mesh()
    model, data = _constant_case(mesh)
    theta, phi, rep = run_picard(mesh, model, data, tol=1e-12)
    # theta is near -1000 here and the Robin matrix is nearly singular, so
    # 1e-11 is about the attainable scaled residual
    tn, pn = newton_oracle(mesh, model, data, tol=1e-11)
    assert rep.converged
    assert np.abs(theta.values - tn.values).max() <= 1e-6
    assert np.abs(phi.values - pn.values).max() <= 1e-6


def test_restart_from_fixed_point_takes_one_iteration():
    mesh, model, data = scenario("thomson")
    theta, _, rep = run_picard(mesh, model, data, tol=1e-11)
    assert rep.converged
    for damping in (1.0, 0.5):
        _, _, rep2 = run_picard(mesh, model, data, init=theta, damping=damping, tol=1e-9)
        assert rep2.converged and rep2.iterations == 1


@pytest.mark.parametrize("name", SCENARIOS)
def test_normalisation_and_monotone_tail(name):
    mesh, model, data = scenario(name)
    theta, phi, rep = run_picard(mesh, model, data, tol=1e-11)
    assert rep.converged
    w = boundary_weights(mesh)
    assert abs(w @ phi.values) <= 1e-10 * w.sum() * np.abs(phi.values).max()
    tail = rep.updates[-6:]
    assert all(b <= 1.5 * a for a, b in zip(tail, tail[1:]))
    assert rep.energy_defect <= 1e-7


def test_energy_balance_trivial_cases():
    mesh = generate_rect_mesh(4, 4, "left")
    model, data = _constant_case(mesh)
    zero = ScalarField.constant(mesh, 0.0)
    assert energy_balance(mesh, model, data, zero, zero) == 0.0
    heated = ProblemData(k=10.0, h=data.h, h_sharp=1.0, h_one=-1 / 3, g=1.0)
    assert energy_balance(mesh, model, heated, zero, zero) == pytest.approx(1.0)


def test_nonconvergence_reported():
    mesh, model, data = scenario("standard")
    theta, phi, rep = run_picard(mesh, model, data, maxit=1)
    assert not rep.converged and rep.iterations == 1
    assert len(rep.rows()) == 1


def test_damping_argument_checked():
    mesh, model, data = scenario("constant", n=4)
    with pytest.raises(ValueError):
        run_picard(mesh, model, data, damping=0.0)


def test_report_csv(tmp_path):
    mesh, model, data = scenario("constant", n=4)
    _, _, rep = run_picard(mesh, model, data)
    rep.write_csv(tmp_path / "p.csv")
    lines = (tmp_path / "p.csv").read_text().splitlines()
    assert lines[0] == "iter,rel_update,grad_theta_l2,grad_phi_l2,energy_defect"
    assert len(lines) == rep.iterations + 1


def test_ledger_worked_example():
    model = make_model({"law": "constant", "value": 1.0}, {"law": "constant", "value": 0.1})
    led = smallness_ledger(model, K_est=1.0, C_est=1.0, h_norm=0.1, g_norm=0.01)
    mu = model.mu_hi  # 1e-12 stand-in for a T-independent law
    assert led.a2 == pytest.approx(0.1 * 2 * (0.1 * 3 + mu))
    assert led.a1 == pytest.approx((0.2 * 2 + mu) * 0.1)
    assert led.a0 == pytest.approx(0.1 ** 2 + 0.01)
    assert led.condition_holds
    assert "diagnostic" in led.disclaimer


def test_ledger_fails_when_a1_large():
    model = make_model({"law": "constant", "value": 1.0}, {"law": "constant", "value": 0.1})
    led = smallness_ledger(model, h_norm=100.0)
    assert led.a1 >= 1 and not led.condition_holds


@settings(max_examples=50, deadline=None)
@given(st.floats(0.01, 100), st.floats(0.01, 100), st.floats(0.01, 10))
def test_zero_data_always_small(K, C, R):
    model = make_model({"law": "tanh", "lo": 0.5, "hi": 3.0}, {"law": "arctan", "c0": 0.5, "c1": 0.2})
    led = smallness_ledger(model, R=R, K_est=K, C_est=C)
    assert led.a0 == 0.0 and led.a1 == 0.0 and led.condition_holds
