import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from scenarios import SCENARIOS, scenario
from thermoshadow.coefficients import ProblemData, h_from_spec, make_model
from thermoshadow.fem import ScalarField, boundary_weights, grad_l2, solve_dense
from thermoshadow.mesh import generate_rect_mesh
from thermoshadow.solvers import (
    CoercivityError, IncompatibleDataError, boundary_h_term, joule_source, potential_system,
    solve_potential, solve_temperature,
)

SIGMA1 = {"law": "constant", "value": 1.0}


def _model(alpha=0.1, sigma=SIGMA1):
    return make_model(sigma, {"law": "constant", "value": alpha})


def _single_triangle_joule(sigma, alpha, dalpha, T, a, b):
    """Independent evaluator of the heat density formula, term by term."""
    a, b = np.asarray(a, float), np.asarray(b, float)
    peltier_thomson = alpha * (alpha + dalpha * T) * a @ a
    cross = (2 * alpha + dalpha * T) * a @ b
    return sigma * (peltier_thomson + cross + b @ b)


def _fields_with_gradients(mesh, a, b, T):
    xi = ScalarField.interpolate(mesh, lambda x: T + a[0] * (x[:, 0] - 1 / 3) + a[1] * (x[:, 1] - 1 / 3))
    phi = ScalarField.interpolate(mesh, lambda x: b[0] * x[:, 0] + b[1] * x[:, 1])
    return xi, phi


def test_joule_worked_example():
    # sigma = 1, alpha = 0.2, alpha_T = 0.05 at T = 2 via alpha = 0.2 + 0.05 (T - 2)
    # is not an available law; use the evaluator directly and the arctan law below
    assert _single_triangle_joule(1.0, 0.2, 0.05, 2.0, (1, 0), (1, 0)) == pytest.approx(1.56, abs=1e-15)


def test_joule_matches_independent_evaluator():
    mesh = generate_rect_mesh(1, 1, "left")
    model = make_model(SIGMA1, {"law": "arctan", "c0": 0.2, "c1": 0.05})
    a, b = np.array([1.0, 0.0]), np.array([1.0, 0.0])
    xi, phi = _fields_with_gradients(mesh, a, b, 2.0)
    jf = joule_source(mesh, model, xi, phi)
    for t, c in enumerate(mesh.centroids):
        T = xi.at_centroids()[t]
        al = 0.2 + 0.05 * np.arctan(T)
        dal = 0.05 / (1 + T * T)
        assert jf.F[t] == pytest.approx(_single_triangle_joule(1.0, al, dal, T, a, b), rel=1e-13)


def test_joule_pure_resistive_and_zero_current():
    mesh = generate_rect_mesh(2, 2, "left")
    model = _model(0.3, {"law": "constant", "value": 2.0})
    xi, phi = _fields_with_gradients(mesh, np.zeros(2), np.array([1.0, 0.0]), 0.0)
    np.testing.assert_allclose(joule_source(mesh, model, xi, phi).F, 2.0)
    a = np.array([0.7, -0.4])
    xi, phi = _fields_with_gradients(mesh, a, -0.3 * a, 1.0)
    jf = joule_source(mesh, model, xi, phi)
    np.testing.assert_allclose(jf.F, 0.0, atol=1e-14)
    np.testing.assert_allclose(jf.j, 0.0, atol=1e-14)


@settings(max_examples=40, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-3, 3), st.floats(-20, 20))
def test_joule_identity_without_thomson_term(a0, a1, b0, b1, T):
    mesh = generate_rect_mesh(1, 1, "left")
    model = make_model({"law": "tanh", "lo": 0.5, "hi": 2.0}, {"law": "arctan", "c0": 0.2, "cx": -0.1})
    xi, phi = _fields_with_gradients(mesh, np.array([a0, a1]), np.array([b0, b1]), T)
    jf = joule_source(mesh, model, xi, phi)
    ref = np.einsum("ti,ti->t", jf.j, jf.j) / jf.sigma
    np.testing.assert_allclose(jf.F, ref, rtol=1e-12, atol=1e-300)


def test_potential_zero_data():
    mesh = generate_rect_mesh(4, 4, "left")
    data = ProblemData(k=1.0, h=np.zeros(mesh.ne), h_sharp=1.0, h_one=-1.0)
    phi = solve_potential(mesh, _model(), ScalarField.constant(mesh, 3.0), data)
    np.testing.assert_allclose(phi.values, 0.0, atol=1e-14)


def test_potential_linear_exact():
    mesh = generate_rect_mesh(8, 8, "left")
    data = ProblemData(k=1.0, h=h_from_spec(mesh, {"left": -1.0, "right": 1.0}), h_sharp=1.0, h_one=-1.0)
    phi = solve_potential(mesh, _model(), ScalarField.constant(mesh, 0.0), data)
    w = boundary_weights(mesh)
    exact = mesh.vertices[:, 0] - (w @ mesh.vertices[:, 0]) / w.sum()
    np.testing.assert_allclose(phi.values, exact, atol=1e-11)
    # dense oracle on the same assembled system
    sysm = potential_system(mesh, _model(), ScalarField.constant(mesh, 0.0), data.h)
    np.testing.assert_allclose(phi.values, solve_dense(sysm), atol=1e-11)


def test_potential_cancels_thermoelectric_field():
    mesh = generate_rect_mesh(8, 8, "left")
    data = ProblemData(k=1.0, h=np.zeros(mesh.ne), h_sharp=1.0, h_one=-1.0)
    theta = ScalarField.interpolate(mesh, lambda x: x[:, 0])
    phi = solve_potential(mesh, _model(0.1), theta, data)
    diff = phi.values + 0.1 * mesh.vertices[:, 0]
    np.testing.assert_allclose(diff, diff[0], atol=1e-11)


def test_incompatible_h_rejected():
    mesh = generate_rect_mesh(4, 4, "left")
    data = ProblemData(k=1.0, h=h_from_spec(mesh, {"left": 1.0}), h_sharp=1.0, h_one=-1.0)
    with pytest.raises(IncompatibleDataError, match="compatibility"):
        solve_potential(mesh, _model(), ScalarField.constant(mesh, 0.0), data)


def test_potential_rhs_sums_to_zero():
    mesh, model, data = scenario("standard")
    xi = ScalarField.interpolate(mesh, lambda x: 10 + np.sin(x[:, 0]))
    b = potential_system(mesh, model, xi, data.h).b
    assert abs(b.sum()) <= 1e-10 * np.abs(b).sum()


def test_potential_invariant_to_temperature_shift_for_constant_laws():
    mesh, _, data = scenario("standard")
    model = make_model(SIGMA1, {"law": "arctan", "c0": 0.2, "cx": -0.1})
    xi = ScalarField.interpolate(mesh, lambda x: x[:, 0] * x[:, 1])
    p1 = solve_potential(mesh, model, xi, data)
    p2 = solve_potential(mesh, model, ScalarField(mesh, xi.values + 5.0), data)
    np.testing.assert_allclose(p1.values, p2.values, atol=1e-10)


@pytest.mark.parametrize("name", SCENARIOS)
def test_potential_energy_estimate(name):
    mesh, model, data = scenario(name)
    xi = ScalarField.interpolate(mesh, lambda x: 10 + x[:, 0] - x[:, 1] ** 2)
    phi = solve_potential(mesh, model, xi, data)
    lhs = model.sigma_lo * grad_l2(phi) ** 2
    rhs = model.sigma_hi * model.alpha_hi * grad_l2(xi) * grad_l2(phi) + abs(boundary_h_term(mesh, phi, data.h))
    assert lhs <= rhs + 1e-10 * max(lhs, rhs, 1.0)


def test_temperature_zero_source():
    mesh, model, data = scenario("standard")
    zero = ScalarField.constant(mesh, 0.0)
    theta = solve_temperature(mesh, model, data, ScalarField.constant(mesh, 1.0), zero)
    np.testing.assert_allclose(theta.values, 0.0, atol=1e-14)


def _quadratic_temperature(mesh, k):
    alpha0 = 0.5
    model = _model(alpha0)
    exact = lambda x: 3.0 - (x[:, 0] - 0.5) ** 2 - (x[:, 1] - 0.5) ** 2
    h = 1.0 / (alpha0 * exact(mesh.edge_midpoints))
    data = ProblemData(k=k, h=h, h_sharp=float(h.min()), h_one=-1.0,
                       g=lambda x: np.full(len(x), 4.0))
    zero = ScalarField.constant(mesh, 0.0)
    return solve_temperature(mesh, model, data, ScalarField.constant(mesh, 1.0), zero)


def test_temperature_conductivity_scaling():
    mesh = generate_rect_mesh(16, 16, "left")
    g1 = grad_l2(_quadratic_temperature(mesh, 1.0))
    g1000 = grad_l2(_quadratic_temperature(mesh, 1000.0))
    assert g1000 <= g1 / np.sqrt(1000.0) * 1.1


def test_temperature_all_zero_h_is_not_coercive():
    mesh = generate_rect_mesh(4, 4, "left")
    data = ProblemData(k=1.0, h=np.zeros(mesh.ne), h_sharp=1.0, h_one=-1.0, C1_estimate=3.0)
    zero = ScalarField.constant(mesh, 0.0)
    with pytest.raises(CoercivityError, match="coercivity"):
        solve_temperature(mesh, _model(), data, zero, zero)
