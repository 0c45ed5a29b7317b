import numpy as np
import pytest

from scenarios import SCENARIOS, left_right_data, scenario
from thermoshadow.coefficients import ProblemData, make_model
from thermoshadow.fem import ScalarField, grad_l2, integrate, solve_dense
from thermoshadow.mesh import generate_rect_mesh
from thermoshadow.shadow import (
    ShadowSignError, boundary_alpha_h, dissipation, fit_slope, implicit_equation_residual,
    k_sweep, shadow_potential_system, solve_shadow, solve_shadow_potential,
)

SPLIT = {"law": "split", "left": 0.2, "right": 0.1, "x_split": 0.5}
SIGMA1 = {"law": "constant", "value": 1.0}


def _scale(mesh, model, data, Theta, phi):
    return max(abs(Theta * boundary_alpha_h(mesh, model, Theta, data.h)),
               dissipation(mesh, model, Theta, phi), abs(integrate(mesh, data.g)), 1.0)


def test_zero_current_gives_zero_potential_and_residual():
    mesh = generate_rect_mesh(4, 4, "left")
    model = make_model(SIGMA1, SPLIT)
    data = ProblemData(k=1.0, h=np.zeros(mesh.ne), h_sharp=1.0, h_one=-1.0)
    phi = solve_shadow_potential(mesh, model, 2.0, data)
    np.testing.assert_allclose(phi.values, 0.0, atol=1e-14)
    for Theta in (0.1, 1.0, 50.0):
        assert implicit_equation_residual(mesh, model, Theta, phi, data) == 0.0


def test_potential_independent_of_Theta_for_constant_sigma():
    mesh = generate_rect_mesh(8, 8, "left")
    model = make_model(SIGMA1, SPLIT)
    data = left_right_data(mesh)
    p1 = solve_shadow_potential(mesh, model, 0.5, data)
    p2 = solve_shadow_potential(mesh, model, 5.0, data)
    np.testing.assert_allclose(p1.values, p2.values, atol=1e-12)


def test_checkerboard_potential_matches_dense_oracle():
    mesh, model, data = scenario("checkerboard")
    phi = solve_shadow_potential(mesh, model, 3.0, data)
    dense = solve_dense(shadow_potential_system(mesh, model, 3.0, data.h))
    np.testing.assert_allclose(phi.values, dense, atol=1e-10)


def test_x_independent_alpha_makes_G_constant():
    mesh = generate_rect_mesh(8, 8, "left")
    model = make_model(SIGMA1, {"law": "constant", "value": 0.3})
    data = left_right_data(mesh)
    phi = solve_shadow_potential(mesh, model, 1.0, data)
    G = [implicit_equation_residual(mesh, model, T, phi, data) for T in (0.1, 1.0, 10.0)]
    np.testing.assert_allclose(G, G[0], atol=1e-12)
    with pytest.raises(ShadowSignError, match="depend on x"):
        solve_shadow(mesh, model, data)


def test_split_alpha_closed_form():
    mesh = generate_rect_mesh(16, 16, "left")
    model = make_model(SIGMA1, SPLIT)
    data = left_right_data(mesh)
    res = solve_shadow(mesh, model, data)
    phi = solve_shadow_potential(mesh, model, 1.0, data)
    # integral of alpha h over the boundary, edge by edge
    alpha_mid = np.where(mesh.edge_midpoints[:, 0] < 0.5, 0.2, 0.1)
    D = float(np.sum(alpha_mid * data.h * mesh.edge_lengths))
    hand = grad_l2(phi) ** 2 / D
    assert D == pytest.approx(0.1, abs=1e-15)
    assert res.Theta == pytest.approx(hand, rel=1e-10)
    assert res.Theta == pytest.approx(10.0, rel=1e-10)
    # G is affine in Theta with positive slope D
    G1 = implicit_equation_residual(mesh, model, 1.0, phi, data)
    G2 = implicit_equation_residual(mesh, model, 2.0, phi, data)
    assert G2 - G1 == pytest.approx(D)


def test_bounds_collapse_for_constant_sigma():
    mesh = generate_rect_mesh(8, 8, "left")
    model = make_model(SIGMA1, SPLIT)
    res = solve_shadow(mesh, model, left_right_data(mesh))
    assert res.within_bounds()
    assert not res.upper_bound_defined and res.upper_bound == np.inf
    assert res.upper_bound_sharp == pytest.approx(res.Theta, rel=1e-12)


def test_more_heat_raises_Theta():
    mesh = generate_rect_mesh(8, 8, "left")
    model = make_model(SIGMA1, SPLIT)
    data = left_right_data(mesh, g=0.2)
    t1 = solve_shadow(mesh, model, data).Theta
    t2 = solve_shadow(mesh, model, data.scaled_g(2.0)).Theta
    assert t2 > t1


@pytest.mark.parametrize("name", SCENARIOS)
def test_residual_and_bounds(name):
    mesh, model, data = scenario(name)
    res = solve_shadow(mesh, model, data)
    G = implicit_equation_residual(mesh, model, res.Theta, res.phi, data)
    assert abs(G) <= 1e-8 * _scale(mesh, model, data, res.Theta, res.phi)
    assert res.lower_bound <= res.Theta <= res.upper_bound
    assert res.Theta > 0


def test_initial_guess_invariance_and_cache():
    mesh, model, data = scenario("constant")
    results = [solve_shadow(mesh, model, data, theta0=t0) for t0 in (0.1, 1.0, 10.0)]
    for r in results:
        assert r.Theta == pytest.approx(results[0].Theta, rel=1e-10)
        assert r.potential_solves == 1
    uncached = solve_shadow(mesh, model, data, use_cache=False)
    assert uncached.Theta == results[1].Theta
    assert uncached.potential_solves > 1


def test_stalled_fixed_point_falls_back_to_bisection():
    # strongly T-dependent conductivity makes the fixed-point map slow
    mesh = generate_rect_mesh(8, 8, "left")
    model = make_model({"law": "tanh", "lo": 0.5, "hi": 8.0, "T0": 10.0, "scale": 3.0},
                       {"law": "arctan", "c0": 0.2, "cx": -0.1})
    data = left_right_data(mesh)
    res = solve_shadow(mesh, model, data)
    assert res.method == "bisection"
    G = implicit_equation_residual(mesh, model, res.Theta, res.phi, data)
    assert abs(G) <= 1e-8 * _scale(mesh, model, data, res.Theta, res.phi)


def test_fit_slope():
    ks = [10.0, 100.0, 1000.0]
    assert fit_slope(ks, [k ** -0.5 for k in ks]) == pytest.approx(-0.5)


def test_sweep_rows_and_validation():
    mesh, model, data = scenario("standard", n=8)
    res = k_sweep(mesh, model, data, [10.0, 100.0, 1000.0])
    assert len(res.rows) == 3
    assert all(r.converged and r.energy_defect <= 1e-7 for r in res.rows)
    assert res.rows[-1].theta_vs_Theta < res.rows[0].theta_vs_Theta
    with pytest.raises(ValueError, match="increasing"):
        k_sweep(mesh, model, data, [100.0, 10.0])
