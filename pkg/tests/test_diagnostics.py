import numpy as np
import pytest
import scipy.linalg as sla

from scenarios import scenario
from thermoshadow.coefficients import ProblemData, make_model
from thermoshadow.diagnostics import (
    EigenError, OracleError, estimate_trace_constants, generalized_power_iteration, mms_study,
    newton_oracle, oracle_residual,
)
from thermoshadow.fem import assemble_boundary_mass, assemble_mass, assemble_stiffness
from thermoshadow.mesh import GAMMA, SIGMA, generate_rect_mesh
from thermoshadow.picard import run_picard


def test_linear_potential_is_reproduced_exactly():
    table = mms_study("linear-potential", [4, 8])
    assert max(table.err_l2["phi"]) <= 1e-10
    assert max(table.err_h1["phi"]) <= 1e-10


@pytest.mark.parametrize("problem", ["quadratic-temperature", "coupled-smooth"])
def test_second_order_convergence(problem):
    table = mms_study(problem, [8, 16, 32])
    for field in table.err_l2:
        assert table.rate_l2[field] >= 1.8
        assert table.rate_h1[field] >= 0.9
        assert np.all(np.diff(table.err_l2[field]) < 0)


def test_unknown_mms_problem():
    with pytest.raises(ValueError, match="unknown MMS problem"):
        mms_study("cubic")


def test_rates_csv(tmp_path):
    table = mms_study("linear-potential", [2, 4])
    table.write_csv(tmp_path / "rates.csv")
    lines = (tmp_path / "rates.csv").read_text().splitlines()
    assert lines[0] == "field,n,h,errL2,errH1"
    assert float(lines[1].split(",")[3]) <= 1e-10


def test_newton_zero_data_returns_zero():
    mesh = generate_rect_mesh(3, 3, "left")
    model = make_model({"law": "constant", "value": 1.0}, {"law": "constant", "value": 0.1})
    data = ProblemData(k=1.0, h=np.zeros(mesh.ne), h_sharp=1.0, h_one=-1.0)
    theta, phi = newton_oracle(mesh, model, data)
    assert not theta.values.any() and not phi.values.any()


def test_newton_two_triangle_tanh_residual():
    from scenarios import TANH, ALPHA_X, two_triangle_mesh
    from thermoshadow.coefficients import h_from_spec
    mesh = two_triangle_mesh()
    model = make_model(TANH, ALPHA_X)
    data = ProblemData(k=10.0, h=h_from_spec(mesh, {"Gamma": 1.0, "Sigma": -1 / 3}), h_sharp=1.0, h_one=-1 / 3)
    theta, phi = newton_oracle(mesh, model, data)
    assert oracle_residual(mesh, model, data, theta, phi) <= 1e-10


def test_newton_agrees_with_picard():
    mesh, model, data = scenario("heated", n=6)
    t_p, p_p, rep = run_picard(mesh, model, data, tol=1e-12)
    t_n, p_n = newton_oracle(mesh, model, data, tol=1e-12)
    assert np.abs(t_p.values - t_n.values).max() <= 1e-6
    assert np.abs(p_p.values - p_n.values).max() <= 1e-6


def test_newton_refuses_large_mesh():
    mesh, model, data = scenario("standard", n=16)
    with pytest.raises(OracleError, match="200 vertices"):
        newton_oracle(mesh, model, data)


def test_trace_constants_against_dense_eigensolver():
    mesh = generate_rect_mesh(6, 6, "left")
    tc = estimate_trace_constants(mesh)
    K = assemble_stiffness(mesh).toarray()
    den = K + assemble_boundary_mass(mesh, mesh.edge_mask(GAMMA).astype(float)).toarray()
    num = assemble_boundary_mass(mesh, mesh.edge_mask(SIGMA).astype(float)).toarray()
    assert tc.C1 == pytest.approx(sla.eigh(num, den, eigvals_only=True).max(), rel=1e-9)
    den2 = K + assemble_mass(mesh).toarray()
    num2 = assemble_boundary_mass(mesh, 1.0).toarray()
    assert tc.C2 == pytest.approx(sla.eigh(num2, den2, eigvals_only=True).max(), rel=1e-9)


def test_trace_constants_lower_bounds_and_refinement():
    c = [estimate_trace_constants(generate_rect_mesh(n, n, "left")) for n in (4, 8, 16, 32)]
    c1 = [t.C1 for t in c]
    assert c1[0] >= 3.0 and c[0].C2 >= 4.0
    assert all(b >= a - 1e-8 for a, b in zip(c1, c1[1:]))
    assert abs(c1[-1] - c1[-2]) / c1[-1] < 0.02
    assert all(t.C1_residual <= 1e-10 for t in c)


def test_power_iteration_gives_up():
    import scipy.sparse as sp
    # equal top eigenvalues with opposite sign: no convergence of the plain iteration
    num = sp.csr_matrix(np.diag([1.0, -1.0]))
    with pytest.raises(EigenError, match="did not converge"):
        generalized_power_iteration(num, sp.identity(2, format="csr"), maxit=50)
