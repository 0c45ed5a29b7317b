"""Verification tools independent of the Picard path.

* manufactured-solution convergence studies for the potential, the Robin
  temperature problem and the full coupled system;
* a monolithic damped Newton solver with a finite-difference Jacobian for
  small meshes, used as an oracle against :func:`run_picard`;
* discrete trace-inequality constants from a generalised eigenproblem,
  computed by power iteration.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse.linalg as spla

from .coefficients import ProblemData, make_model
from .fem import (
    QUAD7_BARY, QUAD7_W, ScalarField, assemble_boundary_mass, assemble_mass, assemble_stiffness,
    elem_gradients, relative_residual,
)
from .mesh import TriMesh, GAMMA, SIGMA, ALL, generate_rect_mesh
from .picard import run_picard
from .solvers import potential_system, solve_potential, solve_temperature, temperature_system

log = logging.getLogger(__name__)


class OracleError(RuntimeError):
    pass


class EigenError(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# error norms against exact fields

def l2_h1_errors(mesh: TriMesh, uh: np.ndarray, exact, exact_grad) -> tuple[float, float]:
    """L2 and H1-seminorm errors of a P1 field, by a degree-5 rule per triangle."""
    p = mesh.vertices[mesh.triangles]                       # (nt, 3, 2)
    qp = np.einsum("qa,tad->tqd", QUAD7_BARY, p)            # (nt, 7, 2)
    uq = np.einsum("qa,ta->tq", QUAD7_BARY, uh[mesh.triangles])
    ue = exact(qp.reshape(-1, 2)).reshape(qp.shape[:2])
    ge = exact_grad(qp.reshape(-1, 2)).reshape(qp.shape[0], qp.shape[1], 2)
    gh = elem_gradients((mesh, uh))[:, None, :]
    w = mesh.areas[:, None] * QUAD7_W[None, :]
    e0 = np.sum(w * (uq - ue) ** 2)
    e1 = np.sum(w * np.sum((gh - ge) ** 2, axis=2))
    return float(np.sqrt(e0)), float(np.sqrt(e1))


def exact_boundary_mean(mesh: TriMesh, exact) -> float:
    """``int u ds / |boundary|`` by 3-point Gauss-Legendre per edge."""
    gl = np.array([-math.sqrt(0.6), 0.0, math.sqrt(0.6)])
    gw = np.array([5, 8, 5]) / 18.0
    a = mesh.vertices[mesh.boundary_edges[:, 0]]
    b = mesh.vertices[mesh.boundary_edges[:, 1]]
    s = 0.5 * (gl + 1.0)
    pts = a[:, None, :] + s[None, :, None] * (b - a)[:, None, :]
    vals = exact(pts.reshape(-1, 2)).reshape(len(a), 3)
    total = np.sum(mesh.edge_lengths * (vals @ gw))
    return float(total / mesh.edge_lengths.sum())


# ---------------------------------------------------------------------------
# manufactured problems

def _linear_potential(n):
    """sigma = 2, phi* = x + y/2, flux h = sigma grad phi* . n; temperature frozen."""
    mesh = generate_rect_mesh(n, n, "left")
    model = make_model({"law": "constant", "value": 2.0}, {"law": "constant", "value": 0.1})
    grad = np.array([1.0, 0.5])
    h = 2.0 * mesh.edge_normals @ grad
    data = ProblemData(k=1.0, h=h, h_sharp=1.0, h_one=-1.0)
    phi = solve_potential(mesh, model, ScalarField.constant(mesh, 1.0), data)

    def ex(x):
        return x[:, 0] + 0.5 * x[:, 1]

    shift = exact_boundary_mean(mesh, ex)
    return mesh, {"phi": (phi.values, lambda x: ex(x) - shift, lambda x: np.tile(grad, (len(x), 1)))}


def _quadratic_temperature(n, k=1.0, alpha0=0.5):
    """theta* = 3 - |x - c|^2, outward derivative -1 on every side of the square.

    Robin weight alpha0 h = k / theta* per edge (midpoint value), source 4k.
    The temperature is solved with a frozen constant xi and zero potential,
    so the Joule source vanishes.
    """
    mesh = generate_rect_mesh(n, n, "left")
    model = make_model({"law": "constant", "value": 1.0}, {"law": "constant", "value": alpha0})

    def ex(x):
        return 3.0 - (x[:, 0] - 0.5) ** 2 - (x[:, 1] - 0.5) ** 2

    def ex_grad(x):
        return np.column_stack([-2.0 * (x[:, 0] - 0.5), -2.0 * (x[:, 1] - 0.5)])

    h = k / (alpha0 * ex(mesh.edge_midpoints))
    data = ProblemData(k=k, h=h, h_sharp=float(h.min()), h_one=-1.0, g=lambda x: np.full(len(x), 4.0 * k))
    zero = ScalarField.constant(mesh, 0.0)
    theta = solve_temperature(mesh, model, data, ScalarField.constant(mesh, 1.0), zero)
    return mesh, {"theta": (theta.values, ex, ex_grad)}


def _coupled_smooth(n, k=1.0, alpha=0.5, sigma=2.0, J=(1.0, 0.5)):
    """Exact solution of the full coupled system with constant coefficients.

    The current ``j = J`` is uniform, ``theta* = exp(alpha/k J . x)`` makes
    the Robin condition hold with ``h = -J . n`` on every edge, and
    ``phi* = -J . x / sigma - alpha theta*`` carries that current. The heat
    source ``g = -k |lam|^2 theta* - |J|^2 / sigma`` closes the heat equation.
    """
    mesh = generate_rect_mesh(n, n, "left+bottom")
    model = make_model({"law": "constant", "value": sigma}, {"law": "constant", "value": alpha})
    J = np.asarray(J, dtype=float)
    lam = alpha / k * J

    def th(x):
        return np.exp(x @ lam)

    def th_grad(x):
        return th(x)[:, None] * lam[None, :]

    def ph(x):
        return -(x @ J) / sigma - alpha * th(x)

    def ph_grad(x):
        return -J[None, :] / sigma - alpha * th_grad(x)

    h = -(mesh.edge_normals @ J)
    data = ProblemData(k=k, h=h, h_sharp=float(h[mesh.edge_gamma].min()), h_one=float(h.min()),
                       g=lambda x: -k * (lam @ lam) * th(x) - (J @ J) / sigma)
    theta, phi, rep = run_picard(mesh, model, data, tol=1e-12, maxit=100)
    if not rep.converged:
        raise OracleError("coupled MMS: Picard iteration did not converge")
    shift = exact_boundary_mean(mesh, ph)
    return mesh, {
        "theta": (theta.values, th, th_grad),
        "phi": (phi.values, lambda x: ph(x) - shift, ph_grad),
    }


MMS_PROBLEMS = {
    "linear-potential": _linear_potential,
    "quadratic-temperature": _quadratic_temperature,
    "coupled-smooth": _coupled_smooth,
}


@dataclass
class ConvergenceTable:
    problem: str
    sizes: list
    h: list
    err_l2: dict
    err_h1: dict
    rate_l2: dict = field(default_factory=dict)
    rate_h1: dict = field(default_factory=dict)

    def rows(self):
        out = []
        for f in sorted(self.err_l2):
            for n, h, e0, e1 in zip(self.sizes, self.h, self.err_l2[f], self.err_h1[f]):
                out.append({"field": f, "n": n, "h": h, "errL2": e0, "errH1": e1})
        return out

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["field", "n", "h", "errL2", "errH1"])
            for r in self.rows():
                w.writerow([r["field"], r["n"], f"{r['h']:.17g}", f"{r['errL2']:.17g}", f"{r['errH1']:.17g}"])
            for f in sorted(self.rate_l2):
                w.writerow([f, "rate", "", f"{self.rate_l2[f]:.17g}", f"{self.rate_h1[f]:.17g}"])


def _rate(h, err):
    h, err = np.asarray(h, float), np.asarray(err, float)
    if len(h) < 2 or np.any(err <= 0):
        return math.nan
    return float(np.polyfit(np.log(h), np.log(err), 1)[0])


def mms_study(problem_id: str, mesh_sizes=(8, 16, 32, 64)) -> ConvergenceTable:
    """Errors against a manufactured solution on ``n x n`` meshes, with fitted rates."""
    if problem_id not in MMS_PROBLEMS:
        raise ValueError(f"unknown MMS problem {problem_id!r}; known: {sorted(MMS_PROBLEMS)}")
    sizes = sorted(int(n) for n in mesh_sizes)
    table = ConvergenceTable(problem_id, sizes, [1.0 / n for n in sizes], {}, {})
    for n in sizes:
        mesh, fields = MMS_PROBLEMS[problem_id](n)
        for name, (uh, ex, ex_grad) in fields.items():
            e0, e1 = l2_h1_errors(mesh, uh, ex, ex_grad)
            table.err_l2.setdefault(name, []).append(e0)
            table.err_h1.setdefault(name, []).append(e1)
    for name in table.err_l2:
        table.rate_l2[name] = _rate(table.h, table.err_l2[name])
        table.rate_h1[name] = _rate(table.h, table.err_h1[name])
    return table


# ---------------------------------------------------------------------------
# monolithic Newton oracle

def coupled_residual(mesh: TriMesh, model, data: ProblemData, z: np.ndarray):
    """Stacked residual of both discrete weak forms plus the boundary-mean row.

    ``z = [theta, phi, lam]``; ``lam`` multiplies the constraint weights in the
    potential block (it vanishes at a solution because the potential rows
    sum to zero under the compatibility condition).
    """
    n = mesh.nv
    theta, phi, lam = z[:n], z[n:2 * n], z[2 * n]
    Ts = temperature_system(mesh, model, data, theta, phi)
    Ps = potential_system(mesh, model, theta, data.h)
    r_t = Ts.A @ theta - Ts.b
    r_p = Ps.A @ phi - Ps.b + lam * Ps.w
    r_c = Ps.w @ phi
    return np.concatenate([r_t, r_p, [r_c]]), Ts, Ps


def _scaled_norm(mesh, model, data, z):
    n = mesh.nv
    r, Ts, Ps = coupled_residual(mesh, model, data, z)
    e_t = relative_residual(Ts, z[:n])
    e_p = relative_residual(Ps, z[n:2 * n])
    return r, max(e_t, e_p), abs(r[-1]) / max(Ps.w.sum(), 1e-300)


def newton_oracle(mesh: TriMesh, model, data: ProblemData, tol: float = 1e-10, maxit: int = 50,
                  init=None):
    """Solve the coupled nonlinear system in one piece by damped Newton.

    The Jacobian is built column by column with forward differences of step
    ``1e-7 (1 + |z_i|)``. Limited to meshes with at most 200 vertices.
    Returns ``(theta, phi)``.
    """
    n = mesh.nv
    if n > 200:
        raise OracleError(f"Newton oracle is limited to 200 vertices, mesh has {n}")
    z = np.zeros(2 * n + 1)
    if init is not None:
        th0, ph0 = init
        z[:n] = th0.values if isinstance(th0, ScalarField) else th0
        z[n:2 * n] = ph0.values if isinstance(ph0, ScalarField) else ph0

    def merit(rvec):
        return float(np.linalg.norm(rvec))

    r, err, cerr = _scaled_norm(mesh, model, data, z)
    for it in range(maxit + 1):
        if err <= tol and cerr <= tol:
            return ScalarField(mesh, z[:n]), ScalarField(mesh, z[n:2 * n])
        if it == maxit:
            break
        Jm = np.empty((len(z), len(z)))
        for i in range(len(z)):
            step = 1e-7 * (1.0 + abs(z[i]))
            zp = z.copy()
            zp[i] += step
            Jm[:, i] = (coupled_residual(mesh, model, data, zp)[0] - r) / step
        try:
            dz = np.linalg.solve(Jm, -r)
        except np.linalg.LinAlgError as exc:
            raise OracleError(f"singular Jacobian at Newton iteration {it}") from exc
        t = 1.0
        m0 = merit(r)
        while True:
            z_try = z + t * dz
            r_try, err_try, cerr_try = _scaled_norm(mesh, model, data, z_try)
            # near the solution the raw residual is at rounding level; a drop
            # in the scaled residual is then the meaningful progress measure
            if merit(r_try) < (1 - 1e-4 * t) * m0 or max(err_try, cerr_try) < max(err, cerr) or t < 1e-6:
                break
            t *= 0.5
        if t < 1e-6:
            raise OracleError(f"Newton stagnated at iteration {it} (scaled residual {err:.3e})")
        z, r, err, cerr = z_try, r_try, err_try, cerr_try
        log.debug("newton %d: step %g, residual %.3e", it, t, err)
    raise OracleError(f"Newton did not converge in {maxit} iterations (scaled residual {err:.3e})")


def oracle_residual(mesh: TriMesh, model, data: ProblemData, theta, phi) -> float:
    """Largest scaled residual of the stacked system at ``(theta, phi)``."""
    z = np.concatenate([_vals(theta), _vals(phi), [0.0]])
    _, err, cerr = _scaled_norm(mesh, model, data, z)
    return max(err, cerr)


def _vals(u):
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


# ---------------------------------------------------------------------------
# trace-inequality constants

@dataclass(frozen=True)
class TraceConstants:
    C1: float
    C2: float
    C1_residual: float
    C2_residual: float
    C1_iterations: int
    C2_iterations: int

    def as_dict(self):
        return {"C1_est": self.C1, "C2_est": self.C2, "C1_residual": self.C1_residual,
                "C2_residual": self.C2_residual, "C1_iterations": self.C1_iterations,
                "C2_iterations": self.C2_iterations}


def generalized_power_iteration(num, den, tol: float = 1e-10, maxit: int = 10000):
    """Largest ``lam`` with ``num x = lam den x`` (``den`` SPD), by power iteration.

    Returns ``(lam, x, residual, iterations)``; the residual is
    ``|num x - lam den x| / |num x|``.
    """
    lu = spla.splu(den.tocsc())
    x = np.ones(den.shape[0])
    lam = 0.0
    res = math.inf
    for it in range(1, maxit + 1):
        y = lu.solve(num @ x)
        y /= np.linalg.norm(y)
        Ny, Dy = num @ y, den @ y
        lam = float(y @ Ny) / float(y @ Dy)
        res = float(np.linalg.norm(Ny - lam * Dy) / max(np.linalg.norm(Ny), 1e-300))
        x = y
        if res <= tol:
            return lam, x, res, it
    raise EigenError(f"power iteration did not converge in {maxit} steps "
                     f"(last Rayleigh quotient {lam:.12g}, residual {res:.2e})")


def estimate_trace_constants(mesh: TriMesh, tol: float = 1e-10, maxit: int = 10000) -> TraceConstants:
    """Discrete constants of the two boundary-trace inequalities.

    ``C1 = max |u|_{Sigma}^2 / (|grad u|^2 + |u|_{Gamma}^2)`` and
    ``C2 = max |u|_{boundary}^2 / (|grad u|^2 + |u|^2)`` (full H1 norm).
    """
    K = assemble_stiffness(mesh, 1.0)
    den = (K + assemble_boundary_mass(mesh, mesh.edge_mask(GAMMA).astype(float))).tocsr()
    m_sigma = assemble_boundary_mass(mesh, mesh.edge_mask(SIGMA).astype(float))
    m_all = assemble_boundary_mass(mesh, mesh.edge_mask(ALL).astype(float))
    c1, _, r1, i1 = generalized_power_iteration(m_sigma, den, tol, maxit)
    den_h1 = (K + assemble_mass(mesh)).tocsr()
    c2, _, r2, i2 = generalized_power_iteration(m_all, den_h1, tol, maxit)
    return TraceConstants(c1, c2, r1, r2, i1, i2)
