"""The two linear solves making up one application of the fixed-point map.

Given a temperature iterate ``xi``:

* :func:`solve_potential` finds ``phi`` with zero boundary mean from
  ``int s(xi) grad phi . grad v = -int s(xi) a(xi) grad xi . grad v + int h v``;
* :func:`joule_source` evaluates the Joule/Peltier/Thomson heat density
  ``F(x, T, a, b) = s (a (a + a_T T)|a|^2 + (2a + a_T T) a.b + |b|^2)``
  with ``a = grad xi`` and ``b = grad phi``;
* :func:`solve_temperature` solves the Robin problem
  ``k int grad theta . grad v + int_{boundary} alpha(xi) h theta v = int (F + g) v``.

Volume coefficients are evaluated at triangle centroids, boundary
coefficients at edge midpoints, in both cases using the P1-interpolated
temperature there.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .coefficients import (
    CoefficientModel, ProblemData, eval_alpha, eval_dalpha, eval_sigma,
    h_total, is_compatible,
)
from .fem import (
    ScalarField, SparseSystem, SingularSystemError, SolverError,
    assemble_boundary_mass, assemble_stiffness, boundary_load, boundary_weights,
    elem_gradients, relative_residual, solve_direct, solve_with_fallback, volume_load,
)
from .mesh import TriMesh

log = logging.getLogger(__name__)


class IncompatibleDataError(ValueError):
    """The boundary current violates the compatibility condition int h ds = 0."""


class CoercivityError(SolverError):
    def __init__(self, message, margin=None):
        super().__init__(message)
        self.margin = margin


@dataclass(frozen=True)
class JouleField:
    """Per-triangle heat density ``F`` and current density ``j``."""

    F: np.ndarray
    j: np.ndarray
    sigma: np.ndarray


def _field(mesh, u) -> ScalarField:
    return u if isinstance(u, ScalarField) else ScalarField(mesh, u)


def check_compatible(mesh: TriMesh, h) -> None:
    if not is_compatible(mesh, h):
        raise IncompatibleDataError(
            f"boundary current violates the compatibility condition: "
            f"integral of h over the boundary is {h_total(mesh, h):.6g}, must be 0")


def potential_system(mesh: TriMesh, model: CoefficientModel, xi, h) -> SparseSystem:
    """Assembled potential problem for temperature ``xi`` (constraint: zero boundary mean)."""
    xi = _field(mesh, xi)
    Tc = xi.at_centroids()
    s = eval_sigma(model, mesh.centroids, Tc)
    a = eval_alpha(model, mesh.centroids, Tc)
    K = assemble_stiffness(mesh, s)
    grad_xi = elem_gradients(xi)
    # -int s a grad xi . grad v  -> per vertex: -|T| s a (grad xi . grad l_a)
    flux = (mesh.areas * s * a)[:, None] * np.einsum("tb,tab->ta", grad_xi, mesh.basis_gradients)
    rhs = boundary_load(mesh, h)
    np.add.at(rhs, mesh.triangles, -flux)
    return SparseSystem(K, rhs, w=boundary_weights(mesh), c=0.0)


def solve_potential(mesh: TriMesh, model: CoefficientModel, theta, data: ProblemData,
                    tol: float = 1e-12) -> ScalarField:
    """Electric potential for a frozen temperature, normalised by ``int phi ds = 0``."""
    check_compatible(mesh, data.h)
    system = potential_system(mesh, model, theta, data.h)
    return ScalarField(mesh, solve_with_fallback(system, tol=tol))


def joule_source(mesh: TriMesh, model: CoefficientModel, xi, phi) -> JouleField:
    xi, phi = _field(mesh, xi), _field(mesh, phi)
    T = xi.at_centroids()
    x = mesh.centroids
    a_vec = elem_gradients(xi)
    b_vec = elem_gradients(phi)
    s = eval_sigma(model, x, T)
    al = eval_alpha(model, x, T)
    at = eval_dalpha(model, x, T)
    aa = np.einsum("ti,ti->t", a_vec, a_vec)
    ab = np.einsum("ti,ti->t", a_vec, b_vec)
    bb = np.einsum("ti,ti->t", b_vec, b_vec)
    F = s * (al * (al + at * T) * aa + (2 * al + at * T) * ab + bb)
    j = -s[:, None] * (al[:, None] * a_vec + b_vec)
    return JouleField(F=F, j=j, sigma=s)


def robin_weights(mesh: TriMesh, model: CoefficientModel, xi, h) -> np.ndarray:
    """Per-edge heat transfer coefficient ``alpha(mid, xi(mid)) h``."""
    xi = _field(mesh, xi)
    return eval_alpha(model, mesh.edge_midpoints, xi.at_edge_midpoints()) * np.asarray(h, dtype=float)


def temperature_system(mesh: TriMesh, model: CoefficientModel, data: ProblemData, xi, phi,
                       joule: JouleField | None = None) -> SparseSystem:
    if joule is None:
        joule = joule_source(mesh, model, xi, phi)
    beta = robin_weights(mesh, model, xi, data.h)
    A = data.k * assemble_stiffness(mesh, 1.0) + assemble_boundary_mass(mesh, beta)
    rhs = volume_load(mesh, joule.F) + volume_load(mesh, data.g)
    return SparseSystem(A, rhs)


def _coercivity_message(model, data, mesh):
    margin = None
    try:
        from .coefficients import coercivity_margin
        C1 = data.C1_estimate
        if C1 is None:
            from .diagnostics import estimate_trace_constants
            C1 = estimate_trace_constants(mesh).C1
        margin = coercivity_margin(model, data, C1)
        text = (f"coercivity lost: the Robin temperature system is singular; "
                f"margin h_one + min(k, alpha_lo h_sharp)/(C1 alpha_hi) = {margin:.4g} (C1 = {C1:.4g})")
    except Exception:  # the message must not mask the original failure
        text = "coercivity lost: the Robin temperature system is singular"
    return text, margin


def solve_temperature(mesh: TriMesh, model: CoefficientModel, data: ProblemData, xi, phi,
                      tol: float = 1e-12) -> ScalarField:
    """Robin temperature problem for frozen ``xi`` and ``phi``.

    Tries CG and falls back to a direct factorisation when the matrix turns
    out indefinite (possible where ``h < 0``).
    """
    if not np.any(data.h != 0):
        text, margin = _coercivity_message(model, data, mesh)
        raise CoercivityError(text + " (h vanishes on the whole boundary)", margin)
    system = temperature_system(mesh, model, data, xi, phi)
    try:
        x = solve_with_fallback(system, tol=tol)
    except SingularSystemError:
        text, margin = _coercivity_message(model, data, mesh)
        raise CoercivityError(text, margin) from None
    return ScalarField(mesh, x)


# ---------------------------------------------------------------------------
# weak-form residuals (used as certificates)

def potential_residual(mesh, model, theta, phi, data) -> float:
    """Relative residual of the discrete potential equation at ``(theta, phi)``."""
    system = potential_system(mesh, model, theta, data.h)
    return relative_residual(system, _field(mesh, phi).values)


def temperature_residual(mesh, model, data, theta, phi) -> float:
    """Relative residual of the discrete heat equation with ``xi = theta``."""
    system = temperature_system(mesh, model, data, theta, phi)
    return relative_residual(system, _field(mesh, theta).values)


def boundary_mean(mesh: TriMesh, u) -> float:
    """``int u ds``."""
    return float(boundary_weights(mesh) @ _field(mesh, u).values)


def boundary_h_term(mesh: TriMesh, phi, h) -> float:
    """``int h phi ds``."""
    return float(boundary_load(mesh, h) @ _field(mesh, phi).values)
