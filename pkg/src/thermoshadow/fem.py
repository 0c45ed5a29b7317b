"""P1 assembly, norms and linear solvers.

All forms are assembled with vectorised numpy over triangles/edges and
collected into scipy CSR matrices. Element contributions are laid out
element-major, so entries (i, j) and (j, i) accumulate the same numbers in
the same order and assembled matrices are exactly symmetric.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .mesh import TriMesh, GAMMA, SIGMA, ALL

log = logging.getLogger(__name__)

DENSE_LIMIT = 4000

# degree-2 boundary mass on a unit edge
_EDGE_MASS = np.array([[1 / 3, 1 / 6], [1 / 6, 1 / 3]])
# element mass in barycentrics, scaled by the area
_TRI_MASS = np.array([[2, 1, 1], [1, 2, 1], [1, 1, 2]]) / 12.0

# Strang-Fix 7-point rule, exact for degree 5 (barycentric coords, weights sum to 1)
_a1, _b1 = 0.797426985353087, 0.101286507323456
_a2, _b2 = 0.059715871789770, 0.470142064105115
_w1, _w2 = 0.125939180544827, 0.132394152788506
QUAD7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
QUAD7_W = np.array([0.225, _w1, _w1, _w1, _w2, _w2, _w2])


class AssemblyError(RuntimeError):
    pass


class SolverError(RuntimeError):
    pass


class NonConvergenceError(SolverError):
    def __init__(self, message, history=None):
        super().__init__(message)
        self.history = list(history or [])


class IndefiniteMatrixError(SolverError):
    pass


class SingularSystemError(SolverError):
    pass


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Nodal P1 field on a mesh."""

    mesh: TriMesh
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float).reshape(-1)
        if len(v) != self.mesh.nv:
            raise ValueError(f"field has {len(v)} values for {self.mesh.nv} vertices")
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @classmethod
    def constant(cls, mesh, c):
        return cls(mesh, np.full(mesh.nv, float(c)))

    @classmethod
    def interpolate(cls, mesh, func):
        return cls(mesh, func(mesh.vertices))

    def at_centroids(self) -> np.ndarray:
        return self.values[self.mesh.triangles].mean(axis=1)

    def at_edge_midpoints(self) -> np.ndarray:
        return self.values[self.mesh.boundary_edges].mean(axis=1)

    def __add__(self, other):
        o = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.mesh, self.values + o)

    def __sub__(self, other):
        o = other.values if isinstance(other, ScalarField) else other
        return ScalarField(self.mesh, self.values - o)


def _values(u) -> np.ndarray:
    return u.values if isinstance(u, ScalarField) else np.asarray(u, dtype=float)


@dataclass
class SparseSystem:
    """``A x = b``, optionally with the affine constraint ``w . x = c``."""

    A: sp.spmatrix
    b: np.ndarray
    w: np.ndarray | None = None
    c: float = 0.0

    def __post_init__(self):
        self.A = sp.csr_matrix(self.A)
        self.b = np.asarray(self.b, dtype=float)
        n = self.A.shape[0]
        if self.A.shape != (n, n) or self.b.shape != (n,):
            raise ValueError("inconsistent system dimensions")
        if self.w is not None:
            self.w = np.asarray(self.w, dtype=float)
            if self.w.shape != (n,):
                raise ValueError("constraint weights have the wrong length")


# ---------------------------------------------------------------------------
# assembly

def _per_triangle(mesh: TriMesh, coeff) -> np.ndarray:
    if callable(coeff):
        c = np.asarray(coeff(mesh.centroids), dtype=float)
    else:
        c = np.asarray(coeff, dtype=float)
    return np.broadcast_to(c, (mesh.nt,)).astype(float)


def _per_edge(mesh: TriMesh, weight) -> np.ndarray:
    if callable(weight):
        w = np.asarray(weight(mesh.edge_midpoints), dtype=float)
    else:
        w = np.asarray(weight, dtype=float)
    return np.broadcast_to(w, (mesh.ne,)).astype(float)


def _gather(rows_idx, cols_idx, data, n):
    return sp.coo_matrix((data.ravel(), (rows_idx.ravel(), cols_idx.ravel())), shape=(n, n)).tocsr()


def element_stiffness(mesh: TriMesh, coeff=1.0) -> np.ndarray:
    """Per-triangle 3x3 matrices ``c_t |T| grad(l_a) . grad(l_b)``."""
    c = _per_triangle(mesh, coeff)
    G = mesh.basis_gradients
    gx, gy = G[..., 0], G[..., 1]
    dots = gx[:, :, None] * gx[:, None, :] + gy[:, :, None] * gy[:, None, :]
    return (c * mesh.areas)[:, None, None] * dots


def assemble_stiffness(mesh: TriMesh, coeff=1.0) -> sp.csr_matrix:
    """Weighted stiffness ``int c grad u . grad v`` with ``c`` at centroids.

    ``coeff`` is a callable on points or a per-triangle array.
    """
    areas = mesh.areas
    bad = np.flatnonzero(~(areas > 0))
    if len(bad):
        raise AssemblyError(f"degenerate triangle {int(bad[0])}")
    Ke = element_stiffness(mesh, coeff)
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return _gather(rows, cols, Ke, mesh.nv)


def assemble_mass(mesh: TriMesh, coeff=1.0) -> sp.csr_matrix:
    """Consistent volume mass matrix ``int c u v`` (c at centroids)."""
    c = _per_triangle(mesh, coeff)
    Me = (c * mesh.areas)[:, None, None] * _TRI_MASS[None]
    t = mesh.triangles
    rows = np.repeat(t[:, :, None], 3, axis=2)
    cols = np.repeat(t[:, None, :], 3, axis=1)
    return _gather(rows, cols, Me, mesh.nv)


def assemble_boundary_mass(mesh: TriMesh, weight=1.0) -> sp.csr_matrix:
    """``int_{boundary} w u v ds`` with ``w`` constant per edge (exact for P1)."""
    w = _per_edge(mesh, weight)
    Me = (w * mesh.edge_lengths)[:, None, None] * _EDGE_MASS[None]
    e = mesh.boundary_edges
    rows = np.repeat(e[:, :, None], 2, axis=2)
    cols = np.repeat(e[:, None, :], 2, axis=1)
    return _gather(rows, cols, Me, mesh.nv)


def boundary_weights(mesh: TriMesh, mask=None) -> np.ndarray:
    """Vector ``w`` with ``w . u = int u ds`` over the (masked) boundary."""
    half = 0.5 * mesh.edge_lengths
    if mask is not None:
        half = np.where(mask, half, 0.0)
    w = np.zeros(mesh.nv)
    np.add.at(w, mesh.boundary_edges[:, 0], half)
    np.add.at(w, mesh.boundary_edges[:, 1], half)
    return w


def volume_load(mesh: TriMesh, source) -> np.ndarray:
    """``int f v dx``.

    A callable ``source`` uses the edge-midpoint rule (exact for quadratic
    integrands); an array is read as a per-triangle constant and integrated
    exactly (``|T| f / 3`` per vertex).
    """
    b = np.zeros(mesh.nv)
    t = mesh.triangles
    if callable(source):
        p = mesh.vertices[t]
        mids = np.stack([(p[:, 0] + p[:, 1]) / 2, (p[:, 1] + p[:, 2]) / 2, (p[:, 2] + p[:, 0]) / 2], axis=1)
        f = np.asarray(source(mids.reshape(-1, 2)), dtype=float).reshape(-1, 3)
        # vertex a sees 1/2 at the two midpoints adjacent to it
        contrib = (mesh.areas / 3.0)[:, None] * 0.5 * np.stack(
            [f[:, 0] + f[:, 2], f[:, 0] + f[:, 1], f[:, 1] + f[:, 2]], axis=1)
    else:
        f = _per_triangle(mesh, source)
        contrib = np.repeat((mesh.areas * f / 3.0)[:, None], 3, axis=1)
    np.add.at(b, t, contrib)
    return b


def boundary_load(mesh: TriMesh, source) -> np.ndarray:
    """``int_{boundary} q v ds`` for per-edge constant ``q``."""
    q = _per_edge(mesh, source)
    b = np.zeros(mesh.nv)
    half = 0.5 * q * mesh.edge_lengths
    np.add.at(b, mesh.boundary_edges[:, 0], half)
    np.add.at(b, mesh.boundary_edges[:, 1], half)
    return b


def assemble_load(mesh: TriMesh, volume_source=0.0, boundary_source=0.0) -> np.ndarray:
    return volume_load(mesh, volume_source) + boundary_load(mesh, boundary_source)


def integrate(mesh: TriMesh, source) -> float:
    """``int f dx`` with the same rule :func:`volume_load` uses."""
    return float(volume_load(mesh, source).sum())


def elem_gradients(u) -> np.ndarray:
    """Per-triangle gradient of a P1 field, shape (nt, 2)."""
    if isinstance(u, ScalarField):
        mesh, v = u.mesh, u.values
    else:
        mesh, v = u
        v = np.asarray(v, dtype=float)
    return np.einsum("tab,ta->tb", mesh.basis_gradients, v[mesh.triangles])


# ---------------------------------------------------------------------------
# norms

def norms(u: ScalarField) -> dict:
    """L2(Omega), H1-seminorm, L2 on Gamma/Sigma/boundary, and max norm."""
    mesh, v = u.mesh, u.values
    g = elem_gradients(u)
    out = {
        "L2": float(np.sqrt(max(v @ (assemble_mass(mesh) @ v), 0.0))),
        "H1_semi": float(np.sqrt(np.sum(mesh.areas * np.einsum("ti,ti->t", g, g)))),
        "Linf": float(np.max(np.abs(v))),
    }
    for key, tag in (("L2_Gamma", GAMMA), ("L2_Sigma", SIGMA), ("L2_boundary", ALL)):
        M = assemble_boundary_mass(mesh, mesh.edge_mask(tag).astype(float))
        out[key] = float(np.sqrt(max(v @ (M @ v), 0.0)))
    out["H1"] = float(np.hypot(out["L2"], out["H1_semi"]))
    return out


def grad_l2(u) -> float:
    g = elem_gradients(u)
    mesh = u.mesh if isinstance(u, ScalarField) else u[0]
    return float(np.sqrt(np.sum(mesh.areas * np.einsum("ti,ti->t", g, g))))


def h1_norm(mesh: TriMesh, v) -> float:
    v = np.asarray(v, dtype=float)
    g = elem_gradients((mesh, v))
    semi = np.sum(mesh.areas * np.einsum("ti,ti->t", g, g))
    l2 = v @ (assemble_mass(mesh) @ v)
    return float(np.sqrt(max(semi + l2, 0.0)))


# ---------------------------------------------------------------------------
# solvers

def _apply_constraint(x, w, c):
    return x + (c - w @ x) / w.sum()


def solve_spd(system: SparseSystem, tol: float = 1e-12, maxit: int | None = None,
              x0=None) -> np.ndarray:
    """Jacobi-preconditioned conjugate gradients.

    With a constraint ``(w, c)`` the matrix is taken to be PSD with the
    constants as its kernel: the right-hand side is projected onto the range,
    CG runs on the consistent system, and the result is shifted along the
    constants so that ``w . x = c`` exactly.
    """
    A, b = system.A, system.b.copy()
    n = len(b)
    if maxit is None:
        maxit = max(10 * n, 100)
    if system.w is not None:
        b = b - b.mean()
    bnorm = np.linalg.norm(b)
    x = np.zeros(n) if x0 is None else np.array(x0, dtype=float)
    if bnorm == 0.0 and x0 is None:
        return x if system.w is None else _apply_constraint(x, system.w, system.c)

    d = A.diagonal().copy()
    if np.any(d <= 0):
        raise IndefiniteMatrixError("non-positive diagonal entry; use solve_dense instead")
    inv_d = 1.0 / d
    r = b - A @ x
    z = inv_d * r
    p = z.copy()
    rz = r @ z
    history = [np.linalg.norm(r) / max(bnorm, 1e-300)]
    target = tol * max(bnorm, 1e-300)
    it = 0
    while np.linalg.norm(r) > target:
        if it >= maxit:
            raise NonConvergenceError(
                f"CG did not reach relative residual {tol:g} in {maxit} iterations "
                f"(last {history[-1]:.3e})", history)
        Ap = A @ p
        curv = p @ Ap
        if curv <= 0.0:
            raise IndefiniteMatrixError(
                f"CG met non-positive curvature p.Ap = {curv:.3e} at iteration {it}; "
                "the matrix is not positive definite, use solve_dense")
        step = rz / curv
        x += step * p
        r -= step * Ap
        z = inv_d * r
        rz_new = r @ z
        p = z + (rz_new / rz) * p
        rz = rz_new
        it += 1
        history.append(np.linalg.norm(r) / max(bnorm, 1e-300))
    if system.w is not None:
        x = _apply_constraint(x, system.w, system.c)
    return x


def solve_dense(system: SparseSystem) -> np.ndarray:
    """Pivoted LU on the dense matrix (bordered when a constraint is present)."""
    n = len(system.b)
    if n > DENSE_LIMIT:
        raise SolverError(f"dense solve refused for dimension {n} > {DENSE_LIMIT}")
    A = system.A.toarray()
    b = system.b
    if system.w is not None:
        A = np.block([[A, system.w[:, None]], [system.w[None, :], np.zeros((1, 1))]])
        b = np.concatenate([b, [system.c]])
    with warnings.catch_warnings():
        # singularity is detected from the pivots below
        warnings.simplefilter("ignore", sla.LinAlgWarning)
        lu, piv = sla.lu_factor(A, check_finite=True)
    diag = np.abs(np.diag(lu))
    if diag.min() <= 1e-14 * max(diag.max(), 1e-300):
        raise SingularSystemError("matrix is singular to working precision")
    x = sla.lu_solve((lu, piv), b)
    return x[:n]


def solve_sparse_direct(system: SparseSystem) -> np.ndarray:
    """Sparse LU; the large-system counterpart of :func:`solve_dense`."""
    A, b = system.A.tocsc(), system.b
    n = len(b)
    if system.w is not None:
        w = sp.csc_matrix(system.w[:, None])
        A = sp.bmat([[A, w], [w.T, None]], format="csc")
        b = np.concatenate([b, [system.c]])
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise SingularSystemError(str(exc)) from None
    udiag = np.abs(lu.U.diagonal())
    if udiag.min() <= 1e-14 * max(udiag.max(), 1e-300):
        raise SingularSystemError("matrix is singular to working precision")
    return lu.solve(b)[:n]


def solve_direct(system: SparseSystem) -> np.ndarray:
    if len(system.b) <= DENSE_LIMIT:
        return solve_dense(system)
    return solve_sparse_direct(system)


def solve_with_fallback(system: SparseSystem, tol: float = 1e-12, maxit=None) -> np.ndarray:
    """CG first; direct factorisation on indefiniteness or stagnation."""
    try:
        return solve_spd(system, tol=tol, maxit=maxit)
    except (IndefiniteMatrixError, NonConvergenceError) as exc:
        log.debug("CG failed (%s); falling back to a direct solve", exc)
        return solve_direct(system)


def relative_residual(system: SparseSystem, x) -> float:
    """Normwise backward error ``|A x - b| / (| |A| |x| | + |b|)``."""
    x = np.asarray(x, dtype=float)
    r = system.A @ x - system.b
    scale = np.linalg.norm(abs(system.A) @ np.abs(x)) + np.linalg.norm(system.b)
    return float(np.linalg.norm(r) / max(scale, 1e-300))


def write_matrix_market(A, path) -> None:
    from scipy.io import mmwrite
    mmwrite(str(path), sp.coo_matrix(A))
