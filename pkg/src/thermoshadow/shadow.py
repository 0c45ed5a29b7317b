"""Large thermal conductivity: the shadow system.

As ``k -> inf`` the temperature flattens to a positive constant ``Theta``
and the potential solves the pure conduction problem
``div(sigma(., Theta) grad phi) = 0`` with flux ``h``. ``Theta`` is a root of

    G(Theta) = Theta int_{boundary} alpha(., Theta) h ds
               - int sigma(., Theta) |grad phi|^2 dx - int g dx,

the heat equation tested with the constant 1 in the limit. This module
solves that scalar equation directly and runs k-sweeps that watch the
finite-k solutions approach it.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientModel, ProblemData, eval_alpha, eval_sigma
from .fem import (
    ScalarField, SparseSystem, assemble_stiffness, boundary_load, boundary_weights,
    elem_gradients, grad_l2, integrate, solve_with_fallback,
)
from .mesh import TriMesh, GAMMA, SIGMA, boundary_measure
from .picard import run_picard
from .solvers import check_compatible

log = logging.getLogger(__name__)

THETA_RANGE = (1e-8, 1e8)


class ShadowError(RuntimeError):
    pass


class ShadowSignError(ShadowError):
    """``int alpha(., Theta) h ds <= 0``: the limit equation has no positive root structure."""


@dataclass
class ShadowResult:
    Theta: float
    phi: ScalarField
    residual: float
    lower_bound: float
    upper_bound: float
    upper_bound_sharp: float
    iterations: int
    method: str
    potential_solves: int
    bracket_history: list = field(default_factory=list)
    roots: list = field(default_factory=list)
    upper_bound_defined: bool = True

    @property
    def multiple_roots(self) -> bool:
        return len(self.roots) > 1

    def within_bounds(self, rtol: float = 1e-12) -> bool:
        lo_ok = self.Theta >= self.lower_bound * (1 - rtol)
        hi_ok = self.Theta <= self.upper_bound * (1 + rtol)
        return bool(lo_ok and hi_ok and self.Theta <= self.upper_bound_sharp * (1 + rtol))

    def as_dict(self):
        def num(v):
            return v if math.isfinite(v) else None
        return {
            "Theta": self.Theta,
            "residual": self.residual,
            "lower_bound": num(self.lower_bound),
            "upper_bound": num(self.upper_bound),
            "upper_bound_defined": self.upper_bound_defined,
            "upper_bound_sharp": num(self.upper_bound_sharp),
            "iterations": self.iterations,
            "method": self.method,
            "potential_solves": self.potential_solves,
            "roots": self.roots,
            "multiple_roots": self.multiple_roots,
        }


def shadow_potential_system(mesh: TriMesh, model: CoefficientModel, Theta: float, h) -> SparseSystem:
    s = eval_sigma(model, mesh.centroids, Theta)
    K = assemble_stiffness(mesh, s)
    return SparseSystem(K, boundary_load(mesh, h), w=boundary_weights(mesh), c=0.0)


def solve_shadow_potential(mesh: TriMesh, model: CoefficientModel, Theta: float, data: ProblemData,
                           tol: float = 1e-12) -> ScalarField:
    """Potential of the limit problem at constant temperature ``Theta`` (zero boundary mean)."""
    check_compatible(mesh, data.h)
    system = shadow_potential_system(mesh, model, Theta, data.h)
    return ScalarField(mesh, solve_with_fallback(system, tol=tol))


def boundary_alpha_h(mesh: TriMesh, model: CoefficientModel, Theta: float, h) -> float:
    """``int alpha(., Theta) h ds`` (midpoint alpha, per-edge constant h)."""
    a = eval_alpha(model, mesh.edge_midpoints, Theta)
    return float(np.sum(a * np.asarray(h) * mesh.edge_lengths))


def dissipation(mesh: TriMesh, model: CoefficientModel, Theta: float, phi) -> float:
    """``int sigma(., Theta) |grad phi|^2 dx``."""
    g = elem_gradients(phi)
    s = eval_sigma(model, mesh.centroids, Theta)
    return float(np.sum(mesh.areas * s * np.einsum("ti,ti->t", g, g)))


def implicit_equation_residual(mesh: TriMesh, model: CoefficientModel, Theta: float, phi,
                               data: ProblemData) -> float:
    """Signed ``G(Theta)``; ``phi`` should solve the limit potential problem at ``Theta``.

    A non-positive boundary term is logged, not raised: with ``alpha``
    independent of x and ``int h ds = 0`` the term vanishes identically and
    ``G`` is constant in ``Theta``.
    """
    D = boundary_alpha_h(mesh, model, Theta, data.h)
    if D <= 0:
        log.warning("int alpha(., Theta) h ds = %.3e <= 0 at Theta = %g", D, Theta)
    return Theta * D - dissipation(mesh, model, Theta, phi) - integrate(mesh, data.g)


def _sign_error(mesh, model, data, D, Theta):
    gam, sig = boundary_measure(mesh, GAMMA), boundary_measure(mesh, SIGMA)
    den = model.alpha_lo * data.h_sharp * gam + model.alpha_hi * data.h_one * sig
    hint = ""
    if not getattr(model.alpha, "depends_on_x", True):
        hint = ("; alpha does not depend on x, so with int h ds = 0 the boundary term "
                "vanishes and the limit model degenerates")
    return ShadowSignError(
        f"boundary coefficient sign violated: int alpha(., Theta) h ds = {D:.6g} <= 0 at "
        f"Theta = {Theta:g} (alpha_lo h_sharp |Gamma| + alpha_hi h_one |Sigma| = {den:.6g}){hint}")


def _bounds(mesh, model, data, phi, g_int):
    grad2 = grad_l2(phi) ** 2
    abs_h = float(np.sum(np.abs(data.h) * mesh.edge_lengths))
    lower = (model.sigma_lo * grad2 + g_int) / (model.alpha_hi * abs_h)
    den = (model.alpha_lo * data.h_sharp * boundary_measure(mesh, GAMMA)
           + model.alpha_hi * data.h_one * boundary_measure(mesh, SIGMA))
    if den > 0:
        return lower, (model.sigma_hi * grad2 + g_int) / den, True
    return lower, math.inf, False


def solve_shadow(mesh: TriMesh, model: CoefficientModel, data: ProblemData, tol: float = 1e-10,
                 theta0: float = 1.0, maxit: int = 200, use_cache: bool = True,
                 solver_tol: float = 1e-12) -> ShadowResult:
    """Find the positive root ``Theta`` of ``G`` and the matching limit potential.

    Fixed-point iteration ``Theta <- (int sigma |grad phi|^2 + int g) / int alpha h``
    first; if that stalls or leaves ``(0, inf)``, a log-spaced scan of
    ``[1e-8, 1e8]`` brackets every sign change of ``G`` and bisection returns
    the smallest positive root (all brackets are reported).
    """
    check_compatible(mesh, data.h)
    g_int = integrate(mesh, data.g)
    cache = {}
    solves = 0
    cacheable = use_cache and not model.sigma_depends_on_T

    def potential(Theta):
        nonlocal solves
        if cacheable and "phi" in cache:
            return cache["phi"]
        solves += 1
        phi = solve_shadow_potential(mesh, model, Theta, data, tol=solver_tol)
        if cacheable:
            cache["phi"] = phi
        return phi

    def evaluate(Theta):
        phi = potential(Theta)
        D = boundary_alpha_h(mesh, model, Theta, data.h)
        N = dissipation(mesh, model, Theta, phi) + g_int
        return phi, D, N

    def scale(Theta, D, N):
        return max(abs(Theta * D), abs(N), abs(g_int), 1e-300)

    Theta = float(theta0)
    if not Theta > 0:
        raise ValueError("theta0 must be positive")
    history = []
    method = "fixed-point"
    best = None
    stall = 0
    it = 0
    for it in range(1, maxit + 1):
        phi, D, N = evaluate(Theta)
        if D <= 0:
            raise _sign_error(mesh, model, data, D, Theta)
        G = Theta * D - N
        history.append((Theta, G))
        if abs(G) <= tol * scale(Theta, D, N):
            best = (Theta, phi, G)
            break
        nxt = N / D
        if not nxt > 0:
            if N <= 0 and not model.sigma_depends_on_T and not model.alpha_depends_on_T:
                raise ShadowError(
                    f"non-positive fixed point Theta = {nxt:.6g}: int sigma |grad phi|^2 + int g <= 0")
            stall = 99
        elif len(history) >= 2 and abs(G) > 0.9 * abs(history[-2][1]):
            stall += 1
        else:
            stall = 0
        if stall >= 5:
            break
        Theta = nxt

    brackets = []
    roots = []
    if best is None:
        method = "bisection"
        log.info("shadow: fixed-point iteration stalled, switching to bracketing")
        grid = np.logspace(math.log10(THETA_RANGE[0]), math.log10(THETA_RANGE[1]), 129)
        vals = []
        for t in grid:
            _, D, N = evaluate(float(t))
            vals.append(float(t) * D - N)
        vals = np.array(vals)
        starts = []
        for i in range(len(grid) - 1):
            if vals[i] == 0.0:
                roots.append(float(grid[i]))
                brackets.append((float(grid[i]), float(grid[i])))
            elif vals[i] * vals[i + 1] < 0:
                brackets.append((float(grid[i]), float(grid[i + 1])))
                starts.append((float(grid[i]), float(grid[i + 1]), float(vals[i])))
        if not brackets:
            raise ShadowError(
                "no sign-valid bracket for G in [1e-8, 1e8]; samples: "
                + ", ".join(f"G({t:.1e})={v:.3e}" for t, v in zip(grid[::16], vals[::16])))
        for a, b, ga in starts:
            mid = 0.5 * (a + b)
            for _ in range(200):
                mid = 0.5 * (a + b)
                _, D, N = evaluate(mid)
                gm = mid * D - N
                it += 1
                if abs(gm) <= tol * scale(mid, D, N) or b - a <= 4e-16 * mid:
                    break
                if ga * gm < 0:
                    b = mid
                else:
                    a, ga = mid, gm
            roots.append(float(mid))
        roots.sort()
        Theta = min(roots)
        phi, D, N = evaluate(Theta)
        if D <= 0:
            raise _sign_error(mesh, model, data, D, Theta)
        best = (Theta, phi, Theta * D - N)

    Theta, phi, G = best
    lower, upper, defined = _bounds(mesh, model, data, phi, g_int)
    D = boundary_alpha_h(mesh, model, Theta, data.h)
    sharp = (model.sigma_hi * grad_l2(phi) ** 2 + g_int) / D
    return ShadowResult(
        Theta=float(Theta), phi=phi, residual=abs(float(G)), lower_bound=float(lower),
        upper_bound=float(upper), upper_bound_sharp=float(sharp), iterations=it, method=method,
        potential_solves=solves, bracket_history=brackets, roots=roots or [float(Theta)],
        upper_bound_defined=defined)


# ---------------------------------------------------------------------------
# k-sweeps

@dataclass
class SweepRow:
    k: float
    grad_theta_l2: float
    theta_osc: float
    theta_vs_Theta: float
    grad_phi_l2: float
    iterations: int
    converged: bool
    energy_defect: float


@dataclass
class SweepResult:
    rows: list
    shadow: ShadowResult
    slope: float
    fields: list = field(default_factory=list, repr=False)

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "grad_theta_l2", "theta_osc", "theta_vs_Theta_inf", "grad_phi_l2",
                        "iters", "converged"])
            for r in self.rows:
                w.writerow([f"{r.k:.17g}", f"{r.grad_theta_l2:.17g}", f"{r.theta_osc:.17g}",
                            f"{r.theta_vs_Theta:.17g}", f"{r.grad_phi_l2:.17g}", r.iterations,
                            int(r.converged)])


def fit_slope(ks, values) -> float:
    """Least-squares slope of ``log(values)`` against ``log(ks)``."""
    ks, values = np.asarray(ks, float), np.asarray(values, float)
    if len(ks) < 2:
        return math.nan
    return float(np.polyfit(np.log(ks), np.log(values), 1)[0])


def k_sweep(mesh: TriMesh, model: CoefficientModel, data: ProblemData, k_list, damping: float = 1.0,
            tol: float = 1e-10, maxit: int = 200, solver_tol: float = 1e-12,
            shadow_tol: float = 1e-10, warm_start: bool = True) -> SweepResult:
    """Solve the coupled problem for each ``k`` and compare with the shadow limit.

    Non-converged ``k`` are recorded and excluded from the slope fit.
    """
    ks = [float(k) for k in k_list]
    if any(b <= a for a, b in zip(ks, ks[1:])):
        raise ValueError("k_list must be strictly increasing")
    floor = model.alpha_lo * data.h_sharp
    if any(k <= floor for k in ks):
        raise ValueError(f"every k must exceed alpha_lo * h_sharp = {floor:g}")

    shadow = solve_shadow(mesh, model, data, tol=shadow_tol, solver_tol=solver_tol)
    rows, fields = [], []
    init = None
    for k in ks:
        theta, phi, rep = run_picard(mesh, model, data.with_k(k), init=init, damping=damping,
                                     tol=tol, maxit=maxit, solver_tol=solver_tol)
        v = theta.values
        rows.append(SweepRow(
            k=k, grad_theta_l2=grad_l2(theta), theta_osc=float(v.max() - v.min()),
            theta_vs_Theta=float(np.max(np.abs(v - shadow.Theta))), grad_phi_l2=grad_l2(phi),
            iterations=rep.iterations, converged=rep.converged, energy_defect=rep.energy_defect))
        fields.append((theta, phi))
        if warm_start and rep.converged:
            init = theta
    conv = [r for r in rows if r.converged]
    slope = fit_slope([r.k for r in conv], [r.grad_theta_l2 for r in conv])
    return SweepResult(rows=rows, shadow=shadow, slope=slope, fields=fields)
