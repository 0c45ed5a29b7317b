"""Damped Picard iteration for the coupled temperature/potential system.

One sweep maps a temperature iterate ``xi`` to the potential ``phi`` it
drives and then to the temperature ``theta`` heated by the resulting
current; the next iterate is ``(1 - lam) xi + lam theta``. Existence of a
fixed point is known from a compactness argument, contraction is not, so
non-convergence is reported rather than raised.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .coefficients import CoefficientModel, ProblemData, eval_alpha
from .fem import ScalarField, grad_l2, h1_norm, integrate, volume_load
from .mesh import TriMesh
from .solvers import (
    joule_source, potential_residual, solve_potential, solve_temperature,
    temperature_residual,
)

log = logging.getLogger(__name__)

MIN_DAMPING = 1.0 / 16.0


@dataclass
class PicardReport:
    iterations: int = 0
    updates: list = field(default_factory=list)
    grad_theta: list = field(default_factory=list)
    grad_phi: list = field(default_factory=list)
    energy_defects: list = field(default_factory=list)
    dampings: list = field(default_factory=list)
    potential_residual: float = math.nan
    temperature_residual: float = math.nan
    energy_defect: float = math.nan
    damping: float = 1.0
    converged: bool = False

    def rows(self):
        return [
            {"iter": i + 1, "rel_update": u, "grad_theta_l2": gt, "grad_phi_l2": gp, "energy_defect": ed}
            for i, (u, gt, gp, ed) in enumerate(zip(self.updates, self.grad_theta, self.grad_phi,
                                                     self.energy_defects))
        ]

    def summary(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "last_update": self.updates[-1] if self.updates else None,
            "potential_residual": self.potential_residual,
            "temperature_residual": self.temperature_residual,
            "energy_defect": self.energy_defect,
            "damping": self.damping,
        }

    def write_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["iter", "rel_update", "grad_theta_l2", "grad_phi_l2", "energy_defect"])
            for r in self.rows():
                w.writerow([r["iter"]] + [f"{r[k]:.17g}" for k in
                                          ("rel_update", "grad_theta_l2", "grad_phi_l2", "energy_defect")])


class PicardError(RuntimeError):
    def __init__(self, message, iteration):
        super().__init__(f"iteration {iteration}: {message}")
        self.iteration = iteration


def energy_balance(mesh: TriMesh, model: CoefficientModel, data: ProblemData, theta, phi) -> float:
    """Relative defect of ``int alpha(theta) h theta ds = int (F + g) dx``.

    This is the heat equation tested with the constant function 1.
    """
    theta = theta if isinstance(theta, ScalarField) else ScalarField(mesh, theta)
    beta = eval_alpha(model, mesh.edge_midpoints, theta.at_edge_midpoints()) * data.h
    # exact edge integral of the P1 trace: |e| (u_a + u_b) / 2
    lhs = float(np.sum(beta * mesh.edge_lengths * theta.at_edge_midpoints()))
    joule = joule_source(mesh, model, theta, phi)
    rhs = float(volume_load(mesh, joule.F).sum()) + integrate(mesh, data.g)
    return abs(lhs - rhs) / max(abs(lhs), abs(rhs), 1.0)


def run_picard(mesh: TriMesh, model: CoefficientModel, data: ProblemData, init=None,
               damping: float = 1.0, tol: float = 1e-10, maxit: int = 200,
               solver_tol: float = 1e-12, adaptive: bool = True):
    """Iterate the decoupled map until the relative H1 update drops below ``tol``.

    Returns ``(theta, phi, report)``. On convergence ``phi`` is recomputed
    from the final ``theta`` so that the potential equation holds at the
    returned pair; convergence also requires both weak-form residuals to be
    below ``10 * solver_tol``. With ``adaptive`` the damping is halved
    (down to 1/16) whenever the update grows three iterations running.
    """
    if not 0.0 < damping <= 1.0:
        raise ValueError("damping must lie in (0, 1]")
    if tol <= 0:
        raise ValueError("tol must be positive")
    if init is None:
        xi = ScalarField.constant(mesh, 0.0)
    elif isinstance(init, ScalarField):
        xi = init
    else:
        xi = ScalarField(mesh, init)

    report = PicardReport(damping=damping)
    lam = damping
    growth = 0
    res_tol = 10.0 * solver_tol
    theta = phi = None
    for m in range(1, maxit + 1):
        try:
            phi = solve_potential(mesh, model, xi, data, tol=solver_tol)
            theta = solve_temperature(mesh, model, data, xi, phi, tol=solver_tol)
        except Exception as exc:
            raise PicardError(str(exc), m) from exc
        diff = h1_norm(mesh, theta.values - xi.values)
        upd = diff / max(h1_norm(mesh, theta.values), 1e-14)
        report.iterations = m
        report.updates.append(upd)
        report.grad_theta.append(grad_l2(theta))
        report.grad_phi.append(grad_l2(phi))
        report.energy_defects.append(energy_balance(mesh, model, data, theta, phi))
        report.dampings.append(lam)
        log.debug("picard %d: update %.3e (damping %g)", m, upd, lam)

        if upd <= tol:
            phi_final = solve_potential(mesh, model, theta, data, tol=solver_tol)
            r_phi = potential_residual(mesh, model, theta, phi_final, data)
            r_theta = temperature_residual(mesh, model, data, theta, phi_final)
            if r_theta <= res_tol and r_phi <= res_tol:
                report.converged = True
                report.potential_residual = r_phi
                report.temperature_residual = r_theta
                report.energy_defect = energy_balance(mesh, model, data, theta, phi_final)
                report.damping = lam
                return theta, phi_final, report

        if adaptive and len(report.updates) >= 2 and upd > report.updates[-2]:
            growth += 1
            if growth >= 3 and lam > MIN_DAMPING:
                lam = max(lam / 2.0, MIN_DAMPING)
                growth = 0
                log.info("picard: update grew 3 times, damping reduced to %g", lam)
        else:
            growth = 0
        xi = ScalarField(mesh, (1.0 - lam) * xi.values + lam * theta.values)

    report.damping = lam
    report.potential_residual = potential_residual(mesh, model, theta, phi, data)
    report.temperature_residual = temperature_residual(mesh, model, data, theta, phi)
    report.energy_defect = energy_balance(mesh, model, data, theta, phi)
    return theta, phi, report


# ---------------------------------------------------------------------------
# smallness condition

@dataclass(frozen=True)
class SmallnessLedger:
    A: float
    B: float
    a0: float
    a1: float
    a2: float
    K_est: float
    C_est: float
    R: float
    h_norm: float
    g_norm: float
    a1_below_one: bool
    discriminant_ok: bool
    ball_maps_into_itself: bool
    R_interval: tuple | None
    disclaimer: str = ("K_est and C_est are user-supplied surrogates for non-constructive "
                       "regularity constants; this ledger is a diagnostic, not a certificate")

    @property
    def condition_holds(self) -> bool:
        return self.a1_below_one and self.discriminant_ok

    def as_dict(self):
        return {
            "A": self.A, "B": self.B, "a0": self.a0, "a1": self.a1, "a2": self.a2,
            "K_est": self.K_est, "C_est": self.C_est, "R": self.R,
            "h_norm": self.h_norm, "g_norm": self.g_norm,
            "a1_below_one": self.a1_below_one, "discriminant_ok": self.discriminant_ok,
            "condition_holds": self.condition_holds,
            "ball_maps_into_itself": self.ball_maps_into_itself,
            "R_interval": list(self.R_interval) if self.R_interval else None,
            "disclaimer": self.disclaimer,
        }


def smallness_ledger(model: CoefficientModel, R: float = 1.0, K_est: float = 1.0,
                     C_est: float = 1.0, h_norm: float = 0.0, g_norm: float = 0.0) -> SmallnessLedger:
    """Coefficients of the self-map condition ``a2 R^2 + (a1 - 1) R + a0 <= 0``."""
    s_hi, a_hi, mu = model.sigma_hi, model.alpha_hi, model.mu_hi
    K, C = K_est, C_est
    A = s_hi * a_hi * (a_hi + mu)
    B = s_hi * (2 * a_hi + mu)
    a2 = K * s_hi * a_hi * (1 + C * s_hi) * (a_hi * (2 + C * s_hi) + mu)
    a1 = K * C * s_hi * (2 * a_hi * (1 + s_hi) + mu) * h_norm
    a0 = K * (C ** 2 * s_hi * h_norm ** 2 + g_norm)
    c1 = a1 < 1
    c2 = 4 * a0 * a2 < (1 - a1) ** 2
    interval = None
    disc = (a1 - 1) ** 2 - 4 * a2 * a0
    if c1 and disc >= 0 and a2 > 0:
        root = math.sqrt(disc)
        interval = ((1 - a1 - root) / (2 * a2), (1 - a1 + root) / (2 * a2))
    inside = a2 * R ** 2 + (a1 - 1) * R + a0 <= 0
    return SmallnessLedger(A=A, B=B, a0=a0, a1=a1, a2=a2, K_est=K_est, C_est=C_est, R=R,
                           h_norm=h_norm, g_norm=g_norm, a1_below_one=c1, discriminant_ok=c2,
                           ball_maps_into_itself=bool(inside), R_interval=interval)
