"""Command-line front end: ``thermoshadow <command> --spec run.json [--out dir]``.

Commands
--------
solve   coupled problem at one ``k`` (theta.csv, phi.csv, picard.csv, summary.json)
sweep   k-sweep against the shadow limit (sweep.csv, shadow.json, summary.json)
shadow  shadow limit only (shadow.json)
mms     manufactured-solution study (rates.csv, summary.json)
report  hypothesis checks, trace constants and smallness ledger (report.json)

Exit codes: 0 success, 1 bad input, 2 no convergence, 3 solver failure.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .coefficients import (
    NEGATIVE, POSITIVE, CoefficientError, ProblemData, h_from_spec, make_model,
    validate_hypotheses,
)
from .diagnostics import MMS_PROBLEMS, estimate_trace_constants, mms_study
from .fem import SolverError, integrate, norms
from .mesh import MeshError, generate_rect_mesh, load_mesh
from .picard import PicardError, run_picard, smallness_ledger
from .shadow import ShadowError, k_sweep, solve_shadow
from .solvers import IncompatibleDataError, boundary_h_term, check_compatible

log = logging.getLogger(__name__)

SCHEMA_VERSION = 1
EXIT_OK, EXIT_INPUT, EXIT_NONCONVERGED, EXIT_SOLVER = 0, 1, 2, 3
COMMANDS = ("solve", "sweep", "shadow", "mms", "report")

_TOP_KEYS = {"schema_version", "mesh", "model", "problem", "solver", "ledger", "mms", "output"}
_MESH_KEYS = {"generator", "nx", "ny", "gamma", "file"}
_MODEL_KEYS = {"sigma", "alpha", "sign_case", "bounds"}
_PROBLEM_KEYS = {"k", "k_list", "g", "h", "h_csv", "h_sharp", "h_one", "C1_estimate"}
_SOLVER_DEFAULTS = {"tol": 1e-10, "maxit": 200, "damping": 1.0, "solver_tol": 1e-12,
                    "adaptive": True, "shadow_tol": 1e-10, "theta0": 1.0}
_LEDGER_DEFAULTS = {"R": 1.0, "K_est": 1.0, "C_est": 1.0}
_MMS_DEFAULTS = {"problem": "linear-potential", "mesh_sizes": [8, 16, 32, 64]}


class SpecError(ValueError):
    pass


class NotConverged(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# spec parsing

def _check_keys(section: dict, allowed: set, where: str):
    if not isinstance(section, dict):
        raise SpecError(f"{where} must be an object")
    unknown = set(section) - allowed
    if unknown:
        raise SpecError(f"unknown key(s) in {where}: {sorted(unknown)}")


def _with_defaults(section, defaults, where):
    section = {} if section is None else section
    _check_keys(section, set(defaults), where)
    return {**defaults, **section}


@dataclass
class RunSpec:
    raw: dict
    base_dir: Path
    mesh: dict
    model: dict
    problem: dict
    solver: dict
    ledger: dict
    mms: dict
    output: str | None

    def resolved(self) -> dict:
        out = {"schema_version": SCHEMA_VERSION, "mesh": self.mesh, "model": self.model,
               "problem": self.problem, "solver": self.solver, "ledger": self.ledger}
        if self.raw.get("mms") is not None:
            out["mms"] = self.mms
        return out


def parse_spec(raw: dict, base_dir: Path = Path(".")) -> RunSpec:
    """Validate a decoded run spec and fill in defaults (unknown keys are errors)."""
    _check_keys(raw, _TOP_KEYS, "spec")
    if raw.get("schema_version") != SCHEMA_VERSION:
        raise SpecError(f"schema_version must be {SCHEMA_VERSION}, got {raw.get('schema_version')!r}")
    mesh = dict(raw.get("mesh", {"generator": "rect", "nx": 16, "ny": 16, "gamma": "left"}))
    _check_keys(mesh, _MESH_KEYS, "mesh")
    if "file" in mesh:
        if set(mesh) != {"file"}:
            raise SpecError("mesh: 'file' cannot be combined with generator parameters")
    else:
        mesh.setdefault("generator", "rect")
        if mesh["generator"] != "rect":
            raise SpecError(f"unknown mesh generator {mesh['generator']!r}")
        mesh.setdefault("nx", 16)
        mesh.setdefault("ny", mesh["nx"])
        mesh.setdefault("gamma", "left")
    model = dict(raw.get("model", {}))
    _check_keys(model, _MODEL_KEYS, "model")
    for key in ("sigma", "alpha"):
        if key not in model:
            raise SpecError(f"model.{key} is required")
    model.setdefault("sign_case", POSITIVE)
    if model["sign_case"] not in (POSITIVE, NEGATIVE):
        raise SpecError(f"model.sign_case must be {POSITIVE!r} or {NEGATIVE!r}")
    model.setdefault("bounds", {})
    problem = dict(raw.get("problem", {}))
    _check_keys(problem, _PROBLEM_KEYS, "problem")
    if "k" in problem and "k_list" in problem:
        raise SpecError("problem: give exactly one of 'k' and 'k_list'")
    if ("h" in problem) == ("h_csv" in problem):
        raise SpecError("problem: give exactly one of 'h' and 'h_csv'")
    for key in ("h_sharp", "h_one"):
        if key not in problem:
            raise SpecError(f"problem.{key} is required")
    problem.setdefault("g", 0.0)
    problem.setdefault("C1_estimate", None)
    return RunSpec(raw=raw, base_dir=base_dir, mesh=mesh, model=model, problem=problem,
                   solver=_with_defaults(raw.get("solver"), _SOLVER_DEFAULTS, "solver"),
                   ledger=_with_defaults(raw.get("ledger"), _LEDGER_DEFAULTS, "ledger"),
                   mms=_with_defaults(raw.get("mms"), _MMS_DEFAULTS, "mms"),
                   output=raw.get("output"))


def load_spec(path) -> RunSpec:
    path = Path(path)
    try:
        raw = json.loads(path.read_text())
    except OSError as exc:
        raise SpecError(f"cannot read spec {path}: {exc.strerror}") from None
    except json.JSONDecodeError as exc:
        raise SpecError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from None
    return parse_spec(raw, path.parent)


def g_source(spec):
    """Heat source from a number, ``{"law": "constant", "value"}`` or
    ``{"law": "affine", "c0", "cx", "cy"}``."""
    if isinstance(spec, (int, float)):
        return float(spec)
    if not isinstance(spec, dict):
        raise SpecError("problem.g must be a number or a law object")
    law = spec.get("law")
    if law == "constant":
        _check_keys(spec, {"law", "value"}, "problem.g")
        return float(spec["value"])
    if law == "affine":
        _check_keys(spec, {"law", "c0", "cx", "cy"}, "problem.g")
        c0, cx, cy = (float(spec.get(k, 0.0)) for k in ("c0", "cx", "cy"))
        return lambda x: c0 + cx * x[:, 0] + cy * x[:, 1]
    raise SpecError(f"unknown g law {law!r}; known: ['affine', 'constant']")


def read_h_csv(path: Path, ne: int) -> np.ndarray:
    """Per-edge currents from a CSV with header ``edge,value``."""
    h = np.full(ne, np.nan)
    try:
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
    except OSError as exc:
        raise SpecError(f"cannot read h table {path}: {exc.strerror}") from None
    if not rows or [c.strip() for c in rows[0]] != ["edge", "value"]:
        raise SpecError(f"{path}: header must be 'edge,value'")
    for lineno, row in enumerate(rows[1:], start=2):
        try:
            e, v = int(row[0]), float(row[1])
        except (ValueError, IndexError):
            raise SpecError(f"{path}: line {lineno}: expected 'edge,value'") from None
        if not 0 <= e < ne:
            raise SpecError(f"{path}: line {lineno}: edge {e} out of range 0..{ne - 1}")
        h[e] = v
    if np.isnan(h).any():
        raise SpecError(f"{path}: missing values for edges {np.flatnonzero(np.isnan(h))[:10].tolist()}")
    return h


def build(spec: RunSpec, k=None):
    """Mesh, coefficient model and problem data described by ``spec``."""
    m = spec.mesh
    if "file" in m:
        mesh = load_mesh(spec.base_dir / m["file"])
    else:
        mesh = generate_rect_mesh(int(m["nx"]), int(m["ny"]), m["gamma"])
    md = spec.model
    model = make_model(md["sigma"], md["alpha"], sign_case=md["sign_case"], **md["bounds"])
    p = spec.problem
    if "h_csv" in p:
        h = read_h_csv(spec.base_dir / p["h_csv"], mesh.ne)
    else:
        h = h_from_spec(mesh, p["h"])
    if k is None:
        k = p.get("k", (p.get("k_list") or [1.0])[0])
    data = ProblemData(k=float(k), h=h, h_sharp=float(p["h_sharp"]), h_one=float(p["h_one"]),
                       g=g_source(p["g"]), C1_estimate=p["C1_estimate"], g_spec=p["g"])
    return mesh, model, data


# ---------------------------------------------------------------------------
# output helpers

def _clean(obj):
    """JSON-ready copy: numpy scalars to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    return obj


def write_json(path: Path, obj):
    # repr of a float round-trips exactly, so the text is deterministic
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_field(path: Path, u):
    mesh = u.mesh
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["vertex", "x", "y", "value"])
        for i, ((x, y), v) in enumerate(zip(mesh.vertices, u.values)):
            w.writerow([i, f"{x:.17g}", f"{y:.17g}", f"{v:.17g}"])


def _data_sizes(mesh, data):
    h_norm = math.sqrt(float(np.sum(data.h ** 2 * mesh.edge_lengths)))
    g_norm = math.sqrt(max(integrate(mesh, lambda x: data.g(x) ** 2), 0.0))
    return h_norm, g_norm


def _ledger(spec, mesh, model, data):
    h_norm, g_norm = _data_sizes(mesh, data)
    return smallness_ledger(model, h_norm=h_norm, g_norm=g_norm, **spec.ledger)


def _validate(model, data, mesh):
    report = validate_hypotheses(model, data, mesh)
    if not report.ok:
        names = ", ".join(f"{c.name} ({c.detail})" for c in report.failures())
        raise SpecError(f"hypotheses violated: {names}")
    return report


# ---------------------------------------------------------------------------
# commands

def cmd_solve(spec: RunSpec, out: Path) -> int:
    if "k" not in spec.problem:
        raise SpecError("solve needs problem.k")
    mesh, model, data = build(spec)
    check_compatible(mesh, data.h)
    validation = _validate(model, data, mesh)
    s = spec.solver
    theta, phi, rep = run_picard(mesh, model, data, damping=s["damping"], tol=s["tol"],
                                 maxit=s["maxit"], solver_tol=s["solver_tol"], adaptive=s["adaptive"])
    write_field(out / "theta.csv", theta)
    write_field(out / "phi.csv", phi)
    rep.write_csv(out / "picard.csv")
    summary = {
        "spec": spec.resolved(),
        "converged": rep.converged,
        "picard": rep.summary(),
        "norms": {"theta": norms(theta), "phi": norms(phi)},
        "boundary_h_term": boundary_h_term(mesh, phi, data.h),
        "energy_defect": rep.energy_defect,
        "smallness_ledger": _ledger(spec, mesh, model, data).as_dict(),
        "validation": validation.as_dict(),
        "clamp_counts": dict(model.clamps.counts),
    }
    write_json(out / "summary.json", summary)
    if not rep.converged:
        raise NotConverged(f"Picard iteration did not converge in {rep.iterations} iterations "
                           f"(last update {rep.updates[-1]:.3e}); history in picard.csv")
    return EXIT_OK


def cmd_sweep(spec: RunSpec, out: Path) -> int:
    ks = spec.problem.get("k_list")
    if not ks:
        raise SpecError("sweep needs problem.k_list")
    mesh, model, data = build(spec, k=ks[0])
    check_compatible(mesh, data.h)
    validation = _validate(model, data, mesh)
    s = spec.solver
    res = k_sweep(mesh, model, data, [float(k) for k in ks], damping=s["damping"], tol=s["tol"],
                  maxit=s["maxit"], solver_tol=s["solver_tol"], shadow_tol=s["shadow_tol"])
    res.write_csv(out / "sweep.csv")
    write_json(out / "shadow.json", res.shadow.as_dict())
    all_converged = all(r.converged for r in res.rows)
    write_json(out / "summary.json", {
        "spec": spec.resolved(),
        "slope": res.slope,
        "converged": all_converged,
        "rows": [{"k": r.k, "converged": r.converged, "iterations": r.iterations,
                  "energy_defect": r.energy_defect} for r in res.rows],
        "shadow": res.shadow.as_dict(),
        "validation": validation.as_dict(),
    })
    if not all_converged:
        bad = [r.k for r in res.rows if not r.converged]
        raise NotConverged(f"Picard iteration did not converge for k in {bad}")
    return EXIT_OK


def cmd_shadow(spec: RunSpec, out: Path) -> int:
    mesh, model, data = build(spec)
    check_compatible(mesh, data.h)
    s = spec.solver
    res = solve_shadow(mesh, model, data, tol=s["shadow_tol"], theta0=s["theta0"],
                       maxit=s["maxit"], solver_tol=s["solver_tol"])
    d = res.as_dict()
    d["spec"] = spec.resolved()
    d["within_bounds"] = res.within_bounds()
    write_json(out / "shadow.json", d)
    return EXIT_OK


def cmd_mms(spec: RunSpec, out: Path) -> int:
    pid = spec.mms["problem"]
    if pid not in MMS_PROBLEMS:
        raise SpecError(f"unknown MMS problem {pid!r}; known: {sorted(MMS_PROBLEMS)}")
    table = mms_study(pid, spec.mms["mesh_sizes"])
    table.write_csv(out / "rates.csv")
    write_json(out / "summary.json", {"spec": {"schema_version": SCHEMA_VERSION, "mms": spec.mms},
                                      "problem": pid, "rows": table.rows(),
                                      "rate_L2": table.rate_l2, "rate_H1": table.rate_h1})
    return EXIT_OK


def cmd_report(spec: RunSpec, out: Path) -> int:
    mesh, model, data = build(spec)
    check_compatible(mesh, data.h)
    validation = validate_hypotheses(model, data, mesh)
    tc = estimate_trace_constants(mesh)
    write_json(out / "report.json", {
        "spec": spec.resolved(),
        "model": model.describe(),
        "mesh": {"vertices": mesh.nv, "triangles": mesh.nt, "boundary_edges": mesh.ne,
                 "h_max": mesh.h_max},
        "trace_constants": tc.as_dict(),
        "validation": validation.as_dict(),
        "smallness_ledger": _ledger(spec, mesh, model, data).as_dict(),
    })
    return EXIT_OK if validation.ok else EXIT_INPUT


HANDLERS = {"solve": cmd_solve, "sweep": cmd_sweep, "shadow": cmd_shadow, "mms": cmd_mms,
            "report": cmd_report}


def run(command: str, spec_path, out_dir=None) -> int:
    """Execute one command and map failures to exit codes (messages go to stderr)."""
    try:
        spec = load_spec(spec_path)
        out = Path(out_dir or spec.output or ".")
        out.mkdir(parents=True, exist_ok=True)
        return HANDLERS[command](spec, out)
    except (SpecError, MeshError, CoefficientError, IncompatibleDataError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except NotConverged as exc:
        print(f"not converged: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED
    except (SolverError, PicardError, ShadowError) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="thermoshadow", description=__doc__.splitlines()[0])
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--spec", required=True, help="JSON run specification")
    parser.add_argument("--out", default=None, help="output directory (default: spec 'output' or .)")
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args.command, args.spec, args.out)


if __name__ == "__main__":
    sys.exit(main())
