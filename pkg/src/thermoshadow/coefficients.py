"""Material laws and problem data for the thermoelectric system.

A :class:`CoefficientModel` bundles the electrical conductivity
``sigma(x, T)``, the Seebeck coefficient ``alpha(x, T)`` and its temperature
derivative, together with the bounds the existence theory assumes:

* ``sigma_lo <= sigma <= sigma_hi``
* ``alpha_lo <= alpha <= alpha_hi`` (positive materials) or
  ``-alpha_hi <= alpha <= -alpha_lo`` (negative materials)
* ``|d alpha / dT| <= mu_hi`` and ``<= mu_hi / |T|`` for ``|T| > 1``
* ``alpha`` Lipschitz in ``(x, T)`` with constant ``lipschitz``.

The ``eval_*`` functions clamp into the declared bands and count every
clamping event, so a misbehaving user law never stops an iteration but
always shows up in the diagnostics.
"""
from __future__ import annotations

import math
import threading
from dataclasses import dataclass, field
from typing import Any, Callable

import numpy as np

from .mesh import TriMesh, boundary_measure, edge_sides, GAMMA, SIGMA

POSITIVE = "positive"
NEGATIVE = "negative"

Domain = tuple[tuple[float, float], tuple[float, float]]
UNIT_SQUARE: Domain = ((0.0, 0.0), (1.0, 1.0))


class CoefficientError(ValueError):
    pass


def _as_points(x) -> np.ndarray:
    return np.atleast_2d(np.asarray(x, dtype=float))


def _broadcast(x, T):
    x = _as_points(x)
    T = np.broadcast_to(np.asarray(T, dtype=float), (len(x),))
    return x, T


# ---------------------------------------------------------------------------
# built-in laws

@dataclass(frozen=True)
class ConstantSigma:
    value: float
    law = "constant"
    depends_on_T = False
    spatially_continuous = True

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return np.full(len(x), float(self.value))

    def bounds(self, domain: Domain):
        return float(self.value), float(self.value)

    def params(self):
        return {"law": "constant", "value": self.value}


@dataclass(frozen=True)
class TanhSigma:
    """Saturating law ``lo + (hi - lo) (1 + tanh((T - T0) / scale)) / 2``."""

    lo: float
    hi: float
    T0: float = 0.0
    scale: float = 1.0
    law = "tanh"
    depends_on_T = True
    spatially_continuous = True

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return self.lo + (self.hi - self.lo) * 0.5 * (1.0 + np.tanh((T - self.T0) / self.scale))

    def bounds(self, domain: Domain):
        return float(min(self.lo, self.hi)), float(max(self.lo, self.hi))

    def params(self):
        return {"law": "tanh", "lo": self.lo, "hi": self.hi, "T0": self.T0, "scale": self.scale}


@dataclass(frozen=True)
class CheckerboardSigma:
    """Piecewise-constant conductivity on an ``n x n`` grid of cells.

    Cell ``(i, j)`` gets ``even`` when ``i + j`` is even and ``odd`` otherwise.
    Discontinuous in x, so only the measurability/bounds hypothesis applies.
    """

    even: float
    odd: float
    n: int = 2
    domain: Domain = UNIT_SQUARE
    law = "checkerboard"
    depends_on_T = False
    spatially_continuous = False

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        (x0, y0), (x1, y1) = self.domain
        i = np.clip(np.floor((x[:, 0] - x0) / (x1 - x0) * self.n), 0, self.n - 1).astype(int)
        j = np.clip(np.floor((x[:, 1] - y0) / (y1 - y0) * self.n), 0, self.n - 1).astype(int)
        return np.where((i + j) % 2 == 0, float(self.even), float(self.odd))

    def bounds(self, domain: Domain):
        return float(min(self.even, self.odd)), float(max(self.even, self.odd))

    def params(self):
        return {"law": "checkerboard", "even": self.even, "odd": self.odd, "n": self.n}


@dataclass(frozen=True)
class ConstantAlpha:
    value: float
    law = "constant"
    depends_on_T = False
    depends_on_x = False
    spatially_continuous = True

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return np.full(len(x), float(self.value))

    def dT(self, x, T):
        x, T = _broadcast(x, T)
        return np.zeros(len(x))

    def bounds(self, domain: Domain):
        a = abs(float(self.value))
        return a, a, 0.0, 0.0

    def params(self):
        return {"law": "constant", "value": self.value}


@dataclass(frozen=True)
class ArctanAlpha:
    """``c0 + cx*x + cy*y + c1*arctan(T)``.

    The derivative ``c1 / (1 + T^2)`` satisfies the ``mu/|T|`` decay for
    ``|T| > 1`` with ``mu = |c1|``.
    """

    c0: float
    c1: float = 0.0
    cx: float = 0.0
    cy: float = 0.0
    law = "arctan"
    spatially_continuous = True

    @property
    def depends_on_T(self):
        return self.c1 != 0.0

    @property
    def depends_on_x(self):
        return self.cx != 0.0 or self.cy != 0.0

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return self.c0 + self.cx * x[:, 0] + self.cy * x[:, 1] + self.c1 * np.arctan(T)

    def dT(self, x, T):
        x, T = _broadcast(x, T)
        return self.c1 / (1.0 + T * T)

    def bounds(self, domain: Domain):
        (x0, y0), (x1, y1) = domain
        corners = np.array([[x0, y0], [x1, y0], [x0, y1], [x1, y1]])
        base = self.c0 + self.cx * corners[:, 0] + self.cy * corners[:, 1]
        swing = abs(self.c1) * math.pi / 2
        lo, hi = float(base.min() - swing), float(base.max() + swing)
        if lo > 0:
            a_lo, a_hi = lo, hi
        elif hi < 0:
            a_lo, a_hi = -hi, -lo
        else:
            a_lo, a_hi = 0.0, max(abs(lo), abs(hi))
        mu = abs(self.c1)
        lip = max(mu, math.hypot(self.cx, self.cy))
        return a_lo, a_hi, mu, lip

    def params(self):
        return {"law": "arctan", "c0": self.c0, "c1": self.c1, "cx": self.cx, "cy": self.cy}


@dataclass(frozen=True)
class RationalAlpha:
    """``lo + (hi - lo) / (1 + T^2)``: maximal at ``T = 0``."""

    lo: float
    hi: float
    law = "rational"
    depends_on_T = True
    depends_on_x = False
    spatially_continuous = True

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return self.lo + (self.hi - self.lo) / (1.0 + T * T)

    def dT(self, x, T):
        x, T = _broadcast(x, T)
        return -(self.hi - self.lo) * 2.0 * T / (1.0 + T * T) ** 2

    def bounds(self, domain: Domain):
        vals = sorted([self.lo, self.hi])
        if vals[0] > 0:
            a_lo, a_hi = vals
        elif vals[1] < 0:
            a_lo, a_hi = -vals[1], -vals[0]
        else:
            a_lo, a_hi = 0.0, max(abs(vals[0]), abs(vals[1]))
        # max |2T/(1+T^2)^2| = 3*sqrt(3)/8 at T = 1/sqrt(3); T^2 * that <= 1/2 for |T| > 1
        mu = abs(self.hi - self.lo) * 3.0 * math.sqrt(3.0) / 8.0
        return a_lo, a_hi, mu, mu

    def params(self):
        return {"law": "rational", "lo": self.lo, "hi": self.hi}


@dataclass(frozen=True)
class SplitAlpha:
    """Temperature-independent, ``left`` for ``x < x_split`` else ``right``."""

    left: float
    right: float
    x_split: float = 0.5
    law = "split"
    depends_on_T = False
    depends_on_x = True
    spatially_continuous = False

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return np.where(x[:, 0] < self.x_split, float(self.left), float(self.right))

    def dT(self, x, T):
        x, T = _broadcast(x, T)
        return np.zeros(len(x))

    def bounds(self, domain: Domain):
        a, b = abs(self.left), abs(self.right)
        return min(a, b), max(a, b), 0.0, 0.0

    def params(self):
        return {"law": "split", "left": self.left, "right": self.right, "x_split": self.x_split}


@dataclass(frozen=True)
class CallableLaw:
    """Wraps user functions ``f(x, T)`` (and optionally ``df/dT``)."""

    func: Callable
    deriv: Callable | None = None
    depends_on_T: bool = True
    depends_on_x: bool = True
    spatially_continuous: bool = True
    law = "user"

    def __call__(self, x, T):
        x, T = _broadcast(x, T)
        return np.asarray(self.func(x, T), dtype=float) * np.ones(len(x))

    def dT(self, x, T):
        x, T = _broadcast(x, T)
        if self.deriv is None:
            raise CoefficientError("user alpha law has no derivative")
        return np.asarray(self.deriv(x, T), dtype=float) * np.ones(len(x))

    def params(self):
        return {"law": "user", "func": getattr(self.func, "__name__", "?")}


SIGMA_LAWS = {"constant": ConstantSigma, "tanh": TanhSigma, "checkerboard": CheckerboardSigma}
ALPHA_LAWS = {"constant": ConstantAlpha, "arctan": ArctanAlpha, "rational": RationalAlpha, "split": SplitAlpha}


def sigma_law(spec: dict):
    spec = dict(spec)
    name = spec.pop("law", None)
    if name not in SIGMA_LAWS:
        raise CoefficientError(f"unknown sigma law {name!r}; known: {sorted(SIGMA_LAWS)}")
    try:
        return SIGMA_LAWS[name](**spec)
    except TypeError as exc:
        raise CoefficientError(f"bad parameters for sigma law {name!r}: {exc}") from None


def alpha_law(spec: dict):
    spec = dict(spec)
    name = spec.pop("law", None)
    if name not in ALPHA_LAWS:
        raise CoefficientError(f"unknown alpha law {name!r}; known: {sorted(ALPHA_LAWS)}")
    try:
        return ALPHA_LAWS[name](**spec)
    except TypeError as exc:
        raise CoefficientError(f"bad parameters for alpha law {name!r}: {exc}") from None


# ---------------------------------------------------------------------------
# the model

class ClampCounter:
    """Thread-safe tally of clamping events per coefficient."""

    def __init__(self):
        self._lock = threading.Lock()
        self.counts = {"sigma": 0, "alpha": 0, "dalpha": 0}

    def add(self, key, n):
        if n:
            with self._lock:
                self.counts[key] += int(n)

    def total(self):
        return sum(self.counts.values())


@dataclass(frozen=True, eq=False)
class CoefficientModel:
    sigma: Any
    alpha: Any
    sigma_lo: float
    sigma_hi: float
    alpha_lo: float
    alpha_hi: float
    mu_hi: float
    lipschitz: float
    sign_case: str = POSITIVE
    clamps: ClampCounter = field(default_factory=ClampCounter, repr=False)

    def __post_init__(self):
        if self.sign_case not in (POSITIVE, NEGATIVE):
            raise CoefficientError(f"sign_case must be {POSITIVE!r} or {NEGATIVE!r}")
        if not (0 < self.sigma_lo <= self.sigma_hi < math.inf):
            raise CoefficientError("need 0 < sigma_lo <= sigma_hi < inf")
        if not (0 < self.alpha_lo <= self.alpha_hi < math.inf):
            raise CoefficientError("need 0 < alpha_lo <= alpha_hi < inf")
        if not (self.mu_hi > 0 and self.lipschitz > 0):
            raise CoefficientError("mu_hi and lipschitz must be positive")

    @property
    def spatially_continuous(self) -> bool:
        return bool(self.sigma.spatially_continuous)

    @property
    def sigma_depends_on_T(self) -> bool:
        return bool(self.sigma.depends_on_T)

    @property
    def alpha_depends_on_T(self) -> bool:
        return bool(self.alpha.depends_on_T)

    @property
    def alpha_band(self) -> tuple[float, float]:
        if self.sign_case == POSITIVE:
            return self.alpha_lo, self.alpha_hi
        return -self.alpha_hi, -self.alpha_lo

    def describe(self) -> dict:
        return {
            "sigma": self.sigma.params(),
            "alpha": self.alpha.params(),
            "sigma_lo": self.sigma_lo,
            "sigma_hi": self.sigma_hi,
            "alpha_lo": self.alpha_lo,
            "alpha_hi": self.alpha_hi,
            "mu_hi": self.mu_hi,
            "lipschitz": self.lipschitz,
            "sign_case": self.sign_case,
            "spatially_continuous": self.spatially_continuous,
        }


def make_model(sigma, alpha, sign_case: str = POSITIVE, domain: Domain = UNIT_SQUARE,
               **overrides) -> CoefficientModel:
    """Build a model from law objects or law spec dicts.

    Bounds are derived from the built-in laws over ``domain``; any of
    ``sigma_lo, sigma_hi, alpha_lo, alpha_hi, mu_hi, lipschitz`` can be
    overridden (and must be, for user laws).
    """
    if isinstance(sigma, dict):
        sigma = sigma_law(sigma)
    if isinstance(alpha, dict):
        alpha = alpha_law(alpha)
    b = {}
    if hasattr(sigma, "bounds"):
        b["sigma_lo"], b["sigma_hi"] = sigma.bounds(domain)
    if hasattr(alpha, "bounds"):
        b["alpha_lo"], b["alpha_hi"], mu, lip = alpha.bounds(domain)
        # the hypotheses want strictly positive constants; a T-independent
        # law satisfies them for any positive choice
        b["mu_hi"] = mu if mu > 0 else 1e-12
        b["lipschitz"] = lip if lip > 0 else 1e-12
    unknown = set(overrides) - {"sigma_lo", "sigma_hi", "alpha_lo", "alpha_hi", "mu_hi", "lipschitz"}
    if unknown:
        raise CoefficientError(f"unknown bound override(s) {sorted(unknown)}")
    b.update({k: float(v) for k, v in overrides.items() if v is not None})
    missing = {"sigma_lo", "sigma_hi", "alpha_lo", "alpha_hi", "mu_hi", "lipschitz"} - set(b)
    if missing:
        raise CoefficientError(f"bounds {sorted(missing)} must be given for user laws")
    return CoefficientModel(sigma=sigma, alpha=alpha, sign_case=sign_case, **b)


def eval_sigma(model: CoefficientModel, x, T) -> np.ndarray:
    """Conductivity clamped into ``[sigma_lo, sigma_hi]``."""
    raw = model.sigma(x, T)
    out = np.clip(raw, model.sigma_lo, model.sigma_hi)
    out = np.where(np.isnan(raw), model.sigma_lo, out)
    model.clamps.add("sigma", np.count_nonzero(out != raw))
    return out


def eval_alpha(model: CoefficientModel, x, T) -> np.ndarray:
    raw = model.alpha(x, T)
    lo, hi = model.alpha_band
    out = np.clip(raw, lo, hi)
    model.clamps.add("alpha", np.count_nonzero(out != raw))
    return out


def alphat_envelope(mu_hi: float, T) -> np.ndarray:
    T = np.abs(np.asarray(T, dtype=float))
    return np.where(T > 1.0, mu_hi / np.maximum(T, 1.0), mu_hi)


def eval_dalpha(model: CoefficientModel, x, T) -> np.ndarray:
    x, T = _broadcast(x, T)
    raw = model.alpha.dT(x, T)
    env = alphat_envelope(model.mu_hi, T)
    out = np.clip(raw, -env, env)
    model.clamps.add("dalpha", np.count_nonzero(out != raw))
    return out


# ---------------------------------------------------------------------------
# problem data

def _as_source(g) -> Callable:
    if callable(g):
        return g
    value = float(g)
    return lambda x: np.full(len(np.atleast_2d(x)), value)


@dataclass(frozen=True, eq=False)
class ProblemData:
    """Thermal conductivity, heat source, boundary current and its bounds.

    ``h`` holds one value per boundary edge of the mesh the data is used
    with. ``C1_estimate`` is the constant of the trace inequality
    ``|u|_{Sigma}^2 <= C1 (|grad u|^2 + |u|_{Gamma}^2)``; when None it is
    estimated on the mesh when needed.
    """

    k: float
    h: np.ndarray
    h_sharp: float
    h_one: float
    g: Any = 0.0
    C1_estimate: float | None = None
    g_spec: Any = None

    def __post_init__(self):
        h = np.array(self.h, dtype=float)
        h.setflags(write=False)
        object.__setattr__(self, "h", h)
        if self.g_spec is None:
            object.__setattr__(self, "g_spec", self.g if not callable(self.g) else "user")
        object.__setattr__(self, "g", _as_source(self.g))

    def with_k(self, k: float) -> "ProblemData":
        return ProblemData(k=k, h=self.h, h_sharp=self.h_sharp, h_one=self.h_one,
                           g=self.g, C1_estimate=self.C1_estimate, g_spec=self.g_spec)

    def scaled_g(self, factor: float) -> "ProblemData":
        g = self.g
        return ProblemData(k=self.k, h=self.h, h_sharp=self.h_sharp, h_one=self.h_one,
                           g=lambda x: factor * g(x), C1_estimate=self.C1_estimate,
                           g_spec={"scaled": factor, "base": self.g_spec})


def h_total(mesh: TriMesh, h) -> float:
    """``sum_e h_e |e|``, the discrete ``int h ds``."""
    return float(np.dot(np.asarray(h, dtype=float), mesh.edge_lengths))


def is_compatible(mesh: TriMesh, h, rtol: float = 1e-10) -> bool:
    h = np.asarray(h, dtype=float)
    scale = float(np.dot(np.abs(h), mesh.edge_lengths))
    return abs(h_total(mesh, h)) <= rtol * max(scale, 1e-300)


def h_from_spec(mesh: TriMesh, spec: dict) -> np.ndarray:
    """Per-edge boundary current from a side map or a tag map.

    ``{"left": 1, "right": -1}`` (unlisted sides get 0) for rectangles, or
    ``{"Gamma": 1, "Sigma": -0.25}``.
    """
    keys = set(spec)
    if keys <= {GAMMA, SIGMA}:
        return np.where(mesh.edge_gamma, float(spec.get(GAMMA, 0.0)), float(spec.get(SIGMA, 0.0)))
    if keys <= {"left", "right", "bottom", "top"}:
        sides = edge_sides(mesh)
        if any(s is None for s in sides):
            raise CoefficientError("side-based h needs an axis-aligned rectangular mesh")
        return np.array([float(spec.get(s, 0.0)) for s in sides])
    raise CoefficientError(f"h spec keys must be sides or tags, got {sorted(keys)}")


def coercivity_margin(model: CoefficientModel, data: ProblemData, C1: float) -> float:
    """``h1 + min(k, alpha_lo h_sharp) / (C1 alpha_hi)``; coercivity needs > 0."""
    return data.h_one + min(data.k, model.alpha_lo * data.h_sharp) / (C1 * model.alpha_hi)


# ---------------------------------------------------------------------------
# hypothesis validation

@dataclass
class Check:
    name: str
    passed: bool
    detail: str
    witness: Any = None
    required: bool = True

    def as_dict(self):
        return {"name": self.name, "passed": self.passed, "required": self.required,
                "detail": self.detail, "witness": self.witness}


@dataclass
class ValidationReport:
    checks: list[Check]
    lipschitz_estimate: float
    C1_estimate: float
    coercivity_margin: float
    clamp_counts: dict

    @property
    def ok(self) -> bool:
        return all(c.passed for c in self.checks if c.required)

    def failures(self) -> list[Check]:
        return [c for c in self.checks if c.required and not c.passed]

    def __getitem__(self, name) -> Check:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)

    def as_dict(self):
        return {"ok": self.ok, "lipschitz_estimate": self.lipschitz_estimate,
                "C1_estimate": self.C1_estimate, "coercivity_margin": self.coercivity_margin,
                "clamp_counts": dict(self.clamp_counts),
                "checks": [c.as_dict() for c in self.checks]}


def _sample_points(mesh: TriMesh, nsamples: int) -> np.ndarray:
    pts = np.concatenate([mesh.centroids, mesh.edge_midpoints, mesh.vertices])
    if nsamples < len(pts):
        idx = np.unique(np.linspace(0, len(pts) - 1, nsamples).round().astype(int))
        pts = pts[idx]
    return pts


def temperature_samples() -> np.ndarray:
    T = np.arange(-10.0, 11.0)
    extra = np.array([1 - 1e-6, 1 + 1e-6, -1 - 1e-6, -1 + 1e-6])
    return np.unique(np.concatenate([T, extra]))


def _witness(x, T):
    return {"x": [float(x[0]), float(x[1])], "T": float(T)}


def validate_hypotheses(model: CoefficientModel, data: ProblemData, mesh: TriMesh,
                        nsamples: int = 200) -> ValidationReport:
    """Sample every model/data hypothesis and report pass/fail per item.

    Coefficients are evaluated raw (no clamping) on quadrature points times
    the temperatures ``-10..10`` and ``+-1 +- 1e-6``.
    """
    if nsamples < 1:
        raise ValueError("nsamples must be >= 1")
    checks: list[Check] = []
    pts = _sample_points(mesh, nsamples)
    Ts = temperature_samples()
    X = np.repeat(pts, len(Ts), axis=0)
    TT = np.tile(Ts, len(pts))

    checks.append(Check("k-positive", bool(np.isfinite(data.k) and data.k > 0),
                        f"k = {data.k!r} must be a positive constant"))

    s = model.sigma(X, TT)
    bad = np.flatnonzero(~((s >= model.sigma_lo) & (s <= model.sigma_hi)))
    checks.append(Check(
        "sigma-bounds", len(bad) == 0,
        f"sigma within [{model.sigma_lo}, {model.sigma_hi}] on {len(s)} samples"
        + ("" if model.spatially_continuous else " (discontinuous in x: measurability and bounds only)"),
        None if not len(bad) else _witness(X[bad[0]], TT[bad[0]]) | {"value": float(s[bad[0]])}))

    total = h_total(mesh, data.h)
    scale = float(np.dot(np.abs(data.h), mesh.edge_lengths))
    gv = data.g(pts)
    checks.append(Check(
        "current-compatibility", is_compatible(mesh, data.h) and bool(np.all(np.isfinite(gv))),
        f"compatibility condition: integral of h over the boundary = {total:.3e} "
        f"(tolerance {1e-10 * scale:.1e}); g finite",
        {"integral_h": total}))

    a = model.alpha(X, TT)
    lo, hi = model.alpha_band
    bad = np.flatnonzero(~((a >= lo) & (a <= hi)))
    checks.append(Check(
        "alpha-band", len(bad) == 0,
        f"alpha within [{lo}, {hi}] ({model.sign_case} Seebeck coefficient)",
        None if not len(bad) else _witness(X[bad[0]], TT[bad[0]]) | {"value": float(a[bad[0]])}))

    da = model.alpha.dT(X, TT)
    env = alphat_envelope(model.mu_hi, TT)
    bad = np.flatnonzero(np.abs(da) > env * (1 + 1e-12))
    checks.append(Check(
        "alpha-derivative-envelope", len(bad) == 0,
        f"|dalpha/dT| <= mu_hi min(1, 1/|T|) with mu_hi = {model.mu_hi} (sampled pass only)",
        None if not len(bad) else _witness(X[bad[0]], TT[bad[0]]) | {"value": float(da[bad[0]])}))

    step = 1e-6
    fd = (model.alpha(X, TT + step) - model.alpha(X, TT - step)) / (2 * step)
    err = np.abs(fd - da)
    worst = int(np.argmax(err))
    checks.append(Check(
        "alpha-derivative-consistency", bool(err[worst] <= 1e-6),
        f"central difference of alpha matches dalpha/dT, max error {err[worst]:.2e}",
        _witness(X[worst], TT[worst])))

    # Lipschitz lower bound from difference quotients between neighbours
    A = a.reshape(len(pts), len(Ts))
    q = [np.abs(np.diff(A, axis=1)) / np.diff(Ts)[None, :]]
    if len(pts) > 1:
        dx = np.hypot(*np.diff(pts, axis=0).T)
        ok = dx > 0
        q.append(np.abs(np.diff(A, axis=0))[ok] / dx[ok, None])
    lip_est = float(max(np.max(v) if v.size else 0.0 for v in q))
    checks.append(Check(
        "alpha-lipschitz", lip_est <= model.lipschitz * (1 + 1e-9),
        f"sampled Lipschitz lower bound {lip_est:.4g} vs declared {model.lipschitz:.4g}",
        {"estimate": lip_est}))

    g_mask = mesh.edge_gamma
    h = data.h
    if model.sign_case == POSITIVE:
        ok_g = h[g_mask] >= data.h_sharp
        ok_s = h[~g_mask] >= data.h_one
        rule = f"h >= {data.h_sharp} on Gamma and h >= {data.h_one} on Sigma"
    else:
        ok_g = h[g_mask] <= -data.h_sharp
        ok_s = h[~g_mask] <= -data.h_one
        rule = f"h <= {-data.h_sharp} on Gamma and h <= {-data.h_one} on Sigma"
    witness = None
    if not ok_g.all():
        witness = {"edge": int(np.flatnonzero(g_mask)[np.argmin(ok_g)]), "tag": GAMMA}
    elif not ok_s.all():
        witness = {"edge": int(np.flatnonzero(~g_mask)[np.argmin(ok_s)]), "tag": SIGMA}
    checks.append(Check("current-bounds", bool(ok_g.all() and ok_s.all() and data.h_sharp > 0 and data.h_one < 0),
                        rule + "; h_sharp > 0 > h_one", witness))

    C1 = data.C1_estimate
    if C1 is None:
        from .diagnostics import estimate_trace_constants
        C1 = estimate_trace_constants(mesh).C1
    margin = coercivity_margin(model, data, C1)
    gam, sig = boundary_measure(mesh, GAMMA), boundary_measure(mesh, SIGMA)
    checks.append(Check(
        "coercivity-margin", margin > 0,
        f"h_one + min(k, alpha_lo h_sharp)/(C1 alpha_hi) = {margin:.4g} with C1 = {C1:.4g}; "
        "advisory: with int h ds = 0 and |Sigma| <= C1 |Gamma| this margin cannot be positive",
        {"margin": margin, "C1": C1}, required=False))
    checks.append(Check(
        "trace-constant", sig <= C1 * gam * (1 + 1e-12),
        f"|Sigma| = {sig:.4g} <= C1 |Gamma| = {C1 * gam:.4g}", required=False))

    return ValidationReport(checks, lip_est, float(C1), float(margin), dict(model.clamps.counts))
