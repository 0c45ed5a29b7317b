"""Triangulated 2D domains with a Gamma/Sigma boundary partition.

Meshes are linear (P1) triangulations of convex polygons. Every boundary
edge carries one of two tags: ``GAMMA`` (where the boundary current is
bounded below by a positive constant) or ``SIGMA`` (the rest of the
boundary).

Text format read by :func:`load_mesh` and written by :func:`save_mesh`::

    nv nt ne
    x y            # nv lines
    i j k          # nt lines, 0-based vertex indices
    a b TAG        # ne lines, TAG in {G, S}

Whitespace separated; ``#`` starts a comment.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np
from scipy.spatial import cKDTree

GAMMA = "Gamma"
SIGMA = "Sigma"
ALL = "All"

SIDES = ("left", "right", "bottom", "top")


class MeshError(ValueError):
    """Raised when a mesh violates one of the TriMesh invariants."""


class MeshFormatError(MeshError):
    """Parse or validation failure while reading a mesh file."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Immutable P1 triangulation with tagged boundary edges.

    ``edge_gamma[e]`` is True when boundary edge ``e`` belongs to Gamma.
    Boundary edges are stored oriented so that the domain lies to their
    left, which makes ``(dy, -dx)`` the outward normal direction.
    """

    vertices: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    edge_gamma: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=float)
        t = np.asarray(self.triangles, dtype=np.int64)
        e = np.asarray(self.boundary_edges, dtype=np.int64)
        g = np.asarray(self.edge_gamma, dtype=bool)
        if v.ndim != 2 or v.shape[1] != 2:
            raise MeshError("vertices must have shape (nv, 2)")
        if t.ndim != 2 or t.shape[1] != 3 or len(t) == 0:
            raise MeshError("triangles must have shape (nt, 3) with nt >= 1")
        if e.ndim != 2 or e.shape[1] != 2:
            raise MeshError("boundary_edges must have shape (ne, 2)")
        if g.shape != (len(e),):
            raise MeshError("edge_gamma must hold one flag per boundary edge")
        object.__setattr__(self, "vertices", _readonly(v))
        object.__setattr__(self, "triangles", _readonly(t))
        object.__setattr__(self, "boundary_edges", _readonly(e))
        object.__setattr__(self, "edge_gamma", _readonly(g))
        self._validate()

    # -- sizes ---------------------------------------------------------
    @property
    def nv(self) -> int:
        return len(self.vertices)

    @property
    def nt(self) -> int:
        return len(self.triangles)

    @property
    def ne(self) -> int:
        return len(self.boundary_edges)

    # -- geometry ------------------------------------------------------
    @cached_property
    def signed_areas(self) -> np.ndarray:
        p = self.vertices[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return _readonly(0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]))

    @property
    def areas(self) -> np.ndarray:
        return self.signed_areas

    @cached_property
    def centroids(self) -> np.ndarray:
        return _readonly(self.vertices[self.triangles].mean(axis=1))

    @cached_property
    def basis_gradients(self) -> np.ndarray:
        """Constant gradients of the three barycentric functions, shape (nt, 3, 2)."""
        p = self.vertices[self.triangles]
        x, y = p[..., 0], p[..., 1]
        two_a = 2.0 * self.signed_areas
        gx = np.stack([y[:, 1] - y[:, 2], y[:, 2] - y[:, 0], y[:, 0] - y[:, 1]], axis=1)
        gy = np.stack([x[:, 2] - x[:, 1], x[:, 0] - x[:, 2], x[:, 1] - x[:, 0]], axis=1)
        return _readonly(np.stack([gx, gy], axis=2) / two_a[:, None, None])

    @cached_property
    def edge_lengths(self) -> np.ndarray:
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        return _readonly(np.hypot(d[:, 0], d[:, 1]))

    @cached_property
    def edge_midpoints(self) -> np.ndarray:
        return _readonly(self.vertices[self.boundary_edges].mean(axis=1))

    @cached_property
    def edge_normals(self) -> np.ndarray:
        d = self.vertices[self.boundary_edges[:, 1]] - self.vertices[self.boundary_edges[:, 0]]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        return _readonly(n / self.edge_lengths[:, None])

    @cached_property
    def boundary_vertices(self) -> np.ndarray:
        return _readonly(np.unique(self.boundary_edges))

    def edge_mask(self, tag: str) -> np.ndarray:
        if tag == GAMMA:
            return np.asarray(self.edge_gamma)
        if tag == SIGMA:
            return ~self.edge_gamma
        if tag == ALL:
            return np.ones(self.ne, dtype=bool)
        raise ValueError(f"unknown boundary tag {tag!r}")

    @property
    def h_max(self) -> float:
        """Longest triangle edge."""
        p = self.vertices[self.triangles]
        lens = [np.hypot(*(p[:, (a + 1) % 3] - p[:, a]).T) for a in range(3)]
        return float(np.max(lens))

    # -- invariants ----------------------------------------------------
    def _validate(self):
        nv = self.nv
        t, e = self.triangles, self.boundary_edges
        if t.min() < 0 or t.max() >= nv:
            raise MeshError("triangle vertex index out of range")
        if len(e) and (e.min() < 0 or e.max() >= nv):
            raise MeshError("boundary edge vertex index out of range")

        bad = np.flatnonzero(self.signed_areas <= 0.0)
        if len(bad):
            raise MeshError(f"triangle {int(bad[0])} has non-positive signed area")

        span = float(np.ptp(self.vertices, axis=0).max())
        pairs = cKDTree(self.vertices).query_pairs(r=1e-12 * max(span, 1e-300))
        if pairs:
            i, j = sorted(pairs)[0]
            raise MeshError(f"duplicate vertices {i} and {j}")

        # topological boundary: triangle edges owned by exactly one triangle
        local = np.concatenate([t[:, [0, 1]], t[:, [1, 2]], t[:, [2, 0]]])
        key = np.sort(local, axis=1)
        uniq, inv, counts = np.unique(key, axis=0, return_inverse=True, return_counts=True)
        if counts.max() > 2:
            raise MeshError("non-manifold edge shared by more than two triangles")
        topo = {tuple(r) for r in uniq[counts == 1]}
        listed = [tuple(sorted(r)) for r in e.tolist()]
        if len(set(listed)) != len(listed):
            raise MeshError("boundary edge listed twice")
        if set(listed) != topo:
            if set(listed) - topo:
                raise MeshError("listed boundary edge is not on the topological boundary")
            raise MeshError("open boundary loop: boundary edges do not cover the boundary")

        # one closed loop
        adj: dict[int, list[int]] = {}
        for a, b in e.tolist():
            adj.setdefault(a, []).append(b)
            adj.setdefault(b, []).append(a)
        if any(len(n) != 2 for n in adj.values()):
            raise MeshError("open boundary loop: boundary vertex without two boundary edges")
        start = e[0, 0]
        seen, prev, cur = 1, -1, int(start)
        nxt = adj[cur][0]
        while nxt != start:
            prev, cur = cur, nxt
            a, b = adj[cur]
            nxt = b if a == prev else a
            seen += 1
            if seen > len(e):
                break
        if seen != len(e):
            raise MeshError("boundary edges form more than one loop")

        if not np.all(np.isin(e, t)):
            raise MeshError("boundary edge references a vertex not in any triangle")
        if self.edge_lengths[self.edge_gamma].sum() <= 0.0:
            raise MeshError("meas(Gamma) must be positive")
        if self.edge_lengths[~self.edge_gamma].sum() <= 0.0:
            raise MeshError("meas(Sigma) must be positive")


def _orient_edges(vertices, triangles, edges):
    """Orient each boundary edge along its owning triangle's ccw traversal."""
    directed = {}
    for tri in triangles.tolist():
        for a in range(3):
            i, j = tri[a], tri[(a + 1) % 3]
            directed[(i, j)] = True
    out = np.array(edges, dtype=np.int64).reshape(-1, 2)
    for r, (a, b) in enumerate(out.tolist()):
        if (a, b) not in directed and (b, a) in directed:
            out[r] = (b, a)
    return out


def boundary_measure(mesh: TriMesh, tag: str = ALL) -> float:
    """Total length of the boundary edges carrying ``tag`` (Gamma, Sigma or All)."""
    return float(mesh.edge_lengths[mesh.edge_mask(tag)].sum())


def _parse_gamma_spec(gamma_spec) -> frozenset[str]:
    if isinstance(gamma_spec, str):
        parts = [p.strip() for p in gamma_spec.replace(",", "+").split("+") if p.strip()]
    else:
        parts = list(gamma_spec)
    sides = frozenset(parts)
    unknown = sides - set(SIDES)
    if unknown:
        raise MeshError(f"unknown side(s) {sorted(unknown)}; expected a subset of {SIDES}")
    if not sides:
        raise MeshError("gamma_spec is empty: meas(Gamma) would be zero")
    if sides == set(SIDES):
        raise MeshError("gamma_spec covers all four sides: meas(Sigma) would be zero")
    return sides


def generate_rect_mesh(nx: int, ny: int, gamma_spec: str | Iterable[str]) -> TriMesh:
    """Structured triangulation of the unit square.

    Cell ``(i, j)`` is split along its main diagonal when ``i + j`` is even
    and along the anti-diagonal otherwise, so refinements by 2 are nested.
    Vertices are numbered row-major (``j * (nx + 1) + i``).
    """
    if int(nx) < 1 or int(ny) < 1:
        raise MeshError("nx and ny must be positive")
    nx, ny = int(nx), int(ny)
    sides = _parse_gamma_spec(gamma_spec)

    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    X, Y = np.meshgrid(xs, ys)
    vertices = np.column_stack([X.ravel(), Y.ravel()])

    def vid(i, j):
        return j * (nx + 1) + i

    tris = []
    for j in range(ny):
        for i in range(nx):
            v00, v10, v01, v11 = vid(i, j), vid(i + 1, j), vid(i, j + 1), vid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                tris += [(v00, v10, v11), (v00, v11, v01)]
            else:
                tris += [(v00, v10, v01), (v10, v11, v01)]

    edges, gamma = [], []
    for i in range(nx):  # bottom, left to right
        edges.append((vid(i, 0), vid(i + 1, 0)))
        gamma.append("bottom" in sides)
    for j in range(ny):  # right, upwards
        edges.append((vid(nx, j), vid(nx, j + 1)))
        gamma.append("right" in sides)
    for i in range(nx, 0, -1):  # top, right to left
        edges.append((vid(i, ny), vid(i - 1, ny)))
        gamma.append("top" in sides)
    for j in range(ny, 0, -1):  # left, downwards
        edges.append((vid(0, j), vid(0, j - 1)))
        gamma.append("left" in sides)

    return TriMesh(vertices, np.array(tris), np.array(edges), np.array(gamma))


def edge_sides(mesh: TriMesh, tol: float = 1e-12) -> list[str | None]:
    """Classify boundary edges of an axis-aligned rectangle by side.

    Edges not lying on one of the bounding-box sides map to None.
    """
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    tol = tol * max(float(np.max(hi - lo)), 1.0)
    out: list[str | None] = []
    for a, b in mesh.boundary_edges.tolist():
        pa, pb = mesh.vertices[a], mesh.vertices[b]
        if abs(pa[0] - lo[0]) <= tol and abs(pb[0] - lo[0]) <= tol:
            out.append("left")
        elif abs(pa[0] - hi[0]) <= tol and abs(pb[0] - hi[0]) <= tol:
            out.append("right")
        elif abs(pa[1] - lo[1]) <= tol and abs(pb[1] - lo[1]) <= tol:
            out.append("bottom")
        elif abs(pa[1] - hi[1]) <= tol and abs(pb[1] - hi[1]) <= tol:
            out.append("top")
        else:
            out.append(None)
    return out


def _data_lines(text: str):
    for lineno, raw in enumerate(text.splitlines(), start=1):
        body = raw.split("#", 1)[0].split()
        if body:
            yield lineno, body


def load_mesh(path: str | Path) -> TriMesh:
    """Read a mesh in the text format described in the module docstring.

    Clockwise triangles are reoriented. Convexity of the domain is not
    checked; loaded meshes are trusted on that point.
    """
    text = Path(path).read_text()
    lines = list(_data_lines(text))
    if not lines:
        raise MeshFormatError("empty mesh file")
    lineno, head = lines[0]
    if len(head) != 3:
        raise MeshFormatError("header must be 'nv nt ne'", lineno)
    try:
        nv, nt, ne = (int(s) for s in head)
    except ValueError:
        raise MeshFormatError("header counts must be integers", lineno) from None
    if nv < 3 or nt < 1 or ne < 3:
        raise MeshFormatError("header counts too small for a triangulation", lineno)
    body = lines[1:]
    if len(body) != nv + nt + ne:
        last = body[-1][0] if body else lineno
        raise MeshFormatError(
            f"expected {nv + nt + ne} data lines after the header, found {len(body)}", last
        )

    vertices = np.empty((nv, 2))
    for r, (ln, tok) in enumerate(body[:nv]):
        if len(tok) != 2:
            raise MeshFormatError("vertex line needs 'x y'", ln)
        try:
            vertices[r] = [float(tok[0]), float(tok[1])]
        except ValueError:
            raise MeshFormatError("vertex coordinates must be numbers", ln) from None
        if not np.all(np.isfinite(vertices[r])):
            raise MeshFormatError("vertex coordinates must be finite", ln)

    tris = np.empty((nt, 3), dtype=np.int64)
    for r, (ln, tok) in enumerate(body[nv:nv + nt]):
        if len(tok) != 3:
            raise MeshFormatError("triangle line needs 'i j k'", ln)
        try:
            idx = [int(s) for s in tok]
        except ValueError:
            raise MeshFormatError("triangle indices must be integers", ln) from None
        for i in idx:
            if not 0 <= i < nv:
                raise MeshFormatError(f"vertex index {i} out of range [0, {nv})", ln)
        if len(set(idx)) != 3:
            raise MeshFormatError("triangle repeats a vertex", ln)
        p = vertices[idx]
        area2 = (p[1, 0] - p[0, 0]) * (p[2, 1] - p[0, 1]) - (p[1, 1] - p[0, 1]) * (p[2, 0] - p[0, 0])
        if area2 == 0.0:
            raise MeshFormatError("zero-area triangle", ln)
        if area2 < 0.0:
            idx = [idx[0], idx[2], idx[1]]
        tris[r] = idx

    edges = np.empty((ne, 2), dtype=np.int64)
    gamma = np.empty(ne, dtype=bool)
    for r, (ln, tok) in enumerate(body[nv + nt:]):
        if len(tok) != 3:
            raise MeshFormatError("boundary edge line needs 'a b TAG'", ln)
        try:
            a, b = int(tok[0]), int(tok[1])
        except ValueError:
            raise MeshFormatError("edge indices must be integers", ln) from None
        for i in (a, b):
            if not 0 <= i < nv:
                raise MeshFormatError(f"vertex index {i} out of range [0, {nv})", ln)
        if tok[2] not in ("G", "S"):
            raise MeshFormatError(f"edge tag must be G or S, got {tok[2]!r}", ln)
        edges[r] = (a, b)
        gamma[r] = tok[2] == "G"

    edges = _orient_edges(vertices, tris, edges)
    try:
        return TriMesh(vertices, tris, edges, gamma)
    except MeshFormatError:
        raise
    except MeshError as exc:
        raise MeshFormatError(str(exc)) from None


def save_mesh(mesh: TriMesh, path: str | Path) -> None:
    rows = [f"{mesh.nv} {mesh.nt} {mesh.ne}"]
    rows += [f"{x:.17g} {y:.17g}" for x, y in mesh.vertices.tolist()]
    rows += [f"{i} {j} {k}" for i, j, k in mesh.triangles.tolist()]
    rows += [
        f"{a} {b} {'G' if g else 'S'}"
        for (a, b), g in zip(mesh.boundary_edges.tolist(), mesh.edge_gamma.tolist())
    ]
    Path(path).write_text("\n".join(rows) + "\n")
