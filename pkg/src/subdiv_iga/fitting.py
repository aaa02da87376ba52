"""Control-mesh construction: evaluation operators, interpolation and
least-squares fitting, and the built-in plate, cylinder and hemisphere
generators.
"""

from __future__ import annotations

import logging

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import basis_table, boundary_cubic_table, cubic_table
from .mesh import ControlMesh, ElementPatch, MeshError, PatchKind, classify_elements
from .quadrature import gauss_2d
from .subdivision import limit_point_weights, subdivide_mesh

log = logging.getLogger(__name__)

_CORNER_XI = ((0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0))


class FittingError(RuntimeError):
    pass


# -- evaluation operator ----------------------------------------------------------

def _patch_rows(patch: ElementPatch, pts: np.ndarray) -> np.ndarray:
    """Basis values of ``patch`` at ``pts`` with the EV corner handled."""
    pts = np.atleast_2d(np.asarray(pts, dtype=float))
    if patch.kind != PatchKind.IRREGULAR:
        return basis_table(patch.kind, None, pts)[0]
    at_ev = np.all(pts == 0.0, axis=1)
    out = np.empty((len(pts), patch.n_basis))
    if np.any(at_ev):
        out[at_ev] = limit_point_weights(patch.valence)
    if np.any(~at_ev):
        out[~at_ev] = basis_table(patch.kind, patch.valence, pts[~at_ev])[0]
    return out


def build_evaluation_operator(mesh: ControlMesh, samples) -> sp.csr_matrix:
    """Sparse ``L`` with ``L @ mesh.vertices`` = limit points at ``samples``.

    ``samples`` is a sequence of ``(patch, xi)`` pairs.
    """
    rows, cols, vals = [], [], []
    by_patch: dict = {}
    for i, (patch, xi) in enumerate(samples):
        by_patch.setdefault(patch.face, (patch, [], []))
        by_patch[patch.face][1].append(i)
        by_patch[patch.face][2].append(xi)
    for patch, ids, xis in by_patch.values():
        pts = np.asarray(xis, dtype=float)
        if np.any(pts < 0.0) or np.any(pts > 1.0):
            raise ValueError(f"element {patch.face}: sample outside [0, 1]^2")
        tab = _patch_rows(patch, pts)
        idx = np.asarray(patch.indices)
        for r, i in enumerate(ids):
            rows.extend([i] * len(idx))
            cols.extend(idx.tolist())
            vals.extend(tab[r].tolist())
    return sp.csr_matrix((vals, (rows, cols)), shape=(len(samples), mesh.n_vertices))


def vertex_samples(mesh: ControlMesh, patches) -> list:
    """One sample per control vertex, located at that vertex's element corner.

    A non-irregular element is preferred so that EV-adjacent vertices are
    sampled through an ordinary tensor-product patch where possible.
    """
    best: dict = {}
    for patch in patches:
        quad = mesh.faces[patch.face]
        for c in range(4):
            v = int(quad[(patch.rotation + c) % 4])
            rank = 1 if patch.kind == PatchKind.IRREGULAR else 0
            if v not in best or rank < best[v][0]:
                best[v] = (rank, patch, _CORNER_XI[c])
    if len(best) != mesh.n_vertices:
        raise FittingError("some control vertices are not element corners")
    return [(best[v][1], best[v][2]) for v in range(mesh.n_vertices)]


def gauss_samples(patches, q: int = 2) -> list:
    pts = gauss_2d(q).points
    return [(p, tuple(x)) for p in patches for x in pts]


# -- solves -----------------------------------------------------------------------

def fit_interpolate(L, S) -> np.ndarray:
    """Solve ``L P = S`` for a square evaluation operator."""
    L = sp.csc_matrix(L)
    if L.shape[0] != L.shape[1]:
        raise ValueError(f"interpolation needs a square operator, got {L.shape}")
    try:
        lu = spla.splu(L)
    except RuntimeError as exc:
        raise FittingError(f"singular evaluation operator: {exc}") from None
    P = lu.solve(np.asarray(S, dtype=float))
    if not np.all(np.isfinite(P)):
        raise FittingError("singular evaluation operator")
    return P


def fit_least_squares(L, S) -> np.ndarray:
    """Normal-equation solution of ``min ||S - L P||``."""
    L = sp.csr_matrix(L)
    if L.shape[0] < L.shape[1]:
        raise ValueError("least squares needs at least as many samples as unknowns")
    N = (L.T @ L).tocsc()
    rhs = L.T @ np.asarray(S, dtype=float)
    try:
        lu = spla.splu(N)
    except RuntimeError as exc:
        raise FittingError(f"rank-deficient normal equations: {exc}") from None
    P = lu.solve(rhs)
    if not np.all(np.isfinite(P)):
        raise FittingError("rank-deficient normal equations")
    return P


# -- surface fitting --------------------------------------------------------------

def corner_targets(mesh: ControlMesh, samples, project) -> np.ndarray:
    """Project the bilinear blend of each sample element's corners."""
    out = np.empty((len(samples), 3))
    for i, (patch, (s, t)) in enumerate(samples):
        quad = mesh.faces[patch.face]
        c = [mesh.vertices[quad[(patch.rotation + j) % 4]] for j in range(4)]
        out[i] = ((1 - s) * (1 - t) * c[0] + s * (1 - t) * c[1]
                  + s * t * c[2] + (1 - s) * t * c[3])
    return project(out)


def fit_surface(mesh: ControlMesh, project, q: int = 2) -> ControlMesh:
    """Least-squares fit of ``mesh``'s limit surface to a target surface.

    ``mesh.vertices`` act as a reference polyhedron: sample targets are the
    projections (through ``project``) of bilinear points on its faces.
    """
    patches = classify_elements(mesh)
    samples = vertex_samples(mesh, patches) + gauss_samples(patches, q)
    L = build_evaluation_operator(mesh, samples)
    S = corner_targets(mesh, samples, project)
    return mesh.with_vertices(fit_least_squares(L, S))


# -- curves -----------------------------------------------------------------------

def curve_eval_matrix(n_ctrl: int, params) -> np.ndarray:
    """Dense evaluation matrix of the open limit curve with end interpolation.

    The curve has ``n_ctrl - 1`` unit elements mapped onto ``t in [0, 1]``.
    """
    if n_ctrl < 3:
        raise ValueError("an open curve needs at least 3 control points")
    t = np.clip(np.asarray(params, dtype=float), 0.0, 1.0)
    ne = n_ctrl - 1
    e = np.minimum((t * ne).astype(int), ne - 1)
    xi = t * ne - e
    M = np.zeros((len(t), n_ctrl))
    v, _ = cubic_table(xi)
    vb, _ = boundary_cubic_table(xi)
    vr, _ = boundary_cubic_table(1.0 - xi)
    for r in range(len(t)):
        if e[r] == 0:
            M[r, 0:3] += vb[r]
        if e[r] == ne - 1:
            M[r, ne - 2:ne + 1] += vr[r][::-1]
        if 0 < e[r] < ne - 1:
            M[r, e[r] - 1:e[r] + 3] = v[r]
    return M


def fit_curve(x_samples, y_samples) -> np.ndarray:
    """Interpolating control polygon through equally spaced samples."""
    x = np.asarray(x_samples, dtype=float)
    pts = np.column_stack([x, np.asarray(y_samples, dtype=float)])
    L = curve_eval_matrix(len(x), np.linspace(0.0, 1.0, len(x)))
    return fit_interpolate(sp.csr_matrix(L), pts)


def sine_fit_deviation(n_samples: int, n_check: int = 2001) -> float:
    """Max vertical gap between the fitted limit curve and ``sin(4 pi x)``."""
    x = np.linspace(0.0, 1.0, n_samples)
    P = fit_curve(x, np.sin(4 * np.pi * x))
    C = curve_eval_matrix(n_samples, np.linspace(0.0, 1.0, n_check)) @ P
    return float(np.max(np.abs(C[:, 1] - np.sin(4 * np.pi * C[:, 0]))))


# -- topology helpers -------------------------------------------------------------

def grid_faces(nx: int, ny: int, periodic_x: bool = False) -> np.ndarray:
    """Faces of an ``nx x ny`` grid with vertex ``(i, j)`` at ``j*mx + i``."""
    mx = nx if periodic_x else nx + 1
    faces = []
    for j in range(ny):
        for i in range(nx):
            i1 = (i + 1) % mx
            faces.append((j * mx + i, j * mx + i1, (j + 1) * mx + i1, (j + 1) * mx + i))
    return np.array(faces, dtype=np.int64)


def vertex_split(mesh: ControlMesh, v: int, b: int, t: float = 1.0 / 3.0) -> ControlMesh:
    """Split an interior valence-4 vertex ``v`` across its edge to ``b``.

    ``v`` is replaced by two valence-3 vertices and a new quad is inserted
    between them; ``b`` and the opposite neighbour ``d`` gain one face.
    """
    if mesh.on_boundary[v] or mesh.valence[v] != 4:
        raise MeshError(f"vertex {v} is not an interior valence-4 vertex")
    ring = []  # (face, position of v) in counter-clockwise order from b
    start = next(f for f in mesh.vertex_faces[v]
                 if mesh.faces[f][(list(mesh.faces[f]).index(v) + 1) % 4] == b)
    f = start
    for _ in range(4):
        p = list(mesh.faces[f]).index(v)
        ring.append((f, p))
        prev = mesh.faces[f][(p + 3) % 4]
        f = mesh.halfedges[(v, prev)][0]
    (f0, p0), (f1, p1), (f2, p2), (f3, p3) = ring
    x = mesh.faces[f0][(p0 + 3) % 4]
    d = mesh.faces[f1][(p1 + 3) % 4]
    y = mesh.faces[f2][(p2 + 3) % 4]
    V = mesh.vertices
    a_pos = V[v] + t * (V[x] - V[v])
    c_pos = V[v] + t * (V[y] - V[v])
    a = v
    c = mesh.n_vertices
    verts = np.vstack([V.copy(), c_pos])
    verts[a] = a_pos
    faces = mesh.faces.copy()
    for f, p in ((f2, p2), (f3, p3)):
        faces[f, p] = c
    faces = np.vstack([faces, [(a, d, c, b)]])
    return ControlMesh(verts, faces)


# -- plate --------------------------------------------------------------------------

def generate_plate(n: int = 4, size: float = 2.0) -> ControlMesh:
    """Flat ``n x n`` grid on ``[0, size]^2`` (plate Mesh 1)."""
    if n < 3:
        raise ValueError("plate needs at least 3 elements per side")
    g = np.linspace(0.0, size, n + 1)
    X, Y = np.meshgrid(g, g, indexing="xy")
    V = np.column_stack([X.ravel(), Y.ravel(), np.zeros(X.size)])
    return ControlMesh(V, grid_faces(n, n))


def generate_plate_ev(size: float = 2.0) -> ControlMesh:
    """Flat plate with four interior EVs (two of valence 3, two of valence 5).

    A 4 x 4 grid has its centre vertex split, then one refinement separates
    the EVs, giving 68 elements.
    """
    m = generate_plate(4, size)
    centre = 2 * 5 + 2
    m = vertex_split(m, centre, centre + 1)
    return subdivide_mesh(m)


# -- cylinder -----------------------------------------------------------------------

CYLINDER_RADIUS = 1.0
CYLINDER_LENGTH = 2.0


def cylinder_reference(n_around: int = 8, n_along: int = 8,
                       radius: float = CYLINDER_RADIUS,
                       length: float = CYLINDER_LENGTH) -> ControlMesh:
    """Periodic grid on a cylinder around the x1 axis, centred at the origin.

    The ends are the circles ``x1 = -length/2`` and ``x1 = length/2``.
    """
    th = 2 * np.pi * np.arange(n_around) / n_around
    z = np.linspace(-0.5 * length, 0.5 * length, n_along + 1)
    V = np.array([(h, radius * np.cos(a), radius * np.sin(a)) for h in z for a in th])
    return ControlMesh(V, grid_faces(n_around, n_along, periodic_x=True))


def cylinder_projector(radius: float = CYLINDER_RADIUS):
    def project(p):
        p = np.array(p, dtype=float, copy=True)
        r = np.hypot(p[:, 1], p[:, 2])
        p[:, 1:] *= (radius / r)[:, None]
        return p
    return project


def cylinder_topology(variant: str, n_around: int = 8, n_along: int = 8,
                      radius: float = CYLINDER_RADIUS,
                      length: float = CYLINDER_LENGTH) -> ControlMesh:
    """Level-0 reference mesh for ``variant`` in {regular, 4ev, 7ev}.

    The regular variant is subdivided once (256 elements); the EV variants
    insert vertex splits mid-cylinder and are subdivided once (260 and 264
    elements), which keeps every element to a single EV.
    """
    m = cylinder_reference(n_around, n_along, radius, length)
    row = n_along // 2
    vid = lambda i, j: j * n_around + (i % n_around)  # noqa: E731
    if variant == "regular":
        pass
    elif variant == "4ev":
        m = vertex_split(m, vid(0, row), vid(1, row))
    elif variant == "7ev":
        b = vid(0, row)
        m = vertex_split(m, vid(1, row), b)
        m = vertex_split(m, vid(-1, row), b)
    else:
        raise ValueError(f"unknown cylinder variant {variant!r}")
    return subdivide_mesh(m)


def generate_cylinder(variant: str = "regular", level: int = 0, q: int = 2,
                      radius: float = CYLINDER_RADIUS,
                      length: float = CYLINDER_LENGTH) -> ControlMesh:
    """Cylinder control mesh fitted by least squares at refinement ``level``."""
    ref = subdivide_mesh(cylinder_topology(variant, radius=radius, length=length),
                         level)
    return fit_surface(ref, cylinder_projector(radius), q)


# -- hemisphere ---------------------------------------------------------------------

def hemisphere_reference(n: int = 4) -> ControlMesh:
    """Open cube-map box: a top ``n x n`` grid and four ``n x n`` side grids.

    Vertices lie on the unit sphere (equiangular cube map, upper half).  The
    four top cube corners are valence-3 EVs and the equator is the boundary.
    """
    if n < 2:
        raise ValueError("hemisphere grid needs n >= 2")
    ang = np.tan(np.linspace(-np.pi / 4, np.pi / 4, n + 1))
    verts, index = [], {}

    def add(key, p):
        if key not in index:
            index[key] = len(verts)
            verts.append(p)
        return index[key]

    # top face z = 1, grid (i, j)
    for j in range(n + 1):
        for i in range(n + 1):
            add(("top", i, j), (ang[i], ang[j], 1.0))
    # side ring: walk the top-face boundary counter-clockwise
    ring = ([(i, 0) for i in range(n)] + [(n, j) for j in range(n)]
            + [(i, n) for i in range(n, 0, -1)] + [(0, j) for j in range(n, 0, -1)])
    heights = np.tan(np.linspace(np.pi / 4, 0.0, n + 1))
    m = len(ring)
    for r in range(1, n + 1):
        for s, (i, j) in enumerate(ring):
            x, y = ang[i], ang[j]
            # push the top-edge point outwards onto the side face of the cube
            sx = 1.0 if i == n else (-1.0 if i == 0 else x)
            sy = 1.0 if j == n else (-1.0 if j == 0 else y)
            add(("side", s, r), (sx, sy, heights[r]))
    faces = []
    for j in range(n):
        for i in range(n):
            faces.append((index[("top", i, j)], index[("top", i + 1, j)],
                          index[("top", i + 1, j + 1)], index[("top", i, j + 1)]))

    def side(s, r):
        if r == 0:
            return index[("top",) + ring[s % m]]
        return index[("side", s % m, r)]

    for r in range(n):
        for s in range(m):
            faces.append((side(s, r + 1), side(s + 1, r + 1), side(s + 1, r), side(s, r)))
    V = np.array(verts, dtype=float)
    V /= np.linalg.norm(V, axis=1)[:, None]
    return ControlMesh(V, np.array(faces, dtype=np.int64))


def sphere_projector(radius: float = 1.0):
    def project(p):
        p = np.asarray(p, dtype=float)
        return radius * p / np.linalg.norm(p, axis=1)[:, None]
    return project


def generate_hemisphere(level: int = 0, q: int = 2, refit: bool = False) -> ControlMesh:
    """Hemisphere control mesh.

    By default the level-0 mesh is fitted once and refined by subdivision, so
    every level describes the same limit surface.  With ``refit`` each level
    is fitted afresh to the unit sphere.
    """
    ref = hemisphere_reference()
    if refit:
        return fit_surface(subdivide_mesh(ref, level), sphere_projector(), q)
    return subdivide_mesh(fit_surface(ref, sphere_projector(), q), level)
