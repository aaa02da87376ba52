"""Quad control meshes: topology, boundary detection, element patches, OBJ I/O.

Local element frame
-------------------
Every element is a quad ``(v0, v1, v2, v3)`` stored counter-clockwise.  An
element frame is a *rotation* ``r`` of that cycle: local corner ``c`` is the
face vertex at position ``(r + c) % 4`` and the corners sit at parametric
coordinates ``(0,0), (1,0), (1,1), (0,1)``.  Local edge ``e`` joins corner
``e`` to corner ``e + 1`` (0 bottom, 1 right, 2 top, 3 left).

Patch orderings
---------------
RegularInterior
    16 vertices, row-major 4x4 grid, ``index = 4*j + i`` with ``i`` along
    xi.  The element corners are grid points (1,1), (2,1), (2,2), (1,2).
BoundaryEdge
    12 vertices, 4 (xi) x 3 (eta) grid.  The boundary edge is eta = 0 and
    grid row ``j = 0`` holds the boundary vertices.
BoundaryCorner
    9 vertices, 3x3 grid.  The boundary edges are eta = 0 and xi = 0 and
    the corner vertex is grid point (0,0).
Irregular
    ``2k + 8`` vertices for valence ``k``.  Index 0 is the extraordinary
    vertex at xi = (0,0); 1..2k walk its one-ring counter-clockwise starting
    with the edge neighbour along +xi (odd = edge neighbours, even = face
    diagonals), so the element is ``(0, 1, 2, 3)``.  Indices 2k+1..2k+7 are
    the outer vertices at lattice positions (2,-1), (2,0), (2,1), (2,2),
    (1,2), (0,2), (-1,2) measured in element units from the EV.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from pathlib import Path

import numpy as np

log = logging.getLogger(__name__)

#: lattice position (x, y) of irregular-patch vertices beyond the one-ring
IRREGULAR_OUTER = ((2, -1), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (-1, 2))


class MeshError(ValueError):
    """Raised for invalid meshes and unsupported element configurations."""


class PatchKind(str, Enum):
    REGULAR = "RegularInterior"
    BOUNDARY_EDGE = "BoundaryEdge"
    BOUNDARY_CORNER = "BoundaryCorner"
    IRREGULAR = "Irregular"


class ControlMesh:
    """Immutable quad control mesh with derived adjacency.

    Parameters
    ----------
    vertices : array_like, shape (n_c, 3)
    faces : array_like of int, shape (n_f, 4)
        Vertex indices of each quad in consistent counter-clockwise order.
    """

    def __init__(self, vertices, faces):
        vertices = np.array(vertices, dtype=float)
        faces = np.array(faces, dtype=np.int64)
        if vertices.ndim != 2 or vertices.shape[1] != 3:
            raise MeshError("vertices must have shape (n, 3)")
        if faces.ndim != 2 or faces.shape[1] != 4:
            raise MeshError("faces must have shape (m, 4)")
        vertices.setflags(write=False)
        faces.setflags(write=False)
        self.vertices = vertices
        self.faces = faces
        self._build_topology()

    # -- construction -----------------------------------------------------

    def _build_topology(self):
        n_v = len(self.vertices)
        quads = self.faces.tolist()
        edge_faces = {}
        for f, quad in enumerate(quads):
            if len(set(quad)) != 4:
                raise MeshError(f"face {f} has repeated vertex indices {quad}")
            if min(quad) < 0 or max(quad) >= n_v:
                raise MeshError(f"face {f} references a vertex out of range")
            for p in range(4):
                a, b = quad[p], quad[(p + 1) % 4]
                edge_faces.setdefault((min(a, b), max(a, b)), []).append(f)
        for edge, fs in edge_faces.items():
            if len(fs) > 2:
                raise MeshError(f"non-manifold edge {edge} shared by faces {fs}")

        halfedges = {}
        vertex_faces = [[] for _ in range(n_v)]
        for f, quad in enumerate(quads):
            for p in range(4):
                a, b = quad[p], quad[(p + 1) % 4]
                if (a, b) in halfedges:
                    raise MeshError(
                        f"inconsistent orientation: faces {halfedges[(a, b)][0]} "
                        f"and {f} traverse edge ({a}, {b}) in the same direction")
                halfedges[(a, b)] = (f, p)
                vertex_faces[a].append(f)

        boundary_edges = [(a, b) for (a, b) in halfedges if (b, a) not in halfedges]
        on_boundary = np.zeros(n_v, dtype=bool)
        for a, b in boundary_edges:
            on_boundary[a] = on_boundary[b] = True
        valence = np.array([len(fs) for fs in vertex_faces], dtype=np.int64)

        unused = np.flatnonzero(valence == 0)
        if unused.size:
            raise MeshError(f"vertex {int(unused[0])} is not referenced by any face")
        low = np.flatnonzero(~on_boundary & (valence < 3))
        if low.size:
            raise MeshError(f"interior vertex {int(low[0])} has valence < 3")

        self.halfedges = halfedges
        self.edge_faces = edge_faces
        self.vertex_faces = [tuple(fs) for fs in vertex_faces]
        self.boundary_edges = sorted(boundary_edges)
        self.on_boundary = on_boundary
        self.valence = valence
        for arr in (on_boundary, valence):
            arr.setflags(write=False)

    def with_vertices(self, vertices) -> "ControlMesh":
        """Same topology, new control points (adjacency is reused)."""
        vertices = np.array(vertices, dtype=float)
        if vertices.shape != self.vertices.shape:
            raise MeshError("vertex array shape does not match the mesh")
        vertices.setflags(write=False)
        new = object.__new__(ControlMesh)
        new.__dict__.update(self.__dict__)
        new.vertices = vertices
        return new

    # -- queries ------------------------------------------------------------

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def is_boundary_edge(self, a: int, b: int) -> bool:
        return len(self.edge_faces[(min(a, b), max(a, b))]) == 1

    def extraordinary_vertices(self) -> np.ndarray:
        """Interior vertices with valence other than 4."""
        return np.flatnonzero(~self.on_boundary & (self.valence != 4))

    def corner(self, face: int, rot: int, c: int) -> int:
        return int(self.faces[face, (rot + c) % 4])

    def across(self, face: int, rot: int, edge: int):
        """Neighbour frame across local ``edge`` of ``(face, rot)``.

        Returns ``(g, r)`` laid out so that the neighbour occupies the
        adjacent cell of the same lattice, or ``None`` on the boundary.
        """
        a = self.corner(face, rot, edge)
        b = self.corner(face, rot, edge + 1)
        hit = self.halfedges.get((b, a))
        if hit is None:
            return None
        g, p = hit
        return g, (p - edge - 2) % 4

    def rotation_of(self, face: int, vertex: int) -> int:
        quad = self.faces[face].tolist()
        return quad.index(vertex)

    def __repr__(self):
        return (f"ControlMesh(n_vertices={self.n_vertices}, n_faces={self.n_faces}, "
                f"n_boundary_edges={len(self.boundary_edges)})")


@dataclass(frozen=True)
class ElementPatch:
    """One element with its control-vertex ring in canonical order.

    ``rotation`` is the position in ``mesh.faces[face]`` of the vertex at
    xi = (0, 0).  ``boundary_sides`` lists the element sides on the mesh
    boundary, in the local frame: ``"eta0"`` and/or ``"xi0"``.
    """

    face: int
    kind: PatchKind
    indices: tuple
    rotation: int
    valence: int | None = None
    boundary_sides: tuple = ()

    @property
    def n_basis(self) -> int:
        return len(self.indices)


# -- patch extraction ---------------------------------------------------------

def _lattice(mesh, face, rot, cells):
    """Unfold the cells reachable from ``(face, rot)``.

    ``cells`` maps lattice offsets to a path of local edges to walk.  Returns
    ``{(x, y): vertex}`` for every corner of every reached cell and checks
    that overlapping corners agree.
    """
    moves = {0: (0, -1), 1: (1, 0), 2: (0, 1), 3: (-1, 0)}
    points = {}
    for path in cells:
        frame, x, y = (face, rot), 0, 0
        for e in path:
            frame = mesh.across(*frame, e)
            if frame is None:
                raise MeshError(f"element {face}: patch runs off the boundary")
            dx, dy = moves[e]
            x, y = x + dx, y + dy
        for c, (cx, cy) in enumerate(((0, 0), (1, 0), (1, 1), (0, 1))):
            v = mesh.corner(frame[0], frame[1], c)
            key = (x + cx, y + cy)
            if points.setdefault(key, v) != v:
                raise MeshError(f"element {face}: patch lattice is inconsistent "
                                f"near {key}")
    return points


_REGULAR_CELLS = ((), (0,), (1,), (2,), (3,), (0, 3), (0, 1), (2, 1), (2, 3))
_EDGE_CELLS = ((), (1,), (3,), (2,), (2, 1), (2, 3))
_CORNER_CELLS = ((), (1,), (2,), (2, 1))


def _grid(points, xs, ys):
    return tuple(points[(x, y)] for y in ys for x in xs)


def extract_irregular_patch(mesh: ControlMesh, face: int, vertex: int) -> ElementPatch:
    """Irregular-ordered patch of ``face`` with ``vertex`` at xi = (0,0).

    Also usable on a valence-4 vertex, which yields the regular patch in the
    irregular ordering.
    """
    rot = mesh.rotation_of(face, vertex)
    k = int(mesh.valence[vertex])
    if mesh.on_boundary[vertex]:
        raise MeshError(f"element {face}: extraordinary vertex on the boundary")
    for c in (1, 2, 3):
        v = mesh.corner(face, rot, c)
        if mesh.on_boundary[v] or mesh.valence[v] != 4:
            raise MeshError(f"element {face}: vertex {v} must be regular for "
                            "an irregular patch")
    ring = [None] * (2 * k + 1)
    frame = (face, rot)
    for i in range(k):
        g, r = frame
        ring[2 * i + 1] = mesh.corner(g, r, 1)
        ring[2 * i + 2] = mesh.corner(g, r, 2)
        nxt = mesh.halfedges.get((vertex, mesh.corner(g, r, 3)))
        if nxt is None:
            raise MeshError(f"element {face}: open one-ring around vertex {vertex}")
        frame = (nxt[0], nxt[1])
    if frame != (face, rot):
        raise MeshError(f"element {face}: one-ring of vertex {vertex} does not close")

    points = _lattice(mesh, face, rot, ((), (1,), (1, 2), (2,), (2, 3), (1, 0)))
    if points[(1, -1)] != ring[2 * k] or points[(-1, 1)] != ring[4]:
        raise MeshError(f"element {face}: irregular patch lattice is inconsistent")
    outer = [points[p] for p in IRREGULAR_OUTER]
    indices = tuple([vertex] + ring[1:] + outer)
    if len(set(indices)) != len(indices):
        raise MeshError(f"element {face}: irregular patch has repeated vertices")
    return ElementPatch(face, PatchKind.IRREGULAR, indices, rot, valence=k)


def _classify_face(mesh: ControlMesh, f: int) -> ElementPatch:
    quad = mesh.faces[f].tolist()
    bnd = mesh.on_boundary
    val = mesh.valence
    evs = [v for v in quad if not bnd[v] and val[v] != 4]
    if len(evs) > 1:
        raise MeshError(f"element {f} has {len(evs)} extraordinary vertices; "
                        "requires one mesh refinement")
    if evs:
        if any(bnd[v] for v in quad):
            raise MeshError(f"element {f}: extraordinary vertex next to the "
                            "boundary is an unsupported configuration")
        return extract_irregular_patch(mesh, f, evs[0])

    sides = [mesh.is_boundary_edge(quad[p], quad[(p + 1) % 4]) for p in range(4)]
    n_sides = sum(sides)
    if n_sides == 0:
        if any(bnd[v] for v in quad):
            raise MeshError(f"element {f} touches the boundary at a vertex only; "
                            "unsupported configuration")
        pts = _lattice(mesh, f, 0, _REGULAR_CELLS)
        idx = _grid(pts, range(-1, 3), range(-1, 3))
        kind, rot, bsides = PatchKind.REGULAR, 0, ()
    elif n_sides == 1:
        rot = sides.index(True)
        corners = [quad[(rot + c) % 4] for c in range(4)]
        if not (val[corners[0]] == val[corners[1]] == 2
                and not bnd[corners[2]] and not bnd[corners[3]]):
            raise MeshError(f"element {f}: irregular boundary configuration")
        pts = _lattice(mesh, f, rot, _EDGE_CELLS)
        idx = _grid(pts, range(-1, 3), range(0, 3))
        kind, bsides = PatchKind.BOUNDARY_EDGE, ("eta0",)
    elif n_sides == 2:
        rot = next((p for p in range(4) if sides[p] and sides[(p - 1) % 4]), None)
        if rot is None:
            raise MeshError(f"element {f} has two opposite boundary edges; "
                            "unsupported configuration")
        corners = [quad[(rot + c) % 4] for c in range(4)]
        if not (val[corners[0]] == 1 and val[corners[1]] == 2
                and val[corners[3]] == 2 and not bnd[corners[2]]):
            raise MeshError(f"element {f}: irregular boundary corner configuration")
        pts = _lattice(mesh, f, rot, _CORNER_CELLS)
        idx = _grid(pts, range(0, 3), range(0, 3))
        kind, bsides = PatchKind.BOUNDARY_CORNER, ("eta0", "xi0")
    else:
        raise MeshError(f"element {f} has {n_sides} boundary edges; unsupported")

    if len(set(idx)) != len(idx):
        raise MeshError(f"element {f}: patch has repeated vertices (mesh too coarse)")
    return ElementPatch(f, kind, idx, rot, boundary_sides=bsides)


def classify_elements(mesh: ControlMesh) -> list[ElementPatch]:
    """One :class:`ElementPatch` per face, in face order."""
    return [_classify_face(mesh, f) for f in range(mesh.n_faces)]


# -- OBJ I/O --------------------------------------------------------------------

def load_obj(path) -> ControlMesh:
    """Read ``v``/``f`` records of an ASCII OBJ file into a :class:`ControlMesh`."""
    vertices, faces = [], []
    ignored = set()
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                vertices.append([float(t) for t in parts[1:4]])
            elif tag == "f":
                idx = [int(t.split("/")[0]) for t in parts[1:]]
                if len(idx) != 4:
                    raise MeshError(f"non-quad face {len(faces)} "
                                    f"(line {lineno}) with {len(idx)} vertices")
                n = len(vertices)
                faces.append([i - 1 if i > 0 else n + i for i in idx])
            else:
                ignored.add(tag)
    if ignored:
        log.warning("ignored OBJ record types: %s", ", ".join(sorted(ignored)))
    return ControlMesh(np.reshape(vertices, (-1, 3)), np.reshape(faces, (-1, 4)))


def save_obj(mesh: ControlMesh, path) -> None:
    lines = [f"v {x:.17g} {y:.17g} {z:.17g}" for x, y, z in mesh.vertices.tolist()]
    lines += ["f " + " ".join(str(i + 1) for i in quad) for quad in mesh.faces.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")
