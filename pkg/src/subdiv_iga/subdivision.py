"""Lane-Riesenfeld curve refinement, Catmull-Clark mesh refinement and the
per-valence operators used to evaluate elements with an extraordinary vertex.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .mesh import ControlMesh, MeshError

N_MAX = 20


def subdivide_curve(points) -> np.ndarray:
    """One refinement step of an open control polygon.

    End points are kept, edge points are midpoints and interior vertex points
    use the weights (1/8, 3/4, 1/8).  ``n`` points become ``2n - 1``.
    """
    p = np.asarray(points, dtype=float)
    if p.ndim == 1:
        p = p[:, None]
    if len(p) < 3:
        raise ValueError("curve subdivision needs at least 3 points")
    out = np.empty((2 * len(p) - 1, p.shape[1]))
    out[1::2] = 0.5 * (p[:-1] + p[1:])
    out[2:-1:2] = 0.125 * p[:-2] + 0.75 * p[1:-1] + 0.125 * p[2:]
    out[0], out[-1] = p[0], p[-1]
    return out


def ev_vertex_weights(k: int) -> tuple[float, float, float]:
    """Vertex-point weights (centre, each edge neighbour, each face diagonal)."""
    return 1.0 - 7.0 / (4.0 * k), 3.0 / (2.0 * k * k), 1.0 / (4.0 * k * k)


def subdivision_matrix(mesh: ControlMesh):
    """Sparse refinement operator and the refined faces.

    New vertices are ordered ``[vertex points | edge points | face points]``;
    edge points follow ``sorted(mesh.edge_faces)``.  Face ``f`` becomes faces
    ``4f .. 4f+3``, the one at corner ``c`` of ``f`` first touching that corner.
    """
    n_v, n_f = mesh.n_vertices, mesh.n_faces
    edges = sorted(mesh.edge_faces)
    edge_id = {e: n_v + i for i, e in enumerate(edges)}
    face_base = n_v + len(edges)
    quads = mesh.faces.tolist()
    rows, cols, vals = [], [], []

    def put(r, cs, w):
        rows.extend([r] * len(cs))
        cols.extend(cs)
        vals.extend(w if np.ndim(w) else [w] * len(cs))

    for f, quad in enumerate(quads):
        put(face_base + f, quad, 0.25)

    for e, fs in zip(edges, (mesh.edge_faces[e] for e in edges)):
        r = edge_id[e]
        if len(fs) == 1:
            put(r, list(e), 0.5)
            continue
        put(r, list(e), 0.375)
        for g in fs:
            put(r, [v for v in quads[g] if v not in e], 0.0625)

    nbrs = [set() for _ in range(n_v)]
    for a, b in mesh.halfedges:
        nbrs[a].add(b)
        nbrs[b].add(a)
    bnd_nbrs = [[] for _ in range(n_v)]
    for a, b in mesh.boundary_edges:
        bnd_nbrs[a].append(b)
        bnd_nbrs[b].append(a)

    for v in range(n_v):
        if mesh.on_boundary[v]:
            if mesh.valence[v] == 1:
                put(v, [v], 1.0)
                continue
            if len(bnd_nbrs[v]) != 2:
                raise MeshError(f"boundary vertex {v} is non-manifold")
            put(v, [v], 0.75)
            put(v, bnd_nbrs[v], 0.125)
            continue
        k = int(mesh.valence[v])
        w0, we, wf = ev_vertex_weights(k)
        put(v, [v], w0)
        put(v, sorted(nbrs[v]), we)
        diag = []
        for g in mesh.vertex_faces[v]:
            p = quads[g].index(v)
            diag.append(quads[g][(p + 2) % 4])
        put(v, diag, wf)

    S = sp.coo_matrix((vals, (rows, cols)), shape=(face_base + n_f, n_v)).tocsr()

    new_faces = []
    for f, quad in enumerate(quads):
        fp = face_base + f
        eids = [edge_id[(min(quad[p], quad[(p + 1) % 4]), max(quad[p], quad[(p + 1) % 4]))]
                for p in range(4)]
        for c in range(4):
            new_faces.append((quad[c], eids[c], fp, eids[(c - 1) % 4]))
    return S, np.array(new_faces, dtype=np.int64)


def subdivide_mesh(mesh: ControlMesh, times: int = 1) -> ControlMesh:
    """Catmull-Clark refinement with curve rules on the boundary."""
    for _ in range(times):
        S, faces = subdivision_matrix(mesh)
        mesh = ControlMesh(S @ mesh.vertices, faces)
    return mesh


# -- irregular patch operators --------------------------------------------------

def _fine_positions(k: int) -> dict:
    """Lattice position (in half-element units) -> index in the refined patch."""
    pos = {(0, 0): 0, (1, 0): 1, (1, 1): 2, (0, 1): 3, (-1, 1): 4, (-1, 0): 5,
           (0, -1): 2 * k - 1, (1, -1): 2 * k}
    outer = ((2, -1), (2, 0), (2, 1), (2, 2), (1, 2), (0, 2), (-1, 2),
             (3, -1), (3, 0), (3, 1), (3, 2), (3, 3), (2, 3), (1, 3), (0, 3), (-1, 3))
    for i, p in enumerate(outer):
        pos[p] = 2 * k + 1 + i
    return pos


def _refined_patch_rows(k: int) -> np.ndarray:
    """Weights of the ``2k + 17`` refined points in terms of the ``2k + 8``.

    Built from the face, edge and vertex stencils on the local patch
    topology: ring faces ``(0, 2i+1, 2i+2, 2i+3)`` plus the five outer cells
    listed below.
    """
    K = 2 * k + 8
    E = 2 * k  # last ring index

    def ring(j):
        return (j - 1) % E + 1

    A = np.zeros((2 * k + 17, K))

    def face(row, vs):
        for v in vs:
            A[row, v] += 0.25

    def edge(row, a, b, others):
        A[row, a] += 0.375
        A[row, b] += 0.375
        for v in others:
            A[row, v] += 0.0625

    def vertex(row, c, edge_nbrs, diag_nbrs):
        A[row, c] += 36 / 64
        for v in edge_nbrs:
            A[row, v] += 6 / 64
        for v in diag_nbrs:
            A[row, v] += 1 / 64

    o = 2 * k  # outer vertex j is o + j, j = 1..7
    # extraordinary vertex and its refined one-ring
    w0, we, wf = ev_vertex_weights(k)
    A[0, 0] = w0
    A[0, 1:E + 1:2] = we
    A[0, 2:E + 1:2] = wf
    for i in range(k):
        a, d, b = ring(2 * i + 1), ring(2 * i + 2), ring(2 * i + 3)
        face(2 * i + 2, (0, a, d, b))
        edge(2 * i + 1, 0, a, (ring(2 * i - 1), ring(2 * i), d, b))

    outer_rows = {
        1: ("edge", 1, E, (0, E - 1, o + 1, o + 2)),
        2: ("vertex", 1, (0, o + 2, E, 2), (E - 1, o + 1, 3, o + 3)),
        3: ("edge", 1, 2, (0, 3, o + 2, o + 3)),
        4: ("vertex", 2, (1, 3, o + 3, o + 5), (0, o + 2, o + 4, o + 6)),
        5: ("edge", 2, 3, (0, 1, o + 5, o + 6)),
        6: ("vertex", 3, (0, 2, o + 6, 4), (1, 5, o + 5, o + 7)),
        7: ("edge", 3, 4, (0, 5, o + 6, o + 7)),
        8: ("face", (E, o + 1, o + 2, 1)),
        9: ("edge", 1, o + 2, (E, o + 1, o + 3, 2)),
        10: ("face", (1, o + 2, o + 3, 2)),
        11: ("edge", 2, o + 3, (1, o + 2, o + 4, o + 5)),
        12: ("face", (2, o + 3, o + 4, o + 5)),
        13: ("edge", 2, o + 5, (o + 3, o + 4, 3, o + 6)),
        14: ("face", (3, 2, o + 5, o + 6)),
        15: ("edge", 3, o + 6, (2, o + 5, 4, o + 7)),
        16: ("face", (4, 3, o + 6, o + 7)),
    }
    for j, (kind, *args) in outer_rows.items():
        row = 2 * k + j
        {"edge": edge, "vertex": vertex, "face": face}[kind](row, *args)
    return A


def _picking_matrices(k: int):
    """Selection of the 16 regular-patch points of sub-elements 1, 2, 3."""
    pos = _fine_positions(k)
    shifts = {1: (0, -1), 2: (0, 0), 3: (-1, 0)}
    D = []
    for sub in (1, 2, 3):
        sx, sy = shifts[sub]
        M = np.zeros((16, 2 * k + 17))
        for j in range(4):
            for i in range(4):
                M[4 * j + i, pos[(i + sx, j + sy)]] = 1.0
        D.append(M)
    return tuple(D)


@dataclass
class SubdivisionOperators:
    """Refinement operators of an irregular patch with valence ``k``.

    ``A`` maps the ``2k+8`` patch points to the ``2k+17`` refined points,
    ``A_bar`` (its first ``2k+8`` rows) to the refined irregular patch, and
    ``D[s-1]`` picks the 16 points of regular sub-element ``s``.
    """

    valence: int
    A: np.ndarray
    A_bar: np.ndarray
    D: tuple
    n_max: int = N_MAX
    _powers: list = field(default_factory=list, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)
    _pick: dict = field(default_factory=dict, repr=False)

    def power(self, m: int) -> np.ndarray:
        """``A_bar ** m`` for ``0 <= m < n_max``, memoised."""
        if not 0 <= m < self.n_max:
            raise ValueError(f"power {m} outside [0, {self.n_max})")
        with self._lock:
            if not self._powers:
                self._powers.append(np.eye(len(self.A_bar)))
            while len(self._powers) <= m:
                self._powers.append(self.A_bar @ self._powers[-1])
            return self._powers[m]

    def picking(self, n: int, sub: int) -> np.ndarray:
        """``D_sub A A_bar^(n-1)``: 16 x (2k+8)."""
        key = (n, sub)
        hit = self._pick.get(key)
        if hit is None:
            hit = self.D[sub - 1] @ self.A @ self.power(n - 1)
            self._pick[key] = hit
        return hit


_ops_cache: dict = {}
_ops_lock = threading.Lock()


def build_operators(k: int) -> SubdivisionOperators:
    """Cached :class:`SubdivisionOperators` for valence ``k >= 3``."""
    if k < 3:
        raise ValueError(f"valence must be >= 3, got {k}")
    with _ops_lock:
        ops = _ops_cache.get(k)
        if ops is None:
            A = _refined_patch_rows(k)
            ops = SubdivisionOperators(k, A, A[:2 * k + 8].copy(), _picking_matrices(k))
            _ops_cache[k] = ops
        return ops


def limit_point_weights(k: int) -> np.ndarray:
    """Weights over an irregular patch giving the limit position of its EV."""
    w = np.zeros(2 * k + 8)
    denom = k * (k + 5)
    w[0] = k * k / denom
    w[1:2 * k + 1:2] = 4.0 / denom
    w[2:2 * k + 1:2] = 1.0 / denom
    return w
