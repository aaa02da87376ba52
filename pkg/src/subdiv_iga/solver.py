"""Galerkin solver for the Laplace-Beltrami problem on a subdivision surface.

Elements are processed in groups sharing a patch kind and valence so that the
basis tables are computed once per group and the element integrals reduce to
batched ``einsum`` contractions.  Dirichlet data are imposed with a penalty
term assembled from boundary line integrals.
"""

from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .basis import basis_table, geometry_batch
from .mesh import ControlMesh, PatchKind
from .quadrature import gauss_1d, gauss_2d, irregular_rule

log = logging.getLogger(__name__)

DEFAULT_BETA = 1e8


class SolverError(RuntimeError):
    pass


# -- manufactured solutions ----------------------------------------------------------

@dataclass(frozen=True)
class ManufacturedCase:
    """Exact solution with derivatives and the Dirichlet part of the boundary.

    ``dirichlet`` receives boundary points ``(m, 3)`` and returns a mask of
    those lying on the Dirichlet boundary; ``None`` means the whole boundary.
    """

    name: str
    u: Callable
    grad: Callable
    hess: Callable
    dirichlet: Callable | None = None


def _sce(x):
    s1, c1 = np.sin(np.pi * x[:, 0]), np.cos(np.pi * x[:, 0])
    s2, c2 = np.sin(np.pi * x[:, 1]), np.cos(np.pi * x[:, 1])
    return s1, c1, s2, c2, np.exp(x[:, 2])


def _trig_u(x):
    s1, _, _, c2, e = _sce(x)
    return s1 * c2 * e


def _trig_grad(x):
    s1, c1, s2, c2, e = _sce(x)
    return np.stack([np.pi * c1 * c2 * e, -np.pi * s1 * s2 * e, s1 * c2 * e], axis=1)


def _trig_hess(x):
    s1, c1, s2, c2, e = _sce(x)
    p2 = np.pi ** 2
    H = np.empty((len(x), 3, 3))
    H[:, 0, 0] = H[:, 1, 1] = -p2 * s1 * c2 * e
    H[:, 2, 2] = s1 * c2 * e
    H[:, 0, 1] = H[:, 1, 0] = -p2 * c1 * s2 * e
    H[:, 0, 2] = H[:, 2, 0] = np.pi * c1 * c2 * e
    H[:, 1, 2] = H[:, 2, 1] = -np.pi * s1 * s2 * e
    return H


TRIG_CASE = ManufacturedCase("sin-cos-exp", _trig_u, _trig_grad, _trig_hess)


def _profile_case(name, g, dg, d2g, length=2.0, tol=1e-9):
    """Case depending on ``x2`` only, fixed at ``x2 = 0`` and ``x2 = length``."""

    def u(x):
        return g(x[:, 1])

    def grad(x):
        out = np.zeros((len(x), 3))
        out[:, 1] = dg(x[:, 1])
        return out

    def hess(x):
        out = np.zeros((len(x), 3, 3))
        out[:, 1, 1] = d2g(x[:, 1])
        return out

    def dirichlet(x):
        return (np.abs(x[:, 1]) < tol) | (np.abs(x[:, 1] - length) < tol)

    return ManufacturedCase(name, u, grad, hess, dirichlet)


PLATE_CASES = {
    1: _profile_case("plate-test1", lambda y: 2 * y, lambda y: 2 + 0 * y,
                     lambda y: 0 * y),
    2: _profile_case("plate-test2", lambda y: -y * y / 2 + 3 * y, lambda y: 3 - y,
                     lambda y: -1 + 0 * y),
    3: _profile_case("plate-test3", lambda y: -y ** 3 / 6 + 8 * y / 3,
                     lambda y: -y * y / 2 + 8 / 3, lambda y: -y),
    4: _profile_case("plate-test4", lambda y: np.sin(np.pi * y) / np.pi + 2 * y,
                     lambda y: np.cos(np.pi * y) + 2,
                     lambda y: -np.pi * np.sin(np.pi * y)),
}


def manufactured_rhs(case: ManufacturedCase, x, n, c) -> np.ndarray:
    """``f = -lap u + n.H.n + c (n . grad u)`` at points ``x`` with normals ``n``.

    ``c`` is the total curvature (surface divergence of ``n``).
    """
    x = np.atleast_2d(x)
    n = np.broadcast_to(n, x.shape)
    H = case.hess(x)
    lap = np.trace(H, axis1=1, axis2=2)
    nHn = np.einsum("mi,mij,mj->m", n, H, n)
    return -lap + nHn + c * np.einsum("mi,mi->m", n, case.grad(x))


# -- element groups ------------------------------------------------------------------

@dataclass
class ElementGroup:
    kind: PatchKind
    valence: int | None
    faces: np.ndarray  # (ne,)
    indices: np.ndarray  # (ne, nb)


def group_elements(patches) -> list[ElementGroup]:
    """Group patches by (kind, valence), preserving face order inside groups."""
    buckets: dict = {}
    for p in patches:
        buckets.setdefault((p.kind.value, p.valence or 0), []).append(p)
    out = []
    for key in sorted(buckets):
        ps = buckets[key]
        out.append(ElementGroup(ps[0].kind, ps[0].valence,
                                np.array([p.face for p in ps]),
                                np.array([p.indices for p in ps], dtype=np.int64)))
    return out


def group_rule(group: ElementGroup, n_d: int, q: int = 2):
    if group.kind == PatchKind.IRREGULAR:
        return irregular_rule(n_d, q)
    return gauss_2d(q)


def _chunks(n, threads):
    if threads <= 1 or n < 2 * threads:
        return [slice(0, n)]
    edges = np.linspace(0, n, threads + 1).astype(int)
    return [slice(a, b) for a, b in zip(edges[:-1], edges[1:]) if b > a]


def _map_chunks(fn, n, threads):
    """Run ``fn(slice)`` over element chunks; results keep chunk order."""
    parts = _chunks(n, threads)
    if len(parts) == 1:
        return [fn(parts[0])]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, parts))


def _scatter(idx, blocks, n):
    """Sum element blocks ``(ne, nb, nb)`` into a sparse ``n x n`` matrix."""
    nb = idx.shape[1]
    rows = np.repeat(idx, nb, axis=1).ravel()
    cols = np.tile(idx, (1, nb)).ravel()
    return sp.coo_matrix((blocks.ravel(), (rows, cols)), shape=(n, n))


def is_flat(mesh: ControlMesh, tol: float = 1e-14) -> bool:
    """Whether every control point lies in the plane ``x3 = const``."""
    z = mesh.vertices[:, 2]
    scale = max(1.0, float(np.max(np.abs(mesh.vertices))))
    return float(np.ptp(z)) <= tol * scale


# -- normal projection ---------------------------------------------------------------

def project_normals(mesh: ControlMesh, groups, q: int = 2, n_d: int = 0) -> np.ndarray:
    """Control coefficients of the L2 projection of the unit normal field."""
    n = mesh.n_vertices
    M = sp.csr_matrix((n, n))
    b = np.zeros((n, 3))
    for g in groups:
        rule = group_rule(g, n_d, q)
        vals, dxi, deta = basis_table(g.kind, g.valence, rule.points)
        geo = geometry_batch(mesh.vertices[g.indices], vals, dxi, deta)
        dw = geo.detJ * rule.weights
        Me = np.einsum("qa,qb,eq->eab", vals, vals, dw)
        M = M + _scatter(g.indices, Me, n).tocsr()
        be = np.einsum("qa,eqi,eq->eai", vals, geo.normal, dw)
        np.add.at(b, g.indices, be)
    try:
        return spla.splu(M.tocsc()).solve(b)
    except RuntimeError as exc:
        raise SolverError(f"singular mass matrix in normal projection: {exc}") from None


def curvature_field(mesh: ControlMesh, groups, normals_hat, q: int = 2, n_d: int = 0):
    """Total curvature at the rule points of every group, list of ``(ne, nq)``."""
    out = []
    for g in groups:
        rule = group_rule(g, n_d, q)
        vals, dxi, deta = basis_table(g.kind, g.valence, rule.points)
        geo = geometry_batch(mesh.vertices[g.indices], vals, dxi, deta)
        G = geo.surface_gradient(dxi, deta)
        out.append(np.einsum("eqai,eai->eq", G, normals_hat[g.indices]))
    return out


# -- assembly ------------------------------------------------------------------------

@dataclass
class LinearSystem:
    K: sp.csr_matrix
    f: np.ndarray
    M_b: sp.csr_matrix
    f_b: np.ndarray
    beta: float = DEFAULT_BETA
    normals_hat: np.ndarray | None = None
    timings: dict = field(default_factory=dict)

    @property
    def n(self) -> int:
        return self.K.shape[0]

    def penalized(self):
        return (self.K + self.beta * self.M_b).tocsr(), self.f + self.beta * self.f_b


def _element_integrals(mesh, g, rule, case, flat, nhat):
    vals, dxi, deta = basis_table(g.kind, g.valence, rule.points)

    def work(sl):
        geo = geometry_batch(mesh.vertices[g.indices[sl]], vals, dxi, deta)
        G = geo.surface_gradient(dxi, deta)
        dw = geo.detJ * rule.weights
        Ke = np.einsum("eqai,eqbi,eq->eab", G, G, dw)
        x = geo.x.reshape(-1, 3)
        if flat:
            nrm = np.array([0.0, 0.0, 1.0])
            c = 0.0
        else:
            nrm = geo.normal.reshape(-1, 3)
            c = np.einsum("eqai,eai->eq", G, nhat[g.indices[sl]]).ravel()
        fq = manufactured_rhs(case, x, nrm, c).reshape(dw.shape)
        fe = np.einsum("qa,eq->ea", vals, fq * dw)
        return Ke, fe

    return work


def boundary_sides(mesh: ControlMesh, patches):
    """``(patch, side)`` pairs for every element side on the mesh boundary."""
    return [(p, s) for p in patches for s in p.boundary_sides]


def _side_points(side, t):
    if side == "eta0":
        return np.column_stack([t, np.zeros_like(t)]), 0
    if side == "xi0":
        return np.column_stack([np.zeros_like(t), t]), 1
    raise ValueError(f"unknown boundary side {side!r}")


def assemble_boundary(mesh: ControlMesh, patches, case: ManufacturedCase, q1: int = 2):
    """Boundary mass matrix and load over the Dirichlet boundary sides."""
    n = mesh.n_vertices
    t, w = gauss_1d(q1)
    rows, cols, vals_out = [], [], []
    fb = np.zeros(n)
    for p, side in boundary_sides(mesh, patches):
        pts, d = _side_points(side, t)
        vals, dxi, deta = basis_table(p.kind, p.valence, pts)
        P = mesh.vertices[list(p.indices)]
        x = vals @ P
        tangent = (dxi if d == 0 else deta) @ P
        ds = np.linalg.norm(tangent, axis=1) * w
        mid = basis_table(p.kind, p.valence, _side_points(side, np.array([0.5]))[0])[0] @ P
        if case.dirichlet is not None and not case.dirichlet(mid)[0]:
            continue
        Me = np.einsum("qa,qb,q->ab", vals, vals, ds)
        idx = np.asarray(p.indices)
        rows.append(np.repeat(idx, len(idx)))
        cols.append(np.tile(idx, len(idx)))
        vals_out.append(Me.ravel())
        np.add.at(fb, idx, vals.T @ (case.u(x) * ds))
    if rows:
        Mb = sp.coo_matrix((np.concatenate(vals_out),
                            (np.concatenate(rows), np.concatenate(cols))),
                           shape=(n, n)).tocsr()
    else:
        Mb = sp.csr_matrix((n, n))
    return Mb, fb


def assemble(mesh: ControlMesh, patches, case: ManufacturedCase, n_d: int = 0,
             beta: float = DEFAULT_BETA, q: int = 2, threads: int = 1,
             groups=None) -> LinearSystem:
    """Stiffness, load and penalty terms.

    ``n_d = 0`` integrates every element with ``q x q`` Gauss points; larger
    values switch irregular elements to the adaptive rule of that depth.
    """
    t0 = time.perf_counter()
    groups = group_elements(patches) if groups is None else groups
    n = mesh.n_vertices
    flat = is_flat(mesh)
    nhat = None if flat else project_normals(mesh, groups, q, n_d)
    K = sp.csr_matrix((n, n))
    f = np.zeros(n)
    for g in groups:
        rule = group_rule(g, n_d, q)
        work = _element_integrals(mesh, g, rule, case, flat, nhat)
        try:
            parts = _map_chunks(work, len(g.faces), threads)
        except (ValueError, np.linalg.LinAlgError) as exc:
            raise SolverError(f"assembly failed in {g.kind.value} elements "
                              f"{g.faces.tolist()[:8]}...: {exc}") from exc
        Ke = np.concatenate([p[0] for p in parts])
        fe = np.concatenate([p[1] for p in parts])
        K = K + _scatter(g.indices, Ke, n).tocsr()
        np.add.at(f, g.indices, fe)
    Mb, fb = assemble_boundary(mesh, patches, case)
    K = K.tocsr()
    K.sum_duplicates()
    sys_ = LinearSystem(K, f, Mb, fb, beta, nhat)
    sys_.timings["assembly"] = time.perf_counter() - t0
    return sys_


# -- solve ---------------------------------------------------------------------------

def solve_penalized(system: LinearSystem, rtol: float = 1e-14,
                    method: str = "cg") -> np.ndarray:
    """Solve ``(K + beta M_b) u = f + beta f_b``.

    ``method="cg"`` uses Jacobi-preconditioned conjugate gradients capped at
    ``50 n`` iterations; ``"direct"`` uses a sparse LU factorisation.
    """
    if system.M_b.nnz == 0:
        raise SolverError("no Dirichlet boundary: the penalised system is singular")
    A, b = system.penalized()
    t0 = time.perf_counter()
    if method == "direct":
        u = spla.splu(A.tocsc()).solve(b)
    elif method == "cg":
        d = A.diagonal()
        if np.any(d <= 0):
            raise SolverError("system matrix has a non-positive diagonal entry")
        M = sp.diags(1.0 / d)
        n = A.shape[0]
        bnorm = np.linalg.norm(b)
        if bnorm == 0.0:
            u = np.zeros(n)
        else:
            u, info = spla.cg(A, b, rtol=rtol, atol=0.0, maxiter=50 * n, M=M)
            res = np.linalg.norm(b - A @ u) / bnorm
            if info != 0:
                raise SolverError(f"conjugate gradients stopped after {info} "
                                  f"iterations with relative residual {res:.3e}")
    else:
        raise ValueError(f"unknown solve method {method!r}")
    system.timings["solve"] = time.perf_counter() - t0
    return u


# -- errors --------------------------------------------------------------------------

def error_norms(u, case: ManufacturedCase, mesh: ControlMesh, patches,
                n_d: int = 0, q: int = 2, groups=None, raw: bool = False):
    """Normalised L2 and H1 errors integrated with the assembly rule."""
    groups = group_elements(patches) if groups is None else groups
    flat = is_flat(mesh)
    acc = np.zeros(4)  # |e|^2, |grad e|^2, |u|^2, |grad u|^2
    for g in groups:
        rule = group_rule(g, n_d, q)
        vals, dxi, deta = basis_table(g.kind, g.valence, rule.points)
        geo = geometry_batch(mesh.vertices[g.indices], vals, dxi, deta)
        G = geo.surface_gradient(dxi, deta)
        dw = geo.detJ * rule.weights
        ue = u[g.indices]
        uh = np.einsum("qa,ea->eq", vals, ue)
        guh = np.einsum("eqai,ea->eqi", G, ue)
        x = geo.x.reshape(-1, 3)
        uex = case.u(x).reshape(dw.shape)
        gex = case.grad(x).reshape(dw.shape + (3,))
        nrm = np.broadcast_to([0.0, 0.0, 1.0], gex.shape) if flat else geo.normal
        gex = gex - np.einsum("eqi,eqi->eq", gex, nrm)[..., None] * nrm
        acc += [np.sum((uex - uh) ** 2 * dw),
                np.sum(np.sum((gex - guh) ** 2, axis=-1) * dw),
                np.sum(uex ** 2 * dw),
                np.sum(np.sum(gex ** 2, axis=-1) * dw)]
    if acc[2] == 0.0:
        raise SolverError("exact solution has zero norm; relative errors undefined")
    l2 = np.sqrt(acc[0])
    h1 = np.sqrt(acc[0] + acc[1])
    e_l2 = l2 / np.sqrt(acc[2])
    e_h1 = h1 / np.sqrt(acc[2] + acc[3])
    if raw:
        return e_l2, e_h1, l2, h1
    return e_l2, e_h1


@dataclass
class PointwiseError:
    x: np.ndarray  # (m, 3)
    error: np.ndarray  # (m,)
    element: np.ndarray  # (m,) face index


def pointwise_error_field(u, case: ManufacturedCase, mesh: ControlMesh, patches,
                          samples_per_element: int = 5) -> PointwiseError:
    """``|u - u_h|`` on a uniform parametric grid in every element.

    The grid includes the element edges; irregular elements skip their
    extraordinary corner.
    """
    s = np.linspace(0.0, 1.0, samples_per_element)
    S, T = np.meshgrid(s, s, indexing="xy")
    grid = np.column_stack([S.ravel(), T.ravel()])
    xs, es, ids = [], [], []
    for g in group_elements(patches):
        pts = grid[1:] if g.kind == PatchKind.IRREGULAR else grid
        vals = basis_table(g.kind, g.valence, pts)[0]
        x = np.einsum("qa,eai->eqi", vals, mesh.vertices[g.indices])
        uh = np.einsum("qa,ea->eq", vals, u[g.indices])
        x = x.reshape(-1, 3)
        xs.append(x)
        es.append(np.abs(case.u(x) - uh.ravel()))
        ids.append(np.repeat(g.faces, len(pts)))
    return PointwiseError(np.concatenate(xs), np.concatenate(es), np.concatenate(ids))
