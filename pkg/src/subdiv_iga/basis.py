"""Catmull-Clark basis functions on the four patch kinds.

Regular, boundary-edge and boundary-corner patches are tensor products of the
uniform cubic B-spline curve basis and its interpolating end modification.
Irregular patches are evaluated by mapping the point into a regular
sub-element after ``n`` implicit subdivisions and pulling the 16 regular
values back through the cached subdivision operators.

Most routines here are vectorised over points: ``points`` is an ``(m, 2)``
array and tables come back with shape ``(m, n_basis)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .mesh import ControlMesh, ElementPatch, PatchKind
from .subdivision import N_MAX, build_operators


class SingularPointError(ValueError):
    """Raised when an irregular element is evaluated exactly at its EV."""


@dataclass(frozen=True)
class BasisEval:
    values: np.ndarray
    d_xi: np.ndarray
    d_eta: np.ndarray

    @property
    def n_basis(self) -> int:
        return len(self.values)


# -- curve bases -----------------------------------------------------------------

def _check_unit(x):
    x = np.asarray(x, dtype=float)
    if np.any(x < 0.0) or np.any(x > 1.0) or np.any(~np.isfinite(x)):
        raise ValueError("parameter must lie in [0, 1]")
    return x


def cubic_table(x):
    """Uniform cubic B-spline values and derivatives, shape ``(m, 4)`` each."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2, x3 = x * x, x * x * x
    v = np.stack([1 - 3 * x + 3 * x2 - x3,
                  4 - 6 * x2 + 3 * x3,
                  1 + 3 * x + 3 * x2 - 3 * x3,
                  x3], axis=-1) / 6.0
    d = np.stack([-3 + 6 * x - 3 * x2,
                  -12 * x + 9 * x2,
                  3 + 6 * x - 9 * x2,
                  3 * x2], axis=-1) / 6.0
    return v, d


def boundary_cubic_table(x):
    """End-interpolating curve basis (3 functions) and derivatives."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    x2, x3 = x * x, x * x * x
    v = np.stack([6 - 6 * x + x3, 6 * x - 2 * x3, x3], axis=-1) / 6.0
    d = np.stack([-6 + 3 * x2, 6 - 6 * x2, 3 * x2], axis=-1) / 6.0
    return v, d


def curve_basis(xi: float):
    """``(N, dN)`` of the four cubic B-splines supported on one element."""
    xi = _check_unit(xi)
    v, d = cubic_table(xi)
    return v[0], d[0]


def curve_basis_boundary(xi: float):
    """``(N', dN')`` of the three functions on an interpolating end element.

    The element's first control point is the curve end point.  For the
    element at the other end of a curve use ``N'(1 - xi)`` in reverse order.
    """
    xi = _check_unit(xi)
    v, d = boundary_cubic_table(xi)
    return v[0], d[0]


# -- tensor-product patches -------------------------------------------------------

def _tensor(u, du, v, dv):
    """Row-major tensor product: index ``len(u_row) * j + i``."""
    m = u.shape[0]
    vals = (v[:, :, None] * u[:, None, :]).reshape(m, -1)
    dxi = (v[:, :, None] * du[:, None, :]).reshape(m, -1)
    deta = (dv[:, :, None] * u[:, None, :]).reshape(m, -1)
    return vals, dxi, deta


def regular_table(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    u, du = cubic_table(p[:, 0])
    v, dv = cubic_table(p[:, 1])
    return _tensor(u, du, v, dv)


def boundary_edge_table(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    u, du = cubic_table(p[:, 0])
    v, dv = boundary_cubic_table(p[:, 1])
    return _tensor(u, du, v, dv)


def boundary_corner_table(points):
    p = np.atleast_2d(np.asarray(points, dtype=float))
    u, du = boundary_cubic_table(p[:, 0])
    v, dv = boundary_cubic_table(p[:, 1])
    return _tensor(u, du, v, dv)


# -- irregular patches ------------------------------------------------------------

def subdivision_level(xi):
    """``(n, k)`` for a point of an irregular element.

    ``n`` is the number of implicit subdivisions that bring the point into a
    regular sub-element and ``k`` which of the three sub-elements
    (1: lower right, 2: upper right, 3: upper left).  Intervals are
    half-open, ``[2^-n, 2^(1-n))``, and closed at 1.
    """
    n, k, _, _ = stam_map(np.atleast_2d(np.asarray(xi, dtype=float)))
    return int(n[0]), int(k[0])


def stam_map(points, n_max: int = N_MAX):
    """Vectorised sub-element lookup.

    Returns ``(n, k, xi_bar, p)`` where ``xi_bar`` is the point in the
    sub-element's own frame and ``p`` the (possibly clamped) input point.
    Points closer to the EV than ``2^-n_max`` are pulled radially out to that
    distance.
    """
    p = np.array(points, dtype=float, copy=True)
    if np.any(p < 0.0) or np.any(p > 1.0):
        raise ValueError("parametric point outside the unit square")
    m = p.max(axis=1)
    if np.any(m == 0.0):
        raise SingularPointError("singular point: an irregular element cannot be "
                                 "evaluated at its extraordinary vertex")
    floor = 2.0 ** (-n_max)
    deep = m < floor
    if np.any(deep):
        p[deep] *= (floor / m[deep])[:, None]
        m = p.max(axis=1)
    _, ex = np.frexp(m)
    n = np.clip(1 - ex, 1, n_max).astype(int)  # rescaling may round below the floor
    scale = np.ldexp(1.0, n)
    s, t = p[:, 0] * scale, p[:, 1] * scale
    k = np.where(s >= 1.0, np.where(t < 1.0, 1, 2), 3)
    xb = np.stack([s, t], axis=1)
    xb[k != 3, 0] -= 1.0
    xb[k != 1, 1] -= 1.0
    np.clip(xb, 0.0, 1.0, out=xb)
    return n, k, xb, p


def irregular_table(valence: int, points):
    """Basis table of an irregular patch with the given valence."""
    ops = build_operators(valence)
    n, k, xb, _ = stam_map(np.atleast_2d(np.asarray(points, dtype=float)),
                           ops.n_max)
    m, nb = len(n), 2 * valence + 8
    vals, dxi, deta = np.empty((m, nb)), np.empty((m, nb)), np.empty((m, nb))
    rv, rdx, rdy = regular_table(xb)
    for nn, kk in set(zip(n.tolist(), k.tolist())):
        sel = (n == nn) & (k == kk)
        P = ops.picking(nn, kk)
        f = 2.0 ** nn
        vals[sel] = rv[sel] @ P
        dxi[sel] = (rdx[sel] @ P) * f
        deta[sel] = (rdy[sel] @ P) * f
    return vals, dxi, deta


def basis_table(kind: PatchKind, valence, points):
    """Dispatch to the table routine of ``kind``."""
    if kind == PatchKind.REGULAR:
        return regular_table(points)
    if kind == PatchKind.BOUNDARY_EDGE:
        return boundary_edge_table(points)
    if kind == PatchKind.BOUNDARY_CORNER:
        return boundary_corner_table(points)
    if kind == PatchKind.IRREGULAR:
        return irregular_table(int(valence), points)
    raise ValueError(f"unknown patch kind {kind!r}")


def _single(table):
    v, dx, dy = table
    return BasisEval(v[0], dx[0], dy[0])


def surface_basis(patch: ElementPatch, xi) -> BasisEval:
    """Basis values at one point of a non-irregular patch."""
    if patch.kind == PatchKind.IRREGULAR:
        raise ValueError("irregular patch: use eval_irregular")
    pt = np.asarray(xi, dtype=float).reshape(1, 2)
    _check_unit(pt)
    return _single(basis_table(patch.kind, None, pt))


def eval_irregular(patch: ElementPatch, ops, xi) -> BasisEval:
    """Basis values at one point of an irregular patch."""
    if patch.kind != PatchKind.IRREGULAR:
        raise ValueError("eval_irregular needs an irregular patch")
    if ops.valence != patch.valence:
        raise ValueError("operators do not match the patch valence")
    pt = np.asarray(xi, dtype=float).reshape(1, 2)
    return _single(irregular_table(ops.valence, pt))


def evaluate(patch: ElementPatch, xi) -> BasisEval:
    pt = np.asarray(xi, dtype=float).reshape(1, 2)
    return _single(basis_table(patch.kind, patch.valence, pt))


# -- geometry ---------------------------------------------------------------------

def limit_position(patch: ElementPatch, mesh: ControlMesh, xi) -> np.ndarray:
    b = evaluate(patch, xi)
    return b.values @ mesh.vertices[list(patch.indices)]


def jacobian(patch: ElementPatch, mesh: ControlMesh, xi) -> np.ndarray:
    """3 x 2 matrix with columns dx/dxi and dx/deta."""
    b = evaluate(patch, xi)
    P = mesh.vertices[list(patch.indices)]
    return np.stack([b.d_xi @ P, b.d_eta @ P], axis=1)


@dataclass
class GeometryBatch:
    """Limit-surface geometry at ``nq`` points of ``ne`` elements.

    ``x`` is ``(ne, nq, 3)``, ``J`` ``(ne, nq, 3, 2)``, ``detJ`` the area
    element ``|x_xi cross x_eta|`` and ``normal`` the unit normal.
    """

    x: np.ndarray
    J: np.ndarray
    detJ: np.ndarray
    normal: np.ndarray
    pinv: np.ndarray  # (ne, nq, 2, 3)

    def surface_gradient(self, dxi, deta):
        """Surface gradients of all basis functions, ``(ne, nq, nb, 3)``.

        ``dxi`` and ``deta`` are the ``(nq, nb)`` parametric derivative
        tables shared by every element of the batch.
        """
        return (np.einsum("qb,eqi->eqbi", dxi, self.pinv[:, :, 0, :])
                + np.einsum("qb,eqi->eqbi", deta, self.pinv[:, :, 1, :]))


def geometry_batch(ctrl, vals, dxi, deta) -> GeometryBatch:
    """Geometry from control points ``ctrl`` of shape ``(ne, nb, 3)``."""
    x = np.einsum("qb,ebi->eqi", vals, ctrl)
    jx = np.einsum("qb,ebi->eqi", dxi, ctrl)
    je = np.einsum("qb,ebi->eqi", deta, ctrl)
    J = np.stack([jx, je], axis=-1)
    cr = np.cross(jx, je)
    detJ = np.linalg.norm(cr, axis=-1)
    if np.any(detJ <= 0.0):
        raise ValueError("degenerate surface parametrisation (zero area element)")
    normal = cr / detJ[..., None]
    JtJ = np.einsum("eqia,eqib->eqab", J, J)
    pinv = np.linalg.solve(JtJ, np.swapaxes(J, -1, -2))
    return GeometryBatch(x, J, detJ, normal, pinv)
