import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy.interpolate import BSpline

from conftest import bumpy_grid, cube_mesh
from subdiv_iga.basis import (SingularPointError, basis_table, boundary_cubic_table,
                              cubic_table, curve_basis, curve_basis_boundary, evaluate,
                              eval_irregular, irregular_table, jacobian, limit_position,
                              regular_table, stam_map, subdivision_level, surface_basis)
from subdiv_iga.fitting import generate_plate, generate_plate_ev
from subdiv_iga.mesh import PatchKind, classify_elements, extract_irregular_patch
from subdiv_iga.subdivision import build_operators, subdivide_mesh

unit = st.floats(0.0, 1.0)
open_unit = st.floats(1e-6, 1.0)


def _bspline_oracle(x):
    """The four uniform cubic B-splines on [0, 1] via scipy."""
    return np.column_stack([BSpline.basis_element(np.arange(i - 3, i + 2), extrapolate=False)(x)
                            for i in range(4)])


class TestCurveBasis:
    def test_matches_scipy(self):
        x = np.linspace(0.0, 1.0, 41)[1:-1]
        v, d = cubic_table(x)
        assert np.allclose(v, _bspline_oracle(x), atol=1e-14)
        ref_d = np.column_stack([
            BSpline.basis_element(np.arange(i - 3, i + 2)).derivative()(x) for i in range(4)])
        assert np.allclose(d, ref_d, atol=1e-13)

    def test_midpoint_values(self):
        N, dN = curve_basis(0.5)
        assert np.allclose(N, [1 / 48, 23 / 48, 23 / 48, 1 / 48], atol=1e-16)
        assert np.allclose(dN, [-1 / 8, -5 / 8, 5 / 8, 1 / 8], atol=1e-16)

    def test_endpoint_values(self):
        N, _ = curve_basis(0.0)
        assert np.allclose(N, [1 / 6, 4 / 6, 1 / 6, 0.0])
        Nb, dNb = curve_basis_boundary(0.0)
        assert np.allclose(Nb, [1, 0, 0]) and np.allclose(dNb, [-1, 1, 0])
        Nb, _ = curve_basis_boundary(1.0)
        assert np.allclose(Nb, [1 / 6, 4 / 6, 1 / 6])

    def test_boundary_is_mirrored_construction(self):
        # end basis = regular basis with phantom point 2 P0 - P1 eliminated
        x = np.linspace(0, 1, 23)
        v, d = cubic_table(x)
        vb, db = boundary_cubic_table(x)
        T = np.array([[2, -1, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], dtype=float)
        assert np.allclose(v @ T, vb, atol=1e-15)
        assert np.allclose(d @ T, db, atol=1e-15)

    @pytest.mark.parametrize("bad", [-0.1, 1.5, np.nan])
    def test_out_of_range(self, bad):
        with pytest.raises(ValueError):
            curve_basis(bad)
        with pytest.raises(ValueError):
            curve_basis_boundary(bad)

    @given(unit)
    def test_curve_partition_of_unity(self, x):
        assert abs(curve_basis(x)[0].sum() - 1) < 1e-14
        assert abs(curve_basis_boundary(x)[0].sum() - 1) < 1e-14
        assert abs(curve_basis(x)[1].sum()) < 1e-14


class TestSubdivisionLevel:
    @pytest.mark.parametrize("pt,expect", [((0.6, 0.6), (1, 2)), ((0.26, 0.10), (2, 1)),
                                           ((0.3, 0.4), (2, 2)), ((0.1, 0.45), (2, 3)),
                                           ((1.0, 0.0), (1, 1)), ((0.5, 0.5), (1, 2)),
                                           ((0.25, 0.0), (2, 1))])
    def test_examples(self, pt, expect):
        assert subdivision_level(pt) == expect

    def test_singular_point(self):
        with pytest.raises(SingularPointError):
            subdivision_level((0.0, 0.0))

    def test_deep_points_are_clamped(self):
        n, _, _, p = stam_map(np.array([[1e-9, 0.0], [3e-8, 2e-8]]))
        assert np.all(n == 20)
        assert np.allclose(p.max(axis=1), 2.0 ** -20)

    @given(open_unit, unit)
    def test_sub_element_contains_point(self, a, b):
        n, k, xb, p = stam_map(np.array([[a, b]]))
        assert 1 <= n[0] <= 20 and k[0] in (1, 2, 3)
        assert np.all((xb >= 0) & (xb <= 1))
        offset = {1: (1, 0), 2: (1, 1), 3: (0, 1)}[int(k[0])]
        back = (xb[0] + offset) * 2.0 ** -int(n[0])
        assert np.allclose(back, p[0], atol=1e-15)


KINDS = [(PatchKind.REGULAR, None), (PatchKind.BOUNDARY_EDGE, None),
         (PatchKind.BOUNDARY_CORNER, None), (PatchKind.IRREGULAR, 3),
         (PatchKind.IRREGULAR, 5), (PatchKind.IRREGULAR, 7)]


class TestSurfaceBasis:
    @pytest.mark.parametrize("kind,valence", KINDS)
    def test_partition_of_unity(self, kind, valence):
        pts = np.random.default_rng(3).random((1000, 2))
        v, dx, dy = basis_table(kind, valence, pts)
        assert np.max(np.abs(v.sum(axis=1) - 1)) < 1e-12
        assert np.max(np.abs(dx.sum(axis=1))) < 1e-10
        assert np.max(np.abs(dy.sum(axis=1))) < 1e-10

    @pytest.mark.parametrize("kind,valence", KINDS)
    def test_derivatives_by_finite_differences(self, kind, valence):
        pts = 0.1 + 0.8 * np.random.default_rng(4).random((30, 2))
        h = 1e-6
        _, dx, dy = basis_table(kind, valence, pts)
        for axis, d in ((0, dx), (1, dy)):
            step = np.zeros(2)
            step[axis] = h
            plus, minus = basis_table(kind, valence, pts + step)[0], \
                basis_table(kind, valence, pts - step)[0]
            # skip points whose stencil straddles a level boundary
            same = np.ones(len(pts), bool)
            if kind == PatchKind.IRREGULAR:
                a = stam_map(pts + step)
                b = stam_map(pts - step)
                same = (a[0] == b[0]) & (a[1] == b[1])
            fd = (plus - minus) / (2 * h)
            rel = np.abs(fd - d)[same].max() / np.abs(d[same]).max()
            assert rel < 1e-6

    def test_nonnegative_regular(self):
        v, _, _ = regular_table(np.random.default_rng(1).random((200, 2)))
        assert np.all(v >= 0)

    def test_irregular_at_ev_raises(self):
        m = subdivide_mesh(cube_mesh())
        p = classify_elements(m)[0]
        with pytest.raises(SingularPointError):
            evaluate(p, (0.0, 0.0))

    def test_surface_basis_rejects_irregular(self):
        p = classify_elements(subdivide_mesh(cube_mesh()))[0]
        with pytest.raises(ValueError):
            surface_basis(p, (0.5, 0.5))

    def test_eval_irregular_checks_valence(self):
        p = classify_elements(subdivide_mesh(cube_mesh()))[0]
        with pytest.raises(ValueError):
            eval_irregular(p, build_operators(5), (0.5, 0.5))
        b = eval_irregular(p, build_operators(3), (0.5, 0.5))
        assert b.n_basis == 14

    def test_valence_four_equals_regular(self):
        m = bumpy_grid(6, seed=7)
        pts = np.random.default_rng(8).random((200, 2)) * 0.999 + 0.001
        checked = 0
        for reg in classify_elements(m):
            if reg.kind != PatchKind.REGULAR:
                continue
            ev = m.corner(reg.face, reg.rotation, 0)
            irr = extract_irregular_patch(m, reg.face, ev)
            assert irr.rotation == reg.rotation
            a = [t @ m.vertices[list(reg.indices)] for t in regular_table(pts)]
            b = [t @ m.vertices[list(irr.indices)] for t in irregular_table(4, pts)]
            for x, y in zip(a, b):
                assert np.max(np.abs(x - y)) < 1e-10
            checked += 1
        assert checked == 16

    @pytest.mark.parametrize("valence", [3, 5, 6])
    def test_level_boundaries_agree(self, valence):
        """A point on the boundary between levels n and n+1 evaluates the same from both."""
        ops = build_operators(valence)
        for n in (1, 2, 5):
            for t in (0.2, 0.5, 0.9):
                x = np.array([[2.0 ** -n, t * 2.0 ** -n]])  # lowest edge of level n
                vals = irregular_table(valence, x)
                # same point on the outer edge of level n + 1: xi_bar = (1, 2t)
                sub, yb = (1, 2 * t) if 2 * t < 1 else (2, 2 * t - 1)
                other = [tab @ ops.picking(n + 1, sub) for tab in regular_table([[1.0, yb]])]
                assert np.max(np.abs(vals[0] - other[0])) < 1e-10
                assert np.max(np.abs(vals[1] - 2.0 ** (n + 1) * other[1])) < 1e-10 * 2 ** n
                assert np.max(np.abs(vals[2] - 2.0 ** (n + 1) * other[2])) < 1e-10 * 2 ** n


def _edge_points(t):
    return [np.column_stack([t, 0 * t]), np.column_stack([1 + 0 * t, t]),
            np.column_stack([1 - t, 1 + 0 * t]), np.column_stack([0 * t, 1 - t])]


def _edge_geometry(mesh, patch, t):
    out = []
    for pts in _edge_points(t):
        v, dx, dy = basis_table(patch.kind, patch.valence, pts)
        P = mesh.vertices[list(patch.indices)]
        n = np.cross(dx @ P, dy @ P)
        out.append((v @ P, n / np.linalg.norm(n, axis=1)[:, None]))
    return out


@pytest.mark.parametrize("mesh_fn", [lambda: subdivide_mesh(cube_mesh()), generate_plate_ev,
                                     lambda: bumpy_grid(5, seed=9)])
def test_continuity_across_element_edges(mesh_fn):
    mesh = mesh_fn()
    patches = classify_elements(mesh)
    t = np.array([0.15, 0.5, 0.85])  # symmetric, so reversal maps t to 1 - t
    geo = {p.face: _edge_geometry(mesh, p, t) for p in patches}
    shared = 0
    for (a, b), faces in mesh.edge_faces.items():
        if len(faces) != 2 or a > b:
            continue
        fa, fb = faces
        best = min(
            (np.max(np.abs(xa - xb[::-1])), np.max(np.abs(na - nb[::-1])))
            for xa, na in geo[fa] for xb, nb in geo[fb])
        assert best[0] < 1e-10 and best[1] < 1e-9
        shared += 1
    assert shared > 0


class TestGeometry:
    def test_flat_plate_jacobian(self):
        m = generate_plate(4, size=2.0)
        for p in classify_elements(m):
            for xi in ((0.3, 0.7), (0.0, 1.0), (0.5, 0.5)):
                J = jacobian(p, m, xi)
                # the element frame may be rotated by quarter turns
                JtJ = J.T @ J
                assert np.allclose(JtJ, 0.25 * np.eye(2), atol=1e-13)
                assert J[2].tolist() == [0.0, 0.0]

    def test_flat_plate_is_linear(self):
        m = generate_plate(4, size=2.0)
        for p in classify_elements(m):
            x0 = limit_position(p, m, (0.0, 0.0))
            assert np.allclose(x0, m.vertices[m.corner(p.face, p.rotation, 0)], atol=1e-14)

    @settings(max_examples=20, deadline=None)
    @given(arrays(np.float64, (3, 3), elements=st.floats(-2, 2)),
           arrays(np.float64, 3, elements=st.floats(-5, 5)),
           st.floats(0.01, 1.0), st.floats(0.0, 1.0))
    def test_affine_reproduction(self, A, b, s, t):
        m = generate_plate_ev()
        mapped = m.with_vertices(m.vertices @ A.T + b)
        scale = max(1.0, np.abs(A).sum() * np.abs(m.vertices).max() + np.abs(b).max())
        for p in classify_elements(m)[::7]:
            x = limit_position(p, m, (s, t))
            y = limit_position(p, mapped, (s, t))
            assert np.max(np.abs(y - (A @ x + b))) <= 1e-12 * scale
