import itertools
import math

import numpy as np
import pytest

from ustflow.errors import ZeroDenominator
from ustflow.mesh import SimplexMesh
from ustflow.stabilization import (g_vector, mesh_metric, metric_contravariant,
                                   prism_shape_functions, prism_geometry,
                                   reference_derivative, regular_simplex_map,
                                   stabilization_for_mesh, tau_continuity,
                                   tau_momentum)

from conftest import random_simplex


def mesh_of(X):
    dim = X.shape[1]
    return SimplexMesh(X, [list(range(dim + 1))], np.zeros((0, dim), dtype=int),
                       np.zeros(0, dtype=int), [], fix_orientation=False)


class TestRegularSimplexMap:
    def test_unit_measure_and_equilateral(self):
        for dim in (2, 3, 4):
            M = regular_simplex_map(dim)
            assert abs(np.linalg.det(M)) == pytest.approx(math.factorial(dim))
            verts = np.vstack([np.zeros(dim), M.T])
            d = [np.linalg.norm(verts[i] - verts[j])
                 for i in range(dim + 1) for j in range(i)]
            assert np.ptp(d) < 1e-12 * d[0]


class TestMetric:
    def test_regular_element_gives_identity(self):
        for dim in (2, 3, 4):
            M = regular_simplex_map(dim)
            # element whose physical-to-regular map is the identity
            X = np.vstack([np.zeros(dim), M.T])
            J = (X[1:] - X[0]).T
            Ginv = metric_contravariant(J)
            assert np.allclose(Ginv, np.eye(dim), atol=1e-12)

    def test_uniform_scaling(self, rng):
        X = random_simplex(rng, 4)
        J = (X[1:] - X[0]).T
        G1 = metric_contravariant(J)
        G2 = metric_contravariant(2.0 * J)
        assert np.allclose(G2, G1 / 4.0, atol=1e-12 * np.abs(G1).max())
        GG1 = np.tensordot(G1, G1)
        GG2 = np.tensordot(G2, G2)
        assert GG2 == pytest.approx(GG1 / 16.0, rel=1e-12)

    def test_node_permutation_invariance_pentatope(self, rng):
        X = random_simplex(rng, 4)
        mesh_ref = mesh_of(X)
        Gref, gref, _, _ = mesh_metric(mesh_ref)
        for perm in itertools.permutations(range(5)):
            m = mesh_of(X[list(perm)])
            G, g, _, _ = mesh_metric(m)
            assert np.abs(G - Gref).max() < 1e-12 * np.abs(Gref).max()
            assert np.abs(g - gref).max() < 1e-12 * max(np.abs(gref).max(), 1)

    def test_spd_on_random_elements(self, rng):
        for dim in (3, 4):
            for _ in range(500):
                X = random_simplex(rng, dim)
                G = metric_contravariant((X[1:] - X[0]).T)
                ev = np.linalg.eigvalsh(G)
                assert ev.min() > 0.0
                assert np.abs(G - G.T).max() < 1e-12 * np.abs(G).max()


class TestTauMomentum:
    def test_identity_metric_pure_advection(self):
        tau = tau_momentum(np.array([1.0, 0.0]), 0.0, np.eye(3), C_I=1.0)
        assert tau == pytest.approx(2.0 ** -0.5, rel=1e-14)

    def test_identity_metric_viscous_4d(self):
        tau = tau_momentum(np.zeros(3), 1.0, np.eye(4), C_I=1.0)
        assert tau == pytest.approx(5.0 ** -0.5, rel=1e-14)

    def test_scaling_homogeneity(self, rng):
        X = random_simplex(rng, 3)
        J = (X[1:] - X[0]).T
        u = rng.uniform(-1, 1, size=2)
        for s in (2.0, 5.0, 0.3):
            t1 = tau_momentum(u, 0.0, metric_contravariant(J))
            t2 = tau_momentum(u, 0.0, metric_contravariant(s * J))
            assert t2 == pytest.approx(s * t1, rel=1e-12)


class TestGVector:
    def test_right_reference_simplex_oracle(self):
        # Hand oracle for the unit right simplex.  Canonical order: the
        # origin is strictly closest to the barycenter (n/(n+1)^2 vs
        # (n^2+n-1)/(n+1)^2), and the tied unit vectors sort as
        # e_n < e_{n-1} < ... < e_1 by coordinates.  The canonical Jacobian
        # is then the column-reversal permutation P, so A = M @ P.
        for dim in (3, 4):
            X = np.vstack([np.zeros(dim), np.eye(dim)])
            J = (X[1:] - X[0]).T
            M = regular_simplex_map(dim)
            P = np.eye(dim)[:, ::-1]
            A = reference_derivative(J)
            assert np.allclose(A, M @ P, atol=1e-13)
            g = g_vector(J)
            assert np.allclose(g, (M @ P).sum(axis=0)[: dim - 1], atol=1e-13)

    def test_definition_composition(self, rng):
        # A recomputed from its definition: regular map composed with the
        # inverse canonically-ordered element Jacobian
        from ustflow.stabilization import canonical_vertex_order
        for dim in (3, 4):
            X = random_simplex(rng, dim)
            J = (X[1:] - X[0]).T
            V = np.vstack([np.zeros((1, dim)), J.T])[None]
            order = canonical_vertex_order(V)[0]
            Vc = V[0][order]
            Jc = (Vc[1:] - Vc[0]).T
            A_expected = regular_simplex_map(dim) @ np.linalg.inv(Jc)
            assert np.allclose(reference_derivative(J), A_expected,
                               atol=1e-12)
            assert np.allclose(g_vector(J),
                               A_expected.sum(axis=0)[: dim - 1], atol=1e-12)

    def test_uniform_scaling(self, rng):
        X = random_simplex(rng, 4)
        J = (X[1:] - X[0]).T
        g1 = g_vector(J)
        g2 = g_vector(3.0 * J)
        assert np.allclose(g2, g1 / 3.0, atol=1e-13)

    def test_norm_invariant_under_spatial_rotation(self, rng):
        # rotating the element in space (time fixed) preserves |g|
        X = random_simplex(rng, 3)
        theta = 0.7
        R = np.array([[math.cos(theta), -math.sin(theta), 0.0],
                      [math.sin(theta), math.cos(theta), 0.0],
                      [0.0, 0.0, 1.0]])
        g1 = g_vector((X[1:] - X[0]).T)
        Xr = X @ R.T
        g2 = g_vector((Xr[1:] - Xr[0]).T)
        assert np.linalg.norm(g1) == pytest.approx(np.linalg.norm(g2),
                                                   rel=1e-12)


class TestTauContinuity:
    def test_direct_formula(self):
        assert tau_continuity(1.0, np.array([1.0, 1.0])) == pytest.approx(0.5)

    def test_doubling_tau_mom_halves(self):
        g = np.array([0.3, -0.4])
        assert tau_continuity(2.0, g) == pytest.approx(
            0.5 * tau_continuity(1.0, g))

    def test_identity_on_random_elements(self, rng):
        for _ in range(50):
            X = random_simplex(rng, 4)
            J = (X[1:] - X[0]).T
            G = metric_contravariant(J)
            g = g_vector(J)
            u = rng.uniform(-1, 1, size=3)
            tm = tau_momentum(u, 0.1, G)
            tc = tau_continuity(tm, g)
            assert tc * tm * (g @ g) == pytest.approx(1.0, rel=1e-12)

    def test_zero_denominator(self):
        with pytest.raises(ZeroDenominator):
            tau_continuity(0.0, np.array([1.0, 0.0]))


class TestMeshStabilization:
    def test_tau_positive_on_mesh(self, rng):
        from ustflow.extrude import ExtrusionSpec, extrude_simplex_st
        from ustflow.geometry import box2d
        st = extrude_simplex_st(box2d(3, 3), ExtrusionSpec(0.0, 0.1, 2))
        u = rng.uniform(-1, 1, size=(st.n_elements, 2))
        ctx = stabilization_for_mesh(st, u, nu=0.01)
        assert (ctx.tau_mom > 0).all()
        assert (ctx.tau_cont > 0).all()
        assert ctx.C_I == 1.0


class TestPrismShapeFunctions:
    def test_bottom_top_limits(self, rng):
        xi = rng.dirichlet(np.ones(3))[:2]
        Ns = prism_shape_functions(xi, 0.0)
        from ustflow.mesh import basis_eval
        assert np.allclose(Ns[:3], basis_eval(xi, 2))
        assert np.allclose(Ns[3:], 0.0)
        Nt = prism_shape_functions(xi, 1.0)
        assert np.allclose(Nt[:3], 0.0)
        assert np.allclose(Nt[3:], basis_eval(xi, 2))

    def test_partition_of_unity(self, rng):
        for n_sd in (2, 3):
            xi = rng.dirichlet(np.ones(n_sd + 1), size=200)[:, :n_sd]
            th = rng.uniform(0, 1, size=200)
            vals = prism_shape_functions(xi, th)
            assert np.abs(vals.sum(axis=-1) - 1.0).max() < 1e-14

    def test_twisted_prism_geometry_volume(self, rng):
        # straight prism: sum of w * detJ over the rule = area * dt
        tri = rng.uniform(-1, 1, size=(3, 2))
        area = abs(np.linalg.det((tri[1:] - tri[0]).T)) / 2.0
        dt = 0.37
        from ustflow.quadrature import prism_quadrature
        rule = prism_quadrature(2)
        total = 0.0
        for p, w in zip(rule.points, rule.weights):
            _, _, dJ, _ = prism_geometry(tri[None], tri[None], 0.0, dt,
                                         p[:2], p[2])
            total += w * abs(dJ[0])
        assert total == pytest.approx(area * dt, rel=1e-12)

    def test_prism_gradients_reproduce_linear_field(self, rng):
        # twisted prism: space-time gradients must differentiate an affine
        # field in (x, t) exactly at every quadrature point
        tri = rng.uniform(-1, 1, size=(3, 2))
        ang = 0.3
        R = np.array([[math.cos(ang), -math.sin(ang)],
                      [math.sin(ang), math.cos(ang)]])
        top = tri @ R.T
        dt = 0.5
        a = np.array([0.7, -1.1, 0.4])  # gradient in (x, y, t)
        nodes_b = np.column_stack([tri, np.zeros(3)])
        nodes_t = np.column_stack([top, np.full(3, dt)])
        vals = np.concatenate([nodes_b @ a, nodes_t @ a])
        from ustflow.quadrature import prism_quadrature
        rule = prism_quadrature(2)
        for p, w in zip(rule.points, rule.weights):
            _, _, _, grads = prism_geometry(tri[None], top[None], 0.0, dt,
                                            p[:2], p[2])
            got = np.einsum("ad,a->d", grads[0], vals)
            assert np.allclose(got, a, atol=1e-12)
