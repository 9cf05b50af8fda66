import itertools

import numpy as np
import pytest

from ustflow.errors import UnsupportedRule
from ustflow.quadrature import (interval_gauss, prism_quadrature,
                                simplex_monomial_integral, simplex_quadrature)


def quad_integrate(rule, fn):
    return sum(w * fn(p) for p, w in zip(rule.points, rule.weights))


class TestSimplexRule:
    def test_constant_over_reference_tet(self):
        rule = simplex_quadrature(3)
        assert sum(rule.weights) == pytest.approx(1.0 / 6.0, abs=1e-15)

    def test_linear_over_4simplex(self):
        rule = simplex_quadrature(4)
        val = quad_integrate(rule, lambda p: p[0])
        assert val == pytest.approx(1.0 / 120.0, abs=1e-15)

    def test_quadratic_over_triangle(self):
        rule = simplex_quadrature(2)
        val = quad_integrate(rule, lambda p: p[0] ** 2)
        assert val == pytest.approx(1.0 / 12.0, abs=1e-15)

    def test_all_monomials_to_degree_2(self):
        for dim in (2, 3, 4):
            rule = simplex_quadrature(dim)
            for powers in itertools.product(range(3), repeat=dim):
                if sum(powers) > 2:
                    continue
                exact = simplex_monomial_integral(dim, powers)
                val = quad_integrate(
                    rule, lambda p: np.prod([p[d] ** powers[d]
                                             for d in range(dim)]))
                assert val == pytest.approx(exact, abs=1e-14), (dim, powers)

    def test_points_interior_weights_positive(self):
        for dim in (2, 3, 4):
            rule = simplex_quadrature(dim)
            assert (rule.weights > 0).all()
            assert (rule.points > 0).all()
            assert (rule.points.sum(axis=1) < 1.0).all()

    def test_unsupported(self):
        with pytest.raises(UnsupportedRule):
            simplex_quadrature(5)
        with pytest.raises(UnsupportedRule):
            simplex_quadrature(3, degree=7)


class TestPrismRule:
    def test_constant_over_unit_triangle_prism(self):
        rule = prism_quadrature(2)
        assert sum(rule.weights) == pytest.approx(0.5, abs=1e-15)

    def test_linear_in_theta(self):
        # integral of theta over (triangle x [0,1]) is area * 1/2
        rule = prism_quadrature(2)
        val = quad_integrate(rule, lambda p: p[2])
        assert val == pytest.approx(0.25, abs=1e-15)

    def test_cubic_in_theta_exact(self):
        rule = prism_quadrature(2)
        val = quad_integrate(rule, lambda p: p[2] ** 3)
        assert val == pytest.approx(0.5 * 0.25, abs=1e-15)

    def test_mixed_spatial_temporal(self):
        rule = prism_quadrature(3)
        exact = simplex_monomial_integral(3, (1, 1, 0)) * 0.5
        val = quad_integrate(rule, lambda p: p[0] * p[1] * p[3])
        assert val == pytest.approx(exact, abs=1e-15)

    def test_weights_positive(self):
        for n_sd in (2, 3):
            rule = prism_quadrature(n_sd)
            assert (rule.weights > 0).all()


class TestGauss:
    def test_two_point_rule_on_unit_interval(self):
        rule = interval_gauss(2)
        assert sum(rule.weights) == pytest.approx(1.0)
        val = quad_integrate(rule, lambda p: p[0] ** 3)
        assert val == pytest.approx(0.25, abs=1e-15)
