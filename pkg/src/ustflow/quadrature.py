"""Quadrature rules on reference simplices and simplex-prisms.

The simplex degree-2 rule is the interior (dim+2-point-free) symmetric rule
with dim+1 points: point k has barycentric coordinate a at vertex k and b
elsewhere, a = (1 + dim/sqrt(dim+2))/(dim+1), all weights equal.  Prism
rules are tensor products of a spatial simplex rule with a 2-point Gauss
rule on the unit interval in the extrusion coordinate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UnsupportedRule


@dataclass(frozen=True)
class QuadratureRule:
    """Reference-domain quadrature: weights sum to the reference measure."""
    points: np.ndarray   # (nq, dim)
    weights: np.ndarray  # (nq,)
    dim: int
    degree: int


def simplex_quadrature(dim: int, degree: int = 2) -> QuadratureRule:
    """Rule on the unit right simplex, exact for polynomials up to ``degree``."""
    if dim not in (2, 3, 4):
        raise UnsupportedRule(f"unsupported simplex dimension {dim}")
    ref_measure = 1.0 / math.factorial(dim)
    if degree == 1:
        pts = np.full((1, dim), 1.0 / (dim + 1))
        wts = np.array([ref_measure])
    elif degree == 2:
        a = (1.0 + dim / math.sqrt(dim + 2.0)) / (dim + 1.0)
        b = (1.0 - a) / dim
        pts = np.full((dim + 1, dim), b)
        for k in range(1, dim + 1):
            pts[k, k - 1] = a
        wts = np.full(dim + 1, ref_measure / (dim + 1.0))
    else:
        raise UnsupportedRule(f"unsupported simplex degree {degree}")
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, dim, degree)


def interval_gauss(n_points: int = 2) -> QuadratureRule:
    """Gauss-Legendre rule on [0, 1]."""
    x, w = np.polynomial.legendre.leggauss(n_points)
    pts = (0.5 * (x + 1.0)).reshape(-1, 1)
    wts = 0.5 * w
    return QuadratureRule(pts, wts, 1, 2 * n_points - 1)


def prism_quadrature(dim_spatial: int, degree: int = 2) -> QuadratureRule:
    """Tensor rule on (unit right simplex) x [0, 1].

    Points are (xi_1 .. xi_{dim_spatial}, theta).  Exact for products of a
    spatial polynomial of degree <= ``degree`` with a temporal polynomial of
    degree <= 3.
    """
    simplex = simplex_quadrature(dim_spatial, degree)
    line = interval_gauss(2)
    ns, nl = len(simplex.weights), len(line.weights)
    pts = np.empty((ns * nl, dim_spatial + 1))
    wts = np.empty(ns * nl)
    k = 0
    for i in range(ns):
        for j in range(nl):
            pts[k, :dim_spatial] = simplex.points[i]
            pts[k, dim_spatial] = line.points[j, 0]
            wts[k] = simplex.weights[i] * line.weights[j]
            k += 1
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadratureRule(pts, wts, dim_spatial + 1, degree)


def simplex_monomial_integral(dim: int, powers) -> float:
    """Exact integral of prod(xi_d^p_d) over the unit right simplex.

    Uses the Dirichlet formula with the barycentric exponent of the first
    vertex equal to zero.
    """
    powers = list(powers)
    num = 1.0
    for p in powers:
        num *= math.factorial(p)
    return num / math.factorial(sum(powers) + dim)
