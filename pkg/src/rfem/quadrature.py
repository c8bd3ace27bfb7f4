"""Quadrature rules on the reference triangle and the unit interval.

Triangle rules are conical (collapsed) products of a Gauss-Legendre rule and a
Gauss-Jacobi rule, so all weights are positive and the degree-1 rule is the
centroid rule.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import roots_jacobi

MAX_DEGREE = 8


@dataclass(frozen=True)
class QuadRule:
    """Points and weights of a quadrature rule.

    ``points`` has shape ``(nq, 2)`` (reference triangle coordinates) or
    ``(nq,)`` (parameter on [0, 1]).
    """

    points: np.ndarray
    weights: np.ndarray
    exact_degree: int

    def __len__(self) -> int:
        return len(self.weights)


def _check_degree(degree: int) -> int:
    degree = int(degree)
    if not 1 <= degree <= MAX_DEGREE:
        raise ValueError(f"quadrature degree must be in 1..{MAX_DEGREE}, got {degree}")
    return degree


@lru_cache(maxsize=None)
def edge_rule(degree: int) -> QuadRule:
    """Gauss-Legendre rule on [0, 1] exact for polynomials of ``degree``."""
    degree = _check_degree(degree)
    n = (degree + 2) // 2
    x, w = np.polynomial.legendre.leggauss(n)
    pts = 0.5 * (x + 1.0)
    wts = 0.5 * w
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, degree)


@lru_cache(maxsize=None)
def tri_rule(degree: int) -> QuadRule:
    """Rule on the triangle (0,0), (1,0), (0,1) exact to total ``degree``."""
    degree = _check_degree(degree)
    n = (degree + 2) // 2
    s, ws = np.polynomial.legendre.leggauss(n)
    s = 0.5 * (s + 1.0)
    ws = 0.5 * ws
    # weight (1 - t) on [0, 1] absorbs the collapse Jacobian
    t, wt = roots_jacobi(n, 1.0, 0.0)
    t = 0.5 * (t + 1.0)
    wt = 0.25 * wt
    S, T = np.meshgrid(s, t, indexing="ij")
    W = np.outer(ws, wt)
    pts = np.column_stack([(S * (1.0 - T)).ravel(), T.ravel()])
    wts = W.ravel()
    pts.setflags(write=False)
    wts.setflags(write=False)
    return QuadRule(pts, wts, degree)
