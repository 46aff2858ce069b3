"""Quadrature rules on simplices of dimension 0 to 3.

Rules are stored in barycentric form with weights normalized to sum to one,
so integrating over a physical simplex is ``measure * sum(w * f(x))``.
Triangle and tetrahedron rules are collapsed (conical) Gauss-Jacobi products;
they have positive weights and are exact for polynomials of the requested
total degree.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from math import factorial

import numpy as np
from scipy.special import roots_jacobi


@dataclass(frozen=True)
class SimplexRule:
    bary: np.ndarray  # (nq, d + 1)
    weights: np.ndarray  # (nq,), sum to 1

    @property
    def npoints(self) -> int:
        return self.weights.shape[0]

    def points(self, vertices: np.ndarray) -> np.ndarray:
        """Map the rule onto a simplex given by its (d + 1, N) vertices."""
        return self.bary @ vertices


def _jacobi01(n: int, alpha: int):
    # nodes/weights on [0, 1] for the weight (1 - u)^alpha
    t, w = roots_jacobi(n, alpha, 0)
    u = 0.5 * (1.0 + t)
    return u, w / 2.0 ** (alpha + 1)


@lru_cache(maxsize=None)
def simplex_rule(dim: int, order: int) -> SimplexRule:
    """Positive rule on the reference ``dim``-simplex exact to degree ``order``."""
    if dim == 0:
        return SimplexRule(np.ones((1, 1)), np.ones(1))
    n = max(1, int(np.ceil((order + 1) / 2)))
    if dim == 1:
        u, w = _jacobi01(n, 0)
        ref = u[:, None]
    elif dim == 2:
        u, wu = _jacobi01(n, 1)
        v, wv = _jacobi01(n, 0)
        U, V = np.meshgrid(u, v, indexing="ij")
        ref = np.column_stack([U.ravel(), (V * (1 - U)).ravel()])
        w = np.outer(wu, wv).ravel()
    elif dim == 3:
        u, wu = _jacobi01(n, 2)
        v, wv = _jacobi01(n, 1)
        s, ws = _jacobi01(n, 0)
        U, V, S = np.meshgrid(u, v, s, indexing="ij")
        ref = np.column_stack(
            [U.ravel(), (V * (1 - U)).ravel(), (S * (1 - U) * (1 - V)).ravel()]
        )
        w = np.einsum("i,j,k->ijk", wu, wv, ws).ravel()
    else:
        raise ValueError(f"unsupported simplex dimension {dim}")
    w = w * factorial(dim)
    bary = np.column_stack([1.0 - ref.sum(axis=1), ref])
    return SimplexRule(bary, w / w.sum())


def simplex_measure(vertices: np.ndarray) -> float:
    """Measure of a k-simplex embedded in R^N (k = number of vertices - 1)."""
    vertices = np.asarray(vertices, dtype=float)
    k = vertices.shape[0] - 1
    if k == 0:
        return 1.0
    E = (vertices[1:] - vertices[0]).T
    G = E.T @ E
    det = np.linalg.det(G)
    return float(np.sqrt(max(det, 0.0)) / factorial(k))


def simplex_measures(vertices: np.ndarray) -> np.ndarray:
    """Vectorized :func:`simplex_measure` over a stack (m, k + 1, N)."""
    vertices = np.asarray(vertices, dtype=float)
    k = vertices.shape[1] - 1
    if k == 0:
        return np.ones(vertices.shape[0])
    E = vertices[:, 1:] - vertices[:, :1]
    G = np.einsum("mia,mja->mij", E, E)
    det = np.linalg.det(G)
    return np.sqrt(np.maximum(det, 0.0)) / factorial(k)


@dataclass
class QuadratureSet:
    """A flat collection of weighted points (weights carry the measure)."""

    points: np.ndarray
    weights: np.ndarray

    @classmethod
    def empty(cls, dim: int) -> "QuadratureSet":
        return cls(np.zeros((0, dim)), np.zeros(0))

    @classmethod
    def from_simplices(cls, simplices, order: int, dim: int) -> "QuadratureSet":
        """Compose the reference rule over a list of (k + 1, N) simplices."""
        if len(simplices) == 0:
            return cls.empty(dim)
        S = np.asarray(simplices, dtype=float)
        k = S.shape[1] - 1
        rule = simplex_rule(k, order)
        meas = simplex_measures(S)
        pts = np.einsum("qi,mia->mqa", rule.bary, S).reshape(-1, S.shape[2])
        w = (meas[:, None] * rule.weights[None, :]).ravel()
        return cls(pts, w)

    def integrate(self, values) -> float:
        return float(np.dot(self.weights, values))

    @property
    def measure(self) -> float:
        return float(self.weights.sum())
