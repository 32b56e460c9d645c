r"""Tensorized Legendre chaos basis.

Provides total-degree multi-index sets, evaluation of Legendre polynomials
orthonormalized with respect to the uniform probability measure on
$[-1, 1]$, i.e.

$$
\int_{-1}^{1} L_a(\xi) L_b(\xi) \, \frac{d\xi}{2} = \delta_{ab},
$$

tensorized basis evaluation on $[-1, 1]^s$, and the symmetric
coordinate-multiplication matrices that represent multiplication by a
single coordinate in the truncated basis.  These matrices couple only
neighbouring polynomial degrees, which gives the coupled Galerkin system
its block-sparse structure.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from math import comb

import numpy as np


def _compositions(dim: int, total: int):
    """Yield all tuples of `dim` non-negative integers summing to `total`,
    in ascending lexicographic order."""
    if dim == 1:
        yield (total,)
        return
    for first in range(total + 1):
        for rest in _compositions(dim - 1, total - first):
            yield (first,) + rest


@dataclass(frozen=True)
class IndexSet:
    """Total-degree multi-index set in graded lexicographic order.

    Attributes:
        dim: number of random coordinates s (0 allowed: single empty index).
        degree: total-degree bound p.
        indices: integer array of shape (size, dim); the zero index comes
            first and members are sorted by total degree, ties broken
            lexicographically.
    """

    dim: int
    degree: int
    indices: np.ndarray = field(repr=False)

    @property
    def size(self) -> int:
        """Number of basis functions, comb(dim + degree, degree)."""
        return self.indices.shape[0]

    def orders(self) -> np.ndarray:
        """Total degree of each member."""
        return self.indices.sum(axis=1)


def total_degree_set(dim: int, degree: int) -> IndexSet:
    """Build the multi-index set {nu : |nu| <= degree} for `dim` coordinates.

    Members are enumerated in graded lexicographic order with the zero
    index first.  `dim = 0` yields the single empty index (a purely
    deterministic basis).
    """
    if dim < 0:
        raise ValueError(f"dimension must be non-negative, got {dim}")
    if degree < 0:
        raise ValueError(f"degree must be non-negative, got {degree}")
    if dim == 0:
        indices = np.zeros((1, 0), dtype=np.int64)
    else:
        members = [
            idx
            for total in range(degree + 1)
            for idx in _compositions(dim, total)
        ]
        indices = np.asarray(members, dtype=np.int64)
    indices.setflags(write=False)
    iset = IndexSet(dim=dim, degree=degree, indices=indices)
    assert iset.size == comb(dim + degree, degree)
    return iset


def legendre_table(max_degree: int, points: np.ndarray) -> np.ndarray:
    r"""Evaluate the orthonormal Legendre polynomials $L_0, \ldots, L_n$.

    Uses the standard three-term recurrence on the unnormalized
    polynomials and rescales each degree by $\sqrt{2n + 1}$ so that
    $\int_{-1}^1 L_n^2 \, d\xi / 2 = 1$.

    Args:
        max_degree: highest degree n to evaluate.
        points: sample points in [-1, 1], shape (n_points,).

    Returns:
        Array of shape (n_points, n + 1).
    """
    x = np.atleast_1d(np.asarray(points, dtype=float))
    if x.ndim != 1:
        raise ValueError("points must be one-dimensional")
    if np.any(np.abs(x) > 1.0 + 1e-12):
        raise ValueError("Legendre evaluation points must lie in [-1, 1]")

    table = np.zeros((x.size, max_degree + 1))
    table[:, 0] = 1.0
    if max_degree >= 1:
        table[:, 1] = x
    for k in range(1, max_degree):
        table[:, k + 1] = ((2 * k + 1) * x * table[:, k] - k * table[:, k - 1]) / (k + 1)
    table *= np.sqrt(2.0 * np.arange(max_degree + 1) + 1.0)
    return table


def legendre_value(degree: int, point) -> np.ndarray | float:
    """Single orthonormal Legendre polynomial at one or more points."""
    if degree < 0:
        raise ValueError(f"degree must be non-negative, got {degree}")
    pts = np.atleast_1d(np.asarray(point, dtype=float))
    vals = legendre_table(degree, pts)[:, degree]
    return float(vals[0]) if np.isscalar(point) or np.ndim(point) == 0 else vals


def tensor_value(index, point) -> float:
    r"""Tensorized basis value $\prod_j L_{\nu_j}(\sigma_j)$ at one point."""
    nu = np.asarray(index, dtype=np.int64)
    sigma = np.atleast_1d(np.asarray(point, dtype=float))
    if nu.shape != sigma.shape:
        raise ValueError(
            f"index of length {nu.size} does not match point of length {sigma.size}"
        )
    out = 1.0
    for n, x in zip(nu, sigma):
        out *= legendre_value(int(n), float(x))
    return out


def basis_matrix(index_set: IndexSet, points: np.ndarray) -> np.ndarray:
    """Evaluate every tensorized basis function on a batch of points.

    Args:
        index_set: truncated multi-index set.
        points: array of shape (n_points, dim).

    Returns:
        Array of shape (n_points, index_set.size).
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts.reshape(1, -1)
    if pts.shape[1] != index_set.dim:
        raise ValueError(
            f"points have dimension {pts.shape[1]}, index set has {index_set.dim}"
        )
    if index_set.dim == 0:
        return np.ones((pts.shape[0], 1))

    tables = [
        legendre_table(index_set.degree, pts[:, j]) for j in range(index_set.dim)
    ]
    out = np.ones((pts.shape[0], index_set.size))
    for k, nu in enumerate(index_set.indices):
        for j, n in enumerate(nu):
            if n > 0:
                out[:, k] *= tables[j][:, n]
    return out


def univariate_coordinate_pairings(degree: int) -> np.ndarray:
    r"""Pairings $\int \xi L_a(\xi) L_b(\xi) \, d\xi / 2$ for $a, b \le$ degree.

    Computed with a (degree + 2)-point Gauss rule, exact for the involved
    polynomial integrands.  Nonzero only for $|a - b| = 1$.
    """
    nodes, weights = np.polynomial.legendre.leggauss(degree + 2)
    table = legendre_table(degree, nodes)
    # probability measure d(xi)/2
    scaled = table * (nodes * weights / 2.0)[:, None]
    return table.T @ scaled


def multiplication_matrix(index_set: IndexSet, component: int) -> np.ndarray:
    """Galerkin matrix of multiplication by coordinate `component` (0-based).

    Entry (k, l) equals the integral of sigma_j L_nu L_m over the product
    probability measure, where nu, m are members k, l of the index set.
    It vanishes unless nu and m agree everywhere except in `component`,
    where they differ by exactly one; the structural zeros are exact.
    """
    if not 0 <= component < index_set.dim:
        raise ValueError(
            f"component {component} out of range for dimension {index_set.dim}"
        )
    pair = univariate_coordinate_pairings(index_set.degree)
    idx = index_set.indices
    own = idx[:, component]
    others = np.delete(idx, component, axis=1)
    same_elsewhere = (others[:, None, :] == others[None, :, :]).all(axis=2)
    neighbours = np.abs(own[:, None] - own[None, :]) == 1
    mat = np.zeros((index_set.size, index_set.size))
    rows, cols = np.nonzero(same_elsewhere & neighbours)
    mat[rows, cols] = pair[own[rows], own[cols]]
    return mat
