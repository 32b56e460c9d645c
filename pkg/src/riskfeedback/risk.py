r"""Entropic risk, exponential-tilt weights, and risk-adjusted operators.

The entropic risk of a cost sample set is the smooth tail-weighted
functional

$$
R_\theta(X) = \frac{1}{\theta} \log \mathbb{E}[e^{\theta X}],
$$

which reduces to the mean as $\theta \to 0$.  Every exponential here is
evaluated with a max shift so that large costs scaled by large $\theta$
never overflow.

Second-order expansion of the risk of a squared tracking error produces,
per time node, a weighted expectation plus a $2\theta$-scaled weighted
covariance of observation pairings.  This module assembles the symmetric
Gram-form matrices of those bilinear forms in the chaos basis, together
with the affine vectors (projections of the tilted residual field) that
feed the backward Riccati sweep.  Negative eigenvalues within a small
relative band of zero are clipped; sampling noise can produce them even
though the exact operators are nonnegative.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .galerkin import (
    ControlTrajectory,
    GalerkinSystem,
    PceTrajectory,
    TimeGrid,
    forward_solve,
    surrogate_ensemble,
)
from .pce import IndexSet, basis_matrix

EIGENVALUE_FLOOR = 1e-10


@dataclass(frozen=True)
class SampleNodeSet:
    """Fixed quadrature nodes in [-1, 1]^s with normalized weights.

    Monte Carlo sets carry equal weights 1/N.  The node set is drawn once
    and reused for every evaluation within one outer solve, which makes
    the subproblems deterministic functions of the expansion trajectory.
    """

    nodes: np.ndarray
    weights: np.ndarray
    rule: str = "monte-carlo"

    def __post_init__(self):
        if self.nodes.ndim != 2:
            raise ValueError("nodes must have shape (count, dim)")
        if self.weights.shape != (self.nodes.shape[0],):
            raise ValueError("one weight per node required")
        if np.any(np.abs(self.nodes) > 1.0):
            raise ValueError("nodes must lie in [-1, 1]")
        if abs(self.weights.sum() - 1.0) > 1e-12:
            raise ValueError("weights must sum to one")

    @property
    def count(self) -> int:
        return self.nodes.shape[0]

    @property
    def is_equal_weight(self) -> bool:
        return bool(np.all(np.abs(self.weights - 1.0 / self.count) < 1e-14))


def monte_carlo_nodes(count: int, dim: int, rng: np.random.Generator) -> SampleNodeSet:
    """Draw `count` i.i.d. uniform nodes on [-1, 1]^dim."""
    if count < 2:
        raise ValueError("need at least two sample nodes")
    nodes = rng.uniform(-1.0, 1.0, size=(count, dim))
    return SampleNodeSet(nodes=nodes, weights=np.full(count, 1.0 / count))


def tensor_gauss_nodes(points_per_dim: int, dim: int) -> SampleNodeSet:
    """Tensor Gauss-Legendre rule, weights normalized to the probability measure."""
    x, w = np.polynomial.legendre.leggauss(points_per_dim)
    w = w / 2.0
    grids = np.meshgrid(*([x] * dim), indexing="ij")
    nodes = np.stack([g.ravel() for g in grids], axis=1)
    weights = np.ones(nodes.shape[0])
    for j in range(dim):
        weights *= w[np.argmin(np.abs(nodes[:, j][:, None] - x[None, :]), axis=1)]
    return SampleNodeSet(nodes=nodes, weights=weights, rule="tensor-gauss")


def entropic_risk(values, theta: float, weights=None) -> float:
    """Entropic risk of a sample set; the plain (weighted) mean at theta = 0."""
    x = np.asarray(values, dtype=float).ravel()
    if x.size == 0:
        raise ValueError("entropic risk of an empty sample set is undefined")
    if not np.all(np.isfinite(x)):
        raise ValueError("sample set contains non-finite values")
    if theta < 0.0:
        raise ValueError("risk-aversion parameter must be non-negative")
    w = np.full(x.size, 1.0 / x.size) if weights is None else np.asarray(weights, dtype=float)
    if theta == 0.0:
        return float(w @ x)
    shift = np.max(theta * x)
    return float((shift + np.log(w @ np.exp(theta * x - shift))) / theta)


def exponential_tilt_weights(
    sq_errors: np.ndarray, theta: float, rule_weights: Optional[np.ndarray] = None
) -> np.ndarray:
    """Normalized exponential-tilt weights of squared tracking errors.

    `sq_errors` has one row per sample node (any number of trailing
    columns, e.g. time nodes); each column is normalized so that its
    rule-weighted mean is exactly one.  Max-shifted exponentials keep
    theta * error products from overflowing.
    """
    e = np.asarray(sq_errors, dtype=float)
    if not np.all(np.isfinite(e)):
        raise ValueError("non-finite tracking error in weight computation")
    if theta == 0.0:
        return np.ones_like(e)
    lam = (
        np.full(e.shape[0], 1.0 / e.shape[0])
        if rule_weights is None
        else np.asarray(rule_weights, dtype=float)
    )
    z = theta * e
    shift = z.max(axis=0, keepdims=True)
    num = np.exp(z - shift)
    denom = np.einsum("i,i...->...", lam, num)
    return num / denom


def weighted_covariance_matrix(omega: np.ndarray) -> np.ndarray:
    """Matrix of the unbiased tilt-weighted empirical covariance.

    For weights with sum N the quadratic form x' C x equals
    (N * sum(w x^2) - (sum(w x))^2) / (N (N - 1)); with unit weights this
    is the standard unbiased centering matrix.
    """
    w = np.asarray(omega, dtype=float)
    if np.any(w < 0.0):
        raise ValueError("weights must be non-negative")
    n = w.size
    return (n * np.diag(w) - np.outer(w, w)) / (n * (n - 1))


def squared_tracking_errors(
    ensemble: np.ndarray, target: np.ndarray, mass: np.ndarray, obs_scale: float = 1.0
) -> np.ndarray:
    """Squared observation-space tracking errors of an ensemble.

    Args:
        ensemble: sample trajectories, shape (n_samples, n_nodes, dim).
        target: target trajectory, shape (n_nodes, dim).
        mass: spatial Gram matrix.
        obs_scale: scalar observation operator C = obs_scale * identity.

    Returns:
        Array of shape (n_samples, n_nodes).
    """
    dev = ensemble - target[None]
    sq = np.einsum("ikd,de,ike->ik", dev, mass, dev)
    return obs_scale**2 * np.maximum(sq, 0.0)


def sample_pairing_matrix(
    basis_values: np.ndarray, deviation: np.ndarray, mass: np.ndarray
) -> np.ndarray:
    """Rows pair chaos coefficient vectors with the residual at one node.

    Row i, mode block m equals L_m(sigma_i) times the load vector of the
    residual field evaluated at sigma_i, so that (matrix @ b)_i is the
    spatial inner product of the residual with the surrogate of
    coefficients b at sample i.

    Args:
        basis_values: tensorized basis values, shape (n_samples, modes).
        deviation: residual field at the sample nodes, shape (n_samples, dim).
        mass: spatial Gram matrix.

    Returns:
        Array of shape (n_samples, modes * dim).
    """
    n_samples = basis_values.shape[0]
    loads = deviation @ mass
    return np.einsum("im,id->imd", basis_values, loads).reshape(n_samples, -1)


@dataclass(frozen=True)
class WeightField:
    """Tilt weights per sample node: running (count x n_nodes) and terminal."""

    values: np.ndarray
    terminal: np.ndarray


@dataclass(frozen=True)
class RiskAdjustedOperators:
    """Gram-form quadratic cost data of one linear-quadratic subproblem.

    `running_quad[k]` is the symmetric positive semidefinite running cost
    matrix at time node k and `running_affine[k]` the load-form chaos
    projection of the tilted residual field.  `running_source[k]` is
    their combination Q y_bar - q, which is the product-form shifted
    target term needed by the affine Riccati sweep (the quadratic matrix
    is never inverted).  Terminal quantities are the analogues for the
    terminal penalty; `terminal_offset` is the backward initial value of
    the affine sweep.
    """

    running_quad: np.ndarray
    running_affine: np.ndarray
    running_source: np.ndarray
    terminal_quad: np.ndarray
    terminal_affine: np.ndarray
    terminal_offset: np.ndarray
    weights: WeightField = field(repr=False)


def clip_spectrum(matrix: np.ndarray) -> np.ndarray:
    """Symmetrize and clip tiny negative eigenvalues to zero.

    Eigenvalues below -EIGENVALUE_FLOOR times the matrix 1-norm signal an
    inconsistent sample set and raise; anything in the band is set to
    zero so the result is positive semidefinite.
    """
    sym = 0.5 * (matrix + matrix.T)
    scale = np.linalg.norm(sym, 1)
    if scale == 0.0:
        return sym
    eigvals, eigvecs = np.linalg.eigh(sym)
    floor = -EIGENVALUE_FLOOR * scale
    if eigvals[0] < floor:
        raise ValueError(
            f"cost matrix has eigenvalue {eigvals[0]:.3e} below the clipping "
            f"band {floor:.3e}; sampling inconsistency"
        )
    if eigvals[0] >= 0.0:
        return sym
    clipped = np.maximum(eigvals, 0.0)
    out = (eigvecs * clipped) @ eigvecs.T
    return 0.5 * (out + out.T)


def running_cost_operator(
    basis_values: np.ndarray,
    omega: np.ndarray,
    deviation: np.ndarray,
    mass: np.ndarray,
    theta: float,
    node_set: SampleNodeSet,
    obs_scale: float = 1.0,
    clip: bool = True,
) -> tuple[np.ndarray, np.ndarray]:
    """Assemble the quadratic cost matrix and affine vector at one time node.

    The matrix is the rule-weighted expectation of the tilted observation
    Gram blocks plus 2 theta times the pairing-matrix congruence of the
    weighted covariance matrix.  The affine vector is the load-form chaos
    projection of the tilted residual field.

    Args:
        basis_values: (n_samples, modes) tensorized basis at the nodes.
        omega: tilt weights at this time node, rule-weighted mean one.
        deviation: surrogate minus target at the nodes, (n_samples, dim).
        mass: spatial Gram matrix.
        theta: risk-aversion parameter.
        node_set: the quadrature rule behind the samples.
        obs_scale: scalar observation operator.
        clip: symmetrize and clip the spectrum of the result.
    """
    lam = node_set.weights
    c2 = obs_scale**2
    scaled = basis_values * (lam * omega)[:, None]
    gram = basis_values.T @ scaled
    quad = np.kron(gram, c2 * mass)
    if theta > 0.0:
        if not node_set.is_equal_weight:
            raise NotImplementedError(
                "the unbiased weighted covariance requires an equal-weight rule"
            )
        pairing = sample_pairing_matrix(basis_values, c2 * deviation, mass)
        cov = weighted_covariance_matrix(omega)
        quad += 2.0 * theta * pairing.T @ cov @ pairing
    affine = np.einsum(
        "i,iv,id->vd", lam * omega, basis_values, c2 * deviation @ mass
    ).ravel()
    if clip:
        quad = clip_spectrum(quad)
    return quad, affine


def assemble_operators(
    expansion: PceTrajectory,
    index_set: IndexSet,
    system: GalerkinSystem,
    target: np.ndarray,
    node_set: SampleNodeSet,
    theta: float,
    obs_scale: float = 1.0,
    terminal_scale: float = 0.0,
    terminal_target: Optional[np.ndarray] = None,
) -> RiskAdjustedOperators:
    """Tabulate the risk-adjusted subproblem data along the expansion.

    Weights are evaluated on the surrogate of the expansion trajectory at
    the fixed node set.  A zero terminal penalty (the default) yields zero
    terminal matrices and offsets.
    """
    mass = system.fem.mass
    n_nodes = expansion.coeffs.shape[0]
    size = expansion.coeffs.shape[1]
    basis_values = basis_matrix(index_set, node_set.nodes)
    ens = surrogate_ensemble(expansion, index_set, node_set.nodes)
    dev = ens - target[None]
    sq = squared_tracking_errors(ens, target, mass, obs_scale)
    omega = exponential_tilt_weights(sq, theta, node_set.weights)

    running_quad = np.empty((n_nodes, size, size))
    running_affine = np.empty((n_nodes, size))
    running_source = np.empty((n_nodes, size))
    for k in range(n_nodes):
        quad, affine = running_cost_operator(
            basis_values, omega[:, k], dev[:, k], mass, theta, node_set, obs_scale
        )
        running_quad[k] = quad
        running_affine[k] = affine
        running_source[k] = quad @ expansion.coeffs[k] - affine

    if terminal_scale > 0.0:
        g_term = target[-1] if terminal_target is None else np.asarray(terminal_target, dtype=float)
        dev_term = ens[:, -1] - g_term[None]
        sq_term = terminal_scale**2 * np.einsum(
            "id,de,ie->i", dev_term, mass, dev_term
        )
        omega_term = exponential_tilt_weights(
            sq_term[:, None], theta, node_set.weights
        )[:, 0]
        terminal_quad, terminal_affine = running_cost_operator(
            basis_values, omega_term, dev_term, mass, theta, node_set, terminal_scale
        )
        terminal_offset = terminal_affine - terminal_quad @ expansion.coeffs[-1]
    else:
        omega_term = np.ones(node_set.count)
        terminal_quad = np.zeros((size, size))
        terminal_affine = np.zeros(size)
        terminal_offset = np.zeros(size)

    return RiskAdjustedOperators(
        running_quad=running_quad,
        running_affine=running_affine,
        running_source=running_source,
        terminal_quad=terminal_quad,
        terminal_affine=terminal_affine,
        terminal_offset=terminal_offset,
        weights=WeightField(values=omega, terminal=omega_term),
    )


def objective(
    control,
    system: GalerkinSystem,
    grid: TimeGrid,
    y0: np.ndarray,
    target: np.ndarray,
    theta: float,
    node_set: SampleNodeSet,
    obs_scale: float = 1.0,
    terminal_scale: float = 0.0,
    terminal_target: Optional[np.ndarray] = None,
) -> float:
    """Sampled cost of a control: risk of tracking plus control energy.

    The state is the coupled chaos solve under the control; tracking
    errors are sampled from its surrogate at the fixed node set, the risk
    is taken per time node, and time integrals use the trapezoid rule.
    A zero terminal penalty drops the terminal term.
    """
    values = control.values if isinstance(control, ControlTrajectory) else np.asarray(control, dtype=float)
    trajectory = forward_solve(system, grid, values, y0)
    ens = surrogate_ensemble(trajectory, system.index_set, node_set.nodes)
    sq = squared_tracking_errors(ens, target, system.fem.mass, obs_scale)
    risks = np.array(
        [entropic_risk(sq[:, k], theta, node_set.weights) for k in range(grid.n_nodes)]
    )
    w = grid.trapezoid_weights
    total = w @ risks + w @ np.einsum("ka,ka->k", values, values)
    if terminal_scale > 0.0:
        g_term = target[-1] if terminal_target is None else np.asarray(terminal_target, dtype=float)
        dev_term = ens[:, -1] - g_term[None]
        sq_term = terminal_scale**2 * np.einsum(
            "id,de,ie->i", dev_term, system.fem.mass, dev_term
        )
        total += entropic_risk(sq_term, theta, node_set.weights)
    return 0.5 * float(total)
