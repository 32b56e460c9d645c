"""Coupled chaos-coefficient dynamics and sample-path solves.

The parametric evolution operator depends affinely on the random
coordinates, so its Galerkin projection onto the tensorized Legendre
basis has Kronecker-sum structure: one copy of the mean-field operator
per chaos mode plus one coupling term per coordinate, mixed through the
coordinate-multiplication matrices.  Time integration uses the
Crank-Nicolson scheme with midpoint input values; the step matrix is
constant in time and factorized once per solve.

Block layout is chaos-mode major: a state vector stacks one nodal vector
per multi-index, with the zero index (the mean mode, which carries all
deterministic data) first.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .fem import FemMatrices, h_norm
from .pce import IndexSet, basis_matrix, multiplication_matrix


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid 0 = t_0 < ... < t_n = horizon."""

    horizon: float
    n_steps: int

    def __post_init__(self):
        if self.horizon <= 0.0:
            raise ValueError("horizon must be positive")
        if self.n_steps < 1:
            raise ValueError("need at least one time step")

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    @property
    def n_nodes(self) -> int:
        return self.n_steps + 1

    @cached_property
    def nodes(self) -> np.ndarray:
        nodes = np.linspace(0.0, self.horizon, self.n_nodes)
        nodes.setflags(write=False)
        return nodes

    @cached_property
    def trapezoid_weights(self) -> np.ndarray:
        """Quadrature weights of the composite trapezoid rule, including dt."""
        w = np.full(self.n_nodes, self.dt)
        w[0] *= 0.5
        w[-1] *= 0.5
        w.setflags(write=False)
        return w


@dataclass
class PceTrajectory:
    """Time-indexed stacked chaos coefficients, shape (n_nodes, modes * dim)."""

    grid: TimeGrid
    coeffs: np.ndarray

    def mode(self, k: int, dim: int) -> np.ndarray:
        """Nodal trajectory of chaos mode k, shape (n_nodes, dim)."""
        return self.coeffs[:, k * dim : (k + 1) * dim]


@dataclass
class ControlTrajectory:
    """Time-indexed actuator amplitudes, shape (n_nodes, n_actuators)."""

    grid: TimeGrid
    values: np.ndarray

    def __add__(self, other: "ControlTrajectory") -> "ControlTrajectory":
        return ControlTrajectory(self.grid, self.values + other.values)

    def __sub__(self, other: "ControlTrajectory") -> "ControlTrajectory":
        return ControlTrajectory(self.grid, self.values - other.values)

    def __mul__(self, scalar: float) -> "ControlTrajectory":
        return ControlTrajectory(self.grid, self.values * scalar)

    __rmul__ = __mul__


@dataclass
class GalerkinSystem:
    """Weak-form system (I x M) y' = K y + B u + f in the chaos basis.

    `operator` is the dense Galerkin matrix K (symmetric for the
    diffusion-reaction problem), `mass` the block-diagonal Gram matrix
    I x M, and `input_block` injects the actuator load vectors into the
    mean mode only.  `forcing`, when present, maps a time to a load
    vector of full state size.
    """

    index_set: IndexSet
    fem: FemMatrices
    operator: np.ndarray
    mass: np.ndarray
    input_block: np.ndarray
    diffusion: float
    forcing: Optional[Callable[[float], np.ndarray]] = None

    @property
    def n_modes(self) -> int:
        return self.index_set.size

    @property
    def dim(self) -> int:
        return self.fem.dim

    @property
    def size(self) -> int:
        return self.n_modes * self.dim

    @cached_property
    def _mass_cho(self):
        return sla.cho_factor(self.fem.mass)

    def mass_solve(self, rhs: np.ndarray) -> np.ndarray:
        """Apply (I x M)^{-1} blockwise to a stacked vector or matrix."""
        r = np.asarray(rhs, dtype=float)
        flat = r.reshape(self.n_modes, self.dim, -1)
        out = np.empty_like(flat)
        for b in range(self.n_modes):
            out[b] = sla.cho_solve(self._mass_cho, flat[b])
        return out.reshape(r.shape)

    @cached_property
    def transformed_operator(self) -> np.ndarray:
        """(I x M)^{-1} K, the generator in coordinate form."""
        return self.mass_solve(self.operator)

    @cached_property
    def input_coord(self) -> np.ndarray:
        """(I x M)^{-1} B, the actuator injection in coordinate form."""
        return self.mass_solve(self.input_block)

    @cached_property
    def spectral_radius(self) -> float:
        """Largest |eigenvalue| of the coordinate-form generator.

        The operator is symmetric and the mass positive definite, so the
        generalized spectrum is real.
        """
        eigs = sla.eigh(self.operator, self.mass, eigvals_only=True)
        return float(np.max(np.abs(eigs)))

    def inject(self, y0: np.ndarray) -> np.ndarray:
        """Place deterministic initial data into the mean mode."""
        y0 = np.asarray(y0, dtype=float)
        if y0.shape != (self.dim,):
            raise ValueError(f"initial data must have shape ({self.dim},)")
        state = np.zeros(self.size)
        state[: self.dim] = y0
        return state


def assemble_system(
    index_set: IndexSet, fem: FemMatrices, diffusion: float = 0.5
) -> GalerkinSystem:
    """Assemble the coupled chaos system for the diffusion-reaction problem.

    The mean block is -(diffusion * stiffness + reaction_mean) and each
    parametric reaction matrix enters with a minus sign through the
    corresponding coordinate-multiplication matrix.
    """
    if len(fem.reaction) < index_set.dim:
        raise ValueError(
            f"{index_set.dim} random coordinates but only "
            f"{len(fem.reaction)} reaction basis matrices"
        )
    k1 = index_set.size
    mean_block = -(diffusion * fem.stiffness + fem.reaction_mean)
    operator = np.kron(np.eye(k1), mean_block)
    for j in range(index_set.dim):
        operator += np.kron(multiplication_matrix(index_set, j), -fem.reaction[j])
    mass = np.kron(np.eye(k1), fem.mass)
    input_block = np.zeros((k1 * fem.dim, fem.n_actuators))
    input_block[: fem.dim] = fem.input
    return GalerkinSystem(
        index_set=index_set,
        fem=fem,
        operator=operator,
        mass=mass,
        input_block=input_block,
        diffusion=diffusion,
    )


def _control_values(control, grid: TimeGrid, n_inputs: int) -> np.ndarray:
    if control is None:
        return np.zeros((grid.n_nodes, n_inputs))
    values = control.values if isinstance(control, ControlTrajectory) else np.asarray(control, dtype=float)
    if values.shape != (grid.n_nodes, n_inputs):
        raise ValueError(
            f"control values must have shape {(grid.n_nodes, n_inputs)}, got {values.shape}"
        )
    return values


def _crank_nicolson_sweep(
    mass: np.ndarray,
    operator: np.ndarray,
    input_matrix: np.ndarray,
    grid: TimeGrid,
    control_values: np.ndarray,
    state0: np.ndarray,
    forcing: Optional[Callable[[float], np.ndarray]] = None,
) -> np.ndarray:
    dt = grid.dt
    step_left = mass - 0.5 * dt * operator
    step_right = mass + 0.5 * dt * operator
    lu = sla.lu_factor(step_left)
    out = np.empty((grid.n_nodes, state0.size))
    out[0] = state0
    for n in range(grid.n_steps):
        u_mid = 0.5 * (control_values[n] + control_values[n + 1])
        rhs = step_right @ out[n] + dt * (input_matrix @ u_mid)
        if forcing is not None:
            rhs += dt * forcing(0.5 * (grid.nodes[n] + grid.nodes[n + 1]))
        out[n + 1] = sla.lu_solve(lu, rhs)
    if not np.all(np.isfinite(out[-1])):
        raise FloatingPointError("time integration produced non-finite values")
    return out


def forward_solve(
    system: GalerkinSystem,
    grid: TimeGrid,
    control,
    y0: np.ndarray,
) -> PceTrajectory:
    """Integrate the coupled chaos system from deterministic initial data.

    The initial state is injected into the mean mode; all other modes
    start at zero.  `control` may be a ControlTrajectory, a raw value
    array on the grid nodes, or None for the uncontrolled system.
    """
    values = _control_values(control, grid, system.input_block.shape[1])
    coeffs = _crank_nicolson_sweep(
        system.mass,
        system.operator,
        system.input_block,
        grid,
        values,
        system.inject(y0),
        system.forcing,
    )
    return PceTrajectory(grid=grid, coeffs=coeffs)


def sample_path_solve(
    fem: FemMatrices,
    sigma,
    grid: TimeGrid,
    control,
    y0: np.ndarray,
    diffusion: float = 0.5,
    forcing: Optional[Callable[[float], np.ndarray]] = None,
) -> np.ndarray:
    """Deterministic solve at one realization of the random coordinates.

    Returns the nodal trajectory, shape (n_nodes, dim).
    """
    sigma = np.atleast_1d(np.asarray(sigma, dtype=float))
    if sigma.size > len(fem.reaction):
        raise ValueError("more coordinates than reaction basis matrices")
    if np.any(np.abs(sigma) > 1.0 + 1e-12):
        raise ValueError("coordinates must lie in [-1, 1]")
    reaction = fem.reaction_mean.copy()
    for j, s in enumerate(sigma):
        reaction += s * fem.reaction[j]
    operator = -(diffusion * fem.stiffness + reaction)
    values = _control_values(control, grid, fem.n_actuators)
    return _crank_nicolson_sweep(
        fem.mass, operator, fem.input, grid, values, np.asarray(y0, dtype=float), forcing
    )


def surrogate_eval(
    trajectory: PceTrajectory, index_set: IndexSet, sigma
) -> np.ndarray:
    """Evaluate the chaos surrogate at one parameter point, all time nodes."""
    return surrogate_ensemble(trajectory, index_set, np.atleast_2d(sigma))[0]


def surrogate_ensemble(
    trajectory: PceTrajectory, index_set: IndexSet, points: np.ndarray
) -> np.ndarray:
    """Evaluate the chaos surrogate on a batch of parameter points.

    Returns an array of shape (n_points, n_nodes, dim).
    """
    basis = basis_matrix(index_set, points)  # (n_points, modes)
    n_nodes = trajectory.coeffs.shape[0]
    dim = trajectory.coeffs.shape[1] // index_set.size
    blocks = trajectory.coeffs.reshape(n_nodes, index_set.size, dim)
    return np.einsum("kvd,nv->nkd", blocks, basis)


def tracking_error(
    path: np.ndarray, target: np.ndarray, fem: FemMatrices
) -> np.ndarray:
    """Per-time-node norm of the deviation from the target trajectory."""
    path = np.asarray(path, dtype=float)
    target = np.asarray(target, dtype=float)
    if path.shape != target.shape:
        raise ValueError(f"shape mismatch: path {path.shape}, target {target.shape}")
    diff = path - target
    sq = np.einsum("kd,de,ke->k", diff, fem.mass, diff)
    return np.sqrt(np.maximum(sq, 0.0))
