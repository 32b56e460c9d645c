"""Backward matrix Riccati sweep and the affine feedback law.

The linear-quadratic subproblem over the chaos coefficients is solved by
tabulating the quadratic kernel and affine offset of its value function
backward from the horizon:

    -P'(t) = A~' P + P A~ - P B~ B~' P + Q(t),          P(T) = terminal quad,
    -h'(t) = (A~' - P B~ B~') h + P f~(t) - src(t),     h(T) = terminal offset,

where A~ and B~ are the mass-solved generator and input, Q(t) the
Gram-form running cost and src(t) its product-form target term.  The
optimal input is the affine state feedback

    u(t) = -B~' (P(t) y(t) + h(t)),

whose mean-mode extraction realizes the adjoint of a deterministic input
operator (an expectation over the random coordinates).

Integration uses classical RK4 with per-interval substepping chosen from
the generator's spectral radius: the kernel flow is dissipative backward
in time, but fine spatial meshes push the step product outside the RK4
stability region on the state grid alone.  Kernels are symmetrized after
every substep; node data is interpolated linearly at stage times.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla

from .galerkin import ControlTrajectory, GalerkinSystem, PceTrajectory, TimeGrid
from .risk import RiskAdjustedOperators

RK4_STABILITY_MARGIN = 2.5
ASYMMETRY_TOLERANCE = 1e-10


class RiccatiBlowupError(RuntimeError):
    """Raised when the backward sweep produces non-finite entries."""


@dataclass
class RiccatiSolution:
    """Tabulated feedback law: value kernels and affine offsets per node."""

    grid: TimeGrid
    kernels: np.ndarray = field(repr=False)
    offsets: np.ndarray = field(repr=False)

    def asymmetry(self) -> float:
        """Largest relative asymmetry over all tabulated kernels."""
        worst = 0.0
        for mat in self.kernels:
            scale = max(1.0, np.abs(mat).max())
            worst = max(worst, np.abs(mat - mat.T).max() / scale)
        return worst


def _substep_count(system: GalerkinSystem, dt: float, margin: float) -> int:
    return max(1, math.ceil(2.0 * system.spectral_radius * dt / margin))


def solve_dre(
    system: GalerkinSystem,
    ops: RiskAdjustedOperators,
    grid: TimeGrid,
    margin: float = RK4_STABILITY_MARGIN,
) -> RiccatiSolution:
    """Integrate the kernel/offset pair backward from the horizon.

    `ops` supplies the running cost matrices, the product-form source of
    the affine equation, and the terminal data.  The tabulation shares
    the state grid; Q and the source are interpolated linearly between
    nodes at RK4 stage times.
    """
    n = system.size
    a_t = system.transformed_operator.T.copy()
    b_coord = system.input_coord
    quad = ops.running_quad
    source = ops.running_source
    if quad.shape != (grid.n_nodes, n, n):
        raise ValueError("running cost tabulation does not match grid/system")

    if system.forcing is not None:
        f_nodes = np.stack(
            [system.mass_solve(system.forcing(t)) for t in grid.nodes]
        )
    else:
        f_nodes = None

    kernels = np.empty((grid.n_nodes, n, n))
    offsets = np.empty((grid.n_nodes, n))
    kernels[-1] = 0.5 * (ops.terminal_quad + ops.terminal_quad.T)
    offsets[-1] = ops.terminal_offset

    def rates(kernel, offset, q_t, src_t, f_t):
        # time derivatives of (P, h) at nodes of the backward equations
        lin = a_t @ kernel
        gain = b_coord.T @ kernel
        quad_term = gain.T @ gain
        k_dot = -(lin + lin.T - quad_term + q_t)
        h_dot = -(a_t @ offset - kernel @ (b_coord @ (b_coord.T @ offset)) - src_t)
        if f_t is not None:
            h_dot -= kernel @ f_t
        return k_dot, h_dot

    substeps = _substep_count(system, grid.dt, margin)
    delta = -grid.dt / substeps
    for k in range(grid.n_steps - 1, -1, -1):
        q_lo, q_hi = quad[k], quad[k + 1]
        s_lo, s_hi = source[k], source[k + 1]
        if f_nodes is not None:
            f_lo, f_hi = f_nodes[k], f_nodes[k + 1]

        def node_data(tau):
            # tau in [0, 1] within the interval [t_k, t_{k+1}]
            q = (1.0 - tau) * q_lo + tau * q_hi
            s = (1.0 - tau) * s_lo + tau * s_hi
            f = None if f_nodes is None else (1.0 - tau) * f_lo + tau * f_hi
            return q, s, f

        kernel = kernels[k + 1]
        offset = offsets[k + 1]
        for sub in range(substeps):
            tau = 1.0 + sub * delta / grid.dt
            half = tau + 0.5 * delta / grid.dt
            full = tau + delta / grid.dt
            k1, h1 = rates(kernel, offset, *node_data(tau))
            k2, h2 = rates(kernel + 0.5 * delta * k1, offset + 0.5 * delta * h1, *node_data(half))
            k3, h3 = rates(kernel + 0.5 * delta * k2, offset + 0.5 * delta * h2, *node_data(half))
            k4, h4 = rates(kernel + delta * k3, offset + delta * h3, *node_data(full))
            kernel = kernel + (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
            offset = offset + (delta / 6.0) * (h1 + 2.0 * h2 + 2.0 * h3 + h4)

            drift = np.abs(kernel - kernel.T).max() / max(1.0, np.abs(kernel).max())
            if drift > ASYMMETRY_TOLERANCE:
                raise RuntimeError(
                    f"kernel asymmetry {drift:.3e} exceeds tolerance after a step"
                )
            kernel = 0.5 * (kernel + kernel.T)
        if not (np.all(np.isfinite(kernel)) and np.all(np.isfinite(offset))):
            raise RiccatiBlowupError(
                f"non-finite kernel entries at node {k}; step size too large"
            )
        kernels[k] = kernel
        offsets[k] = offset
    return RiccatiSolution(grid=grid, kernels=kernels, offsets=offsets)


def feedback_control(
    solution: RiccatiSolution, state: np.ndarray, system: GalerkinSystem, k: int
) -> np.ndarray:
    """Evaluate the affine feedback at time node k for a stacked chaos state."""
    return -system.input_coord.T @ (solution.kernels[k] @ state + solution.offsets[k])


def closed_loop_solve(
    system: GalerkinSystem,
    solution: RiccatiSolution,
    grid: TimeGrid,
    y0: np.ndarray,
) -> tuple[PceTrajectory, ControlTrajectory]:
    """Close the loop: Crank-Nicolson sweep driven by the tabulated feedback.

    Within each step the input is held at the feedback value of the
    left-node state, keeping a single factorization of the step matrix.
    The realized input signal is returned alongside the state; its final
    entry is the feedback evaluated at the terminal state.
    """
    if solution.grid.n_nodes != grid.n_nodes:
        raise ValueError("feedback tabulation and time grid do not match")
    dt = grid.dt
    step_left = system.mass - 0.5 * dt * system.operator
    step_right = system.mass + 0.5 * dt * system.operator
    lu = sla.lu_factor(step_left)
    n_inputs = system.input_block.shape[1]
    states = np.empty((grid.n_nodes, system.size))
    inputs = np.empty((grid.n_nodes, n_inputs))
    states[0] = system.inject(y0)
    for k in range(grid.n_steps):
        inputs[k] = feedback_control(solution, states[k], system, k)
        rhs = step_right @ states[k] + dt * (system.input_block @ inputs[k])
        if system.forcing is not None:
            rhs += dt * system.forcing(0.5 * (grid.nodes[k] + grid.nodes[k + 1]))
        states[k + 1] = sla.lu_solve(lu, rhs)
    inputs[-1] = feedback_control(solution, states[-1], system, grid.n_steps)
    if not np.all(np.isfinite(states[-1])):
        raise FloatingPointError("closed-loop sweep produced non-finite values")
    return (
        PceTrajectory(grid=grid, coeffs=states),
        ControlTrajectory(grid=grid, values=inputs),
    )
