"""Outer solve loop and the open-loop gradient-descent baseline.

Each outer iteration freezes the tilt weights and quadratic cost data at
the current expansion trajectory, solves the resulting linear-quadratic
subproblem through the backward Riccati sweep, closes the loop, and
re-expands at the closed-loop state.  The stopping test evaluates the
reduced gradient of the sampled cost at the realized input signal.

The reduced gradient is the exact adjoint of the discrete cost: the
backward recursion transposes the Crank-Nicolson step matrices and
places the tilt-projected residual sources with the trapezoid weights of
the cost quadrature, so directional derivatives match finite differences
of the objective to solver precision.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg as sla

from .galerkin import (
    ControlTrajectory,
    GalerkinSystem,
    PceTrajectory,
    TimeGrid,
    forward_solve,
    surrogate_ensemble,
)
from .pce import basis_matrix
from .riccati import RiccatiSolution, closed_loop_solve, solve_dre
from .risk import (
    SampleNodeSet,
    assemble_operators,
    exponential_tilt_weights,
    objective,
    squared_tracking_errors,
)


@dataclass
class ControlProblem:
    """Everything that defines one tracking problem instance.

    `target` is the tracking target tabulated on the grid nodes;
    `terminal_target` defaults to its final slice.  `obs_scale` and
    `terminal_scale` are the scalar observation and terminal penalty
    operators (terminal penalty off by default).
    """

    system: GalerkinSystem
    grid: TimeGrid
    y0: np.ndarray
    target: np.ndarray
    theta: float
    node_set: SampleNodeSet
    obs_scale: float = 1.0
    terminal_scale: float = 0.0
    terminal_target: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.target.shape != (self.grid.n_nodes, self.system.dim):
            raise ValueError("target must be tabulated on the grid nodes")
        if self.theta < 0.0:
            raise ValueError("risk-aversion parameter must be non-negative")

    def zero_control(self) -> ControlTrajectory:
        return ControlTrajectory(
            self.grid,
            np.zeros((self.grid.n_nodes, self.system.input_block.shape[1])),
        )

    def cost(self, control) -> float:
        return objective(
            control,
            self.system,
            self.grid,
            self.y0,
            self.target,
            self.theta,
            self.node_set,
            self.obs_scale,
            self.terminal_scale,
            self.terminal_target,
        )


def control_norm(control, grid: Optional[TimeGrid] = None) -> float:
    """Trapezoid-in-time norm of an actuator signal."""
    if isinstance(control, ControlTrajectory):
        values, grid = control.values, control.grid
    else:
        values = np.asarray(control, dtype=float)
        if grid is None:
            raise ValueError("grid required for raw value arrays")
    w = grid.trapezoid_weights
    return float(np.sqrt(w @ np.einsum("ka,ka->k", values, values)))


def control_inner(a: ControlTrajectory, b: ControlTrajectory) -> float:
    """Trapezoid-in-time inner product of two actuator signals."""
    w = a.grid.trapezoid_weights
    return float(w @ np.einsum("ka,ka->k", a.values, b.values))


def initial_expansion(
    problem: ControlProblem, start_profile: Optional[np.ndarray] = None
) -> PceTrajectory:
    """Uncontrolled solve used to seed the outer loop.

    Defaults to the problem's own initial data; experiments typically
    supply a shifted profile instead.
    """
    profile = problem.y0 if start_profile is None else np.asarray(start_profile, dtype=float)
    return forward_solve(problem.system, problem.grid, None, profile)


def reduced_gradient(control, problem: ControlProblem) -> ControlTrajectory:
    """Riesz representer of the sampled-cost derivative at a control.

    Runs the coupled forward solve, computes tilt weights from the
    current trajectory, projects the tilted residual field into the
    chaos basis per node, and sweeps the transposed step recursion
    backward.  The representer pairs the adjoint through the actuator
    load columns with the trapezoid weights of the control quadrature.
    """
    system, grid = problem.system, problem.grid
    values = control.values if isinstance(control, ControlTrajectory) else np.asarray(control, dtype=float)
    trajectory = forward_solve(system, grid, values, problem.y0)

    mass = system.fem.mass
    basis_values = basis_matrix(system.index_set, problem.node_set.nodes)
    lam = problem.node_set.weights
    ens = surrogate_ensemble(trajectory, system.index_set, problem.node_set.nodes)
    dev = ens - problem.target[None]
    sq = squared_tracking_errors(ens, problem.target, mass, problem.obs_scale)
    omega = exponential_tilt_weights(sq, problem.theta, lam)
    loads = np.einsum("ikd,de->ike", dev, mass)
    sources = problem.obs_scale**2 * np.einsum(
        "ik,iv,ikd->kvd", lam[:, None] * omega, basis_values, loads
    ).reshape(grid.n_nodes, system.size)

    dt = grid.dt
    w = grid.trapezoid_weights
    step_left_t = (system.mass - 0.5 * dt * system.operator).T
    step_right_t = (system.mass + 0.5 * dt * system.operator).T
    lu = sla.lu_factor(step_left_t)

    terminal_source = np.zeros(system.size)
    if problem.terminal_scale > 0.0:
        g_term = (
            problem.target[-1]
            if problem.terminal_target is None
            else np.asarray(problem.terminal_target, dtype=float)
        )
        dev_term = ens[:, -1] - g_term[None]
        sq_term = problem.terminal_scale**2 * np.einsum(
            "id,de,ie->i", dev_term, mass, dev_term
        )
        omega_term = exponential_tilt_weights(sq_term[:, None], problem.theta, lam)[:, 0]
        terminal_source = problem.terminal_scale**2 * np.einsum(
            "i,iv,id->vd", lam * omega_term, basis_values, dev_term @ mass
        ).ravel()

    adjoint = np.zeros((grid.n_nodes + 1, system.size))
    adjoint[grid.n_steps] = sla.lu_solve(
        lu, w[grid.n_steps] * sources[grid.n_steps] + terminal_source
    )
    for n in range(grid.n_steps - 1, 0, -1):
        adjoint[n] = sla.lu_solve(
            lu, step_right_t @ adjoint[n + 1] + w[n] * sources[n]
        )

    pairings = adjoint @ system.input_block  # (n_nodes + 1, n_actuators)
    grad = values.copy()
    grad[0] += pairings[1]
    grad[1:-1] += 0.5 * (pairings[1:-2] + pairings[2:-1])
    grad[-1] += pairings[grid.n_steps]
    return ControlTrajectory(grid=grid, values=grad)


@dataclass
class IterationRecord:
    iteration: int
    objective: float
    gradient_norm: float
    control_change: float


@dataclass
class SqpReport:
    iterations: list[IterationRecord] = field(default_factory=list)
    termination: str = "max_iterations"
    warning: Optional[str] = None


@dataclass
class SqpResult:
    control: ControlTrajectory
    state: PceTrajectory
    riccati: RiccatiSolution
    report: SqpReport


def run_sqp(
    problem: ControlProblem,
    expansion: Optional[PceTrajectory] = None,
    tolerance: float = 1e-6,
    max_iterations: int = 20,
) -> SqpResult:
    """Iterate the linear-quadratic subproblem to a feedback law.

    Returns the last realized control and closed-loop state, the
    feedback tabulation of the final subproblem, and the per-iteration
    report.  Termination is on the reduced-gradient norm or the
    iteration cap; three consecutive non-decreasing objective values set
    a warning in the report (the expansion may be too far off).
    """
    if expansion is None:
        expansion = initial_expansion(problem)
    report = SqpReport()
    control = None
    state = None
    solution = None
    previous = None
    non_decreasing = 0
    for k in range(max_iterations):
        ops = assemble_operators(
            expansion,
            problem.system.index_set,
            problem.system,
            problem.target,
            problem.node_set,
            problem.theta,
            problem.obs_scale,
            problem.terminal_scale,
            problem.terminal_target,
        )
        solution = solve_dre(problem.system, ops, problem.grid)
        state, control = closed_loop_solve(
            problem.system, solution, problem.grid, problem.y0
        )
        grad = reduced_gradient(control, problem)
        grad_norm = control_norm(grad)
        cost = problem.cost(control)
        change = control_norm(control - previous) if previous is not None else float("nan")
        report.iterations.append(
            IterationRecord(
                iteration=k,
                objective=cost,
                gradient_norm=grad_norm,
                control_change=change,
            )
        )
        if len(report.iterations) >= 2:
            if cost >= report.iterations[-2].objective:
                non_decreasing += 1
                if non_decreasing >= 3 and report.warning is None:
                    report.warning = (
                        "objective non-decreasing across three consecutive "
                        "iterations; expansion point may be too far from the solution"
                    )
            else:
                non_decreasing = 0
        if grad_norm < tolerance:
            report.termination = "tolerance"
            break
        expansion = state
        previous = control
    return SqpResult(control=control, state=state, riccati=solution, report=report)


class LineSearchError(RuntimeError):
    """Backtracking failed to find a sufficient-decrease step."""


@dataclass
class GdRecord:
    iteration: int
    objective: float
    gradient_norm: float
    step_size: float


@dataclass
class GdReport:
    iterations: list[GdRecord] = field(default_factory=list)
    termination: str = "max_iterations"


def run_openloop_gd(
    problem: ControlProblem,
    iterations: int,
    step_rule: str = "armijo",
    step_size: float = 1.0,
    gradient_tolerance: float = 0.0,
) -> tuple[ControlTrajectory, GdReport]:
    """Open-loop baseline: steepest descent on the sampled cost.

    The Armijo rule starts at unit step, halves on failure of the
    sufficient-decrease test with slope factor 1e-4, and aborts after 40
    shrinks.  A fixed-step mode is available for reproducibility studies.
    """
    if step_rule not in ("armijo", "fixed"):
        raise ValueError(f"unknown step rule {step_rule!r}")
    control = problem.zero_control()
    cost = problem.cost(control)
    report = GdReport()
    for it in range(iterations):
        grad = reduced_gradient(control, problem)
        grad_norm = control_norm(grad)
        if grad_norm <= gradient_tolerance:
            report.termination = "gradient_tolerance"
            break
        if step_rule == "fixed":
            alpha = step_size
            control = control - alpha * grad
            cost = problem.cost(control)
        else:
            alpha = step_size
            slope = grad_norm**2
            for _ in range(41):
                trial = control - alpha * grad
                trial_cost = problem.cost(trial)
                if trial_cost <= cost - 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
            else:
                raise LineSearchError(
                    f"no sufficient decrease after 40 shrinks at iteration {it} "
                    f"(objective {cost:.6e}, gradient norm {grad_norm:.3e})"
                )
            control, cost = trial, trial_cost
        report.iterations.append(
            GdRecord(iteration=it, objective=cost, gradient_norm=grad_norm, step_size=alpha)
        )
    return control, report
