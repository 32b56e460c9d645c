"""P1 finite elements on the unit interval with Neumann boundary.

Assembles the mass and stiffness matrices from exact element formulas,
reaction mass matrices for spatially varying reaction coefficients by
per-element Gauss quadrature, and the actuator input matrix whose columns
are load vectors of scaled indicator functions.  The discrete state space
carries the L2(0, 1) inner product realized through the mass matrix.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

# 4-point Gauss rule on [-1, 1]; reaction coefficients are smooth, so the
# per-element quadrature error sits far below the discretization error.
_GAUSS_NODES, _GAUSS_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass(frozen=True)
class Mesh1D:
    """Uniform mesh of (0, 1) with nodes 0 = x_1 < ... < x_d = 1."""

    h: float
    nodes: np.ndarray = field(repr=False)

    @property
    def n_nodes(self) -> int:
        return self.nodes.size

    @property
    def n_elements(self) -> int:
        return self.nodes.size - 1


def build_mesh(h: float) -> Mesh1D:
    """Uniform mesh with width `h`; 1/h must be an integer >= 2."""
    inv = 1.0 / h
    n_elem = int(round(inv))
    if n_elem < 2 or abs(inv - n_elem) > 1e-9 * n_elem:
        raise ValueError(f"mesh width {h} is not the reciprocal of an integer >= 2")
    nodes = np.linspace(0.0, 1.0, n_elem + 1)
    nodes.setflags(write=False)
    return Mesh1D(h=1.0 / n_elem, nodes=nodes)


@dataclass(frozen=True)
class ActuatorSet:
    """Disjoint actuator supports inside [0, 1] with a common scaling."""

    intervals: tuple[tuple[float, float], ...]
    scaling: float

    def __post_init__(self):
        ordered = sorted(self.intervals)
        for a, b in ordered:
            if not (0.0 <= a < b <= 1.0):
                raise ValueError(f"actuator interval [{a}, {b}] is not inside [0, 1]")
        for (_, b0), (a1, _) in zip(ordered, ordered[1:]):
            if a1 < b0:
                raise ValueError("actuator intervals must be pairwise disjoint")
        if self.scaling <= 0.0:
            raise ValueError("actuator scaling must be positive")

    @property
    def count(self) -> int:
        return len(self.intervals)


@dataclass(frozen=True)
class FemMatrices:
    """Assembled matrices of the spatial discretization.

    `mass` and `stiffness` are symmetric; the stiffness matrix annihilates
    constants (pure Neumann).  `reaction_mean` is the mass-type matrix of
    the mean reaction coefficient and `reaction[j]` the one of the j-th
    parametric basis function.  `input` has one column per actuator with
    entries scaling * integral(hat_k * indicator_i).  `observation`
    realizes the identity observation operator in nodal coordinates.
    """

    mesh: Mesh1D
    mass: np.ndarray = field(repr=False)
    stiffness: np.ndarray = field(repr=False)
    reaction_mean: np.ndarray = field(repr=False)
    reaction: tuple[np.ndarray, ...] = field(repr=False)
    input: np.ndarray = field(repr=False)
    observation: np.ndarray = field(repr=False)

    @property
    def dim(self) -> int:
        return self.mesh.n_nodes

    @property
    def n_actuators(self) -> int:
        return self.input.shape[1]


def _mass_stiffness(mesh: Mesh1D) -> tuple[np.ndarray, np.ndarray]:
    d, h = mesh.n_nodes, mesh.h
    mass = np.zeros((d, d))
    stiff = np.zeros((d, d))
    m_loc = (h / 6.0) * np.array([[2.0, 1.0], [1.0, 2.0]])
    s_loc = (1.0 / h) * np.array([[1.0, -1.0], [-1.0, 1.0]])
    for e in range(mesh.n_elements):
        sl = slice(e, e + 2)
        mass[sl, sl] += m_loc
        stiff[sl, sl] += s_loc
    return mass, stiff


def _reaction_matrix(mesh: Mesh1D, coefficient: Callable[[np.ndarray], np.ndarray]) -> np.ndarray:
    d, h = mesh.n_nodes, mesh.h
    out = np.zeros((d, d))
    for e in range(mesh.n_elements):
        xl, xr = mesh.nodes[e], mesh.nodes[e + 1]
        xq = 0.5 * (xr - xl) * _GAUSS_NODES + 0.5 * (xl + xr)
        wq = 0.5 * (xr - xl) * _GAUSS_WEIGHTS
        cq = np.broadcast_to(np.asarray(coefficient(xq), dtype=float), xq.shape)
        phi_l = (xr - xq) / h
        phi_r = (xq - xl) / h
        out[e, e] += np.sum(wq * cq * phi_l * phi_l)
        out[e, e + 1] += np.sum(wq * cq * phi_l * phi_r)
        out[e + 1, e] += np.sum(wq * cq * phi_r * phi_l)
        out[e + 1, e + 1] += np.sum(wq * cq * phi_r * phi_r)
    return out


def _input_matrix(mesh: Mesh1D, actuators: ActuatorSet) -> np.ndarray:
    """Columns are load vectors of scaling * indicator(O_i).

    Hat-function integrals over each element are computed exactly, with
    elements split at actuator endpoints (endpoints need not align with
    mesh nodes).
    """
    d, h = mesh.n_nodes, mesh.h
    out = np.zeros((d, actuators.count))
    for i, (a, b) in enumerate(actuators.intervals):
        for e in range(mesh.n_elements):
            xl, xr = mesh.nodes[e], mesh.nodes[e + 1]
            lo, hi = max(xl, a), min(xr, b)
            if hi <= lo:
                continue
            # hat at left node: (xr - x)/h, antiderivative -(xr - x)^2 / (2h)
            out[e, i] += ((xr - lo) ** 2 - (xr - hi) ** 2) / (2.0 * h)
            # hat at right node: (x - xl)/h
            out[e + 1, i] += ((hi - xl) ** 2 - (lo - xl) ** 2) / (2.0 * h)
    return actuators.scaling * out


def assemble(
    mesh: Mesh1D,
    reaction_mean,
    reaction_fields: Sequence[Callable[[np.ndarray], np.ndarray]],
    actuators: ActuatorSet,
) -> FemMatrices:
    """Assemble all spatial matrices.

    Args:
        mesh: uniform mesh of (0, 1).
        reaction_mean: mean reaction coefficient, a constant or a callable
            of the spatial coordinate.
        reaction_fields: parametric reaction basis functions psi_j.
        actuators: actuator supports and scaling.
    """
    mass, stiffness = _mass_stiffness(mesh)
    if callable(reaction_mean):
        mean_fun = reaction_mean
    else:
        c0 = float(reaction_mean)
        mean_fun = lambda x: np.full_like(np.asarray(x, dtype=float), c0)
    return FemMatrices(
        mesh=mesh,
        mass=mass,
        stiffness=stiffness,
        reaction_mean=_reaction_matrix(mesh, mean_fun),
        reaction=tuple(_reaction_matrix(mesh, psi) for psi in reaction_fields),
        input=_input_matrix(mesh, actuators),
        observation=np.eye(mesh.n_nodes),
    )


def h_norm(values: np.ndarray, mass: np.ndarray) -> float:
    """Discrete L2(0, 1) norm sqrt(v' M v) of a nodal coefficient vector."""
    v = np.asarray(values, dtype=float)
    return float(np.sqrt(max(v @ mass @ v, 0.0)))
