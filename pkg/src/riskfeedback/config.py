"""Declarative experiment configuration.

A single versioned JSON document describes one experiment: the physical
problem, discretization, risk parameters, actuator layout, target and
initial profiles, solver settings, and validation settings.  Function
valued fields are selected from a small named catalog rather than parsed
from expressions, which keeps configs portable.

The tracking target is not stored as data: it is always generated by
evolving the configured initial target profile under the zero-reaction
dynamics on the run grid.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np

SCHEMA_VERSION = 1


class ConfigError(Exception):
    """Invalid configuration; `field` names the offending entry."""

    def __init__(self, message: str, field_name: str = ""):
        self.field = field_name
        super().__init__(f"{field_name}: {message}" if field_name else message)


def profile_function(spec: dict, field_name: str = "profile") -> Callable[[np.ndarray], np.ndarray]:
    """Resolve a named spatial profile from the catalog.

    Supported: {"name": "offset-cosine", "offset": a, "amplitude": b,
    "cycles": k} for a + b cos(2 pi k x), and {"name": "constant",
    "value": c}.
    """
    if not isinstance(spec, dict) or "name" not in spec:
        raise ConfigError("profile spec must be an object with a 'name'", field_name)
    name = spec["name"]
    if name == "offset-cosine":
        offset = float(spec.get("offset", 0.0))
        amplitude = float(spec.get("amplitude", 1.0))
        cycles = float(spec.get("cycles", 1.0))
        return lambda x: offset + amplitude * np.cos(2.0 * np.pi * cycles * np.asarray(x))
    if name == "constant":
        value = float(spec.get("value", 0.0))
        return lambda x: np.full_like(np.asarray(x, dtype=float), value)
    raise ConfigError(f"unknown profile {name!r}", field_name)


def reaction_basis(dim: int, decay: float) -> list[Callable[[np.ndarray], np.ndarray]]:
    """Trigonometric parametric reaction basis with algebraic decay.

    Odd-numbered members (1-based) are i^-decay cos(j pi x) with
    i = 2j - 1; even-numbered members are i^-decay sin(j pi x) with
    i = 2j.
    """
    fields = []
    for i in range(1, dim + 1):
        scale = float(i) ** (-decay)
        if i % 2 == 1:
            j = (i + 1) // 2
            fields.append(lambda x, s=scale, j=j: s * np.cos(j * np.pi * np.asarray(x)))
        else:
            j = i // 2
            fields.append(lambda x, s=scale, j=j: s * np.sin(j * np.pi * np.asarray(x)))
    return fields


@dataclass
class PdeConfig:
    diffusion: float = 0.5
    reaction_mean: float = 0.2
    decay: float = 2.0
    dim: int = 2
    horizon: float = 0.5


@dataclass
class DiscretizationConfig:
    mesh_width: float = 2.0**-5
    n_steps: int = 200
    degree: int = 2


@dataclass
class RiskConfig:
    theta: float = 10.0
    n_samples: int = 100
    seed: int = 20240901


@dataclass
class ActuatorConfig:
    intervals: list = field(
        default_factory=lambda: [[0.1, 0.3], [0.4, 0.6], [0.7, 0.9]]
    )
    scaling: float = math.sqrt(10.0)


@dataclass
class TargetConfig:
    initial: dict = field(
        default_factory=lambda: {"name": "offset-cosine", "offset": 4.0, "amplitude": -1.0, "cycles": 1.0}
    )
    expansion_initial: dict = field(
        default_factory=lambda: {"name": "offset-cosine", "offset": 1.0, "amplitude": -1.0, "cycles": 1.0}
    )
    target_initial: dict = field(
        default_factory=lambda: {"name": "offset-cosine", "offset": 1.25, "amplitude": -1.0, "cycles": 1.0}
    )


@dataclass
class SolverConfig:
    tolerance: float = 1e-6
    max_iterations: int = 20
    gd_iterations: int = 200


@dataclass
class ValidationConfig:
    n_realizations: int = 10000
    report_times: Optional[list] = None
    percentiles: list = field(default_factory=lambda: [5.0, 95.0])
    noise_levels: list = field(default_factory=lambda: [0.0, 0.5, 1.0, 1.5, 2.0])


@dataclass
class ExperimentConfig:
    pde: PdeConfig = field(default_factory=PdeConfig)
    discretization: DiscretizationConfig = field(default_factory=DiscretizationConfig)
    risk: RiskConfig = field(default_factory=RiskConfig)
    actuators: ActuatorConfig = field(default_factory=ActuatorConfig)
    targets: TargetConfig = field(default_factory=TargetConfig)
    solver: SolverConfig = field(default_factory=SolverConfig)
    validation: ValidationConfig = field(default_factory=ValidationConfig)
    schema: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        return asdict(self)

    def validate(self) -> "ExperimentConfig":
        if self.schema != SCHEMA_VERSION:
            raise ConfigError(f"unsupported schema version {self.schema}", "schema")
        if self.pde.diffusion <= 0.0:
            raise ConfigError("diffusion must be positive", "pde.diffusion")
        if self.pde.dim < 0:
            raise ConfigError("parameter dimension must be non-negative", "pde.dim")
        if self.pde.horizon <= 0.0:
            raise ConfigError("horizon must be positive", "pde.horizon")
        inv = 1.0 / self.discretization.mesh_width
        if abs(inv - round(inv)) > 1e-9 or round(inv) < 2:
            raise ConfigError(
                "mesh width must be the reciprocal of an integer >= 2",
                "discretization.mesh_width",
            )
        if self.discretization.n_steps < 1:
            raise ConfigError("need at least one time step", "discretization.n_steps")
        if self.discretization.degree < 0:
            raise ConfigError("chaos degree must be non-negative", "discretization.degree")
        if self.risk.theta < 0.0:
            raise ConfigError("risk-aversion parameter must be non-negative", "risk.theta")
        if self.risk.n_samples < 2:
            raise ConfigError("need at least two sample nodes", "risk.n_samples")
        if self.solver.tolerance <= 0.0:
            raise ConfigError("tolerance must be positive", "solver.tolerance")
        if self.solver.max_iterations < 1:
            raise ConfigError("need at least one iteration", "solver.max_iterations")
        if self.validation.n_realizations < 1:
            raise ConfigError(
                "need at least one realization", "validation.n_realizations"
            )
        for p in self.validation.percentiles:
            if not 0.0 < float(p) < 100.0:
                raise ConfigError(
                    f"percentile {p} outside (0, 100)", "validation.percentiles"
                )
        for pair in self.actuators.intervals:
            if len(pair) != 2 or not (0.0 <= pair[0] < pair[1] <= 1.0):
                raise ConfigError(
                    f"interval {pair} is not a subinterval of [0, 1]",
                    "actuators.intervals",
                )
        if self.actuators.scaling <= 0.0:
            raise ConfigError("actuator scaling must be positive", "actuators.scaling")
        for name in ("initial", "expansion_initial", "target_initial"):
            profile_function(getattr(self.targets, name), f"targets.{name}")
        return self


_SECTIONS = {
    "pde": PdeConfig,
    "discretization": DiscretizationConfig,
    "risk": RiskConfig,
    "actuators": ActuatorConfig,
    "targets": TargetConfig,
    "solver": SolverConfig,
    "validation": ValidationConfig,
}


def config_from_dict(data: dict) -> ExperimentConfig:
    if not isinstance(data, dict):
        raise ConfigError("configuration root must be an object")
    kwargs = {}
    for key, cls in _SECTIONS.items():
        section = data.get(key, {})
        if not isinstance(section, dict):
            raise ConfigError("must be an object", key)
        known = set(cls.__dataclass_fields__)
        unknown = set(section) - known
        if unknown:
            raise ConfigError(f"unknown entries {sorted(unknown)}", key)
        kwargs[key] = cls(**section)
    extra = set(data) - set(_SECTIONS) - {"schema"}
    if extra:
        raise ConfigError(f"unknown sections {sorted(extra)}")
    cfg = ExperimentConfig(schema=data.get("schema", SCHEMA_VERSION), **kwargs)
    return cfg.validate()


def load_config(path) -> ExperimentConfig:
    """Load and validate a JSON configuration file."""
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(
            f"invalid JSON at line {err.lineno}, column {err.colno}: {err.msg}"
        ) from err
    return config_from_dict(data)


def dump_config(cfg: ExperimentConfig) -> str:
    """Canonical JSON text of a configuration (round-trips through load)."""
    return json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n"
