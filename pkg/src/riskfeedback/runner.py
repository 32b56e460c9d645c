"""Experiment runner: problem construction, validation, and artifacts.

Builds solver objects from a configuration, runs the feedback synthesis
and the open-loop baseline, draws Monte Carlo validation ensembles, and
persists results.  Every output directory carries a manifest with
SHA-256 digests of all emitted files; numbers are written with 17
significant digits so repeated runs with the same seed are byte
identical.

Randomness is organized in named substreams of a counter-based
generator: the sample nodes backing the tilt weights, the validation
draws, and the robustness perturbation use distinct children of the
master seed.
"""
from __future__ import annotations

import hashlib
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from .config import (
    ConfigError,
    ExperimentConfig,
    dump_config,
    load_config,
    profile_function,
    reaction_basis,
)
from .fem import ActuatorSet, assemble, build_mesh
from .galerkin import (
    ControlTrajectory,
    TimeGrid,
    assemble_system,
    forward_solve,
    sample_path_solve,
    tracking_error,
)
from .pce import total_degree_set
from .riccati import RiccatiSolution, closed_loop_solve
from .risk import SampleNodeSet, monte_carlo_nodes
from .sqp import ControlProblem, SqpResult, run_openloop_gd, run_sqp

WEIGHT_STREAM = 0
VALIDATION_STREAM = 1
ROBUSTNESS_STREAM = 2


class MissingArtifactError(Exception):
    """A required run artifact is absent."""


class SolverFailureError(Exception):
    """A solver step failed; carries iteration context in the message."""


def stream_rng(master_seed: int, stream: int) -> np.random.Generator:
    """Counter-based generator for one named substream of the master seed."""
    return np.random.Generator(
        np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(stream,)))
    )


@dataclass
class ExperimentSetup:
    """Solver objects realized from one configuration."""

    cfg: ExperimentConfig
    problem: ControlProblem
    expansion_profile: np.ndarray = field(repr=False)
    report_indices: np.ndarray = field(repr=False)

    @property
    def grid(self) -> TimeGrid:
        return self.problem.grid

    @property
    def report_times(self) -> np.ndarray:
        return self.grid.nodes[self.report_indices]


def target_trajectory(cfg: ExperimentConfig, grid: TimeGrid) -> np.ndarray:
    """Evolve the target profile under the zero-reaction dynamics."""
    mesh = build_mesh(cfg.discretization.mesh_width)
    actuators = ActuatorSet(
        intervals=tuple(tuple(p) for p in cfg.actuators.intervals),
        scaling=cfg.actuators.scaling,
    )
    fem_zero = assemble(mesh, 0.0, [], actuators)
    g0 = profile_function(cfg.targets.target_initial)(mesh.nodes)
    return sample_path_solve(
        fem_zero, np.zeros(0), grid, None, g0, cfg.pde.diffusion
    )


def _report_indices(cfg: ExperimentConfig, grid: TimeGrid) -> np.ndarray:
    times = cfg.validation.report_times
    if times is None:
        idx = np.array(
            [round(r * grid.n_steps / 6) for r in range(1, 7)], dtype=np.int64
        )
    else:
        idx = np.array(
            [int(round(float(t) / grid.dt)) for t in times], dtype=np.int64
        )
        if np.any(idx < 0) or np.any(idx > grid.n_steps):
            raise ConfigError("report time outside the horizon", "validation.report_times")
    return idx


def build_setup(cfg: ExperimentConfig, theta: Optional[float] = None) -> ExperimentSetup:
    """Realize meshes, matrices, node sets, and the control problem."""
    cfg.validate()
    mesh = build_mesh(cfg.discretization.mesh_width)
    actuators = ActuatorSet(
        intervals=tuple(tuple(p) for p in cfg.actuators.intervals),
        scaling=cfg.actuators.scaling,
    )
    fields = reaction_basis(cfg.pde.dim, cfg.pde.decay)
    fem = assemble(mesh, cfg.pde.reaction_mean, fields, actuators)
    index_set = total_degree_set(cfg.pde.dim, cfg.discretization.degree)
    system = assemble_system(index_set, fem, cfg.pde.diffusion)
    grid = TimeGrid(horizon=cfg.pde.horizon, n_steps=cfg.discretization.n_steps)
    target = target_trajectory(cfg, grid)
    rng = stream_rng(cfg.risk.seed, WEIGHT_STREAM)
    if cfg.pde.dim > 0:
        node_set = monte_carlo_nodes(cfg.risk.n_samples, cfg.pde.dim, rng)
    else:
        node_set = SampleNodeSet(
            nodes=np.zeros((2, 0)), weights=np.full(2, 0.5), rule="monte-carlo"
        )
    problem = ControlProblem(
        system=system,
        grid=grid,
        y0=profile_function(cfg.targets.initial)(mesh.nodes),
        target=target,
        theta=cfg.risk.theta if theta is None else theta,
        node_set=node_set,
    )
    return ExperimentSetup(
        cfg=cfg,
        problem=problem,
        expansion_profile=profile_function(cfg.targets.expansion_initial)(mesh.nodes),
        report_indices=_report_indices(cfg, grid),
    )


def run_solve(cfg: ExperimentConfig, theta: Optional[float] = None) -> tuple[ExperimentSetup, SqpResult]:
    """Feedback synthesis run: outer loop seeded with the shifted profile."""
    setup = build_setup(cfg, theta=theta)
    expansion = forward_solve(
        setup.problem.system, setup.grid, None, setup.expansion_profile
    )
    try:
        result = run_sqp(
            setup.problem,
            expansion=expansion,
            tolerance=cfg.solver.tolerance,
            max_iterations=cfg.solver.max_iterations,
        )
    except (RuntimeError, FloatingPointError, ValueError) as err:
        raise SolverFailureError(f"feedback synthesis failed: {err}") from err
    return setup, result


def run_openloop(
    cfg: ExperimentConfig, iterations: Optional[int] = None
) -> tuple[ExperimentSetup, ControlTrajectory, object]:
    """Gradient-descent baseline run on the same discretization and nodes."""
    setup = build_setup(cfg)
    iters = cfg.solver.gd_iterations if iterations is None else iterations
    try:
        control, report = run_openloop_gd(setup.problem, iterations=iters)
    except (RuntimeError, FloatingPointError, ValueError) as err:
        raise SolverFailureError(f"open-loop baseline failed: {err}") from err
    return setup, control, report


def validation_draws(master_seed: int, count: int, dim: int) -> np.ndarray:
    """I.i.d. uniform validation realizations from the validation stream."""
    rng = stream_rng(master_seed, VALIDATION_STREAM)
    return rng.uniform(-1.0, 1.0, size=(count, dim))


def robustness_noise(master_seed: int, dim: int) -> np.ndarray:
    """Standard normal per-node perturbation vector, drawn once per study."""
    rng = stream_rng(master_seed, ROBUSTNESS_STREAM)
    return rng.standard_normal(dim)


def scenario_errors(
    setup: ExperimentSetup,
    control_values: Optional[np.ndarray],
    y0: np.ndarray,
    sigmas: np.ndarray,
    threads: int = 1,
    report_indices: Optional[np.ndarray] = None,
) -> np.ndarray:
    """Tracking errors of sample paths under one control signal.

    Each realization solves the dynamics at its parameter draw and
    records the tracking-error norm at the report indices (all grid
    nodes when None).  Rows are realizations.
    """
    fem = setup.problem.system.fem
    grid = setup.grid
    target = setup.problem.target
    idx = np.arange(grid.n_nodes) if report_indices is None else report_indices
    out = np.empty((sigmas.shape[0], idx.size))

    def fill(start: int, stop: int):
        for i in range(start, stop):
            path = sample_path_solve(
                fem, sigmas[i], grid, control_values, y0, setup.cfg.pde.diffusion
            )
            out[i] = tracking_error(path, target, fem)[idx]

    if threads <= 1 or sigmas.shape[0] < 2 * threads:
        fill(0, sigmas.shape[0])
    else:
        bounds = np.linspace(0, sigmas.shape[0], threads + 1).astype(int)
        with ThreadPoolExecutor(max_workers=threads) as pool:
            futures = [
                pool.submit(fill, bounds[t], bounds[t + 1]) for t in range(threads)
            ]
            for f in futures:
                f.result()
    return out


def feedback_replay(
    setup: ExperimentSetup,
    kernels: np.ndarray,
    offsets: np.ndarray,
    y0: np.ndarray,
) -> np.ndarray:
    """Realize the feedback law through the chaos surrogate state.

    The surrogate is initialized from (possibly perturbed) initial data
    and closed under the stored feedback tabulation; the realized input
    signal is deterministic and shared by every parameter realization.
    """
    solution = RiccatiSolution(grid=setup.grid, kernels=kernels, offsets=offsets)
    _, control = closed_loop_solve(setup.problem.system, solution, setup.grid, y0)
    return control.values


# ---------------------------------------------------------------------------
# artifact IO


def format_float(x: float) -> str:
    return f"{x:.17g}"


def write_csv(path: Path, header: list[str], rows) -> None:
    lines = [",".join(header)]
    for row in rows:
        cells = [
            format_float(cell) if isinstance(cell, float) else str(cell)
            for cell in row
        ]
        lines.append(",".join(cells))
    path.write_text("\n".join(lines) + "\n")


def write_manifest(out_dir: Path) -> None:
    """Digest every file under `out_dir` (excluding the manifest itself)."""
    files = {}
    for p in sorted(out_dir.rglob("*")):
        if p.is_file() and p.name != "manifest.json":
            files[p.relative_to(out_dir).as_posix()] = hashlib.sha256(
                p.read_bytes()
            ).hexdigest()
    payload = {"schema": 1, "files": files}
    (out_dir / "manifest.json").write_text(
        json.dumps(payload, indent=2, sort_keys=True) + "\n"
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _write_control(path: Path, grid: TimeGrid, values: np.ndarray) -> None:
    header = ["t"] + [f"u{i + 1}" for i in range(values.shape[1])]
    rows = (
        [float(t)] + [float(v) for v in values[k]]
        for k, t in enumerate(grid.nodes)
    )
    write_csv(path, header, rows)


def _read_control(path: Path) -> np.ndarray:
    lines = path.read_text().strip().splitlines()
    data = np.array(
        [[float(c) for c in line.split(",")] for line in lines[1:]]
    )
    return data[:, 1:]


def write_solve_artifacts(out_dir: Path, setup: ExperimentSetup, result: SqpResult) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dump_config(setup.cfg))
    write_csv(
        out_dir / "sqp_report.csv",
        ["iteration", "objective", "gradient_norm", "control_change"],
        (
            [r.iteration, r.objective, r.gradient_norm, r.control_change]
            for r in result.report.iterations
        ),
    )
    _write_control(out_dir / "control.csv", setup.grid, result.control.values)
    np.save(out_dir / "feedback_kernels.npy", result.riccati.kernels)
    np.save(out_dir / "feedback_offsets.npy", result.riccati.offsets)
    last = result.report.iterations[-1]
    _write_json(
        out_dir / "summary.json",
        {
            "kind": "sqp",
            "iterations": len(result.report.iterations),
            "termination": result.report.termination,
            "warning": result.report.warning,
            "objective": last.objective,
            "gradient_norm": last.gradient_norm,
        },
    )
    write_manifest(out_dir)


def write_openloop_artifacts(out_dir: Path, setup: ExperimentSetup, control, report) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "config.json").write_text(dump_config(setup.cfg))
    write_csv(
        out_dir / "gd_report.csv",
        ["iteration", "objective", "gradient_norm", "step_size"],
        (
            [r.iteration, r.objective, r.gradient_norm, r.step_size]
            for r in report.iterations
        ),
    )
    _write_control(out_dir / "control.csv", setup.grid, control.values)
    last = report.iterations[-1]
    _write_json(
        out_dir / "summary.json",
        {
            "kind": "openloop",
            "iterations": len(report.iterations),
            "termination": report.termination,
            "objective": last.objective,
            "gradient_norm": last.gradient_norm,
        },
    )
    write_manifest(out_dir)


@dataclass
class LoadedRun:
    directory: Path
    cfg: ExperimentConfig
    kind: str
    control_values: np.ndarray
    kernels: Optional[np.ndarray] = None
    offsets: Optional[np.ndarray] = None


def load_run(run_dir) -> LoadedRun:
    """Load the artifacts of a previous solve or open-loop run."""
    run_dir = Path(run_dir)
    required = ["config.json", "summary.json", "control.csv"]
    for name in required:
        if not (run_dir / name).is_file():
            raise MissingArtifactError(f"{run_dir / name} is missing")
    cfg = load_config(run_dir / "config.json")
    summary = json.loads((run_dir / "summary.json").read_text())
    kind = summary.get("kind", "unknown")
    control_values = _read_control(run_dir / "control.csv")
    kernels = offsets = None
    if kind == "sqp":
        for name in ("feedback_kernels.npy", "feedback_offsets.npy"):
            if not (run_dir / name).is_file():
                raise MissingArtifactError(f"{run_dir / name} is missing")
        kernels = np.load(run_dir / "feedback_kernels.npy")
        offsets = np.load(run_dir / "feedback_offsets.npy")
    return LoadedRun(
        directory=run_dir,
        cfg=cfg,
        kind=kind,
        control_values=control_values,
        kernels=kernels,
        offsets=offsets,
    )


def _errors_csv(path: Path, times: np.ndarray, errors: np.ndarray) -> None:
    header = ["realization"] + [format_float(float(t)) for t in times]
    rows = (
        [i] + [float(e) for e in errors[i]] for i in range(errors.shape[0])
    )
    write_csv(path, header, rows)


def run_validation(
    run_dir, n_realizations: int, seed: Optional[int] = None, threads: int = 1
) -> Path:
    """Monte Carlo validation of a stored run; writes under <run>/validation.

    Sample paths are driven by the stored open-loop signal, or by the
    stored feedback law replayed through the chaos surrogate for solve
    runs; an uncontrolled scenario is always included.  Emits the
    tracking-error matrices at the report times and a percentile table.
    """
    loaded = load_run(run_dir)
    setup = build_setup(loaded.cfg)
    master = loaded.cfg.risk.seed if seed is None else seed
    sigmas = validation_draws(master, n_realizations, loaded.cfg.pde.dim)
    y0 = setup.problem.y0

    if loaded.kind == "sqp":
        control_values = feedback_replay(setup, loaded.kernels, loaded.offsets, y0)
    else:
        control_values = loaded.control_values

    idx = setup.report_indices
    controlled = scenario_errors(setup, control_values, y0, sigmas, threads, idx)
    uncontrolled = scenario_errors(setup, None, y0, sigmas, threads, idx)

    out_dir = Path(run_dir) / "validation"
    out_dir.mkdir(parents=True, exist_ok=True)
    times = setup.report_times
    _errors_csv(out_dir / "errors_controlled.csv", times, controlled)
    _errors_csv(out_dir / "errors_uncontrolled.csv", times, uncontrolled)

    percentiles = [float(p) for p in loaded.cfg.validation.percentiles]
    rows = []
    for name, mat in (("controlled", controlled), ("uncontrolled", uncontrolled)):
        for p in percentiles:
            rows.append(
                [name, p] + [float(v) for v in np.percentile(mat, p, axis=0)]
            )
    write_csv(
        out_dir / "percentiles.csv",
        ["scenario", "percentile"] + [format_float(float(t)) for t in times],
        rows,
    )
    _write_json(
        out_dir / "summary.json",
        {
            "kind": "validation",
            "controlled_with": loaded.kind,
            "n_realizations": int(n_realizations),
            "seed": int(master),
            "terminal_median_controlled": float(np.median(controlled[:, -1])),
            "terminal_median_uncontrolled": float(np.median(uncontrolled[:, -1])),
        },
    )
    write_manifest(out_dir)
    return out_dir


def _check_compatible(cfg_a: ExperimentConfig, cfg_b: ExperimentConfig) -> None:
    keys = ("pde", "discretization", "actuators", "targets")
    a, b = cfg_a.to_dict(), cfg_b.to_dict()
    for key in keys:
        if a[key] != b[key]:
            raise ConfigError(
                f"closed-loop and open-loop runs disagree on {key}", key
            )


def run_robustness(
    run_cl,
    run_ol,
    levels,
    seed: Optional[int] = None,
    threads: int = 1,
    out_dir=None,
) -> Path:
    """Initial-condition robustness study of stored CL and OL solutions.

    For each noise level the initial state is shifted both ways with a
    small fixed random modulation; the stored controls (synthesized at
    level zero) are reapplied.  The feedback law reacts through the
    surrogate state, the open-loop signal cannot.  Emits per-level
    tracking-error summaries for both scenarios.
    """
    cl = load_run(run_cl)
    ol = load_run(run_ol)
    if cl.kind != "sqp":
        raise MissingArtifactError(f"{run_cl} does not hold a feedback solution")
    if ol.kind != "openloop":
        raise MissingArtifactError(f"{run_ol} does not hold an open-loop solution")
    _check_compatible(cl.cfg, ol.cfg)

    setup = build_setup(cl.cfg)
    master = cl.cfg.risk.seed if seed is None else seed
    noise = robustness_noise(master, setup.problem.system.dim)
    sigmas = validation_draws(master, cl.cfg.validation.n_realizations, cl.cfg.pde.dim)
    y0 = setup.problem.y0
    idx = setup.report_indices
    percentiles = [float(p) for p in cl.cfg.validation.percentiles]

    rows = []
    for level in levels:
        level = float(level)
        for sign in (1.0, -1.0):
            shifted = y0 + sign * level * (1.0 + 0.01 * noise)
            cl_values = feedback_replay(setup, cl.kernels, cl.offsets, shifted)
            for scenario, values in (("closed-loop", cl_values), ("open-loop", ol.control_values)):
                errors = scenario_errors(setup, values, shifted, sigmas, threads, idx)
                terminal = errors[:, -1]
                rows.append(
                    [scenario, level, sign, float(np.median(terminal))]
                    + [float(np.percentile(terminal, p)) for p in percentiles]
                )

    out = Path(out_dir) if out_dir is not None else Path(run_cl) / "robustness"
    out.mkdir(parents=True, exist_ok=True)
    write_csv(
        out / "robustness.csv",
        ["scenario", "level", "sign", "terminal_median"]
        + [f"terminal_p{format_float(p)}" for p in percentiles],
        rows,
    )
    _write_json(
        out / "summary.json",
        {
            "kind": "robustness",
            "levels": [float(l) for l in levels],
            "n_realizations": int(cl.cfg.validation.n_realizations),
            "seed": int(master),
        },
    )
    write_manifest(out)
    return out


def run_compare(cfg: ExperimentConfig, out_dir, threads: int = 1) -> Path:
    """Solve the risk-averse and risk-neutral cases with a shared seed.

    Both solves reuse the configured seed (hence the same sample nodes
    and validation draws) and are validated on one shared realization
    set; emits the paired terminal-error matrices and a percentile delta
    table.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    thetas = {"risk_averse": cfg.risk.theta, "risk_neutral": 0.0}
    sigmas = validation_draws(
        cfg.risk.seed, cfg.validation.n_realizations, cfg.pde.dim
    )
    errors = {}
    times = None
    for name, theta in thetas.items():
        setup, result = run_solve(cfg, theta=theta)
        sub = out / name
        write_solve_artifacts(sub, setup, result)
        control_values = feedback_replay(
            setup, result.riccati.kernels, result.riccati.offsets, setup.problem.y0
        )
        errors[name] = scenario_errors(
            setup, control_values, setup.problem.y0, sigmas, threads, setup.report_indices
        )
        times = setup.report_times
    for name, mat in errors.items():
        _errors_csv(out / f"errors_{name}.csv", times, mat)
    percentiles = [float(p) for p in cfg.validation.percentiles]
    rows = []
    for p in percentiles:
        averse = np.percentile(errors["risk_averse"], p, axis=0)
        neutral = np.percentile(errors["risk_neutral"], p, axis=0)
        rows.append(
            ["risk_averse", p] + [float(v) for v in averse]
        )
        rows.append(
            ["risk_neutral", p] + [float(v) for v in neutral]
        )
        rows.append(
            ["delta", p] + [float(v) for v in (averse - neutral)]
        )
    write_csv(
        out / "compare.csv",
        ["case", "percentile"] + [format_float(float(t)) for t in times],
        rows,
    )
    write_manifest(out)
    return out
