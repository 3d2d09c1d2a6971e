"""
Pipeline stages of upscaled-ch.

The stages ``cell``, ``stokes``, ``tensors`` and ``macro`` exchange data only
through files under the output directory, so every stage can be re-run on
its own once its inputs exist. Each stage writes a ``summary.json`` next to
its artifacts.
"""

import logging
import time
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Awaitable, Callable, Dict, List, Optional, Sequence

import anyio
import numpy as np
import psutil

from .config import PipelineConfig
from .const import (
    CELL_DIR,
    CORRECTOR_CSV,
    CORRECTOR_VTK,
    DIAGNOSTICS_CSV,
    EXIT_CONFIG,
    EXIT_FAILED,
    EXIT_OK,
    FLOW_CSV,
    FLOW_VTK,
    INTERFACE_CSV,
    MACRO_DIR,
    MASK_FILE,
    RESOLVED_CONFIG,
    SNAPSHOT_CSV,
    STEPS_CSV,
    STOKES_DIR,
    SUMMARY_JSON,
    TENSOR_DIR,
    TENSOR_REPORT,
)
from .homogenization import macro_ch
from .homogenization.energy import FreeEnergy, double_well
from .homogenization.errors import (
    CompatibilityError,
    ConfigError,
    DegenerateGeometryError,
    DependencyError,
    IterationLimitError,
    MacroRunError,
    StageError,
    UpscalingError,
)
from .homogenization.geometry import (
    CellGeometry,
    build_channel_cell,
    build_disk_cell,
    build_empty_cell,
    build_triangle_cell,
    mask_from_text,
)
from .homogenization.macro_ch import MacroConfig, Snapshot, Trajectory
from .homogenization.microcell import (
    CorrectorField,
    dissipation,
    drift_velocity,
    flow_at_rest,
    mean_flux,
    power,
    solve_corrector_phi,
    solve_corrector_w,
    solve_periodic_stokes,
)
from .homogenization.tensors import EffectiveTensors, assemble_tensors
from .storage import (
    read_corrector,
    read_flow,
    read_mask,
    read_summary,
    read_tensor_report,
    require,
    write_corrector,
    write_diagnostics,
    write_flow,
    write_interface,
    write_mask,
    write_snapshot,
    write_steps,
    write_summary,
    write_tensor_report,
    write_vtk,
)

logger = logging.getLogger(__name__)

STAGES = ("cell", "stokes", "tensors", "macro")


class StageStatus(Enum):
    """Outcome of a pipeline stage."""

    PASSED = "passed"
    WARNING = "warning"
    FAILED = "failed"


@dataclass
class StageResult:
    """Result of one stage with its artifacts and solver report."""

    stage: str
    status: StageStatus
    execution_time: float
    message: str = ""
    artifacts: List[Path] = field(default_factory=list)
    report: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    error_info: Optional[str] = None


@dataclass
class PipelineResult:
    """Stage results in execution order; stops at the first failure."""

    results: List[StageResult] = field(default_factory=list)
    error: Optional[StageError] = None

    @property
    def exit_status(self) -> int:
        if self.error is None:
            return EXIT_OK
        if isinstance(self.error.__cause__, ConfigError):
            return EXIT_CONFIG
        return EXIT_FAILED


# ---------------------------------------------------------------------------
# Building blocks
# ---------------------------------------------------------------------------


def build_cell(config: PipelineConfig) -> CellGeometry:
    """Reference cell described by the geometry section."""
    g = config.geometry
    if g.mask_file:
        path = require(Path(g.mask_file))
        return mask_from_text(path.read_text(), label=path.stem)
    if g.kind == "empty":
        return build_empty_cell(g.resolution)
    if g.kind == "disk":
        return build_disk_cell(g.radius, g.resolution)
    if g.kind == "triangle":
        return build_triangle_cell(g.size, g.resolution)
    return build_channel_cell(g.amplitude, g.cross_section, g.resolution)


def free_energy(config: PipelineConfig) -> FreeEnergy:
    """Double well of width eta (2 dx by default) unless coefficients are given."""
    pf = config.phase_field
    eta = pf.eta if pf.eta is not None else 2.0 * config.macro.dx
    if pf.coefficients:
        return FreeEnergy.from_coefficients(pf.coefficients, lam=pf.lam, eta=eta)
    return double_well(eta, pf.lam)


def macro_config(config: PipelineConfig, tensors: EffectiveTensors) -> MacroConfig:
    m = config.macro
    return MacroConfig(
        tensors=tensors,
        fe=free_energy(config),
        nx=m.cells_x * m.points_per_cell,
        ny=m.cells_y * m.points_per_cell,
        dx=m.dx,
        boundary=m.boundary,
        inlet_flux=m.inlet_flux,
        inlet_modulation=m.inlet_modulation,
        modulation_period=m.points_per_cell,
        inlet_phase=m.inlet_phase,
        rk_tol=m.rk_tol,
        t_end=m.t_end,
        output_every=m.output_every,
        dt_initial=m.dt_initial,
        dt_min=m.dt_min,
        dt_max=m.dt_max,
        front_position=m.front_position,
        front_amplitude=m.front_amplitude,
    )


def _memory_mb() -> float:
    return psutil.Process().memory_info().rss / 1024 / 1024


def _corrector_path(out: Path, stage_dir: str, kind: str, k: int) -> Path:
    return out / stage_dir / CORRECTOR_CSV.format(kind=kind, k=k)


async def _solve_pair(
    solve: Callable[[int], CorrectorField], concurrent: bool
) -> List[CorrectorField]:
    """Solve the k = 1, 2 problems, in worker threads when ``concurrent``."""
    results: Dict[int, CorrectorField] = {}
    errors: Dict[int, UpscalingError] = {}

    async def solve_one(k: int) -> None:
        try:
            results[k] = await anyio.to_thread.run_sync(solve, k)
        except UpscalingError as exc:
            errors[k] = exc

    if concurrent:
        async with anyio.create_task_group() as tg:
            for k in (1, 2):
                tg.start_soon(solve_one, k)
    else:
        for k in (1, 2):
            await solve_one(k)

    if errors:
        raise errors[min(errors)]
    return [results[1], results[2]]


def _write_correctors(
    out: Path,
    stage_dir: str,
    fields: Sequence[CorrectorField],
    cell: CellGeometry,
    config_hash: str,
) -> List[Path]:
    artifacts = []
    for corrector in fields:
        name = dict(kind=corrector.kind, k=corrector.k)
        artifacts.append(
            write_corrector(
                out / stage_dir / CORRECTOR_CSV.format(**name),
                corrector,
                cell,
                config_hash,
            )
        )
        artifacts.append(
            write_vtk(
                out / stage_dir / CORRECTOR_VTK.format(**name),
                cell,
                f"xi_{corrector.kind}_{corrector.k}",
                config_hash,
                scalars={"value": corrector.values},
                vectors={"gradient": corrector.gradient},
            )
        )
    return artifacts


def _corrector_reports(fields: Sequence[CorrectorField]) -> Dict[str, Any]:
    return {
        f"xi_{c.kind}_{c.k}": c.report.to_dict()
        for c in fields
        if c.report is not None
    }


# ---------------------------------------------------------------------------
# Stages
# ---------------------------------------------------------------------------


@dataclass
class _StageOutput:
    artifacts: List[Path] = field(default_factory=list)
    report: Dict[str, Any] = field(default_factory=dict)
    warnings: List[str] = field(default_factory=list)
    message: str = ""


async def _cell_stage(config: PipelineConfig, out: Path) -> _StageOutput:
    result = _StageOutput()
    config_hash = config.config_hash()
    solver = config.solver
    pf = config.phase_field

    cell = build_cell(config)
    result.artifacts.append(write_mask(out / CELL_DIR / MASK_FILE, cell, config_hash))
    logger.info(
        "cell '%s': %d x %d nodes, porosity %.6f",
        cell.label,
        cell.nx,
        cell.ny,
        cell.porosity,
    )

    xi_phi = await _solve_pair(
        lambda k: solve_corrector_phi(cell, k, solver.tol, solver.max_iter),
        solver.concurrent,
    )
    fields = list(xi_phi)
    if config.flow.velocity_source:
        logger.info("velocity_source is set; xi_w is solved in the tensors stage")
    else:
        mobility = np.asarray(pf.mobility, dtype=float)
        xi_w = await _solve_pair(
            lambda k: solve_corrector_w(
                cell, k, mobility, pf.lam, xi_phi[k - 1], solver.tol, solver.max_iter
            ),
            solver.concurrent,
        )
        fields.extend(xi_w)

    result.artifacts.extend(_write_correctors(out, CELL_DIR, fields, cell, config_hash))
    result.report = {
        "geometry_hash": cell.digest(),
        "porosity": cell.porosity,
        "solves": _corrector_reports(fields),
    }
    result.message = f"porosity {cell.porosity:.4f}, {len(fields)} correctors"
    return result


async def _stokes_stage(config: PipelineConfig, out: Path) -> _StageOutput:
    result = _StageOutput()
    config_hash = config.config_hash()
    cell = read_mask(out / CELL_DIR / MASK_FILE)
    f = config.flow
    s = config.solver

    try:
        flow = await anyio.to_thread.run_sync(
            lambda: solve_periodic_stokes(
                cell, f.mu, f.force, s.tol, s.div_tol, s.max_iter
            )
        )
    except DegenerateGeometryError as exc:
        if cell.n_fluid == 0:
            raise
        message = f"{exc}; the fluid is taken at rest"
        logger.warning(message)
        result.warnings.append(message)
        flow = flow_at_rest(cell, f.mu, f.force)
        at_rest = True
    else:
        at_rest = False
    result.warnings.extend(flow.warnings)

    result.artifacts.append(
        write_flow(out / STOKES_DIR / FLOW_CSV, flow, cell, config_hash)
    )
    result.artifacts.append(
        write_vtk(
            out / STOKES_DIR / FLOW_VTK,
            cell,
            "flow",
            config_hash,
            scalars={"pressure": flow.pressure},
            vectors={"velocity": flow.u},
        )
    )
    flux = mean_flux(flow, cell)
    result.report = {
        "geometry_hash": cell.digest(),
        "solves": {"stokes": flow.report.to_dict() if flow.report else {}},
        "max_divergence": flow.max_divergence,
        "inner_iterations": flow.inner_iterations,
        "mean_flux": flux.tolist(),
        "dissipation": 0.0 if at_rest else dissipation(flow, cell),
        "power": 0.0 if at_rest else power(flow, cell),
        "blocked": flow.blocked,
        "at_rest": at_rest,
    }
    result.message = f"mean flux ({flux[0]:.4g}, {flux[1]:.4g})"
    return result


def _residuals(out: Path) -> Dict[str, float]:
    residuals: Dict[str, float] = {}
    for stage_dir in (CELL_DIR, STOKES_DIR):
        summary = read_summary(out / stage_dir / SUMMARY_JSON)
        for name, solve in summary.get("report", {}).get("solves", {}).items():
            if "residual_norm" in solve:
                residuals[name] = float(solve["residual_norm"])
        if "max_divergence" in summary.get("report", {}):
            residuals["stokes_divergence"] = float(summary["report"]["max_divergence"])
    return residuals


async def _tensor_stage(config: PipelineConfig, out: Path) -> _StageOutput:
    result = _StageOutput()
    config_hash = config.config_hash()
    pf = config.phase_field
    s = config.solver
    pe_mic = config.pe_mic
    mobility = np.asarray(pf.mobility, dtype=float)

    cell = read_mask(out / CELL_DIR / MASK_FILE)
    flow = read_flow(out / STOKES_DIR / FLOW_CSV, cell)
    xi_phi = [
        read_corrector(_corrector_path(out, CELL_DIR, "phi", k), cell, k, "phi")
        for k in (1, 2)
    ]
    if config.flow.velocity_source:
        xi_w = await _solve_pair(
            lambda k: solve_corrector_w(
                cell,
                k,
                mobility,
                pf.lam,
                xi_phi[k - 1],
                s.tol,
                s.max_iter,
                flow=flow,
                pe_mic=pe_mic,
                velocity_source=True,
            ),
            s.concurrent,
        )
        result.artifacts.extend(
            _write_correctors(out, TENSOR_DIR, xi_w, cell, config_hash)
        )
        result.report["solves"] = _corrector_reports(xi_w)
    else:
        xi_w = [
            read_corrector(_corrector_path(out, CELL_DIR, "w", k), cell, k, "w")
            for k in (1, 2)
        ]

    v = drift_velocity(flow, pe_mic, cell)
    tensors = assemble_tensors(
        cell,
        xi_phi,
        xi_w,
        flow,
        v,
        mobility,
        pe_mic,
        config.wetting.g_tilde0,
        config.wetting.h_tilde0,
    )
    if mobility[0, 1] == 0.0 and mobility[0, 0] == mobility[1, 1]:
        if not tensors.is_isotropic_consistent(mobility[0, 0], atol=1e-8):
            message = "isotropic mobility but m D, M_phi and M_w disagree"
            logger.warning(message)
            result.warnings.append(message)

    residuals = _residuals(out)
    residuals.update(
        {
            name: float(solve["residual_norm"])
            for name, solve in result.report.get("solves", {}).items()
        }
    )
    result.artifacts.append(
        write_tensor_report(
            out / TENSOR_DIR / TENSOR_REPORT, tensors, config_hash, residuals
        )
    )
    result.report.update({"geometry_hash": cell.digest(), "tensors": tensors.entries()})
    result.message = f"d11 {tensors.D[0, 0]:.4g}, c11 {tensors.C[0, 0]:.3g}"
    return result


async def _macro_stage(config: PipelineConfig, out: Path) -> _StageOutput:
    result = _StageOutput()
    config_hash = config.config_hash()
    tensors, metadata = read_tensor_report(out / TENSOR_DIR / TENSOR_REPORT)
    if metadata.get("config_hash") not in (None, config_hash):
        logger.info("tensor report was written by config %s", metadata["config_hash"])
    mc = macro_config(config, tensors)
    macro_dir = out / MACRO_DIR
    snapshots: List[Snapshot] = []

    def on_snapshot(snapshot: Snapshot) -> None:
        index = len(snapshots)
        snapshots.append(snapshot)
        result.artifacts.append(
            write_snapshot(
                macro_dir / SNAPSHOT_CSV.format(index=index),
                snapshot,
                mc.dx,
                index,
                config_hash,
            )
        )
        result.artifacts.append(
            write_interface(
                macro_dir / INTERFACE_CSV.format(index=index),
                macro_ch.interface_position(
                    snapshot.state.phi, mc.dx, periodic=mc.periodic_axes
                ),
                snapshot.time,
                config_hash,
            )
        )

    def write_series(trajectory: Trajectory) -> None:
        result.artifacts.append(
            write_diagnostics(
                macro_dir / DIAGNOSTICS_CSV, trajectory.snapshots, config_hash
            )
        )
        result.artifacts.append(
            write_steps(macro_dir / STEPS_CSV, trajectory.steps, config_hash)
        )

    logger.info(
        "macro grid %d x %d, dx %g, boundary %s, t_end %g",
        mc.nx,
        mc.ny,
        mc.dx,
        mc.boundary.value,
        mc.t_end,
    )
    try:
        trajectory = await anyio.to_thread.run_sync(
            lambda: macro_ch.run(mc, on_snapshot=on_snapshot)
        )
    except MacroRunError as exc:
        write_series(exc.trajectory)
        raise

    write_series(trajectory)
    result.warnings.extend(trajectory.warnings)
    final = trajectory.final
    first = trajectory.snapshots[0]
    profile = macro_ch.front_profile(final.state.phi, mc.dx)
    result.report = {
        "steps": len(trajectory.steps),
        "final_time": final.time,
        "mass_drift": final.diagnostics.mass - first.diagnostics.mass,
        "energy_start": first.diagnostics.energy,
        "energy_end": final.diagnostics.energy,
        "front_position": final.diagnostics.front_position,
        "front_amplitude": final.diagnostics.front_amplitude,
        "dominant_wavenumber": macro_ch.dominant_wavenumber(profile),
    }
    result.message = (
        f"{len(trajectory.steps)} steps to t = {final.time:.4g}, "
        f"front at X = {final.diagnostics.front_position:.4g}"
    )
    return result


_RUNNERS: Dict[str, Callable[[PipelineConfig, Path], Awaitable[_StageOutput]]] = {
    "cell": _cell_stage,
    "stokes": _stokes_stage,
    "tensors": _tensor_stage,
    "macro": _macro_stage,
}

_STAGE_DIRS = {
    "cell": CELL_DIR,
    "stokes": STOKES_DIR,
    "tensors": TENSOR_DIR,
    "macro": MACRO_DIR,
}


def _error_report(exc: UpscalingError) -> Dict[str, Any]:
    if isinstance(exc, IterationLimitError):
        report = exc.report
        return report.to_dict() if hasattr(report, "to_dict") else {"report": report}
    if isinstance(exc, CompatibilityError):
        return {"imbalance": exc.imbalance}
    if isinstance(exc, DependencyError):
        return {"missing": str(exc.path)}
    if isinstance(exc, MacroRunError):
        trajectory = exc.trajectory
        last = trajectory.final.time if trajectory.snapshots else None
        return {
            "cause": type(exc.cause).__name__,
            "last_snapshot_time": last,
            "steps": len(trajectory.steps),
        }
    return {}


def _summary(result: StageResult, out: Path, config_hash: str) -> Dict[str, Any]:
    return {
        "stage": result.stage,
        "status": result.status.value,
        "config_hash": config_hash,
        "message": result.message,
        "warnings": result.warnings,
        "report": result.report,
        "artifacts": sorted(str(p.relative_to(out)) for p in result.artifacts),
        "error": result.error_info,
    }


async def run_stage(name: str, config: PipelineConfig, out: Path) -> StageResult:
    """Run one stage from configuration and the artifacts already in ``out``.

    Raises:
        StageError: The stage failed; it names the stage, carries the solver
            report and chains the original error. A ``summary.json`` marking
            the failure is written first.
    """
    if name not in _RUNNERS:
        raise ValueError(f"unknown stage '{name}'")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    (out / RESOLVED_CONFIG).write_text(config.to_toml())
    config_hash = config.config_hash()
    summary_path = out / _STAGE_DIRS[name] / SUMMARY_JSON

    start = time.perf_counter()
    logger.info("stage %s started", name)
    try:
        output = await _RUNNERS[name](config, out)
    except UpscalingError as exc:
        result = StageResult(
            stage=name,
            status=StageStatus.FAILED,
            execution_time=time.perf_counter() - start,
            message=str(exc),
            report=_error_report(exc),
            error_info=type(exc).__name__,
        )
        write_summary(summary_path, _summary(result, out, config_hash))
        logger.error("stage %s failed: %s", name, exc)
        raise StageError(name, str(exc), result.report) from exc

    result = StageResult(
        stage=name,
        status=StageStatus.WARNING if output.warnings else StageStatus.PASSED,
        execution_time=time.perf_counter() - start,
        message=output.message,
        artifacts=output.artifacts,
        report=output.report,
        warnings=output.warnings,
    )
    write_summary(summary_path, _summary(result, out, config_hash))
    result.artifacts.append(summary_path)
    logger.info(
        "stage %s finished in %.2fs (rss %.1f MB)",
        name,
        result.execution_time,
        _memory_mb(),
    )
    return result


async def run_pipeline(
    config: PipelineConfig, out: Path, stages: Sequence[str] = STAGES
) -> PipelineResult:
    """Run ``stages`` in order, stopping at the first failure.

    Artifacts of the stages that completed stay on disk.
    """
    pipeline = PipelineResult()
    for name in stages:
        try:
            pipeline.results.append(await run_stage(name, config, out))
        except StageError as exc:
            pipeline.results.append(
                StageResult(
                    stage=name,
                    status=StageStatus.FAILED,
                    execution_time=0.0,
                    message=str(exc.__cause__ or exc),
                    report=exc.report,
                    error_info=type(exc.__cause__).__name__,
                )
            )
            pipeline.error = exc
            break
    return pipeline
