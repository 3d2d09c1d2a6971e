"""
Numerical engine of upscaled-ch.

This package builds periodic reference cells, solves their corrector and
Stokes problems, assembles the effective tensors and integrates the
upscaled convective Cahn-Hilliard equation on the macroscopic grid.
"""

from .energy import (
    FreeEnergy,
    coercivity_constant,
    double_well,
    eval_F,
    eval_f,
    eval_f_prime,
    validate_pf,
)
from .errors import (
    CompatibilityError,
    ConfigError,
    DegenerateGeometryError,
    DependencyError,
    DimensionError,
    FreeEnergyError,
    InvalidGeometryError,
    IterationLimitError,
    MacroRunError,
    NumericalBlowupError,
    StageError,
    StiffnessError,
    UpscalingError,
)
from .geometry import (
    BoundaryFace,
    CellGeometry,
    boundary_faces,
    build_channel_cell,
    build_disk_cell,
    build_empty_cell,
    build_triangle_cell,
    from_mask,
    mask_from_text,
    mask_to_text,
    porosity,
)
from .linsolve import SolveReport, SparseOperator, masked_laplacian, solve_spd
from .macro_ch import (
    AdaptiveRK4,
    BoundaryMode,
    Diagnostics,
    MacroConfig,
    MacroState,
    Snapshot,
    Trajectory,
    diagnostics,
    interface_position,
    make_state,
    rhs,
    rk4_step,
    run,
    step_adaptive_rk4,
)
from .microcell import (
    CellFlow,
    CorrectorField,
    drift_velocity,
    dissipation,
    flow_at_rest,
    mean_flux,
    power,
    solve_corrector_phi,
    solve_corrector_w,
    solve_correctors,
    solve_periodic_stokes,
)
from .tensors import (
    EffectiveTensors,
    assemble_tensors,
    effective_wetting,
    tensor_C,
    tensor_D,
    tensor_M,
)

__all__ = [
    # Geometry
    "BoundaryFace",
    "CellGeometry",
    "boundary_faces",
    "build_channel_cell",
    "build_disk_cell",
    "build_empty_cell",
    "build_triangle_cell",
    "from_mask",
    "mask_from_text",
    "mask_to_text",
    "porosity",
    # Linear algebra
    "SolveReport",
    "SparseOperator",
    "masked_laplacian",
    "solve_spd",
    # Cell problems
    "CellFlow",
    "CorrectorField",
    "drift_velocity",
    "dissipation",
    "flow_at_rest",
    "mean_flux",
    "power",
    "solve_corrector_phi",
    "solve_corrector_w",
    "solve_correctors",
    "solve_periodic_stokes",
    # Effective tensors
    "EffectiveTensors",
    "assemble_tensors",
    "effective_wetting",
    "tensor_C",
    "tensor_D",
    "tensor_M",
    # Free energy
    "FreeEnergy",
    "coercivity_constant",
    "double_well",
    "eval_F",
    "eval_f",
    "eval_f_prime",
    "validate_pf",
    # Macro integration
    "AdaptiveRK4",
    "BoundaryMode",
    "Diagnostics",
    "MacroConfig",
    "MacroState",
    "Snapshot",
    "Trajectory",
    "diagnostics",
    "interface_position",
    "make_state",
    "rhs",
    "rk4_step",
    "run",
    "step_adaptive_rk4",
    # Errors
    "CompatibilityError",
    "ConfigError",
    "DegenerateGeometryError",
    "DependencyError",
    "DimensionError",
    "FreeEnergyError",
    "InvalidGeometryError",
    "IterationLimitError",
    "MacroRunError",
    "NumericalBlowupError",
    "StageError",
    "StiffnessError",
    "UpscalingError",
]
