"""
Exception hierarchy for the homogenization engine and the pipeline.

Every failure raised by this package derives from :class:`UpscalingError`;
subclasses attach their structured payload as attributes.
"""

from pathlib import Path
from typing import Any, Dict, Optional


class UpscalingError(Exception):
    """Base class for all errors raised by upscaled-ch."""


class InvalidGeometryError(UpscalingError):
    """Geometry parameters or a mask describe an unusable reference cell."""


class DegenerateGeometryError(UpscalingError):
    """The cell has no fluid (or nothing to solve) for the requested problem."""


class IterationLimitError(UpscalingError):
    """An iterative solver exhausted its iteration budget."""

    def __init__(self, message: str, report: Any):
        super().__init__(message)
        self.report = report


class CompatibilityError(UpscalingError):
    """The right-hand side of a singular system violates the Fredholm condition."""

    def __init__(self, message: str, imbalance: float):
        super().__init__(message)
        self.imbalance = imbalance


class DimensionError(UpscalingError):
    """Cell-problem outputs do not match the cell they are assembled on."""


class FreeEnergyError(UpscalingError):
    """Free-energy parameters are invalid."""


class NumericalBlowupError(UpscalingError):
    """The macro state stopped being finite."""

    def __init__(self, message: str, time: float):
        super().__init__(message)
        self.time = time


class StiffnessError(UpscalingError):
    """The adaptive integrator could not meet its tolerance above dt_min."""

    def __init__(self, message: str, time: float, dt: float):
        super().__init__(message)
        self.time = time
        self.dt = dt


class MacroRunError(UpscalingError):
    """A macro run aborted; the trajectory recorded so far is kept."""

    def __init__(self, message: str, trajectory: Any, cause: Exception):
        super().__init__(message)
        self.trajectory = trajectory
        self.cause = cause


class ConfigError(UpscalingError):
    """Configuration text could not be parsed or validated."""

    def __init__(self, message: str, line: Optional[int] = None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class DependencyError(UpscalingError):
    """A stage needs an artifact that an earlier stage has not written."""

    def __init__(self, message: str, path: Path):
        super().__init__(message)
        self.path = Path(path)


class StageError(UpscalingError):
    """A pipeline stage failed; carries the stage name and solver report."""

    def __init__(
        self, stage: str, message: str, report: Optional[Dict[str, Any]] = None
    ):
        super().__init__(f"stage '{stage}' failed: {message}")
        self.stage = stage
        self.report = report or {}
