"""Configuration management for the upscaling pipeline."""

import hashlib
import json
import re
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional, Tuple, Type

import commentjson
import numpy as np
import toml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from .const import (
    DEFAULT_AMPLITUDE,
    DEFAULT_CROSS_SECTION,
    DEFAULT_PE_MIC,
    DEFAULT_RESOLUTION,
)
from .homogenization.errors import ConfigError

Matrix2 = Tuple[Tuple[float, float], Tuple[float, float]]


class _Section(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


class GeometrySettings(_Section):
    """Reference-cell geometry."""

    kind: Literal["channel", "empty", "disk", "triangle"] = "channel"
    amplitude: float = Field(DEFAULT_AMPLITUDE, ge=0)
    cross_section: float = Field(DEFAULT_CROSS_SECTION, gt=0, le=1)
    radius: float = Field(0.25, gt=0, lt=0.5)
    size: float = Field(0.5, gt=0, lt=1)
    resolution: int = Field(DEFAULT_RESOLUTION, ge=16)
    mask_file: Optional[str] = None


class FlowSettings(_Section):
    """Cell flow and the microscopic Peclet number."""

    mu: float = Field(1.0, gt=0)
    force: Tuple[float, float] = (1.0, 0.0)
    pe_mic: float = Field(DEFAULT_PE_MIC, ge=0)
    velocity_source: bool = False


class PhaseFieldSettings(_Section):
    """Free energy and mobility."""

    lam: float = Field(1e-5, gt=0)
    eta: Optional[float] = Field(None, gt=0)
    mobility: Matrix2 = ((1.0, 0.0), (0.0, 1.0))
    coefficients: Optional[List[float]] = None

    @field_validator("mobility")
    @classmethod
    def _spd(cls, value: Matrix2) -> Matrix2:
        m = np.asarray(value, dtype=float)
        if m[0, 1] != m[1, 0]:
            raise ValueError("mobility must be symmetric")
        if np.any(np.linalg.eigvalsh(m) <= 0):
            raise ValueError("mobility must be positive definite")
        return value


class WettingSettings(_Section):
    """Effective wetting constants."""

    g_tilde0: float = 0.0
    h_tilde0: float = 0.0


class MacroSettings(_Section):
    """Macroscopic grid, boundary drive and time integration."""

    dx: float = Field(0.01, gt=0)
    cells_x: int = Field(50, ge=1)
    cells_y: int = Field(35, ge=1)
    points_per_cell: int = Field(4, ge=2)
    boundary: Literal["inlet", "periodic"] = "inlet"
    inlet_flux: float = 1.0
    inlet_modulation: float = Field(0.5, ge=0, le=1)
    inlet_phase: float = -1.0
    front_position: float = Field(0.1, ge=0, le=1)
    front_amplitude: float = Field(0.02, ge=0)
    rk_tol: float = Field(1e-6, gt=0)
    dt_initial: float = Field(1e-6, gt=0)
    dt_min: float = Field(1e-14, gt=0)
    dt_max: Optional[float] = Field(None, gt=0)
    t_end: float = Field(0.5, ge=0)
    output_every: float = Field(0.05, ge=0)


class SolverSettings(_Section):
    """Linear and Stokes solver controls."""

    tol: float = Field(1e-10, gt=0)
    max_iter: Optional[int] = Field(None, ge=1)
    div_tol: float = Field(1e-9, gt=0)
    concurrent: bool = True


class PipelineConfig(_Section):
    """Complete pipeline configuration; every field has a default."""

    geometry: GeometrySettings = Field(default_factory=GeometrySettings)
    flow: FlowSettings = Field(default_factory=FlowSettings)
    phase_field: PhaseFieldSettings = Field(default_factory=PhaseFieldSettings)
    wetting: WettingSettings = Field(default_factory=WettingSettings)
    macro: MacroSettings = Field(default_factory=MacroSettings)
    solver: SolverSettings = Field(default_factory=SolverSettings)

    @property
    def pe_mic(self) -> float:
        return self.flow.pe_mic

    def config_hash(self) -> str:
        """sha256 of the canonical JSON form."""
        canonical = json.dumps(self.model_dump(mode="json"), sort_keys=True)
        return hashlib.sha256(canonical.encode("utf-8")).hexdigest()

    def to_toml(self) -> str:
        return toml.dumps(self.model_dump(mode="json", exclude_none=True))


SECTIONS: Dict[str, Type[_Section]] = {
    "geometry": GeometrySettings,
    "flow": FlowSettings,
    "phase_field": PhaseFieldSettings,
    "wetting": WettingSettings,
    "macro": MacroSettings,
    "solver": SolverSettings,
}

_SECTION_HEADER = re.compile(r"^\s*\[\s*([A-Za-z0-9_.-]+)\s*\]")


def _find_line(text: Optional[str], section: Optional[str], key: str) -> Optional[int]:
    """Line number of ``key = ...`` inside ``section`` (or at top level)."""
    if not text:
        return None
    key_pattern = re.compile(rf"^\s*\"?{re.escape(key)}\"?\s*=")
    current: Optional[str] = None
    for number, line in enumerate(text.splitlines(), start=1):
        header = _SECTION_HEADER.match(line)
        if header:
            current = header.group(1)
            if section is not None and current == section and key == section:
                return number
            continue
        if key_pattern.match(line) and current in (section, None):
            return number
    return None


def _route(data: Dict[str, Any], text: Optional[str]) -> Dict[str, Dict[str, Any]]:
    """Sort raw key/value data into sections.

    Keys written outside any section go to the one section that owns them.
    """
    routed: Dict[str, Dict[str, Any]] = {}
    for key, value in data.items():
        if key in SECTIONS:
            if not isinstance(value, dict):
                raise ConfigError(
                    f"'{key}' must be a section", _find_line(text, None, key)
                )
            routed.setdefault(key, {}).update(value)
            continue
        owners = [name for name, model in SECTIONS.items() if key in model.model_fields]
        if len(owners) != 1:
            raise ConfigError(f"unknown key '{key}'", _find_line(text, None, key))
        routed.setdefault(owners[0], {})[key] = value
    return routed


def _build(data: Dict[str, Any], text: Optional[str]) -> PipelineConfig:
    routed = _route(data, text)
    try:
        return PipelineConfig.model_validate(routed)
    except ValidationError as exc:
        error = exc.errors()[0]
        loc = [str(part) for part in error["loc"]]
        section = loc[0] if loc else None
        key = loc[1] if len(loc) > 1 else section
        if error["type"] == "extra_forbidden":
            message = f"unknown key '{'.'.join(loc)}'"
        else:
            message = f"{'.'.join(loc)}: {error['msg']}"
        raise ConfigError(message, _find_line(text, section, key or "")) from exc


def parse_config(text: str) -> PipelineConfig:
    """Parse section-based ``key = value`` text into a :class:`PipelineConfig`.

    Omitted fields take their defaults; empty text gives the full default
    configuration.

    Raises:
        ConfigError: Malformed syntax, unknown keys or out-of-range values,
            naming the offending line where it can be located.
    """
    try:
        data = toml.loads(text)
    except toml.TomlDecodeError as exc:
        raise ConfigError(f"malformed config: {exc.msg}", exc.lineno) from exc
    return _build(data, text)


def load_config(path: Optional[str] = None) -> PipelineConfig:
    """Load a configuration file; ``.json`` files may carry comments.

    A missing path means the default configuration.
    """
    if path is None:
        return PipelineConfig()
    config_path = Path(path)
    if not config_path.exists():
        raise ConfigError(f"config file not found: {config_path}")
    text = config_path.read_text()
    if config_path.suffix.lower() == ".json":
        try:
            data = commentjson.loads(text)
        except Exception as exc:
            raise ConfigError(f"malformed JSON config {config_path}: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"JSON config {config_path} must hold an object")
        return _build(data, None)
    return parse_config(text)
