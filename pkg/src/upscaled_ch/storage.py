"""Stage artifacts on disk.

Every text artifact starts with ``#`` metadata lines (``# key: value``),
including the config hash of the run that wrote it. Tables follow as a
header row plus comma-separated rows; numbers are written with 17
significant digits so files re-read losslessly and reruns are
byte-identical.
"""

import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .const import FLOAT_FORMAT
from .homogenization.errors import DependencyError, DimensionError
from .homogenization.geometry import CellGeometry, mask_from_text, mask_to_text
from .homogenization.macro_ch import Snapshot, StepRecord
from .homogenization.microcell import CellFlow, CorrectorField
from .homogenization.tensors import EffectiveTensors

logger = logging.getLogger(__name__)

Metadata = Dict[str, str]


def _number(value: float) -> str:
    return format(float(value), FLOAT_FORMAT)


def require(path: Path, stage: Optional[str] = None) -> Path:
    """Return ``path`` if it exists.

    Raises:
        DependencyError: The file is missing; the message names it and the
            stage that produces it.
    """
    path = Path(path)
    if not path.exists():
        producer = f" (run the '{stage}' stage first)" if stage else ""
        raise DependencyError(f"required artifact {path} is missing{producer}", path)
    return path


def _header(kind: str, metadata: Mapping[str, Any]) -> str:
    lines = [f"# upscaled-ch {kind}"]
    lines.extend(f"# {key}: {value}" for key, value in metadata.items())
    return "\n".join(lines) + "\n"


def _write_table(
    path: Path,
    kind: str,
    metadata: Mapping[str, Any],
    columns: Sequence[str],
    data: np.ndarray,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="\n") as fh:
        fh.write(_header(kind, metadata))
        fh.write(",".join(columns) + "\n")
        if len(data):
            np.savetxt(fh, data, delimiter=",", fmt="%" + FLOAT_FORMAT)
    logger.debug("wrote %s", path)
    return path


def read_metadata(text: str) -> Metadata:
    metadata: Metadata = {}
    for line in text.splitlines():
        if line.startswith("#"):
            key, sep, value = line[1:].partition(":")
            if sep:
                metadata[key.strip()] = value.strip()
    return metadata


def read_table(path: Path) -> Tuple[Metadata, List[str], np.ndarray]:
    """Read a table written by this module.

    Returns:
        Metadata map, column names and a 2-D float array of the rows.
    """
    text = require(path).read_text()
    metadata = read_metadata(text)
    body = [
        line
        for line in text.splitlines()
        if line.strip() and not line.startswith("#")
    ]
    if not body:
        raise DimensionError(f"{path} has no column header")
    columns = [c.strip() for c in body[0].split(",")]
    if len(body) > 1:
        data = np.loadtxt(body[1:], delimiter=",", ndmin=2)
    else:
        data = np.empty((0, len(columns)))
    return metadata, columns, data


# ---------------------------------------------------------------------------
# Geometry
# ---------------------------------------------------------------------------


def write_mask(path: Path, cell: CellGeometry, config_hash: str) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata = {
        "label": cell.label,
        "geometry_hash": cell.digest(),
        "porosity": _number(cell.porosity),
        "config_hash": config_hash,
    }
    path.write_text(_header("mask", metadata) + mask_to_text(cell))
    return path


def read_mask(path: Path, label: Optional[str] = None) -> CellGeometry:
    """Load a mask text file; comment lines are ignored."""
    path = require(path, "cell")
    text = path.read_text()
    label = label or read_metadata(text).get("label", path.stem)
    return mask_from_text(text, label=label)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------

CORRECTOR_COLUMNS = ("i", "j", "x", "y", "fluid", "value", "grad_x", "grad_y")
FLOW_COLUMNS = ("i", "j", "x", "y", "fluid", "u1", "u2", "pressure", "u_face", "v_face")


def _node_columns(cell: CellGeometry) -> List[np.ndarray]:
    i, j = np.meshgrid(np.arange(cell.nx), np.arange(cell.ny), indexing="ij")
    x, y = cell.node_coordinates()
    return [i, j, x, y, cell.mask.astype(float)]


def _stack(columns: Iterable[np.ndarray]) -> np.ndarray:
    return np.column_stack([np.asarray(c, dtype=float).ravel() for c in columns])


def write_corrector(
    path: Path, corrector: CorrectorField, cell: CellGeometry, config_hash: str
) -> Path:
    data = _stack(
        _node_columns(cell)
        + [corrector.values, corrector.gradient[0], corrector.gradient[1]]
    )
    metadata: Dict[str, Any] = {
        "field": f"xi_{corrector.kind}_{corrector.k}",
        "geometry_hash": cell.digest(),
        "config_hash": config_hash,
    }
    if corrector.report is not None:
        metadata["iterations"] = corrector.report.iterations
        metadata["residual"] = _number(corrector.report.residual_norm)
    return _write_table(path, "corrector", metadata, CORRECTOR_COLUMNS, data)


def _grid(cell: CellGeometry, data: np.ndarray, column: int) -> np.ndarray:
    return data[:, column].reshape(cell.nx, cell.ny)


def _check_grid(
    path: Path, cell: CellGeometry, data: np.ndarray, metadata: Metadata
) -> None:
    recorded = metadata.get("geometry_hash")
    if recorded and recorded != cell.digest():
        raise DependencyError(
            f"{path} was computed on geometry {recorded}, "
            f"the cell mask is {cell.digest()}",
            path,
        )
    if data.shape[0] != cell.mask.size:
        raise DimensionError(
            f"{path} holds {data.shape[0]} nodes, the cell has {cell.mask.size}"
        )


def read_corrector(path: Path, cell: CellGeometry, k: int, kind: str) -> CorrectorField:
    metadata, columns, data = read_table(require(path, "cell"))
    _check_grid(path, cell, data, metadata)
    col = {name: n for n, name in enumerate(columns)}
    gradient = np.stack(
        [_grid(cell, data, col["grad_x"]), _grid(cell, data, col["grad_y"])]
    )
    return CorrectorField(
        k, kind, _grid(cell, data, col["value"]), gradient, cell.mask, None
    )


def write_flow(
    path: Path, flow: CellFlow, cell: CellGeometry, config_hash: str
) -> Path:
    data = _stack(
        _node_columns(cell)
        + [flow.u[0], flow.u[1], flow.pressure, flow.u_faces, flow.v_faces]
    )
    metadata: Dict[str, Any] = {
        "mu": _number(flow.mu),
        "force": f"{_number(flow.force[0])} {_number(flow.force[1])}",
        "max_divergence": _number(flow.max_divergence),
        "blocked": str(flow.blocked).lower(),
        "geometry_hash": cell.digest(),
        "config_hash": config_hash,
    }
    return _write_table(path, "flow", metadata, FLOW_COLUMNS, data)


def read_flow(path: Path, cell: CellGeometry) -> CellFlow:
    metadata, columns, data = read_table(require(path, "stokes"))
    _check_grid(path, cell, data, metadata)
    col = {name: n for n, name in enumerate(columns)}
    force = tuple(float(v) for v in metadata.get("force", "1 0").split())
    return CellFlow(
        u=np.stack([_grid(cell, data, col["u1"]), _grid(cell, data, col["u2"])]),
        pressure=_grid(cell, data, col["pressure"]),
        mu=float(metadata.get("mu", 1.0)),
        force=(force[0], force[1]),
        u_faces=_grid(cell, data, col["u_face"]),
        v_faces=_grid(cell, data, col["v_face"]),
        max_divergence=float(metadata.get("max_divergence", 0.0)),
        blocked=metadata.get("blocked") == "true",
    )


def write_vtk(
    path: Path,
    cell: CellGeometry,
    title: str,
    config_hash: str,
    scalars: Optional[Mapping[str, np.ndarray]] = None,
    vectors: Optional[Mapping[str, np.ndarray]] = None,
) -> Path:
    """Legacy ASCII VTK structured-points file of node fields.

    Args:
        scalars: Name -> ``(nx, ny)`` arrays.
        vectors: Name -> ``(2, nx, ny)`` arrays; written with a zero third
            component.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = [
        "# vtk DataFile Version 3.0",
        f"upscaled-ch {title} config_hash={config_hash}",
        "ASCII",
        "DATASET STRUCTURED_POINTS",
        f"DIMENSIONS {cell.nx} {cell.ny} 1",
        f"ORIGIN {_number(0.5 * cell.hx)} {_number(0.5 * cell.hy)} 0",
        f"SPACING {_number(cell.hx)} {_number(cell.hy)} 1",
        f"POINT_DATA {cell.mask.size}",
    ]
    # VTK orders points with x fastest
    for name, values in (scalars or {}).items():
        lines.append(f"SCALARS {name} double 1")
        lines.append("LOOKUP_TABLE default")
        lines.extend(_number(v) for v in np.asarray(values).T.ravel())
    for name, values in (vectors or {}).items():
        lines.append(f"VECTORS {name} double")
        ux = np.asarray(values[0]).T.ravel()
        uy = np.asarray(values[1]).T.ravel()
        lines.extend(f"{_number(a)} {_number(b)} 0" for a, b in zip(ux, uy))
    path.write_text("\n".join(lines) + "\n")
    return path


# ---------------------------------------------------------------------------
# Tensor report
# ---------------------------------------------------------------------------


def write_tensor_report(
    path: Path,
    tensors: EffectiveTensors,
    config_hash: str,
    residuals: Optional[Mapping[str, float]] = None,
) -> Path:
    """Name/value report of every tensor entry, v and the solver residuals.

    Notes of ``tensors`` go to the metadata lines; residual rows are named
    ``residual.<problem>`` and ignored when the report is read back.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    metadata: Dict[str, Any] = {"config_hash": config_hash}
    metadata.update({key: value for key, value in sorted(tensors.notes.items())})
    rows = [f"{name},{_number(value)}" for name, value in tensors.entries().items()]
    rows.extend(
        f"residual.{name},{_number(value)}"
        for name, value in sorted((residuals or {}).items())
    )
    path.write_text(
        _header("tensor report", metadata) + "name,value\n" + "\n".join(rows) + "\n"
    )
    return path


def read_tensor_report(path: Path) -> Tuple[EffectiveTensors, Metadata]:
    """Parse a tensor report, tolerating hand edits of the values.

    Raises:
        DependencyError: The report does not exist.
        DimensionError: A tensor entry is missing or not a number.
    """
    metadata: Metadata = {}
    values: Dict[str, float] = {}
    for number, line in enumerate(require(path, "tensors").read_text().splitlines(), 1):
        stripped = line.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            key, sep, value = stripped[1:].partition(":")
            if sep:
                metadata[key.strip()] = value.strip()
            continue
        name, _, raw = stripped.partition(",")
        name = name.strip()
        if name == "name" or name.startswith("residual."):
            continue
        try:
            values[name] = float(raw)
        except ValueError as exc:
            raise DimensionError(
                f"{path}:{number}: value of '{name}' is not a number: {raw!r}"
            ) from exc
    notes = {k: v for k, v in metadata.items() if k != "config_hash"}
    return EffectiveTensors.from_entries(values, notes), metadata


# ---------------------------------------------------------------------------
# Macro output
# ---------------------------------------------------------------------------

SNAPSHOT_COLUMNS = ("i", "j", "X", "Y", "phi")
DIAGNOSTIC_COLUMNS = (
    "time",
    "mass",
    "energy",
    "front_position",
    "front_amplitude",
    "max_abs_phi",
)
STEP_COLUMNS = ("time", "dt", "error", "mass", "energy")


def write_snapshot(
    path: Path, snapshot: Snapshot, dx: float, index: int, config_hash: str
) -> Path:
    phi = np.asarray(snapshot.state.phi)
    nx, ny = phi.shape
    i, j = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    data = _stack([i, j, (i + 0.5) * dx, (j + 0.5) * dx, phi])
    metadata = {
        "index": index,
        "time": _number(snapshot.time),
        "dx": _number(dx),
        "config_hash": config_hash,
    }
    return _write_table(path, "snapshot", metadata, SNAPSHOT_COLUMNS, data)


def read_snapshot(path: Path) -> Tuple[float, np.ndarray]:
    """Time and order parameter of a snapshot file."""
    metadata, columns, data = read_table(path)
    nx = int(data[:, 0].max()) + 1 if len(data) else 0
    ny = int(data[:, 1].max()) + 1 if len(data) else 0
    phi = data[:, columns.index("phi")].reshape(nx, ny)
    return float(metadata.get("time", "nan")), phi


def write_interface(
    path: Path,
    polylines: Sequence[np.ndarray],
    time: float,
    config_hash: str,
) -> Path:
    """Zero level set as rows ``piece, X, Y``."""
    rows = [
        np.column_stack([np.full(len(line), n), line])
        for n, line in enumerate(polylines)
    ]
    data = np.vstack(rows) if rows else np.empty((0, 3))
    metadata = {
        "time": _number(time),
        "pieces": len(polylines),
        "config_hash": config_hash,
    }
    return _write_table(path, "interface", metadata, ("piece", "X", "Y"), data)


def write_diagnostics(
    path: Path, snapshots: Sequence[Snapshot], config_hash: str
) -> Path:
    data = np.array(
        [
            [
                s.time,
                s.diagnostics.mass,
                s.diagnostics.energy,
                s.diagnostics.front_position,
                s.diagnostics.front_amplitude,
                s.diagnostics.max_abs_phi,
            ]
            for s in snapshots
        ]
    ).reshape(-1, len(DIAGNOSTIC_COLUMNS))
    return _write_table(
        path, "diagnostics", {"config_hash": config_hash}, DIAGNOSTIC_COLUMNS, data
    )


def write_steps(path: Path, steps: Sequence[StepRecord], config_hash: str) -> Path:
    data = np.array(
        [[s.time, s.dt, s.error, s.mass, s.energy] for s in steps]
    ).reshape(-1, len(STEP_COLUMNS))
    return _write_table(path, "steps", {"config_hash": config_hash}, STEP_COLUMNS, data)


# ---------------------------------------------------------------------------
# Stage summaries
# ---------------------------------------------------------------------------


def write_summary(path: Path, summary: Mapping[str, Any]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(summary, indent=2, sort_keys=True, default=str) + "\n")
    return path


def read_summary(path: Path) -> Dict[str, Any]:
    """Stage summary, or an empty dict if the stage never wrote one."""
    path = Path(path)
    if not path.exists():
        return {}
    return json.loads(path.read_text())
