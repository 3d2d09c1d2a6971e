"""
Effective macroscopic tensors from the cell-problem solutions.

All quadratures are node-wise midpoint sums over the fluid nodes,
normalized by the total number of nodes (the measure of the whole cell):

    d_ik   = (1/|Y|) int_{Y1} (delta_ik - d xi_phi^k / d y_i)
    m_ik   = (1/|Y|) int_{Y1} (m_ik - sum_j m_ij d xi^k / d y_j)
    c_ii   = (Pe_mic/|Y|) int_{Y1} (u^i - <u^i>) xi_phi^i,   c_ik = 0 (i != k)

where ``<u^i>`` is the plain fluid mean of the cell velocity.
"""

import logging
from dataclasses import dataclass, field
from typing import Any, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import DimensionError
from .geometry import CellGeometry
from .microcell import DIMENSION, CellFlow, CorrectorField

logger = logging.getLogger(__name__)

QUADRATURE_NOTES = (
    "sum over j in the tensor integrands read as delta_ik - d xi^k/d y_i; "
    "v inside the C integrand is the plain fluid mean of u, Pe_mic applied once"
)


@dataclass(frozen=True, eq=False)
class EffectiveTensors:
    """Coefficients of the upscaled convective Cahn-Hilliard equation."""

    D: np.ndarray
    C: np.ndarray
    M_phi: np.ndarray
    M_w: np.ndarray
    v: np.ndarray
    porosity: float
    pe_mic: float = 0.0
    g_tilde0: float = 0.0
    h_tilde0: float = 0.0
    notes: Dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        for name in ("D", "C", "M_phi", "M_w"):
            value = np.array(getattr(self, name), dtype=float)
            if value.shape != (DIMENSION, DIMENSION):
                raise DimensionError(f"{name} must be 2x2, got shape {value.shape}")
            value.setflags(write=False)
            object.__setattr__(self, name, value)
        v = np.array(self.v, dtype=float).reshape(-1)
        if v.shape != (DIMENSION,):
            raise DimensionError(f"v must have 2 components, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "v", v)
        if not 0 < self.porosity <= 1:
            raise DimensionError(f"porosity must lie in (0, 1], got {self.porosity}")

    @property
    def mean_diffusivity(self) -> float:
        """Mean diagonal of D, the gradient-energy weight."""
        return float(np.trace(self.D)) / DIMENSION

    def entries(self) -> Dict[str, float]:
        """Flat name -> value map, the layout of the tensor report."""
        values: Dict[str, float] = {"porosity": float(self.porosity)}
        for name in ("D", "C", "M_phi", "M_w"):
            matrix = getattr(self, name)
            for i in range(DIMENSION):
                for k in range(DIMENSION):
                    values[f"{name}_{i + 1}{k + 1}"] = float(matrix[i, k])
        for j in range(DIMENSION):
            values[f"v_{j + 1}"] = float(self.v[j])
        values["pe_mic"] = float(self.pe_mic)
        values["g_tilde0"] = float(self.g_tilde0)
        values["h_tilde0"] = float(self.h_tilde0)
        return values

    @classmethod
    def from_entries(
        cls, values: Dict[str, float], notes: Optional[Dict[str, Any]] = None
    ) -> "EffectiveTensors":
        """Rebuild tensors from :meth:`entries` output (e.g. an edited report)."""

        def matrix(name: str) -> np.ndarray:
            try:
                return np.array(
                    [
                        [values[f"{name}_{i + 1}{k + 1}"] for k in range(DIMENSION)]
                        for i in range(DIMENSION)
                    ]
                )
            except KeyError as exc:
                raise DimensionError(f"tensor entry {exc.args[0]} missing") from exc

        return cls(
            D=matrix("D"),
            C=matrix("C"),
            M_phi=matrix("M_phi"),
            M_w=matrix("M_w"),
            v=np.array([values.get("v_1", 0.0), values.get("v_2", 0.0)]),
            porosity=float(values["porosity"]),
            pe_mic=float(values.get("pe_mic", 0.0)),
            g_tilde0=float(values.get("g_tilde0", 0.0)),
            h_tilde0=float(values.get("h_tilde0", 0.0)),
            notes=dict(notes or {}),
        )

    def is_isotropic_consistent(self, m: float, atol: float = 1e-10) -> bool:
        """Check m D == M_phi == M_w entrywise, the isotropic-mobility identity."""
        return bool(
            np.allclose(m * self.D, self.M_phi, rtol=0.0, atol=atol)
            and np.allclose(self.M_phi, self.M_w, rtol=0.0, atol=atol)
        )


def _check_correctors(
    correctors: Sequence[CorrectorField], cell: CellGeometry
) -> None:
    if len(correctors) != DIMENSION:
        raise DimensionError(
            f"expected {DIMENSION} correctors, got {len(correctors)}"
        )
    for expected_k, corrector in enumerate(correctors, start=1):
        if corrector.k != expected_k:
            raise DimensionError(
                f"corrector in slot {expected_k} solves direction {corrector.k}"
            )
        if corrector.values.shape != cell.mask.shape or not np.array_equal(
            corrector.mask, cell.mask
        ):
            raise DimensionError(
                f"corrector {corrector.kind}^{corrector.k} was solved on another cell"
            )


def tensor_D(xi_phi: Sequence[CorrectorField], cell: CellGeometry) -> np.ndarray:
    """Geometry-corrected diffusion tensor D."""
    return tensor_M(np.eye(DIMENSION), xi_phi, cell)


def tensor_M(
    mobility: np.ndarray, correctors: Sequence[CorrectorField], cell: CellGeometry
) -> np.ndarray:
    """Mobility-weighted effective tensor; M_phi with xi_phi, M_w with xi_w."""
    _check_correctors(correctors, cell)
    m = np.asarray(mobility, dtype=float)
    if m.shape != (DIMENSION, DIMENSION):
        raise DimensionError(f"mobility must be 2x2, got shape {m.shape}")
    total = cell.mask.size
    result = np.zeros((DIMENSION, DIMENSION))
    for k, corrector in enumerate(correctors):
        grad = corrector.gradient[:, cell.mask]
        for i in range(DIMENSION):
            integrand = m[i, k] - (m[i, :, None] * grad).sum(axis=0)
            result[i, k] = integrand.sum() / total
    return result


def tensor_C(
    flow: CellFlow,
    v: Sequence[float],
    xi_phi: Sequence[CorrectorField],
    pe_mic: float,
    cell: CellGeometry,
) -> np.ndarray:
    """Diagonal convection-dispersion tensor C.

    ``v`` is the drift returned by ``drift_velocity``; it is only checked
    against the flow, since the integrand uses the plain fluid mean of ``u``.
    """
    _check_correctors(xi_phi, cell)
    v = np.asarray(v, dtype=float).reshape(-1)
    if v.shape != (DIMENSION,):
        raise DimensionError(f"v must have 2 components, got {v.shape}")
    if flow.u.shape != (DIMENSION,) + cell.mask.shape:
        raise DimensionError(
            f"flow field shape {flow.u.shape} does not match the cell "
            f"{cell.mask.shape}"
        )

    total = cell.mask.size
    result = np.zeros((DIMENSION, DIMENSION))
    for i in range(DIMENSION):
        u_i = flow.u[i][cell.mask]
        raw_mean = u_i.mean() if u_i.size else 0.0
        if not np.isclose(v[i], pe_mic * raw_mean, rtol=1e-9, atol=1e-14):
            logger.warning(
                "drift component v_%d = %.6g differs from pe_mic * <u_%d> = %.6g",
                i + 1,
                v[i],
                i + 1,
                pe_mic * raw_mean,
            )
        integral = float(((u_i - raw_mean) * xi_phi[i].values[cell.mask]).sum())
        result[i, i] = pe_mic * integral / total
    return result


def effective_wetting(
    g_tilde0: float = 0.0, h_tilde0: float = 0.0
) -> Tuple[float, float]:
    """Effective wetting constants, taken as given from configuration."""
    return float(g_tilde0), float(h_tilde0)


def assemble_tensors(
    cell: CellGeometry,
    xi_phi: Sequence[CorrectorField],
    xi_w: Sequence[CorrectorField],
    flow: CellFlow,
    v: Sequence[float],
    mobility: np.ndarray,
    pe_mic: float,
    g_tilde0: float = 0.0,
    h_tilde0: float = 0.0,
) -> EffectiveTensors:
    """Run every quadrature and bundle the result."""
    g, h = effective_wetting(g_tilde0, h_tilde0)
    tensors = EffectiveTensors(
        D=tensor_D(xi_phi, cell),
        C=tensor_C(flow, v, xi_phi, pe_mic, cell),
        M_phi=tensor_M(mobility, xi_phi, cell),
        M_w=tensor_M(mobility, xi_w, cell),
        v=np.asarray(v, dtype=float),
        porosity=cell.porosity,
        pe_mic=pe_mic,
        g_tilde0=g,
        h_tilde0=h,
        notes={
            "geometry": cell.label,
            "geometry_hash": cell.digest(),
            "quadrature": QUADRATURE_NOTES,
            "wetting": "configuration",
        },
    )
    d = tensors.D
    if abs(d[0, 1] - d[1, 0]) > 1e-8:
        logger.warning(
            "D is not symmetric: d12 = %.3e, d21 = %.3e", d[0, 1], d[1, 0]
        )
    return tensors
