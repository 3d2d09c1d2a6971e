"""
Reference-cell problems: Laplace correctors and periodic Stokes flow.

Correctors are discretized with a cell-centred finite-volume scheme on the
fluid nodes. Every corrector problem has the flux form

    div(grad xi - s) = 0 in Y1,   (grad xi - s) . n = 0 on the walls,

for a vector source ``s`` (``s = e_k`` for xi_phi, ``s = e_k + lam m (e_k -
grad xi_phi)`` for xi_w). Only the normal component of ``s`` on fluid-fluid
faces enters the linear system, so the discrete right-hand side telescopes
and the Neumann problem is compatible by construction. Wall faces impose
their normal gradient directly.

Stokes flow uses a staggered MAC layout: pressure at fluid nodes, ``u1`` on
x-faces and ``u2`` on y-faces. A face is active only between two fluid
nodes; all other faces carry zero velocity. The saddle-point problem is
solved with conjugate gradients on the pressure Schur complement.
"""

import logging
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy import sparse

from .errors import (
    DegenerateGeometryError,
    InvalidGeometryError,
    IterationLimitError,
)
from .geometry import CellGeometry, fluid_components, wraps_in_x, wraps_in_y
from .linsolve import (
    DEFAULT_TOL,
    SolveReport,
    SparseOperator,
    default_max_iter,
    masked_laplacian,
    solve_spd,
)

logger = logging.getLogger(__name__)

DIMENSION = 2

# relative accuracy reachable by the velocity solves in double precision
INNER_TOL_FLOOR = 1e-11


@dataclass(eq=False)
class CorrectorField:
    """Mean-zero corrector for one unit direction.

    Attributes:
        k: Direction index, 1-based as in the cell problems.
        kind: ``"phi"`` or ``"w"``.
        values: Field on the full ``(nx, ny)`` grid, zero on solid nodes.
        gradient: ``(2, nx, ny)`` node gradients, zero on solid nodes.
        mask: Fluid mask the field lives on.
        report: Linear solve report (None when copied from another field).
    """

    k: int
    kind: str
    values: np.ndarray
    gradient: np.ndarray
    mask: np.ndarray
    report: Optional[SolveReport] = None

    def fluid_values(self) -> np.ndarray:
        return self.values[self.mask]

    def fluid_mean(self) -> float:
        return float(self.values[self.mask].mean())


@dataclass(eq=False)
class CellFlow:
    """Periodic Stokes solution on a reference cell.

    ``u`` holds node velocities (averages of the two adjacent faces) with
    shape ``(2, nx, ny)``; ``u_faces``/``v_faces`` keep the staggered values,
    where ``u_faces[i, j]`` sits between nodes ``(i-1, j)`` and ``(i, j)`` and
    ``v_faces[i, j]`` between ``(i, j-1)`` and ``(i, j)``.
    """

    u: np.ndarray
    pressure: np.ndarray
    mu: float
    force: Tuple[float, float]
    u_faces: np.ndarray
    v_faces: np.ndarray
    report: Optional[SolveReport] = None
    max_divergence: float = 0.0
    inner_iterations: int = 0
    blocked: bool = False
    warnings: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# Correctors
# ---------------------------------------------------------------------------


def _check_solvable(cell: CellGeometry) -> None:
    if cell.n_fluid == 0:
        raise DegenerateGeometryError(
            f"cell '{cell.label}' has no fluid nodes (porosity 0)"
        )
    if fluid_components(cell) != 1:
        raise InvalidGeometryError(
            f"fluid phase of '{cell.label}' is not connected"
        )


def _spacing(cell: CellGeometry, axis: int) -> float:
    return cell.hx if axis == 0 else cell.hy


def _face_rhs(cell: CellGeometry, face_source: Sequence[np.ndarray]) -> np.ndarray:
    """Assemble ``-sum_f n_f . s_f / h`` over fluid-fluid faces.

    ``face_source[a][i, j]`` is the a-component of the source on the face
    between node ``(i, j)`` and its +a neighbour.
    """
    index = cell.fluid_index()
    rhs = np.zeros(cell.n_fluid)
    for axis in range(DIMENSION):
        h = _spacing(cell, axis)
        both = cell.mask & np.roll(cell.mask, -1, axis=axis)
        flux = np.asarray(face_source[axis], dtype=float)[both] / h
        np.add.at(rhs, index[both], -flux)
        np.add.at(rhs, np.roll(index, -1, axis=axis)[both], flux)
    return rhs


def _node_gradient(
    cell: CellGeometry, values: np.ndarray, wall_value: Sequence[np.ndarray]
) -> np.ndarray:
    """Average of the two face gradients; wall faces use their imposed value."""
    grad = np.zeros((DIMENSION,) + values.shape)
    for axis in range(DIMENSION):
        h = _spacing(cell, axis)
        wall = np.broadcast_to(np.asarray(wall_value[axis], dtype=float), values.shape)
        plus_fluid = np.roll(cell.mask, -1, axis=axis)
        minus_fluid = np.roll(cell.mask, 1, axis=axis)
        plus = np.where(
            plus_fluid, (np.roll(values, -1, axis=axis) - values) / h, wall
        )
        minus = np.where(
            minus_fluid, (values - np.roll(values, 1, axis=axis)) / h, wall
        )
        grad[axis] = np.where(cell.mask, 0.5 * (plus + minus), 0.0)
    return grad


def _solve_flux_problem(
    cell: CellGeometry,
    face_source: Sequence[np.ndarray],
    volume_source: Optional[np.ndarray],
    tol: float,
    max_iter: Optional[int],
) -> Tuple[np.ndarray, SolveReport]:
    op = masked_laplacian(cell.mask, cell.hx, cell.hy)
    rhs = _face_rhs(cell, face_source)
    if volume_source is not None:
        rhs = rhs + volume_source[cell.mask]
    solution, report = solve_spd(op, rhs, tol=tol, max_iter=max_iter)
    values = np.zeros(cell.mask.shape)
    values[cell.mask] = solution
    return values, report


def _unit(k: int) -> np.ndarray:
    if k not in (1, 2):
        raise ValueError(f"direction index must be 1 or 2, got {k}")
    e = np.zeros(DIMENSION)
    e[k - 1] = 1.0
    return e


def solve_corrector_phi(
    cell: CellGeometry,
    k: int,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> CorrectorField:
    """Solve the Laplace corrector xi_phi^k with wall flux n . grad xi = n_k.

    Args:
        cell: Reference cell with a connected fluid phase.
        k: Direction index (1 or 2).
        tol: Relative residual tolerance of the linear solve.
        max_iter: Optional CG iteration budget.

    Returns:
        The mean-zero corrector with node gradients.

    Raises:
        DegenerateGeometryError: The cell has no fluid.
        IterationLimitError: The linear solve did not converge.
    """
    _check_solvable(cell)
    e = _unit(k)
    source = [np.full(cell.mask.shape, e[a]) for a in range(DIMENSION)]
    values, report = _solve_flux_problem(cell, source, None, tol, max_iter)
    gradient = _node_gradient(cell, values, [e[0], e[1]])
    logger.debug(
        "xi_phi^%d on '%s': %d iterations, residual %.3e",
        k,
        cell.label,
        report.iterations,
        report.residual_norm,
    )
    return CorrectorField(k, "phi", values, gradient, cell.mask, report)


def _is_isotropic(mobility: np.ndarray) -> bool:
    return (
        mobility[0, 1] == 0.0
        and mobility[1, 0] == 0.0
        and mobility[0, 0] == mobility[1, 1]
    )


def _face_tangential(grad_component: np.ndarray, axis: int) -> np.ndarray:
    """Average a node gradient component onto the +axis faces."""
    return 0.5 * (grad_component + np.roll(grad_component, -1, axis=axis))


def velocity_fluctuation_source(
    cell: CellGeometry, flow: CellFlow, pe_mic: float
) -> np.ndarray:
    """Volume source ``pe_mic * sum_i (u^i - mean u^i)`` on fluid nodes."""
    source = np.zeros(cell.mask.shape)
    for i in range(DIMENSION):
        component = flow.u[i]
        mean = component[cell.mask].mean()
        source += np.where(cell.mask, component - mean, 0.0)
    return pe_mic * source


def solve_corrector_w(
    cell: CellGeometry,
    k: int,
    mobility: np.ndarray,
    lam: float,
    xi_phi: CorrectorField,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
    flow: Optional[CellFlow] = None,
    pe_mic: float = 0.0,
    velocity_source: bool = False,
    shortcut: bool = True,
) -> CorrectorField:
    """Solve the mobility-weighted corrector xi_w^k.

    The problem reads ``div(grad xi_w - e_k - lam m (e_k - grad xi_phi^k)) = 0``
    with the matching zero-flux wall condition. For isotropic mobility the
    data coincide with those of xi_phi^k, and ``shortcut`` returns a copy of
    ``xi_phi`` without solving.

    Args:
        cell: Reference cell.
        k: Direction index (1 or 2).
        mobility: Symmetric positive definite 2x2 mobility tensor.
        lam: Interfacial parameter lambda.
        xi_phi: Previously solved xi_phi^k on the same cell.
        tol: Relative residual tolerance.
        max_iter: Optional CG iteration budget.
        flow: Cell flow, required with ``velocity_source``.
        pe_mic: Microscopic Peclet number for the velocity source.
        velocity_source: Add the experimental fluctuation source of
            :func:`velocity_fluctuation_source`.
        shortcut: Reuse xi_phi for isotropic mobility.

    Returns:
        The mean-zero corrector xi_w^k.
    """
    _check_solvable(cell)
    m = np.asarray(mobility, dtype=float)
    if m.shape != (DIMENSION, DIMENSION):
        raise ValueError(f"mobility must be 2x2, got shape {m.shape}")
    if xi_phi.k != k or xi_phi.mask.shape != cell.mask.shape:
        raise ValueError("xi_phi does not belong to this cell and direction")
    if velocity_source and flow is None:
        raise ValueError("velocity_source requires the cell flow")

    if shortcut and not velocity_source and _is_isotropic(m):
        return CorrectorField(
            k,
            "w",
            xi_phi.values.copy(),
            xi_phi.gradient.copy(),
            cell.mask,
            xi_phi.report,
        )

    e = _unit(k)
    phi = xi_phi.values
    g_phi = xi_phi.gradient
    face_source = []
    wall_value = []
    for a in range(DIMENSION):
        h = _spacing(cell, a)
        flux = np.full(cell.mask.shape, e[a])
        wall = np.full(cell.mask.shape, e[a])
        for b in range(DIMENSION):
            if m[a, b] == 0.0:
                continue
            if b == a:
                normal = (np.roll(phi, -1, axis=a) - phi) / h
                flux = flux + lam * m[a, b] * (e[b] - normal)
                # wall normal gradient of xi_phi is its imposed value e[a]
            else:
                tangential = _face_tangential(g_phi[b], a)
                flux = flux + lam * m[a, b] * (e[b] - tangential)
                wall = wall + lam * m[a, b] * (e[b] - g_phi[b])
        face_source.append(flux)
        wall_value.append(wall)

    volume = None
    if velocity_source:
        volume = velocity_fluctuation_source(cell, flow, pe_mic)

    values, report = _solve_flux_problem(cell, face_source, volume, tol, max_iter)
    gradient = _node_gradient(cell, values, wall_value)
    logger.debug(
        "xi_w^%d on '%s': %d iterations, residual %.3e",
        k,
        cell.label,
        report.iterations,
        report.residual_norm,
    )
    return CorrectorField(k, "w", values, gradient, cell.mask, report)


# ---------------------------------------------------------------------------
# Periodic Stokes flow
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class _MacSystem:
    """Operators of the staggered Stokes discretization."""

    active_u: np.ndarray
    active_v: np.ndarray
    laplacian: sparse.csr_matrix
    gradient: sparse.csr_matrix
    n_u: int
    n_v: int


def _face_laplacian(
    active: np.ndarray, hx: float, hy: float, normal_axis: int
) -> sparse.csr_matrix:
    """Negative Laplacian for one velocity component on its active faces.

    Inactive neighbours along the normal axis are wall faces with zero
    velocity sitting one spacing away; inactive neighbours along the
    tangential axis are no-slip walls half a spacing away (ghost reflection).
    """
    index = np.full(active.shape, -1, dtype=np.int64)
    n = int(active.sum())
    index[active] = np.arange(n)
    rows, cols, vals = [], [], []
    diag = np.zeros(n)
    for axis, h in ((0, hx), (1, hy)):
        w = 1.0 / h**2
        both = active & np.roll(active, -1, axis=axis)
        a = index[both]
        b = np.roll(index, -1, axis=axis)[both]
        rows.extend([a, b])
        cols.extend([b, a])
        vals.extend([np.full(a.size, -w), np.full(a.size, -w)])
        wall_weight = w if axis == normal_axis else 2.0 * w
        for shift in (-1, 1):
            neighbour_active = np.roll(active, shift, axis=axis)[active]
            diag += np.where(neighbour_active, w, wall_weight)
    ids = np.arange(n)
    rows.append(ids)
    cols.append(ids)
    vals.append(diag)
    return sparse.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
        shape=(n, n),
    ).tocsr()


def _face_gradient(
    active: np.ndarray, p_index: np.ndarray, h: float, axis: int
) -> sparse.csr_matrix:
    """Pressure gradient onto the active faces of one axis.

    Face ``(i, j)`` of axis 0 lies between nodes ``(i-1, j)`` and ``(i, j)``.
    """
    n_faces = int(active.sum())
    rows = np.arange(n_faces)
    upper = p_index[active]
    lower = np.roll(p_index, 1, axis=axis)[active]
    return sparse.coo_matrix(
        (
            np.concatenate([np.full(n_faces, 1.0 / h), np.full(n_faces, -1.0 / h)]),
            (np.concatenate([rows, rows]), np.concatenate([upper, lower])),
        ),
        shape=(n_faces, int((p_index >= 0).sum())),
    ).tocsr()


def _mac_system(cell: CellGeometry) -> _MacSystem:
    mask = cell.mask
    active_u = mask & np.roll(mask, 1, axis=0)
    active_v = mask & np.roll(mask, 1, axis=1)
    p_index = cell.fluid_index()
    lap_u = _face_laplacian(active_u, cell.hx, cell.hy, normal_axis=0)
    lap_v = _face_laplacian(active_v, cell.hx, cell.hy, normal_axis=1)
    grad_u = _face_gradient(active_u, p_index, cell.hx, axis=0)
    grad_v = _face_gradient(active_v, p_index, cell.hy, axis=1)
    return _MacSystem(
        active_u=active_u,
        active_v=active_v,
        laplacian=sparse.block_diag([lap_u, lap_v], format="csr"),
        gradient=sparse.vstack([grad_u, grad_v], format="csr"),
        n_u=int(active_u.sum()),
        n_v=int(active_v.sum()),
    )


def _scatter_faces(
    system: _MacSystem, velocity: np.ndarray, shape: Tuple[int, int]
) -> Tuple[np.ndarray, np.ndarray]:
    u_faces = np.zeros(shape)
    v_faces = np.zeros(shape)
    u_faces[system.active_u] = velocity[: system.n_u]
    v_faces[system.active_v] = velocity[system.n_u :]
    return u_faces, v_faces


def _node_velocity(
    cell: CellGeometry, u_faces: np.ndarray, v_faces: np.ndarray
) -> np.ndarray:
    u = np.zeros((DIMENSION,) + cell.mask.shape)
    u[0] = np.where(cell.mask, 0.5 * (u_faces + np.roll(u_faces, -1, axis=0)), 0.0)
    u[1] = np.where(cell.mask, 0.5 * (v_faces + np.roll(v_faces, -1, axis=1)), 0.0)
    return u


def divergence(cell: CellGeometry, flow: CellFlow) -> np.ndarray:
    """Discrete divergence of the staggered velocity at every node."""
    div = (np.roll(flow.u_faces, -1, axis=0) - flow.u_faces) / cell.hx + (
        np.roll(flow.v_faces, -1, axis=1) - flow.v_faces
    ) / cell.hy
    return np.where(cell.mask, div, 0.0)


def solve_periodic_stokes(
    cell: CellGeometry,
    mu: float = 1.0,
    force: Sequence[float] = (1.0, 0.0),
    tol: float = DEFAULT_TOL,
    div_tol: float = 1e-9,
    max_iter: Optional[int] = None,
) -> CellFlow:
    """Solve ``-mu lap u + grad p = force, div u = 0`` with no-slip walls.

    Args:
        cell: Reference cell with at least one solid node.
        mu: Dynamic viscosity.
        force: Constant driving force (eta_1, eta_2).
        tol: Relative tolerance of the inner velocity solves.
        div_tol: Required max-norm of the discrete divergence.
        max_iter: Optional budget for the outer pressure iteration.

    Returns:
        The flow with mean-zero pressure. A geometry without a periodic
        fluid path along the force comes back flagged ``blocked`` with a
        warning instead of an error.

    Raises:
        DegenerateGeometryError: All-solid or all-fluid cell (the periodic
            problem without walls has no bounded solution).
        IterationLimitError: The pressure iteration did not converge.
    """
    if mu <= 0:
        raise ValueError(f"viscosity must be positive, got {mu}")
    _check_solvable(cell)
    if cell.n_fluid == cell.mask.size:
        raise DegenerateGeometryError(
            f"cell '{cell.label}' has no walls; periodic Stokes flow is unbounded"
        )

    force = (float(force[0]), float(force[1]))
    warnings = []
    blocked = (force[0] != 0.0 and not wraps_in_x(cell)) or (
        force[1] != 0.0 and not wraps_in_y(cell)
    )
    if blocked:
        message = (
            f"cell '{cell.label}' has no periodic fluid path along the force; "
            "mean flux will vanish"
        )
        logger.warning(message)
        warnings.append(message)

    system = _mac_system(cell)
    op = SparseOperator(system.laplacian, symmetric=True, singular=False)
    grad = system.gradient
    grad_t = grad.T.tocsr()
    rhs = np.concatenate(
        [np.full(system.n_u, force[0]), np.full(system.n_v, force[1])]
    )
    n_p = cell.n_fluid
    if max_iter is None:
        max_iter = default_max_iter(n_p)

    inner_total = 0

    def inner(b: np.ndarray) -> np.ndarray:
        nonlocal inner_total
        x, rep = solve_spd(op, b, tol=max(0.01 * tol, INNER_TOL_FLOOR))
        inner_total += rep.iterations
        return x

    pressure = np.zeros(n_p)
    velocity = inner(rhs) / mu
    residual = mu * (grad_t @ velocity)
    residual -= residual.mean()
    direction = residual.copy()
    rr = float(residual @ residual)
    outer = 0
    max_div = float(np.max(np.abs(grad_t @ velocity))) if n_p else 0.0

    while max_div > div_tol and outer < max_iter:
        w = inner(grad @ direction)
        s_dir = grad_t @ w
        curvature = float(direction @ s_dir)
        if curvature <= 0.0:
            break
        alpha = rr / curvature
        pressure += alpha * direction
        velocity -= alpha * w / mu
        residual = mu * (grad_t @ velocity)
        residual -= residual.mean()
        outer += 1
        max_div = float(np.max(np.abs(grad_t @ velocity)))
        rr_new = float(residual @ residual)
        direction = residual + (rr_new / rr) * direction
        rr = rr_new

    report = SolveReport(
        iterations=outer,
        residual_norm=max_div,
        converged=max_div <= div_tol,
        tolerance=div_tol,
        rhs_norm=float(np.linalg.norm(rhs)),
    )
    logger.debug(
        "Stokes on '%s': %d outer / %d inner iterations, max |div u| = %.3e",
        cell.label,
        outer,
        inner_total,
        max_div,
    )
    if not report.converged:
        raise IterationLimitError(
            f"pressure iteration stalled at max |div u| = {max_div:.3e} "
            f"after {outer} iterations",
            report,
        )

    pressure -= pressure.mean()
    p_grid = np.zeros(cell.mask.shape)
    p_grid[cell.mask] = pressure
    u_faces, v_faces = _scatter_faces(system, velocity, cell.mask.shape)
    return CellFlow(
        u=_node_velocity(cell, u_faces, v_faces),
        pressure=p_grid,
        mu=mu,
        force=force,
        u_faces=u_faces,
        v_faces=v_faces,
        report=report,
        max_divergence=max_div,
        inner_iterations=inner_total,
        blocked=blocked,
        warnings=warnings,
    )


def flow_at_rest(cell: CellGeometry, mu: float, force: Sequence[float]) -> CellFlow:
    """Zero flow, used where the periodic problem is degenerate."""
    zeros = np.zeros(cell.mask.shape)
    return CellFlow(
        u=np.zeros((DIMENSION,) + cell.mask.shape),
        pressure=zeros.copy(),
        mu=mu,
        force=(float(force[0]), float(force[1])),
        u_faces=zeros.copy(),
        v_faces=zeros.copy(),
        report=SolveReport(0, 0.0, True, 0.0, 0.0),
    )


def drift_velocity(flow: CellFlow, pe_mic: float, cell: CellGeometry) -> np.ndarray:
    """``v^j = pe_mic * mean of u^j over fluid nodes``."""
    if cell.n_fluid == 0:
        return np.zeros(DIMENSION)
    return np.array([pe_mic * float(flow.u[j][cell.mask].mean()) for j in range(2)])


def dissipation(flow: CellFlow, cell: CellGeometry) -> float:
    """Viscous dissipation ``mu ||grad u||^2`` over the cell."""
    system = _mac_system(cell)
    velocity = np.concatenate(
        [flow.u_faces[system.active_u], flow.v_faces[system.active_v]]
    )
    area = cell.hx * cell.hy
    return float(flow.mu * velocity @ (system.laplacian @ velocity) * area)


def power(flow: CellFlow, cell: CellGeometry) -> float:
    """Work of the driving force, ``eta . integral of u``."""
    area = cell.hx * cell.hy
    return float(
        (flow.force[0] * flow.u_faces.sum() + flow.force[1] * flow.v_faces.sum())
        * area
    )


def mean_flux(flow: CellFlow, cell: CellGeometry) -> np.ndarray:
    """Darcy flux: cell average of ``u`` with solid nodes counted as zero."""
    return np.array([float(flow.u[j].sum()) / cell.mask.size for j in range(2)])


def solve_correctors(
    cell: CellGeometry,
    tol: float = DEFAULT_TOL,
    max_iter: Optional[int] = None,
) -> Tuple[CorrectorField, CorrectorField]:
    """xi_phi^1 and xi_phi^2 in sequence."""
    return (
        solve_corrector_phi(cell, 1, tol, max_iter),
        solve_corrector_phi(cell, 2, tol, max_iter),
    )
