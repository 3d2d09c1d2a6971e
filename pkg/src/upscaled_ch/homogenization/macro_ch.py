"""
Upscaled convective Cahn-Hilliard equation on the macroscopic domain.

The order parameter lives on an ``nx x ny`` cell-centred grid with spacing
``dx``; ``phi[i, j]`` sits at ``X = (i + 1/2) dx``, ``Y = (j + 1/2) dx``.
The equation

    p phi_t = div(C grad phi) + lam div(M_phi grad f(phi))
              - (lam/p) div(M_w grad(div(D grad phi) - g0))

is discretized in flux form: every tensor flux is evaluated on cell faces
(normal derivative by a two-point difference, tangential derivative by
averaging centred differences) and differenced into a divergence, so the
scheme is conservative and translation-equivariant on periodic grids.

Two boundary modes exist. ``periodic`` wraps both directions. ``inlet``
keeps Y periodic and prescribes the flux ``U(Y) phi_in`` of the injected
phase through ``X = 0``; there is no drift inside the domain. The order
parameter satisfies ``grad_n phi = h0`` on both X boundaries and the
chemical-potential fluxes vanish there apart from the injected one.

Time integration is classical RK4 with step-doubling error control.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Callable, List, Optional, Tuple

import numpy as np
from skimage import measure

from .energy import FreeEnergy, eval_F, eval_f, max_abs_f_prime
from .errors import (
    ConfigError,
    MacroRunError,
    NumericalBlowupError,
    StiffnessError,
)
from .tensors import EffectiveTensors

logger = logging.getLogger(__name__)

STABILITY_FACTOR = 2.5


class BoundaryMode(str, Enum):
    """Macro boundary treatment in the X direction."""

    PERIODIC = "periodic"
    INLET = "inlet"


@dataclass(frozen=True, eq=False)
class MacroConfig:
    """Everything a macro run needs besides the initial field.

    Attributes:
        tensors: Effective tensors (porosity, wetting constants included).
        fe: Free energy; ``fe.lam`` is the interfacial parameter and
            ``fe.eta`` the capillary width of the initial profile.
        nx, ny: Grid size.
        dx: Grid spacing.
        boundary: Boundary mode in X.
        inlet_flux: Mean flux U injected through X = 0.
        inlet_modulation: Relative square-wave modulation of the drive.
        modulation_period: Grid points per reference cell along Y.
        inlet_phase: Order parameter of the injected fluid.
        rk_tol: Step-doubling tolerance (max norm).
        t_end: Final time.
        output_every: Snapshot interval (0 for start and end only).
        dt_initial, dt_min: Step-size bounds of the controller.
        dt_max: Upper step bound; the explicit stability bound if None.
        front_position: Initial mean front position, fraction of the X length.
        front_amplitude: Amplitude of the sinusoidal initial front, X units.
        overshoot_tolerance: Allowed |phi| beyond 1 before warning.
    """

    tensors: EffectiveTensors
    fe: FreeEnergy
    nx: int
    ny: int
    dx: float
    boundary: BoundaryMode = BoundaryMode.PERIODIC
    inlet_flux: float = 1.0
    inlet_modulation: float = 0.5
    modulation_period: int = 8
    inlet_phase: float = -1.0
    rk_tol: float = 1e-6
    t_end: float = 0.0
    output_every: float = 0.0
    dt_initial: float = 1e-6
    dt_min: float = 1e-14
    dt_max: Optional[float] = None
    front_position: float = 0.1
    front_amplitude: float = 0.02
    overshoot_tolerance: float = 0.2

    def __post_init__(self):
        object.__setattr__(self, "boundary", BoundaryMode(self.boundary))
        if self.dx <= 0:
            raise ConfigError(f"macro grid spacing must be positive, got {self.dx}")
        if self.nx < 3 or self.ny < 2:
            raise ConfigError(f"macro grid too small: {self.nx} x {self.ny}")
        for name in ("rk_tol", "dt_initial", "dt_min"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"{name} must be positive")
        if self.t_end < 0 or self.output_every < 0:
            raise ConfigError("t_end and output_every must be non-negative")
        if self.modulation_period < 1:
            raise ConfigError("modulation_period must be >= 1")

    @property
    def periodic(self) -> bool:
        return self.boundary is BoundaryMode.PERIODIC

    @property
    def periodic_axes(self) -> Tuple[bool, bool]:
        """Periodicity of (X, Y); Y wraps in every mode."""
        return (self.periodic, True)

    @property
    def length_x(self) -> float:
        return self.nx * self.dx

    @property
    def cell_length(self) -> float:
        return self.modulation_period * self.dx

    @property
    def eta(self) -> float:
        return self.fe.eta if self.fe.eta is not None else 2.0 * self.dx

    def coordinates(self) -> Tuple[np.ndarray, np.ndarray]:
        x = (np.arange(self.nx) + 0.5) * self.dx
        y = (np.arange(self.ny) + 0.5) * self.dx
        return np.meshgrid(x, y, indexing="ij")


@dataclass(frozen=True, eq=False)
class MacroState:
    """Order parameter at one time with its conserved/dissipated quantities."""

    phi: np.ndarray
    time: float
    dt: float
    mass: float
    energy: float


@dataclass(frozen=True)
class Diagnostics:
    mass: float
    energy: float
    front_position: float
    front_amplitude: float
    max_abs_phi: float


@dataclass(frozen=True, eq=False)
class Snapshot:
    time: float
    state: MacroState
    diagnostics: Diagnostics


@dataclass
class StepRecord:
    time: float
    dt: float
    error: float
    mass: float
    energy: float


@dataclass
class Trajectory:
    """Snapshots at the output cadence plus the per-step mass/energy series."""

    snapshots: List[Snapshot] = field(default_factory=list)
    steps: List[StepRecord] = field(default_factory=list)
    warnings: List[str] = field(default_factory=list)

    @property
    def final(self) -> Snapshot:
        return self.snapshots[-1]


# ---------------------------------------------------------------------------
# Spatial operators
# ---------------------------------------------------------------------------


def _pad_x(q: np.ndarray, periodic: bool, slope: float, dx: float) -> np.ndarray:
    """Add one ghost column on each X side.

    Non-periodic ghosts realize ``grad_n q = slope`` with outward normals.
    """
    if periodic:
        return np.concatenate([q[-1:], q, q[:1]], axis=0)
    left = q[:1] + slope * dx
    right = q[-1:] + slope * dx
    return np.concatenate([left, q, right], axis=0)


def face_fluxes(
    tensor: np.ndarray,
    q: np.ndarray,
    dx: float,
    periodic: bool = True,
    slope: float = 0.0,
) -> Tuple[np.ndarray, np.ndarray]:
    """Fluxes ``T grad q`` on X-faces ``(nx+1, ny)`` and Y-faces ``(nx, ny)``.

    X-face ``i`` sits at ``X = i dx``; Y-face ``j`` between rows j and j+1.
    """
    t = np.asarray(tensor, dtype=float)
    qp = _pad_x(q, periodic, slope, dx)

    normal_x = (qp[1:] - qp[:-1]) / dx
    dy_centred = (np.roll(qp, -1, axis=1) - np.roll(qp, 1, axis=1)) / (2.0 * dx)
    tangential_x = 0.5 * (dy_centred[1:] + dy_centred[:-1])
    flux_x = t[0, 0] * normal_x + t[0, 1] * tangential_x

    normal_y = (np.roll(q, -1, axis=1) - q) / dx
    dx_centred = (qp[2:] - qp[:-2]) / (2.0 * dx)
    tangential_y = 0.5 * (dx_centred + np.roll(dx_centred, -1, axis=1))
    flux_y = t[1, 0] * tangential_y + t[1, 1] * normal_y
    return flux_x, flux_y


def flux_divergence(flux_x: np.ndarray, flux_y: np.ndarray, dx: float) -> np.ndarray:
    return (flux_x[1:] - flux_x[:-1]) / dx + (flux_y - np.roll(flux_y, 1, axis=1)) / dx


def conservative_divergence(
    tensor: np.ndarray,
    q: np.ndarray,
    dx: float,
    periodic: bool = True,
    slope: float = 0.0,
    closed: bool = False,
) -> np.ndarray:
    """``div(T grad q)`` in flux form.

    ``closed`` zeroes the fluxes through the X boundaries (non-periodic only).
    """
    flux_x, flux_y = face_fluxes(tensor, q, dx, periodic, slope)
    if closed and not periodic:
        flux_x[0] = 0.0
        flux_x[-1] = 0.0
    return flux_divergence(flux_x, flux_y, dx)


def inlet_profile(config: MacroConfig) -> np.ndarray:
    """Inlet flux ``U(Y)``, square-wave modulated with the cell period."""
    y = (np.arange(config.ny) + 0.5) * config.dx
    wave = np.where(np.sin(2.0 * np.pi * y / config.cell_length) >= 0.0, 1.0, -1.0)
    return config.inlet_flux * (1.0 + config.inlet_modulation * wave)


def inlet_source(config: MacroConfig) -> np.ndarray:
    """Divergence of the flux ``U(Y) phi_in`` entering through ``X = 0``.

    Only the first column receives it; the X boundaries are otherwise closed.
    """
    source = np.zeros((config.nx, config.ny))
    source[0] = config.inlet_phase * inlet_profile(config) / config.dx
    return source


def _check_finite(phi: np.ndarray, time: float) -> None:
    if not np.all(np.isfinite(phi)):
        raise NumericalBlowupError(
            f"order parameter is no longer finite at t = {time:.6g}", time
        )


def rhs_field(phi: np.ndarray, config: MacroConfig, time: float = 0.0) -> np.ndarray:
    """Time derivative of ``phi``; see :func:`rhs`."""
    _check_finite(phi, time)
    t = config.tensors
    p = t.porosity
    lam = config.fe.lam
    dx = config.dx
    periodic = config.periodic
    slope = t.h_tilde0

    convective = conservative_divergence(t.C, phi, dx, periodic, slope)
    chemical = lam * conservative_divergence(
        t.M_phi, eval_f(config.fe, phi), dx, periodic, closed=True
    )
    work = conservative_divergence(t.D, phi, dx, periodic, slope) - t.g_tilde0
    fourth = (lam / p) * conservative_divergence(
        t.M_w, work, dx, periodic, closed=True
    )
    total = convective + chemical - fourth
    if not periodic:
        total = total + inlet_source(config)
    return total / p


def rhs(state: MacroState, config: MacroConfig) -> np.ndarray:
    """Right-hand side of the upscaled equation for ``state``.

    Raises:
        NumericalBlowupError: The state contains NaN or Inf.
    """
    return rhs_field(state.phi, config, state.time)


def growth_rate(
    q: float, lam: float, m: float, d: float, p: float, f_prime0: float
) -> float:
    """Linear growth rate ``(lam m / p)(-f'(0) q^2 - (d/p) q^4)`` of a Fourier mode."""
    return (lam * m / p) * (-f_prime0 * q**2 - (d / p) * q**4)


def discrete_growth_rate(
    q: float, dx: float, lam: float, m: float, d: float, p: float, f_prime0: float
) -> float:
    """:func:`growth_rate` with the symbol of the three-point Laplacian."""
    q2 = (4.0 / dx**2) * math.sin(0.5 * q * dx) ** 2
    return (lam * m / p) * (-f_prime0 * q2 - (d / p) * q2**2)


# ---------------------------------------------------------------------------
# Energy, mass, diagnostics
# ---------------------------------------------------------------------------


def total_mass(phi: np.ndarray, dx: float) -> float:
    return float(phi.sum() * dx * dx)


def discrete_energy(phi: np.ndarray, config: MacroConfig) -> float:
    """``sum [lam F(phi) + lam dbar/(2p) |grad phi|^2] dx^2``.

    ``|grad phi|^2`` sums squared face differences, one face per direction
    and node; X-faces crossing a non-periodic boundary are left out.
    """
    t = config.tensors
    lam = config.fe.lam
    dx = config.dx
    bulk = lam * float(eval_F(config.fe, phi).sum())
    if config.periodic:
        gx = (np.roll(phi, -1, axis=0) - phi) / dx
    else:
        gx = (phi[1:] - phi[:-1]) / dx
    gy = (np.roll(phi, -1, axis=1) - phi) / dx
    gradient = float((gx**2).sum() + (gy**2).sum())
    weight = lam * t.mean_diffusivity / (2.0 * t.porosity)
    return (bulk + weight * gradient) * dx * dx


def make_state(
    phi: np.ndarray, time: float, dt: float, config: MacroConfig
) -> MacroState:
    phi = np.array(phi, dtype=float)
    if phi.shape != (config.nx, config.ny):
        raise ConfigError(
            f"field shape {phi.shape} does not match grid {(config.nx, config.ny)}"
        )
    phi.setflags(write=False)
    return MacroState(
        phi=phi,
        time=float(time),
        dt=float(dt),
        mass=total_mass(phi, config.dx),
        energy=discrete_energy(phi, config),
    )


def interface_position(
    phi: np.ndarray,
    dx: float = 1.0,
    origin: Optional[Tuple[float, float]] = None,
    periodic: Tuple[bool, bool] = (False, False),
) -> List[np.ndarray]:
    """Zero level set of ``phi`` as ``(X, Y)`` polylines.

    Crossings are found by linear interpolation along grid lines; each
    connected piece of the level set is one ordered ``(n, 2)`` array.
    ``origin`` is the position of node ``(0, 0)``, cell-centred by default.
    Along a ``periodic`` axis the first grid line is repeated after the last
    one so that crossings on the seam are found; coordinates are folded back
    into ``[0, n dx)`` and points on the repeated line are dropped.
    An all-positive or all-negative field yields an empty list.
    """
    phi = np.asarray(phi, dtype=float)
    _check_finite(phi, float("nan"))
    if origin is None:
        origin = (0.5 * dx, 0.5 * dx)
    if phi.min() > 0.0 or phi.max() < 0.0:
        return []
    padded = phi
    for axis in (0, 1):
        if periodic[axis]:
            padded = np.concatenate([padded, np.take(padded, [0], axis=axis)], axis)

    pieces = []
    for contour in measure.find_contours(padded, 0.0):
        keep = np.ones(len(contour), dtype=bool)
        points = np.asarray(origin) + contour * dx
        for axis in (0, 1):
            if periodic[axis]:
                n = phi.shape[axis]
                keep &= contour[:, axis] < n
                points[:, axis] = np.mod(points[:, axis], n * dx)
        if keep.any():
            pieces.append(points[keep])
    return pieces


def front_profile(phi: np.ndarray, dx: float) -> np.ndarray:
    """X position of the leftmost negative-to-positive crossing in every row.

    Rows without a crossing give NaN.
    """
    phi = np.asarray(phi, dtype=float)
    negative = phi < 0.0
    crossing = negative[:-1] & ~negative[1:]
    has = crossing.any(axis=0)
    first = np.argmax(crossing, axis=0)
    cols = np.arange(phi.shape[1])
    left = phi[first, cols]
    right = phi[first + 1, cols]
    with np.errstate(divide="ignore", invalid="ignore"):
        frac = left / (left - right)
    position = (first + 0.5 + frac) * dx
    return np.where(has, position, np.nan)


def dominant_wavenumber(profile: np.ndarray) -> int:
    """Index of the strongest non-constant Fourier mode of a periodic profile."""
    values = np.asarray(profile, dtype=float)
    if np.all(np.isnan(values)):
        return 0
    values = np.where(np.isnan(values), np.nanmean(values), values)
    spectrum = np.abs(np.fft.rfft(values - values.mean()))
    if spectrum.size < 2:
        return 0
    return int(np.argmax(spectrum[1:]) + 1)


def diagnostics(state: MacroState, config: MacroConfig) -> Diagnostics:
    """Mass, energy and the mean position and spread of the zero set."""
    pieces = interface_position(state.phi, config.dx, periodic=config.periodic_axes)
    if pieces:
        xs = np.concatenate([piece[:, 0] for piece in pieces])
        position = float(xs.mean())
        amplitude = float(xs.max() - xs.min())
    else:
        position = float("nan")
        amplitude = float("nan")
    return Diagnostics(
        mass=state.mass,
        energy=state.energy,
        front_position=position,
        front_amplitude=amplitude,
        max_abs_phi=float(np.max(np.abs(state.phi))),
    )


# ---------------------------------------------------------------------------
# Time integration
# ---------------------------------------------------------------------------


RhsFunction = Callable[[float, np.ndarray], np.ndarray]


def rk4_step(fn: RhsFunction, t: float, y: np.ndarray, dt: float) -> np.ndarray:
    """One classical fourth-order Runge-Kutta step."""
    k1 = fn(t, y)
    k2 = fn(t + 0.5 * dt, y + 0.5 * dt * k1)
    k3 = fn(t + 0.5 * dt, y + 0.5 * dt * k2)
    k4 = fn(t + dt, y + dt * k3)
    return y + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@dataclass
class StepOutcome:
    y: np.ndarray
    dt: float
    dt_next: float
    error: float
    rejected: int


@dataclass
class AdaptiveRK4:
    """RK4 with step-doubling error control.

    The error of a step is ``||y_full - y_half||_inf / 15``; accepted steps
    return the locally extrapolated ``y_half + (y_half - y_full) / 15``. The
    step size follows ``dt * safety * (tol / error)^(1/5)``, limited to
    ``[max_shrink, max_growth]`` per step and clamped to ``[dt_min, dt_max]``.
    """

    tol: float
    dt_min: float
    dt_max: float
    safety: float = 0.9
    max_growth: float = 5.0
    max_shrink: float = 0.1

    def propose(self, dt: float, error: float) -> float:
        if error == 0.0:
            factor = self.max_growth
        elif not math.isfinite(error):
            factor = self.max_shrink
        else:
            factor = self.safety * (self.tol / error) ** 0.2
            factor = min(self.max_growth, max(self.max_shrink, factor))
        return min(self.dt_max, max(self.dt_min, dt * factor))

    def step(self, fn: RhsFunction, t: float, y: np.ndarray, dt: float) -> StepOutcome:
        """Take one accepted step starting with trial size ``dt``.

        Raises:
            StiffnessError: The error stays above ``tol`` at ``dt_min``.
        """
        dt = min(max(dt, self.dt_min), self.dt_max)
        rejected = 0
        while True:
            try:
                full = rk4_step(fn, t, y, dt)
                half = rk4_step(fn, t, y, 0.5 * dt)
                half = rk4_step(fn, t + 0.5 * dt, half, 0.5 * dt)
                error = float(np.max(np.abs(half - full))) / 15.0
            except NumericalBlowupError:
                error = math.inf
            if error <= self.tol:
                y_new = half + (half - full) / 15.0
                return StepOutcome(y_new, dt, self.propose(dt, error), error, rejected)
            if dt <= self.dt_min:
                raise StiffnessError(
                    f"step error {error:.3e} above tolerance {self.tol:g} "
                    f"at dt_min = {self.dt_min:g} (t = {t:.6g})",
                    time=t,
                    dt=dt,
                )
            rejected += 1
            dt = self.propose(dt, error)


def _tensor_bound(tensor: np.ndarray, dx: float) -> float:
    t = np.abs(np.asarray(tensor, dtype=float))
    return (4.0 * (t[0, 0] + t[1, 1]) + 2.0 * (t[0, 1] + t[1, 0])) / dx**2


def stability_dt(config: MacroConfig) -> float:
    """Explicit step bound from a Gershgorin estimate of the linearized rhs."""
    t = config.tensors
    p = t.porosity
    lam = config.fe.lam
    dx = config.dx
    rate = (
        _tensor_bound(t.C, dx)
        + lam * max_abs_f_prime(config.fe) * _tensor_bound(t.M_phi, dx)
        + (lam / p) * _tensor_bound(t.M_w, dx) * _tensor_bound(t.D, dx)
    ) / p
    if rate == 0.0:
        return math.inf
    return STABILITY_FACTOR / rate


def controller_for(config: MacroConfig) -> AdaptiveRK4:
    dt_max = config.dt_max if config.dt_max is not None else stability_dt(config)
    if not math.isfinite(dt_max):
        dt_max = max(config.t_end, config.dt_initial)
    return AdaptiveRK4(tol=config.rk_tol, dt_min=config.dt_min, dt_max=dt_max)


def step_adaptive_rk4(
    state: MacroState,
    config: MacroConfig,
    controller: Optional[AdaptiveRK4] = None,
    dt_limit: Optional[float] = None,
) -> Tuple[MacroState, float, float]:
    """Advance ``state`` by one accepted adaptive RK4 step.

    Args:
        state: Current state; ``state.dt`` is the trial step.
        config: Macro configuration.
        controller: Step controller, built from ``config`` if omitted.
        dt_limit: Optional cap for this step only (to land on output times).

    Returns:
        The new state (its ``dt`` is the proposed next step), the accepted
        step size and the error estimate.
    """
    controller = controller or controller_for(config)
    trial = state.dt if dt_limit is None else min(state.dt, dt_limit)
    if dt_limit is not None and dt_limit < controller.dt_min:
        controller = replace(controller, dt_min=dt_limit)

    def fn(t: float, y: np.ndarray) -> np.ndarray:
        return rhs_field(y, config, t)

    outcome = controller.step(fn, state.time, np.asarray(state.phi), trial)
    new_state = make_state(
        outcome.y, state.time + outcome.dt, outcome.dt_next, config
    )
    return new_state, outcome.dt, outcome.error


def initial_field(config: MacroConfig) -> np.ndarray:
    """Tanh profile across a sinusoidally perturbed front.

    The front sits at ``X0 + A sin(2 pi Y / L_cell)`` with the injected
    phase (-1) on its left. Periodic runs get a slab of width half the
    domain so the field wraps smoothly.
    """
    x, y = config.coordinates()
    width = math.sqrt(2.0) * config.eta
    shift = config.front_amplitude * np.sin(2.0 * np.pi * y / config.cell_length)
    x0 = config.front_position * config.length_x
    first = np.tanh((x - x0 - shift) / width)
    if not config.periodic:
        return first
    x1 = x0 + 0.5 * config.length_x
    return first - np.tanh((x - x1 - shift) / width) - 1.0


def run(
    config: MacroConfig,
    initial_phi: Optional[np.ndarray] = None,
    on_snapshot: Optional[Callable[[Snapshot], None]] = None,
) -> Trajectory:
    """Integrate from the initial field to ``t_end``.

    Snapshots are emitted at ``t = 0``, every ``output_every`` and at
    ``t_end``; steps are shortened to land on those times exactly.

    Raises:
        MacroRunError: A blowup or stiffness failure; carries the partial
            trajectory.
    """
    phi0 = initial_field(config) if initial_phi is None else initial_phi
    state = make_state(phi0, 0.0, config.dt_initial, config)
    controller = controller_for(config)
    trajectory = Trajectory()
    overshoot_reported = False

    def emit(current: MacroState) -> None:
        snapshot = Snapshot(current.time, current, diagnostics(current, config))
        trajectory.snapshots.append(snapshot)
        if on_snapshot is not None:
            on_snapshot(snapshot)

    emit(state)
    if config.output_every > 0:
        count = int(math.floor(config.t_end / config.output_every + 1e-9))
        targets = [config.output_every * k for k in range(1, count + 1)]
    else:
        targets = []
    if targets and targets[-1] >= config.t_end * (1 - 1e-12):
        targets[-1] = config.t_end
    else:
        targets.append(config.t_end)
    targets = [t for t in targets if t > 0]

    dt_proposal = state.dt
    for target in targets:
        while state.time < target * (1 - 1e-12):
            remaining = target - state.time
            try:
                stepped = replace(state, dt=dt_proposal)
                new_state, dt_taken, error = step_adaptive_rk4(
                    stepped, config, controller, dt_limit=remaining
                )
            except (NumericalBlowupError, StiffnessError) as exc:
                raise MacroRunError(
                    f"macro run aborted at t = {state.time:.6g}: {exc}",
                    trajectory,
                    exc,
                ) from exc
            if dt_taken < remaining * (1 - 1e-12):
                dt_proposal = new_state.dt
            else:
                dt_proposal = max(dt_proposal, new_state.dt)
                new_state = replace(new_state, time=target)
            state = new_state
            trajectory.steps.append(
                StepRecord(state.time, dt_taken, error, state.mass, state.energy)
            )
            peak = float(np.max(np.abs(state.phi)))
            if peak > 1.0 + config.overshoot_tolerance and not overshoot_reported:
                message = (
                    f"|phi| reached {peak:.3f} at t = {state.time:.6g}, beyond "
                    f"the overshoot tolerance {config.overshoot_tolerance:g}"
                )
                logger.warning(message)
                trajectory.warnings.append(message)
                overshoot_reported = True
        emit(state)

    logger.info(
        "macro run finished at t = %.6g after %d steps",
        state.time,
        len(trajectory.steps),
    )
    return trajectory
