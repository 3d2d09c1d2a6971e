"""
Tests for the upscaled Cahn-Hilliard solver.

The linear dispersion relation is the main oracle: a small Fourier mode
must grow at the rate of the three-point-Laplacian symbol.
"""

import math

import numpy as np
import pytest

from upscaled_ch.homogenization.energy import FreeEnergy, double_well, eval_f
from upscaled_ch.homogenization.errors import (
    ConfigError,
    MacroRunError,
    NumericalBlowupError,
    StiffnessError,
)
from upscaled_ch.homogenization.macro_ch import (
    AdaptiveRK4,
    BoundaryMode,
    MacroConfig,
    conservative_divergence,
    diagnostics,
    discrete_growth_rate,
    dominant_wavenumber,
    front_profile,
    growth_rate,
    initial_field,
    inlet_profile,
    inlet_source,
    interface_position,
    make_state,
    rhs,
    rhs_field,
    rk4_step,
    run,
    stability_dt,
    step_adaptive_rk4,
    total_mass,
)
from upscaled_ch.homogenization.tensors import EffectiveTensors


def isotropic_tensors(d=1.0, m=1.0, porosity=1.0, c=0.0, **extra) -> EffectiveTensors:
    return EffectiveTensors(
        D=d * np.eye(2),
        C=c * np.eye(2),
        M_phi=m * np.eye(2),
        M_w=m * np.eye(2),
        v=[0.0, 0.0],
        porosity=porosity,
        **extra,
    )


def small_config(**overrides) -> MacroConfig:
    values = dict(
        tensors=isotropic_tensors(d=0.4, m=0.4, porosity=0.46),
        fe=double_well(0.1, lam=1e-3),
        nx=64,
        ny=16,
        dx=0.05,
        modulation_period=16,
        front_amplitude=0.1,
        t_end=0.05,
        output_every=0.01,
        rk_tol=1e-8,
    )
    values.update(overrides)
    return MacroConfig(**values)


class TestDispersion:
    """Test linear growth of Fourier modes."""

    @pytest.mark.parametrize("k", [1, 3, 4, 5, 6])
    def test_discrete_growth_rate(self, k):
        n, dx, eps = 256, 0.05, 1e-6
        config = MacroConfig(
            tensors=isotropic_tensors(),
            fe=double_well(1.0, lam=1.0),
            nx=n,
            ny=2,
            dx=dx,
        )
        x, _ = config.coordinates()
        q = 2.0 * math.pi * k / (n * dx)
        phi = eps * np.cos(q * x)
        rate = float(np.sum(rhs_field(phi, config) * phi) / np.sum(phi * phi))
        expected = discrete_growth_rate(q, dx, 1.0, 1.0, 1.0, 1.0, -1.0)
        assert rate == pytest.approx(expected, rel=1e-6)

    def test_continuous_limit(self):
        q = 0.3
        assert discrete_growth_rate(q, 1e-4, 1.0, 1.0, 1.0, 1.0, -1.0) == (
            pytest.approx(growth_rate(q, 1.0, 1.0, 1.0, 1.0, -1.0), rel=1e-6)
        )

    def test_unstable_band(self):
        # -f'(0) q^2 > (d/p) q^4 below q = 1
        assert growth_rate(0.5, 1.0, 1.0, 1.0, 1.0, -1.0) > 0
        assert growth_rate(2.0, 1.0, 1.0, 1.0, 1.0, -1.0) < 0


class TestRightHandSide:
    """Test conservation and symmetry of the discrete operator."""

    def test_periodic_rhs_conserves_mass(self):
        config = small_config()
        phi = initial_field(config)
        assert abs(rhs_field(phi, config).sum()) < 1e-8

    def test_translation_equivariance(self):
        config = small_config(
            tensors=EffectiveTensors(
                D=[[0.4, 0.05], [0.05, 0.2]],
                C=[[1e-3, 0.0], [0.0, 2e-3]],
                M_phi=[[0.4, 0.0], [0.0, 0.1]],
                M_w=[[0.3, 0.02], [0.02, 0.1]],
                v=[0.0, 0.0],
                porosity=0.46,
            )
        )
        rng = np.random.default_rng(3)
        phi = rng.uniform(-1.0, 1.0, (config.nx, config.ny))
        shifted = np.roll(np.roll(phi, 5, axis=0), -3, axis=1)
        expected = np.roll(np.roll(rhs_field(phi, config), 5, axis=0), -3, axis=1)
        assert np.array_equal(rhs_field(shifted, config), expected)

    def test_constant_state_is_steady(self):
        config = small_config()
        phi = np.full((config.nx, config.ny), 0.3)
        assert np.allclose(rhs_field(phi, config), 0.0, atol=1e-12)

    def test_rhs_takes_state(self):
        config = small_config()
        state = make_state(initial_field(config), 0.0, 1e-6, config)
        assert np.array_equal(rhs(state, config), rhs_field(state.phi, config))

    def test_unit_tensors_give_standard_cahn_hilliard(self):
        config = small_config(tensors=isotropic_tensors())
        rng = np.random.default_rng(5)
        phi = rng.uniform(-1.0, 1.0, (config.nx, config.ny))

        def laplacian(q):
            return (
                np.roll(q, 1, axis=0)
                + np.roll(q, -1, axis=0)
                + np.roll(q, 1, axis=1)
                + np.roll(q, -1, axis=1)
                - 4.0 * q
            ) / config.dx**2

        lam = config.fe.lam
        expected = lam * laplacian(eval_f(config.fe, phi)) - lam * laplacian(
            laplacian(phi)
        )
        scale = np.abs(expected).max()
        assert np.allclose(rhs_field(phi, config), expected, rtol=0, atol=1e-10 * scale)

    def test_nan_detected(self):
        config = small_config()
        phi = initial_field(config)
        phi[3, 4] = np.nan
        with pytest.raises(NumericalBlowupError):
            rhs_field(phi, config)

    def test_closed_divergence_conserves(self):
        rng = np.random.default_rng(4)
        q = rng.standard_normal((16, 8))
        div = conservative_divergence(np.eye(2), q, 0.1, periodic=False, closed=True)
        assert abs(div.sum()) < 1e-9

    def test_inlet_profile_square_wave(self):
        config = small_config(
            boundary=BoundaryMode.INLET, modulation_period=4, inlet_modulation=0.5
        )
        profile = inlet_profile(config)
        assert set(np.round(profile, 12)) == {0.5, 1.5}
        assert profile.mean() == pytest.approx(1.0)

    def test_inlet_mass_balance(self):
        config = small_config(boundary=BoundaryMode.INLET, modulation_period=4)
        phi = initial_field(config)
        rate = rhs_field(phi, config).sum() * config.dx**2
        injected = config.inlet_phase * inlet_profile(config).sum() * config.dx
        assert rate == pytest.approx(injected / config.tensors.porosity, rel=1e-8)

    def test_inlet_drive_acts_on_first_column_only(self):
        config = small_config(boundary=BoundaryMode.INLET, modulation_period=4)
        x, _ = config.coordinates()
        flat = np.tanh((x - 0.8) / 0.15)
        r = rhs_field(flat, config)
        assert np.allclose(r[1:], r[1:, :1], rtol=1e-13, atol=0)
        assert len(np.unique(np.round(r[0], 9))) == 2
        base = r[0] - inlet_source(config)[0] / config.tensors.porosity
        assert np.allclose(base, base[0], rtol=1e-12, atol=1e-9)


class TestTimeIntegration:
    """Test the RK4 step and its controller."""

    @staticmethod
    def decay(t, y):
        return -y

    def test_rk4_order(self):
        errors = []
        for steps in (10, 20):
            y = np.array([1.0])
            dt = 1.0 / steps
            for n in range(steps):
                y = rk4_step(self.decay, n * dt, y, dt)
            errors.append(abs(y[0] - math.exp(-1.0)))
        assert math.log2(errors[0] / errors[1]) >= 3.8

    def test_adaptive_accuracy(self):
        controller = AdaptiveRK4(tol=1e-9, dt_min=1e-12, dt_max=0.1)
        t, y, dt = 0.0, np.array([1.0]), 1e-3
        while t < 1.0 - 1e-15:
            outcome = controller.step(self.decay, t, y, min(dt, 1.0 - t))
            t += outcome.dt
            y, dt = outcome.y, outcome.dt_next
        assert y[0] == pytest.approx(math.exp(-1.0), abs=1e-7)

    def test_step_size_limits(self):
        controller = AdaptiveRK4(tol=1e-6, dt_min=1e-8, dt_max=0.5)
        assert controller.propose(0.1, 0.0) == 0.5
        assert controller.propose(0.1, math.inf) == pytest.approx(0.01)
        assert controller.propose(1e-8, 1.0) == 1e-8

    def test_stiffness_error(self):
        controller = AdaptiveRK4(tol=1e-12, dt_min=1.0, dt_max=1.0)
        with pytest.raises(StiffnessError) as info:
            controller.step(lambda t, y: -50.0 * y, 0.0, np.array([1.0]), 1.0)
        assert info.value.dt == 1.0

    def test_step_adaptive_rk4(self):
        config = small_config()
        state = make_state(initial_field(config), 0.0, 1e-5, config)
        new_state, dt, error = step_adaptive_rk4(state, config)
        assert new_state.time == pytest.approx(dt)
        assert error <= config.rk_tol
        assert new_state.mass == pytest.approx(state.mass, abs=1e-10)

    def test_stability_bound(self):
        config = small_config()
        assert 0 < stability_dt(config) < 1.0
        inlet = small_config(boundary="inlet")
        assert stability_dt(inlet) == stability_dt(config)


class TestRun:
    """Test whole macro runs."""

    def test_snapshot_times(self):
        config = small_config(t_end=0.03)
        seen = []
        trajectory = run(config, on_snapshot=lambda s: seen.append(s.time))
        assert seen == pytest.approx([0.0, 0.01, 0.02, 0.03])
        assert seen[-1] == 0.03
        assert len(trajectory.snapshots) == 4
        assert trajectory.steps

    def test_periodic_mass_conservation(self):
        config = small_config(t_end=0.03)
        trajectory = run(config)
        masses = [s.diagnostics.mass for s in trajectory.snapshots]
        assert np.allclose(masses, masses[0], rtol=0, atol=1e-10)

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_energy_non_increasing_every_step(self):
        eta, lam = 0.5, 1.0
        tensors = isotropic_tensors()
        # diffusive time p eta^2 / (lam m) across the interface width, m = 1
        relaxation = tensors.porosity * eta**2 / lam
        config = small_config(
            tensors=tensors,
            fe=double_well(eta, lam=lam),
            nx=16,
            ny=16,
            dx=0.25,
            modulation_period=16,
            front_amplitude=0.5,
            t_end=10.0 * relaxation,
            output_every=0.0,
            rk_tol=1e-10,
        )
        trajectory = run(config)
        energies = [trajectory.snapshots[0].energy] + [
            step.energy for step in trajectory.steps
        ]
        slack = 1e-12 * abs(energies[0])
        assert all(b <= a + slack for a, b in zip(energies, energies[1:]))
        assert energies[-1] < energies[0]
        assert trajectory.final.time == pytest.approx(10.0 * relaxation)

    def test_failure_keeps_trajectory(self):
        config = small_config(
            rk_tol=1e-300, dt_initial=1e-3, dt_min=1e-3, dt_max=1e-3, t_end=0.01
        )
        with pytest.raises(MacroRunError) as info:
            run(config)
        assert len(info.value.trajectory.snapshots) == 1
        assert isinstance(info.value.cause, StiffnessError)

    def test_inlet_mass_follows_injection(self):
        config = small_config(boundary=BoundaryMode.INLET, t_end=0.02)
        trajectory = run(config)
        injected = config.inlet_phase * inlet_profile(config).sum() * config.dx
        rate = injected / config.tensors.porosity
        for snapshot in trajectory.snapshots:
            expected = trajectory.snapshots[0].state.mass + rate * snapshot.time
            assert snapshot.state.mass == pytest.approx(expected, rel=1e-9, abs=1e-9)

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_inlet_front_advances(self):
        cells_x, cells_y, ppc = 8, 4, 4
        config = MacroConfig(
            tensors=isotropic_tensors(d=0.4, m=0.4, porosity=0.46),
            fe=double_well(0.1, lam=1e-3),
            nx=cells_x * ppc,
            ny=cells_y * ppc,
            dx=0.05,
            boundary=BoundaryMode.INLET,
            modulation_period=ppc,
            t_end=0.2,
            output_every=0.05,
        )
        trajectory = run(config)
        positions = [s.diagnostics.front_position for s in trajectory.snapshots]
        assert all(b > a for a, b in zip(positions, positions[1:]))
        assert positions[-1] - positions[0] > 0.05
        amplitudes = [s.diagnostics.front_amplitude for s in trajectory.snapshots]
        assert max(amplitudes) < config.cell_length
        profile = front_profile(trajectory.final.state.phi, config.dx)
        assert dominant_wavenumber(profile) == cells_y

    @pytest.mark.slow
    @pytest.mark.timeout(600)
    def test_front_travels_steadily_at_reference_parameters(self):
        # reference spacing, interface parameter and drive; coupled rows
        cells_x, cells_y, ppc, dx = 20, 8, 4, 0.01
        config = MacroConfig(
            tensors=isotropic_tensors(d=0.4, m=0.4, porosity=0.46),
            fe=double_well(2 * dx, lam=1e-5),
            nx=cells_x * ppc,
            ny=cells_y * ppc,
            dx=dx,
            boundary=BoundaryMode.INLET,
            inlet_flux=1.0,
            inlet_modulation=0.5,
            modulation_period=ppc,
            t_end=0.2,
            output_every=0.04,
        )
        trajectory = run(config)
        positions = [s.diagnostics.front_position for s in trajectory.snapshots]
        amplitudes = [s.diagnostics.front_amplitude for s in trajectory.snapshots]
        assert all(b >= a for a, b in zip(positions, positions[1:]))
        assert positions[-1] - positions[0] > 5 * dx
        assert max(amplitudes[1:]) < 2 * config.cell_length
        assert amplitudes[-1] <= amplitudes[-2] + 2 * dx


class TestInterface:
    """Test level-set extraction and front diagnostics."""

    @staticmethod
    def ramp(c=0.52, nx=20, ny=10, dx=0.1):
        x = (np.arange(nx) + 0.5) * dx
        return np.repeat((x - c)[:, None], ny, axis=1)

    def test_vertical_front(self):
        pieces = interface_position(self.ramp(), dx=0.1)
        assert len(pieces) == 1
        assert np.allclose(pieces[0][:, 0], 0.52)
        assert pieces[0][:, 1].min() == pytest.approx(0.05)

    def test_origin(self):
        pieces = interface_position(self.ramp(), dx=0.1, origin=(0.0, 0.0))
        assert np.allclose(pieces[0][:, 0], 0.47)

    def test_single_phase_has_no_interface(self):
        assert interface_position(np.ones((8, 8))) == []
        assert interface_position(-np.ones((8, 8))) == []

    def test_crossing_on_periodic_seam(self):
        nx, ny, dx = 100, 4, 0.01
        x = (np.arange(nx) + 0.5) * dx
        phi = np.repeat(np.sin(2 * np.pi * x)[:, None], ny, axis=1)
        pieces = interface_position(phi, dx, periodic=(True, True))
        xs = np.concatenate([piece[:, 0] for piece in pieces])
        to_seam = np.minimum(xs, 1.0 - xs)
        assert np.all(np.minimum(np.abs(xs - 0.5), to_seam) < 1e-4)
        assert np.sum(to_seam < 1e-4) == ny
        assert np.sum(np.abs(xs - 0.5) < 1e-4) == ny

    def test_open_axes_have_no_seam(self):
        nx, dx = 100, 0.01
        x = (np.arange(nx) + 0.5) * dx
        phi = np.repeat(np.sin(2 * np.pi * x)[:, None], 4, axis=1)
        xs = np.concatenate([p[:, 0] for p in interface_position(phi, dx)])
        assert np.allclose(xs, 0.5)

    def test_periodic_rows_not_duplicated(self):
        pieces = interface_position(self.ramp(), dx=0.1, periodic=(False, True))
        points = np.concatenate(pieces)
        assert len(points) == 10
        assert np.allclose(points[:, 0], 0.52)
        assert np.all(points[:, 1] < 1.0)
        assert len(np.unique(np.round(points[:, 1], 9))) == 10

    def test_diagnostics_count_seam_crossing(self):
        config = small_config()
        # roots at X = 0.01 (between the last and the first column) and 1.61
        x, _ = config.coordinates()
        phi = np.sin(2 * np.pi * (x - 0.01) / config.length_x)
        info = diagnostics(make_state(phi, 0.0, 1e-6, config), config)
        assert info.front_position == pytest.approx(0.81, abs=1e-3)
        assert info.front_amplitude == pytest.approx(1.6, abs=1e-3)

    def test_front_profile(self):
        nx, ny, dx = 40, 12, 0.05
        x = (np.arange(nx) + 0.5) * dx
        centre = 0.9 + 0.1 * np.sin(2 * np.pi * 3 * np.arange(ny) / ny)
        phi = x[:, None] - centre[None, :]
        assert np.allclose(front_profile(phi, dx), centre)
        assert dominant_wavenumber(front_profile(phi, dx)) == 3

    def test_front_profile_without_crossing(self):
        profile = front_profile(np.ones((8, 4)), 0.1)
        assert np.all(np.isnan(profile))
        assert dominant_wavenumber(profile) == 0

    def test_initial_field_sign(self):
        config = small_config(boundary="inlet")
        phi = initial_field(config)
        assert np.all(phi[0] < 0)
        assert np.all(phi[-1] > 0)


class TestMacroConfig:
    """Test macro configuration checks."""

    def test_grid_too_small(self):
        with pytest.raises(ConfigError):
            small_config(nx=2)

    def test_positive_tolerance(self):
        with pytest.raises(ConfigError):
            small_config(rk_tol=0.0)

    def test_state_shape(self):
        config = small_config()
        with pytest.raises(ConfigError):
            make_state(np.zeros((3, 3)), 0.0, 1e-6, config)

    def test_mass(self):
        assert total_mass(np.ones((4, 5)), 0.5) == pytest.approx(5.0)

    def test_eta_defaults_to_two_spacings(self):
        fe = FreeEnergy.from_coefficients([0.0, -1.0, 0.0, 1.0], lam=1e-3)
        assert small_config(fe=fe).eta == pytest.approx(0.1)
