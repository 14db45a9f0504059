import math

import numpy as np
import pytest

from waveletpinn.errors import InstabilityError, ValidationError
from waveletpinn.fdtd import (
    YeeGrid,
    cfl_limit,
    make_pulse_source,
    reference_time_step,
    sample_fields,
    self_convergence_orders,
    solve_reference,
)


def test_cfl_validation():
    lim = cfl_limit(0.05, 0.05)
    assert lim == pytest.approx(0.05 / math.sqrt(2))
    YeeGrid(nx=20, ny=20, dt=lim)  # boundary value is allowed
    with pytest.raises(ValidationError):
        YeeGrid(nx=20, ny=20, dt=1.01 * lim)
    YeeGrid(nx=20, ny=20, dt=1.5 * lim, enforce_cfl=False)


def test_zero_source_stays_exactly_zero():
    grid = YeeGrid(nx=16, ny=16, dt=0.02)
    for _ in range(50):
        grid.step(None)
    assert np.all(grid.ex == 0.0)
    assert np.all(grid.ey == 0.0)
    assert np.all(grid.hz == 0.0)


def test_first_step_only_moves_hz():
    grid = YeeGrid(nx=32, ny=32, dt=0.01)
    source = make_pulse_source(grid, tau=0.25, omega=0.25, sigma=0.05, center=(0.5, 0.5))
    grid.step(source)
    assert np.all(grid.ex == 0.0)
    assert np.all(grid.ey == 0.0)
    np.testing.assert_allclose(grid.hz, -grid.dt * source(grid.dt), rtol=1e-15)


def test_pec_walls_after_every_step():
    grid = YeeGrid(nx=24, ny=24, dt=0.02)
    source = make_pulse_source(grid, tau=0.05, omega=0.02, sigma=0.08, center=(0.4, 0.6))
    for _ in range(40):
        grid.step(source)
        assert np.all(grid.ex[:, 0] == 0.0)
        assert np.all(grid.ex[:, -1] == 0.0)
        assert np.all(grid.ey[0, :] == 0.0)
        assert np.all(grid.ey[-1, :] == 0.0)


def test_unstable_dt_grows_monotonically():
    lim = cfl_limit(1 / 20, 1 / 20)
    grid = YeeGrid(nx=20, ny=20, dt=1.4 * lim, enforce_cfl=False)
    grid.hz[10, 10] = 1.0  # impulse
    energies = [grid.energy()]
    blew_up = False
    try:
        for _ in range(200):
            grid.step(None, check_finite=True)
            energies.append(grid.energy())
    except InstabilityError:
        blew_up = True
    tail = energies[-20:] if len(energies) >= 20 else energies
    grew = all(b >= a for a, b in zip(tail, tail[1:])) and tail[-1] > 1e3 * energies[0]
    assert blew_up or grew


def test_stable_dt_keeps_energy_bounded():
    lim = cfl_limit(1 / 20, 1 / 20)
    grid = YeeGrid(nx=20, ny=20, dt=0.9 * lim)
    grid.hz[10, 10] = 1.0
    e0 = grid.energy()
    for _ in range(200):
        grid.step(None)
    assert grid.energy() < 10 * e0


def test_mirror_symmetry_with_central_source():
    grid = YeeGrid(nx=40, ny=40, dt=0.01)
    source = make_pulse_source(grid, tau=0.1, omega=0.05, sigma=0.05, center=(0.5, 0.5))
    for _ in range(60):
        grid.step(source)
    scale = max(np.abs(grid.hz).max(), 1.0)
    # H_z is even under both mirrors; E_x is even in x and odd in y;
    # E_y is odd in x and even in y.
    assert np.abs(grid.hz - grid.hz[::-1, :]).max() <= 1e-12 * scale
    assert np.abs(grid.hz - grid.hz[:, ::-1]).max() <= 1e-12 * scale
    assert np.abs(grid.ex - grid.ex[::-1, :]).max() <= 1e-12 * scale
    assert np.abs(grid.ex + grid.ex[:, ::-1]).max() <= 1e-12 * scale
    assert np.abs(grid.ey + grid.ey[::-1, :]).max() <= 1e-12 * scale
    assert np.abs(grid.ey - grid.ey[:, ::-1]).max() <= 1e-12 * scale


def test_paper_grid_step_count():
    sol = solve_reference(
        5e-3,
        5e-3,
        1.5e-3,
        0.5,
        sigma=0.05,
        query_points=np.array([[0.5, 0.5, 0.5]]),
    )
    assert sol.n_steps == 334  # ceil(0.5 / 1.5e-3)


def test_early_fields_are_single_step_small():
    dt = 1.5e-3
    sol = solve_reference(
        0.01,
        0.01,
        dt,
        2 * dt,
        tau=0.25,
        omega=0.25,
        sigma=0.05,
        query_points=np.array([[0.5, 0.5, dt]]),
    )
    peak = 1.0 / (2 * math.pi * 0.05**2) * math.exp(-((dt - 0.25) / 0.25) ** 2)
    assert abs(sol.hz[0]) <= 1.5 * dt * peak
    assert sol.ex[0] == 0.0 and sol.ey[0] == 0.0


def test_query_time_snapping():
    # H_z snaps to half steps, E to integer steps
    grid_dt = 0.01
    q = np.array([[0.5, 0.5, 0.014], [0.5, 0.5, 0.021]])
    sol = solve_reference(0.05, 0.05, grid_dt, 0.05, sigma=0.1, query_points=q)
    # manual march to the matching levels
    ref = YeeGrid(nx=20, ny=20, dt=grid_dt)
    src = make_pulse_source(ref, 0.25, 0.25, 0.1, (0.5, 0.5))
    ref.bootstrap_h(src)
    ref.step(src)  # E@0.01, H@0.015
    vals1 = sample_fields(ref, q[:1, :2])
    assert sol.hz[0] == vals1["hz"][0]
    ref.step(src)  # E@0.02, H@0.025
    vals2 = sample_fields(ref, q[1:, :2])
    assert sol.ex[1] == vals2["ex"][0]
    assert sol.ey[1] == vals2["ey"][0]


def test_snapshots_recorded():
    sol = solve_reference(
        0.05,
        0.05,
        0.01,
        0.1,
        sigma=0.1,
        snapshot_times=[0.05, 0.1],
    )
    assert set(sol.snapshots) == {0.05, 0.1}
    assert sol.snapshots[0.1]["hz"].shape == (20, 20)


def test_self_convergence_second_order():
    # dyadic ladder in the smooth-source regime (coarsest grid resolves sigma)
    orders = self_convergence_orders(
        [1 / 40, 1 / 80, 1 / 160],
        t_final=0.25,
        tau=0.25,
        omega=0.25,
        sigma=0.05,
    )
    assert len(orders) == 1
    assert 1.7 <= orders[0] <= 2.2


def test_bootstrap_rules():
    grid = YeeGrid(nx=16, ny=16, dt=0.02)
    src = make_pulse_source(grid, tau=0.1, omega=0.1, sigma=0.1, center=(0.5, 0.5))
    grid.bootstrap_h(src)
    np.testing.assert_allclose(grid.hz, -0.5 * grid.dt * src(0.25 * grid.dt), rtol=1e-15)
    grid.step(src)
    with pytest.raises(ValidationError):
        grid.bootstrap_h(src)
    # zero-source bootstrap preserves exact zeros
    quiet = YeeGrid(nx=8, ny=8, dt=0.02)
    quiet.bootstrap_h(None)
    assert np.all(quiet.hz == 0.0)


def test_reference_time_step_divides_final_time():
    dt = reference_time_step(0.01, 0.01, 0.25)
    n = 0.25 / dt
    assert abs(n - round(n)) < 1e-12
    assert dt <= cfl_limit(0.01, 0.01) * 0.5 + 1e-15
