"""Yee-grid FDTD reference solver for the TEz cavity benchmark.

Unit permittivity/permeability; fields staggered the standard way:
E_x on x-edges ((i+1/2)dx, j dy), E_y on y-edges (i dx, (j+1/2)dy), H_z at
cell centers, E at integer time steps and H_z at half steps.  One step
updates both E fields from the H_z curl, enforces the PEC walls
(tangential E pinned to zero), then updates H_z from the E curl and
injects the source as a soft term inside the H_z equation:

    dEx/dt =  dHz/dy,   dEy/dt = -dHz/dx,
    dHz/dt = -(dEy/dx - dEx/dy + S).

Stability requires dt <= 1/sqrt(1/dx^2 + 1/dy^2) at unit wave speed.

Queries interpolate bilinearly in space from the staggered positions and
take the nearest stored time level (integer steps for E, half steps for
H_z).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InstabilityError, ValidationError


def cfl_limit(dx: float, dy: float) -> float:
    """Largest stable time step at unit wave speed."""
    return 1.0 / math.sqrt(1.0 / dx**2 + 1.0 / dy**2)


@dataclass
class YeeGrid:
    """Staggered TEz cavity state on [0,1]^2 with PEC walls."""

    nx: int
    ny: int
    dt: float
    enforce_cfl: bool = True
    ex: np.ndarray = field(init=False)
    ey: np.ndarray = field(init=False)
    hz: np.ndarray = field(init=False)
    step_index: int = field(init=False, default=0)

    def __post_init__(self):
        if self.nx < 2 or self.ny < 2:
            raise ValidationError("grid needs at least 2 cells per axis")
        if self.dt <= 0:
            raise ValidationError("dt must be positive")
        if self.enforce_cfl and self.dt > cfl_limit(self.dx, self.dy) * (1 + 1e-12):
            raise ValidationError(
                f"dt={self.dt} violates the CFL bound {cfl_limit(self.dx, self.dy):.6g}"
            )
        self.ex = np.zeros((self.nx, self.ny + 1))
        self.ey = np.zeros((self.nx + 1, self.ny))
        self.hz = np.zeros((self.nx, self.ny))

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dy(self) -> float:
        return 1.0 / self.ny

    @property
    def time_e(self) -> float:
        """Time level of the E fields."""
        return self.step_index * self.dt

    @property
    def time_h(self) -> float:
        """Time level of H_z (half step ahead of E)."""
        return (self.step_index + 0.5) * self.dt

    def energy(self) -> float:
        return float(
            np.sum(self.ex**2) + np.sum(self.ey**2) + np.sum(self.hz**2)
        )

    def enforce_pec(self):
        """Pin tangential E on every wall to exactly zero."""
        self.ex[:, 0] = 0.0
        self.ex[:, -1] = 0.0
        self.ey[0, :] = 0.0
        self.ey[-1, :] = 0.0

    def bootstrap_h(self, source_at=None):
        """Half-step H_z start consistent with fields given at t = 0.

        H_z lives at t = dt/2; seeding it with the half-step update keeps
        the leapfrog second-order when the source is already on at t = 0.
        Must be called before the first step and only then.
        """
        if self.step_index != 0:
            raise ValidationError("bootstrap applies only to the initial state")
        curl = (self.ey[1:, :] - self.ey[:-1, :]) / self.dx - (
            self.ex[:, 1:] - self.ex[:, :-1]
        ) / self.dy
        if source_at is not None:
            curl = curl + source_at(0.25 * self.dt)
        self.hz -= 0.5 * self.dt * curl
        return self

    def step(self, source_at=None, check_finite: bool = True):
        """One leapfrog step; source_at(t) returns S at cell centers."""
        dt, dx, dy = self.dt, self.dx, self.dy
        # E updates see H_z at the intermediate half step
        self.ex[:, 1:-1] += (dt / dy) * (self.hz[:, 1:] - self.hz[:, :-1])
        self.ey[1:-1, :] -= (dt / dx) * (self.hz[1:, :] - self.hz[:-1, :])
        self.enforce_pec()
        t_new = (self.step_index + 1) * dt
        curl = (self.ey[1:, :] - self.ey[:-1, :]) / dx - (
            self.ex[:, 1:] - self.ex[:, :-1]
        ) / dy
        if source_at is not None:
            curl = curl + source_at(t_new)
        self.hz -= dt * curl
        self.step_index += 1
        if check_finite and not np.isfinite(self.hz).all():
            raise InstabilityError(
                f"non-finite field at step {self.step_index}", step=self.step_index
            )
        return self


def centered_offsets(n: int, center_over_d: float) -> np.ndarray:
    """Cell-center offsets (i + 1/2) - center/d in index units.

    Computed in index space so a grid-symmetric center yields bitwise
    mirror-symmetric offsets (the mirror-symmetry invariant relies on it).
    """
    return (np.arange(n) + 0.5) - center_over_d


def make_pulse_source(grid: YeeGrid, tau: float, omega: float, sigma: float, center):
    """Separable source S(x,y,t) on the grid's cell centers.

    The spatial Gaussian kernel is precomputed once; each step only scales
    it by the temporal pulse value.
    """
    if tau <= 0 or omega <= 0 or sigma <= 0:
        raise ValidationError("tau, omega, sigma must be positive")
    x0, y0 = center
    xoff = centered_offsets(grid.nx, x0 * grid.nx) * grid.dx
    yoff = centered_offsets(grid.ny, y0 * grid.ny) * grid.dy
    r2 = xoff[:, None] ** 2 + yoff[None, :] ** 2
    spatial = np.exp(-r2 / (2.0 * sigma**2)) / (2.0 * math.pi * sigma**2)

    def source_at(t: float) -> np.ndarray:
        return spatial * math.exp(-(((t - tau) / omega) ** 2))

    return source_at


# -- interpolation and the reference solve ------------------------------------------


def _bilinear(arr: np.ndarray, u: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Bilinear sample of arr at fractional indices (u, v), edge-clamped."""
    nx, ny = arr.shape
    u = np.clip(u, 0.0, nx - 1.0)
    v = np.clip(v, 0.0, ny - 1.0)
    i0 = np.minimum(u.astype(int), nx - 2) if nx > 1 else np.zeros_like(u, dtype=int)
    j0 = np.minimum(v.astype(int), ny - 2) if ny > 1 else np.zeros_like(v, dtype=int)
    fu = u - i0
    fv = v - j0
    return (
        arr[i0, j0] * (1 - fu) * (1 - fv)
        + arr[i0 + 1, j0] * fu * (1 - fv)
        + arr[i0, j0 + 1] * (1 - fu) * fv
        + arr[i0 + 1, j0 + 1] * fu * fv
    )


def sample_fields(grid: YeeGrid, xy: np.ndarray) -> dict:
    """Spatially interpolated (ex, ey, hz) at points (n, 2), current step."""
    xy = np.atleast_2d(np.asarray(xy, dtype=float))
    x, y = xy[:, 0], xy[:, 1]
    return {
        "ex": _bilinear(grid.ex, x / grid.dx - 0.5, y / grid.dy),
        "ey": _bilinear(grid.ey, x / grid.dx, y / grid.dy - 0.5),
        "hz": _bilinear(grid.hz, x / grid.dx - 0.5, y / grid.dy - 0.5),
    }


@dataclass
class ReferenceSolution:
    """FDTD fields sampled at the requested space-time query points."""

    n_steps: int
    dx: float
    dy: float
    dt: float
    queries: np.ndarray  # (n, 3): x, y, t
    ex: np.ndarray
    ey: np.ndarray
    hz: np.ndarray
    snapshots: dict  # time -> {"ex": ..., "ey": ..., "hz": ...}

    def field(self, name: str) -> np.ndarray:
        return {"ex": self.ex, "ey": self.ey, "hz": self.hz}[name]

    def stacked(self) -> np.ndarray:
        return np.stack([self.ex, self.ey, self.hz])


def solve_reference(
    dx: float,
    dy: float,
    dt: float,
    t_final: float,
    tau: float = 0.25,
    omega: float = 0.25,
    sigma: float = 0.01,
    center=(0.5, 0.5),
    query_points: np.ndarray | None = None,
    snapshot_times=(),
    check_every: int = 10,
) -> ReferenceSolution:
    """March the cavity to t_final and sample fields at query points.

    Query times snap to the nearest stored level: integer steps for E
    components, half steps for H_z; space is interpolated bilinearly from
    the staggered positions.
    """
    if t_final <= 0:
        raise ValidationError("t_final must be positive")
    nx = round(1.0 / dx)
    ny = round(1.0 / dy)
    if abs(nx * dx - 1.0) > 1e-9 or abs(ny * dy - 1.0) > 1e-9:
        raise ValidationError("dx and dy must divide the unit square")
    grid = YeeGrid(nx=nx, ny=ny, dt=dt)
    source_at = make_pulse_source(grid, tau, omega, sigma, center)
    grid.bootstrap_h(source_at)
    n_steps = math.ceil(t_final / dt - 1e-12)

    queries = (
        np.zeros((0, 3))
        if query_points is None
        else np.atleast_2d(np.asarray(query_points, dtype=float))
    )
    k_e = np.clip(np.round(queries[:, 2] / dt).astype(int), 0, n_steps)
    k_h = np.clip(np.round(queries[:, 2] / dt - 0.5).astype(int), 0, n_steps)
    out_ex = np.zeros(queries.shape[0])
    out_ey = np.zeros(queries.shape[0])
    out_hz = np.zeros(queries.shape[0])
    snap_steps = {int(round(t / dt)): float(t) for t in snapshot_times}
    snapshots = {}

    def collect(k):
        sel_e = np.flatnonzero(k_e == k)
        if sel_e.size:
            vals = sample_fields(grid, queries[sel_e, :2])
            out_ex[sel_e] = vals["ex"]
            out_ey[sel_e] = vals["ey"]
        sel_h = np.flatnonzero(k_h == k)
        if sel_h.size:
            out_hz[sel_h] = _bilinear(
                grid.hz,
                queries[sel_h, 0] / grid.dx - 0.5,
                queries[sel_h, 1] / grid.dy - 0.5,
            )
        if k in snap_steps:
            snapshots[snap_steps[k]] = {
                "ex": grid.ex.copy(),
                "ey": grid.ey.copy(),
                "hz": grid.hz.copy(),
            }

    collect(0)
    for k in range(1, n_steps + 1):
        grid.step(source_at, check_finite=(k % check_every == 0 or k == n_steps))
        collect(k)
    return ReferenceSolution(
        n_steps=n_steps,
        dx=grid.dx,
        dy=grid.dy,
        dt=dt,
        queries=queries,
        ex=out_ex,
        ey=out_ey,
        hz=out_hz,
        snapshots=snapshots,
    )


def reference_time_step(dx: float, dy: float, t_final: float, cfl_fraction: float = 0.5) -> float:
    """A stable dt that divides t_final exactly (clean refinement studies)."""
    if not 0 < cfl_fraction <= 1:
        raise ValidationError("cfl_fraction must be in (0, 1]")
    target = cfl_fraction * cfl_limit(dx, dy)
    return t_final / math.ceil(t_final / target)


def self_convergence_orders(
    dx_levels,
    t_final: float,
    tau: float,
    omega: float,
    sigma: float,
    center=(0.5, 0.5),
    cfl_fraction: float = 0.5,
    probe_resolution: int = 17,
) -> list[float]:
    """Observed convergence orders from successive grid refinements.

    Runs each level with dt halved alongside dx, samples E fields at
    t_final on a common interior probe grid, and returns
    log2(|diff_l| / |diff_(l+1)|) per adjacent level pair.  Second-order
    behaviour needs the source resolved on the coarsest grid.
    """
    dx_levels = list(dx_levels)
    if len(dx_levels) < 3:
        raise ValidationError("need at least 3 levels for an order estimate")
    lin = np.linspace(0.1, 0.9, probe_resolution)
    px, py = np.meshgrid(lin, lin, indexing="ij")
    queries = np.stack(
        [px.ravel(), py.ravel(), np.full(px.size, t_final)], axis=1
    )
    dt0 = reference_time_step(dx_levels[0], dx_levels[0], t_final, cfl_fraction)
    sols = []
    for lvl, dx in enumerate(dx_levels):
        dt = dt0 * dx / dx_levels[0]
        sols.append(
            solve_reference(
                dx, dx, dt, t_final, tau, omega, sigma, center, query_points=queries
            )
        )
    diffs = []
    for a, b in zip(sols, sols[1:]):
        d = np.concatenate([a.ex - b.ex, a.ey - b.ey])
        diffs.append(float(np.linalg.norm(d)))
    return [math.log2(d0 / d1) for d0, d1 in zip(diffs, diffs[1:])]
