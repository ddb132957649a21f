"""First-order finite-volume oracle for single-species scenarios.

Cell averages on a uniform grid of ``[-L, L]`` are advanced with a local
Lax-Friedrichs flux ``m(rho) U`` where ``U`` is evaluated at the cell
interfaces: ``V`` plus a midpoint-rule convolution of ``W'`` against the cell
averages. The domain ends carry zero flux.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .density import quantile_init
from .initial import ExplicitParticles
from .integrator import Trajectory
from .scenario import Scenario

CFL = 0.45
ESCAPE_MASS = 1e-12


class SupportEscape(RuntimeError):
    pass


class HashMismatch(ValueError):
    pass


@dataclass
class FvGrid:
    L: float
    M: int
    values: np.ndarray
    t: float

    @property
    def dx(self) -> float:
        return 2 * self.L / self.M

    @property
    def edges(self) -> np.ndarray:
        return np.linspace(-self.L, self.L, self.M + 1)

    @property
    def centers(self) -> np.ndarray:
        e = self.edges
        return 0.5 * (e[:-1] + e[1:])

    @property
    def mass(self) -> float:
        return float(np.sum(self.values) * self.dx)


@dataclass
class FvSeries:
    grids: list[FvGrid]
    scenario_hash: str
    steps: int = 0
    mass_drift: float = 0.0
    meta: dict = field(default_factory=dict)

    @property
    def times(self) -> np.ndarray:
        return np.array([g.t for g in self.grids])

    def at(self, t: float) -> FvGrid:
        for g in self.grids:
            if abs(g.t - t) <= 1e-12 * max(1.0, abs(t)):
                return g
        raise KeyError(f"no FV snapshot at t={t}")


def project_particles(x: np.ndarray, edges: np.ndarray) -> np.ndarray:
    """Exact cell averages of the piecewise-constant particle density."""
    x = np.asarray(x, dtype=float)
    n = x.size - 1
    cdf = np.interp(edges, x, np.arange(n + 1) / n, left=0.0, right=1.0)
    return np.diff(cdf) / np.diff(edges)


def initial_cells(scenario: Scenario, L: float, M: int, n_init: int | None = None) -> np.ndarray:
    """Project the quantile reconstruction of the initial datum onto the grid.

    By default the particle count of the scenario is used, so that oracle and
    particle run start from the same piecewise-constant density.
    """
    sp = scenario.species[0]
    n = sp.N if n_init is None or isinstance(sp.initial, ExplicitParticles) else int(n_init)
    x = quantile_init(sp.initial, n).positions
    return project_particles(x, np.linspace(-L, L, M + 1))


class _Flux:
    def __init__(self, scenario: Scenario, L: float, M: int):
        if len(scenario.species) != 1:
            raise ValueError("the finite-volume oracle handles a single species only")
        self.sp = scenario.species[0]
        self.name = self.sp.name
        self.M = M
        self.dx = 2 * L / M
        self.edges = np.linspace(-L, L, M + 1)
        k = scenario.interaction(self.name, self.name)
        self.kernel = None
        if k is not None:
            if k.Wprime is None and k.W is None:
                raise ValueError("interaction needs Wprime (or W) for the oracle")
            self.kernel = k
        # offsets (m - 1/2) dx between interface j and cell k, m = j - k in [-(M-1), M]
        self.offsets = (np.arange(-(M - 1), M + 1) - 0.5) * self.dx
        self._static = None
        if k is not None:
            expr = k.Wprime if k.Wprime is not None else k.W
            if not expr.depends_on("t"):
                self._static = self._kernel_row(0.0)

    def _kernel_row(self, t: float) -> np.ndarray:
        k = self.kernel
        if k.Wprime is not None:
            return np.asarray(k.Wprime(t=t, x=self.offsets), dtype=float) * np.ones_like(self.offsets)
        # cell integral of W' from W when W' is not supplied
        h = 0.5 * self.dx
        W = lambda z: np.asarray(k.W(t=t, x=z), dtype=float)
        return (W(self.offsets + h) - W(self.offsets - h)) / self.dx

    def interface_U(self, rho: np.ndarray, t: float) -> np.ndarray:
        U = np.asarray(self.sp.V(t=t, x=self.edges), dtype=float) * np.ones(self.M + 1)
        if self.kernel is not None:
            g = self._static if self._static is not None else self._kernel_row(t)
            conv = np.convolve(rho, g)[self.M - 1:2 * self.M] * self.dx
            U = U - conv
        return U

    def mobility(self, rho):
        rho = np.asarray(rho, dtype=float)
        return rho * np.asarray(self.sp.mobility(**{self.name: rho}), dtype=float)

    def max_dm(self, rho_max: float, samples: int = 257) -> float:
        r = np.linspace(0.0, max(rho_max, 1e-12) * 1.01, samples)
        return float(np.max(np.abs(np.gradient(self.mobility(r), r))))

    def fluxes(self, rho: np.ndarray, t: float):
        U = self.interface_U(rho, t)
        m = self.mobility(rho)
        a = np.abs(U[1:-1]) * self.max_dm(float(rho.max()))
        F = np.zeros(self.M + 1)
        F[1:-1] = 0.5 * (m[:-1] + m[1:]) * U[1:-1] - 0.5 * a * (rho[1:] - rho[:-1])
        occupied = (rho[:-1] > 0) | (rho[1:] > 0)
        speed = float(np.max(a[occupied], initial=0.0))
        return F, speed


def llf_step(rho: np.ndarray, F: np.ndarray, dt: float, dx: float) -> np.ndarray:
    return rho - dt / dx * (F[1:] - F[:-1])


def fv_solve(scenario: Scenario, L: float, M: int, t_end: float | None = None,
             times: Sequence[float] | None = None, max_steps: int = 5_000_000,
             n_init: int | None = None) -> FvSeries:
    """Run the oracle and return snapshots at ``times`` (default: start and end)."""
    t0 = scenario.t_span[0]
    t_end = scenario.t_span[1] if t_end is None else float(t_end)
    stops = sorted(set(float(t) for t in (times if times is not None else (t0, t_end))))
    if stops[0] < t0 or stops[-1] > t_end:
        raise ValueError("snapshot times must lie in [t0, t_end]")
    flux = _Flux(scenario, L, M)
    dx = flux.dx
    rho = initial_cells(scenario, L, M, n_init)
    mass0 = float(np.sum(rho) * dx)
    grids = []
    t = t0
    steps = 0
    for stop in stops:
        while t < stop:
            if steps >= max_steps:
                raise RuntimeError(f"finite-volume oracle exceeded {max_steps} steps")
            F, speed = flux.fluxes(rho, t)
            dt = stop - t if speed == 0 else min(CFL * dx / speed, stop - t)
            rho = llf_step(rho, F, dt, dx)
            t = stop if dt == stop - t else t + dt
            steps += 1
            if rho[0] * dx > ESCAPE_MASS or rho[-1] * dx > ESCAPE_MASS:
                raise SupportEscape(f"mass reached the domain boundary at t={t}; enlarge L")
        grids.append(FvGrid(L, M, rho.copy(), t))
    drift = abs(float(np.sum(rho) * dx) - mass0)
    return FvSeries(grids, scenario.hash, steps, drift, {"L": L, "M": M, "cfl": CFL})


def cross_validate(traj: Trajectory, fv: FvSeries, times: Sequence[float]) -> list[float]:
    """L1 gap between the projected particle density and the FV cell averages."""
    if traj.scenario_hash and fv.scenario_hash and traj.scenario_hash != fv.scenario_hash:
        raise HashMismatch(f"trajectory {traj.scenario_hash} and oracle {fv.scenario_hash} differ")
    gaps = []
    for t in times:
        g = fv.at(float(t))
        proj = project_particles(traj.at(float(t), 0), g.edges)
        gaps.append(float(np.sum(np.abs(proj - g.values)) * g.dx))
    return gaps
