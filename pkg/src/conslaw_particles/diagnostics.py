"""Monitors and studies on particle trajectories.

Support, density and total-variation series, the entropy residual of the
piecewise-constant density against separable bump test functions, and the
self-convergence and scheme-comparison studies.
"""

from __future__ import annotations

import csv
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .density import l1_distance, reconstruct, total_variation
from .dynamics import VelocityField, integrated_interaction_at
from .integrator import IntegratorSettings, Trajectory, initial_state, integrate
from .scenario import Scenario

# 5-point Gauss-Legendre rule on [0, 1]
_GL_X, _GL_W = np.polynomial.legendre.leggauss(5)
GL_NODES = 0.5 * (_GL_X + 1.0)
GL_WEIGHTS = 0.5 * _GL_W


class MissingMetadata(ValueError):
    pass


def worker_count(jobs: int) -> int:
    """Thread count for a study, capped by ``PARTICLE_THREADS`` when set."""
    cap = os.environ.get("PARTICLE_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = max(1, int(cap))
        except ValueError:
            pass
    return max(1, min(n, jobs))


# -- bound monitors --------------------------------------------------------------


@dataclass
class BoundSeries:
    names: tuple[str, ...]
    times: np.ndarray
    S: np.ndarray  # (n_times, n_species) support half-width
    R: np.ndarray  # max density
    TV: np.ndarray

    def rows(self) -> list[list[float]]:
        out = []
        for k, t in enumerate(self.times):
            row = [float(t)]
            for s in range(len(self.names)):
                row += [float(self.S[k, s]), float(self.R[k, s]), float(self.TV[k, s])]
            out.append(row)
        return out

    def header(self) -> list[str]:
        cols = ["t"]
        for n in self.names:
            cols += [f"S_{n}", f"R_{n}", f"TV_{n}"]
        return cols

    def write_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(self.header())
            for row in self.rows():
                w.writerow([format(v, ".17g") for v in row])


def bound_series(traj: Trajectory) -> BoundSeries:
    ns = len(traj.names)
    nt = traj.times.size
    S = np.zeros((nt, ns))
    R = np.zeros((nt, ns))
    TV = np.zeros((nt, ns))
    for k in range(nt):
        for s in range(ns):
            x = traj.positions(k, s)
            d = reconstruct(x)
            S[k, s] = max(abs(x[0]), abs(x[-1]))
            R[k, s] = d.values.max()
            TV[k, s] = total_variation(d)
    return BoundSeries(traj.names, traj.times.copy(), S, R, TV)


def snapshot_masses(traj: Trajectory) -> np.ndarray:
    """Mass of every species' reconstruction at every snapshot."""
    return np.array([[reconstruct(traj.positions(k, s)).mass for s in range(len(traj.names))]
                     for k in range(traj.times.size)])


# -- test functions ----------------------------------------------------------------


def bump(s):
    """C1 cubic bump ``1 - 3s^2 + 2|s|^3`` on ``|s| <= 1``; unit integral."""
    a = np.abs(s)
    return np.where(a <= 1, 1 - 3 * a * a + 2 * a ** 3, 0.0)


def bump_prime(s):
    a = np.abs(s)
    return np.where(a <= 1, -6 * s + 6 * s * a, 0.0)


def bump_integral(s):
    """``int_{-1}^{s}`` of the bump."""
    a = np.minimum(np.abs(s), 1.0)
    return 0.5 + np.sign(s) * (a - a ** 3 + 0.5 * a ** 4)


@dataclass(frozen=True)
class TestFunction:
    """Separable test function ``chi(t) eta(x)`` built from two cubic bumps."""

    t_center: float
    t_radius: float
    x_center: float
    x_radius: float

    __test__ = False  # not a pytest class

    def chi(self, t):
        return bump((np.asarray(t) - self.t_center) / self.t_radius)

    def dchi(self, t):
        return bump_prime((np.asarray(t) - self.t_center) / self.t_radius) / self.t_radius

    def eta(self, x):
        return bump((np.asarray(x) - self.x_center) / self.x_radius)

    def deta(self, x):
        return bump_prime((np.asarray(x) - self.x_center) / self.x_radius) / self.x_radius

    def eta_primitive(self, x):
        return self.x_radius * bump_integral((np.asarray(x) - self.x_center) / self.x_radius)

    def __call__(self, t, x):
        return self.chi(t) * self.eta(x)

    @property
    def t_support(self) -> tuple[float, float]:
        return self.t_center - self.t_radius, self.t_center + self.t_radius

    @property
    def x_support(self) -> tuple[float, float]:
        return self.x_center - self.x_radius, self.x_center + self.x_radius

    @property
    def sup(self) -> float:
        return 1.0

    @property
    def sup_dt(self) -> float:
        return 1.5 / self.t_radius

    @property
    def sup_dx(self) -> float:
        return 1.5 / self.x_radius

    def t_breaks(self) -> tuple[float, ...]:
        return self.t_center - self.t_radius, self.t_center, self.t_center + self.t_radius


def default_test_family(t_span: tuple[float, float], S: float) -> list[TestFunction]:
    """3 centers x 2 radii in time, and the same in space (36 functions)."""
    t0, t1 = t_span
    T = t1 - t0
    fam = []
    for tc in (0.25, 0.5, 0.75):
        for tr in (0.125, 0.2):
            for xc in (-0.5, 0.0, 0.5):
                for xr in (0.25, 0.5):
                    fam.append(TestFunction(t0 + tc * T, tr * T, xc * S, xr * S))
    return fam


def default_constants(R: float) -> list[float]:
    return [0.0, 0.25 * R, R, 2.0 * R]


# -- entropy residual --------------------------------------------------------------


def _time_nodes(steps_ts: np.ndarray, tests: Sequence[TestFunction]):
    lo = min(f.t_support[0] for f in tests)
    hi = max(f.t_support[1] for f in tests)
    pts = set(float(t) for t in steps_ts if lo < t < hi)
    for f in tests:
        pts.update(b for b in f.t_breaks() if lo <= b <= hi)
    pts.update((lo, hi))
    br = np.array(sorted(pts))
    h = np.diff(br)
    nodes = (br[:-1, None] + h[:, None] * GL_NODES[None, :]).ravel()
    weights = (h[:, None] * GL_WEIGHTS[None, :]).ravel()
    return nodes, weights


class _ResidualContext:
    def __init__(self, traj: Trajectory, method: str):
        s = traj.scenario
        if s is None:
            raise MissingMetadata("trajectory does not carry its scenario")
        if len(s.species) != 1:
            raise ValueError("entropy residual is defined for a single species")
        self.traj = traj
        self.sp = s.species[0]
        self.name = self.sp.name
        k = s.interaction(self.name, self.name)
        self.W = None if k is None else k.W
        if k is not None and self.W is None:
            raise MissingMetadata(f"entropy residual needs W for {self.name}->{self.name}")
        self.method = method
        if method == "direct":
            if self.sp.Vx is None:
                raise MissingMetadata("direct entropy residual needs Vx")
            if k is not None and (k.Wpp is None or k.w_atom is None):
                raise MissingMetadata("direct entropy residual needs Wpp and w_atom")
            self.Wpp = None if k is None else k.Wpp
            self.w_atom = None if k is None else k.w_atom
        elif method != "parts":
            raise ValueError(f"unknown method {method!r}")

    def mob(self, rho):
        rho = np.asarray(rho, dtype=float)
        v = np.asarray(self.sp.mobility(**{self.name: rho}), dtype=float)
        return rho * v

    def Ubar(self, t, xe, y):
        out = np.asarray(self.sp.V(t=t, x=xe), dtype=float) * np.ones_like(xe)
        if self.W is not None:
            out = out - integrated_interaction_at(self.W, xe, y, t)
        return out

    def dUbar(self, t, xe, y, rho):
        """``V' - W'' * rho_bar - w(t) rho_bar`` at the points ``xe``."""
        out = np.asarray(self.sp.Vx(t=t, x=xe), dtype=float) * np.ones_like(xe)
        if self.Wpp is None:
            return out
        # W'' * rho_bar by Gauss-Legendre per source interval, split at the target point
        a, b = y[:-1], y[1:]
        conv = np.zeros_like(xe)
        for lo, hi in ((a[None, :], np.clip(xe[:, None], a, b)), (np.clip(xe[:, None], a, b), b[None, :])):
            h = hi - lo
            for g, wt in zip(GL_NODES, GL_WEIGHTS):
                yy = lo + g * h
                val = np.asarray(self.Wpp(t=t, x=xe[:, None] - yy), dtype=float)
                conv += np.sum(wt * h * val * rho[None, :], axis=1)
        dens = np.zeros_like(xe)
        idx = np.searchsorted(y, xe, side="right") - 1
        inside = (idx >= 0) & (idx < rho.size)
        dens[inside] = rho[idx[inside]]
        w = float(self.w_atom(t=t))
        return out - conv - w * dens


def _exterior_integrals(ctx, t, y, f: TestFunction, panels: int = 16):
    """Integrals of ``Ubar eta'`` and ``dUbar eta`` over the supp(eta) parts outside the hull."""
    out = []
    a, b = f.x_support
    for lo, hi in ((a, min(b, y[0])), (max(a, y[-1]), b)):
        if hi <= lo:
            out.append((0.0, 0.0))
            continue
        edges = np.linspace(lo, hi, panels + 1)
        h = np.diff(edges)
        xe = (edges[:-1, None] + h[:, None] * GL_NODES).ravel()
        wts = (h[:, None] * GL_WEIGHTS).ravel()
        U = ctx.Ubar(t, xe, y)
        dU = ctx.dUbar(t, xe, y, n_rho(y))
        out.append((float(np.sum(wts * U * f.deta(xe))), float(np.sum(wts * dU * f.eta(xe)))))
    return out


def n_rho(y):
    return 1.0 / ((y.size - 1) * np.diff(y))


def entropy_residuals(traj: Trajectory, pairs: Sequence[tuple[float, TestFunction]],
                      method: str = "parts") -> np.ndarray:
    """Left side of the discrete entropy inequality for every ``(c, phi)`` pair.

    ``method="parts"`` integrates the ``m(c) dUbar phi`` term by parts so that
    only ``Ubar`` is needed; ``method="direct"`` evaluates ``dUbar`` from the
    ``Vx``, ``Wpp`` and ``w_atom`` metadata.
    """
    ctx = _ResidualContext(traj, method)
    tests = [f for _, f in pairs]
    t0, t1 = traj.t_span
    for f in tests:
        lo, hi = f.t_support
        if lo < t0 or hi > t1:
            raise ValueError(f"test function time support {f.t_support} not inside {traj.t_span}")
    cs = np.array([c for c, _ in pairs], dtype=float)
    if np.any(cs < 0):
        raise ValueError("constants c must be nonnegative")
    mc = ctx.mob(cs)
    nodes, weights = _time_nodes(traj.steps.ts, tests)
    total = np.zeros(len(pairs))
    # test function parameters as columns, for the vectorized "parts" path
    tc = np.array([f.t_center for f in tests])
    tr = np.array([f.t_radius for f in tests])
    xc = np.array([f.x_center for f in tests])[:, None]
    xr = np.array([f.x_radius for f in tests])[:, None]
    sg_ext = np.where(cs > 0, -1.0, 0.0)
    for tau, wt in zip(nodes, weights):
        st = (tau - tc) / tr
        chi, dchi = bump(st), bump_prime(st) / tr
        live = (chi != 0.0) | (dchi != 0.0)
        if not np.any(live):
            continue
        y = traj.steps.dense(float(tau))
        rho = n_rho(y)
        mr = ctx.mob(rho)
        h = np.diff(y)
        xg = (y[:-1, None] + h[:, None] * GL_NODES[None, :])  # (N, 5)
        Ug = ctx.Ubar(tau, xg.ravel(), y).reshape(xg.shape)
        if method == "parts":
            Up = ctx.Ubar(tau, y, y)
            P = np.flatnonzero(live)
            c = cs[P][:, None]
            sy = (y[None, :] - xc[P]) / xr[P]
            G = xr[P] * bump_integral(sy)
            # |rho - c| d_t phi, exact in x
            first = np.sum(np.abs(rho[None, :] - c) * np.diff(G, axis=1), axis=1)
            first += cs[P] * (G[:, 0] + xr[P, 0] - G[:, -1])
            sg = np.sign(rho[None, :] - c)
            dg = bump_prime((xg[None, :, :] - xc[P][:, :, None]) / xr[P][:, :, None]) / xr[P][:, :, None]
            I = np.einsum("pnk,nk,k->pn", dg, Ug, GL_WEIGHTS) * h[None, :]
            eU = bump(sy) * Up[None, :]
            flux = np.sum(sg * (mr[None, :] * I - mc[P][:, None] * np.diff(eU, axis=1)), axis=1)
            flux += sg_ext[P] * mc[P] * (eU[:, -1] - eU[:, 0])
            total[P] += wt * (dchi[P] * first + chi[P] * flux)
            continue
        dUg = ctx.dUbar(tau, xg.ravel(), y, rho).reshape(xg.shape)
        for p in np.flatnonzero(live):
            c, f = pairs[p]
            G = f.eta_primitive(y)
            first = np.sum(np.abs(rho - c) * np.diff(G)) + c * (G[0] + f.x_radius - G[-1])
            sg = np.sign(rho - c)
            I = np.sum(Ug * f.deta(xg) * GL_WEIGHTS[None, :], axis=1) * h
            J = np.sum(dUg * f.eta(xg) * GL_WEIGHTS[None, :], axis=1) * h
            flux = np.sum(sg * ((mr - mc[p]) * I - mc[p] * J))
            for Ie, Je in _exterior_integrals(ctx, tau, y, f):
                flux += sg_ext[p] * (-mc[p] * Ie - mc[p] * Je)
            total[p] += wt * (dchi[p] * first + chi[p] * flux)
    return total


def entropy_residual(traj: Trajectory, c: float, phi: TestFunction, method: str = "parts") -> float:
    return float(entropy_residuals(traj, [(c, phi)], method)[0])


def continuity_pairing(traj: Trajectory, phi: TestFunction, x_panels: int = 4000) -> float:
    """``int int rho_bar d_t phi + m(rho_bar) Ubar d_x phi`` by plain composite quadrature."""
    ctx = _ResidualContext(traj, "parts")
    nodes, weights = _time_nodes(traj.steps.ts, [phi])
    a, b = phi.x_support
    edges = np.linspace(a, b, x_panels + 1)
    xm = 0.5 * (edges[:-1] + edges[1:])
    dx = edges[1] - edges[0]
    total = 0.0
    for tau, wt in zip(nodes, weights):
        y = traj.steps.dense(float(tau))
        d = reconstruct(y)
        r = d(xm)
        integrand = r * phi.dchi(tau) * phi.eta(xm) + ctx.mob(r) * ctx.Ubar(tau, xm, y) * phi.chi(tau) * phi.deta(xm)
        total += wt * float(np.sum(integrand) * dx)
    return total


@dataclass
class EntropyReport:
    N: int
    constants: list[float]
    residuals: np.ndarray  # (n_constants, n_tests)
    tests: list[TestFunction] = field(repr=False, default_factory=list)

    @property
    def min_residual(self) -> float:
        return float(self.residuals.min())

    def to_dict(self) -> dict:
        return {"N": self.N, "constants": self.constants, "min_residual": self.min_residual,
                "residuals": self.residuals.tolist(), "tests": [asdict(t) for t in self.tests]}


def entropy_study(traj: Trajectory, constants: Sequence[float] | None = None,
                  tests: Sequence[TestFunction] | None = None, method: str = "parts") -> EntropyReport:
    """Residuals over the default (c, phi) family of a single-species trajectory."""
    if tests is None:
        x = traj.positions(0)
        tests = default_test_family(traj.t_span, max(abs(x[0]), abs(x[-1])))
    if constants is None:
        constants = default_constants(float(bound_series(traj).R.max()))
    pairs = [(c, f) for c in constants for f in tests]
    res = entropy_residuals(traj, pairs, method).reshape(len(constants), len(tests))
    return EntropyReport(traj.sizes[0] - 1, list(map(float, constants)), res, list(tests))


# -- studies -----------------------------------------------------------------------


def _fit_order(counts: Sequence[int], dists: Sequence[float]) -> tuple[float | None, float | None, float | None]:
    d = np.asarray(dists, dtype=float)
    n = np.asarray(counts, dtype=float)
    if d.size < 2 or np.any(d <= 0):
        return None, None, None
    A = np.vstack([np.ones_like(n), -np.log(n)]).T
    coef, res, *_ = np.linalg.lstsq(A, np.log(d), rcond=None)
    resid = float(np.sqrt(np.mean((A @ coef - np.log(d)) ** 2)))
    return float(coef[1]), float(np.exp(coef[0])), resid


@dataclass
class ConvergenceReport:
    scenario_hash: str
    counts: list[int]
    probe_times: list[float]
    distances: list[list[float]]  # one row per consecutive pair, one column per probe time
    fitted_order: float | None
    constant: float | None
    fit_residual: float | None

    @property
    def pair_distances(self) -> list[float]:
        return [max(row) for row in self.distances]

    @property
    def monotone(self) -> bool:
        d = self.pair_distances
        return all(b < a for a, b in zip(d, d[1:]))

    def to_dict(self) -> dict:
        return {
            "scenario_hash": self.scenario_hash,
            "counts": self.counts,
            "probe_times": self.probe_times,
            "distances": self.distances,
            "fitted_order": self.fitted_order,
            "constant": self.constant,
            "fit_residual": self.fit_residual,
            "monotone": self.monotone,
            "residuals": None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def _run_at(scenario: Scenario, n: int, times: Sequence[float], settings: IntegratorSettings | None):
    s = scenario.with_overrides(N=n, outputs={"times": list(times)})
    return integrate(s, settings)


def _runs(scenario, counts, times, settings):
    with ThreadPoolExecutor(max_workers=worker_count(len(counts))) as pool:
        futs = [pool.submit(_run_at, scenario, n, times, settings) for n in counts]
        return [f.result() for f in futs]


def self_convergence(scenario: Scenario, counts: Sequence[int], probe_times: Sequence[float],
                     settings: IntegratorSettings | None = None) -> ConvergenceReport:
    """L1 distances between consecutive resolutions and the fitted order ``d ~ C N^-p``."""
    counts = [int(n) for n in counts]
    if len(counts) < 2:
        raise ValueError("need >= 2 resolutions")
    if any(n < 2 for n in counts) or any(b <= a for a, b in zip(counts, counts[1:])):
        raise ValueError("counts must be ascending and each >= 2")
    times = sorted(float(t) for t in probe_times)
    trajs = _runs(scenario, counts, times, settings)
    dist = []
    for a, b in zip(trajs, trajs[1:]):
        row = []
        for k in range(len(times)):
            row.append(float(sum(l1_distance(reconstruct(a.positions(k, s)), reconstruct(b.positions(k, s)))
                                 for s in range(len(a.names)))))
        dist.append(row)
    pair = [max(r) for r in dist]
    p, C, resid = _fit_order(counts[:-1], pair)
    return ConvergenceReport(scenario.hash, counts, times, dist, p, C, resid)


@dataclass
class DeviationReport:
    scenario_hash: str
    N: int
    times: list[float]
    velocity_gap: list[float]  # max |Ubar - Udot| on the integrated-scheme state
    l1_gap: list[float]  # L1 distance between the two schemes' densities
    position_gap: list[float]

    def to_dict(self) -> dict:
        return asdict(self)


def scheme_deviation(scenario: Scenario, N: int, probe_times: Sequence[float],
                     settings: IntegratorSettings | None = None) -> DeviationReport:
    """Run both schemes from identical initial particles and compare them."""
    times = sorted(float(t) for t in probe_times)
    s = scenario.with_overrides(N=N, outputs={"times": times})
    fi = VelocityField(s, "integrated")
    fs = VelocityField(s, "sampled")
    init = initial_state(s)
    with ThreadPoolExecutor(max_workers=worker_count(2)) as pool:
        a = pool.submit(integrate, s, settings, scheme="integrated", initial=init)
        b = pool.submit(integrate, s, settings, scheme="sampled", initial=init)
        ti, ts = a.result(), b.result()
    vel, l1, pos = [], [], []
    for k, t in enumerate(times):
        xi = [ti.positions(k, j) for j in range(len(ti.names))]
        xs = [ts.positions(k, j) for j in range(len(ts.names))]
        Ui = fi.uncongested(xi, t)
        Us = fs.uncongested(xi, t)
        vel.append(float(max(np.max(np.abs(u - w)) for u, w in zip(Ui, Us))))
        l1.append(float(sum(l1_distance(reconstruct(p), reconstruct(q)) for p, q in zip(xi, xs))))
        pos.append(float(max(np.max(np.abs(p - q)) for p, q in zip(xi, xs))))
    return DeviationReport(s.hash, int(N), times, vel, l1, pos)


def symmetry_defect(traj: Trajectory, species: int = 0) -> float:
    """``max |x_i + x_{N-i}|`` over all snapshots."""
    return float(max(np.max(np.abs(x + x[::-1])) for x in
                     (traj.positions(k, species) for k in range(traj.times.size))))


def report_json(payload: dict, path=None) -> str:
    text = json.dumps(payload, indent=2, default=_jsonable)
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    return text


def _jsonable(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def max_displacement(traj: Trajectory, species: Iterable[int] | None = None) -> float:
    idx = range(len(traj.names)) if species is None else species
    return float(max(np.max(np.abs(traj.positions(k, s) - traj.positions(0, s)))
                     for k in range(traj.times.size) for s in idx))
