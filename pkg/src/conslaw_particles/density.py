"""Particles <-> piecewise-constant densities.

Every species is represented by ``N + 1`` sorted particles, each consecutive
pair enclosing mass ``1/N``. The density on ``(x_{i-1}, x_i)`` is therefore
``1 / (N (x_i - x_{i-1}))`` and zero outside ``[x_0, x_N]``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import special

from .initial import (
    DensityExpr,
    ExplicitParticles,
    InitialDatum,
    ParticleFormula,
    TruncatedGaussian,
    UniformBlocks,
)


log = logging.getLogger(__name__)


class OrderingError(ValueError):
    """Particles of one species are not strictly increasing."""


@dataclass(frozen=True)
class ParticleConfig:
    positions: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.positions, dtype=float)
        if x.ndim != 1 or x.size < 2:
            raise ValueError("a particle configuration needs at least two positions")
        if not np.all(np.diff(x) > 0):
            bad = int(np.argmin(np.diff(x))) + 1
            raise OrderingError(f"particles not strictly increasing at index {bad}")
        object.__setattr__(self, "positions", x)

    @property
    def N(self) -> int:
        return self.positions.size - 1

    def shifted(self, c: float) -> "ParticleConfig":
        return ParticleConfig(self.positions + c)


@dataclass(frozen=True)
class PwcDensity:
    """Piecewise-constant density with ``values[k]`` on ``(edges[k], edges[k+1])``."""

    edges: np.ndarray
    values: np.ndarray

    @property
    def N(self) -> int:
        return self.values.size

    def padded(self) -> np.ndarray:
        """Values indexed ``rho_0 .. rho_{N+1}`` with the exterior zeros."""
        return np.concatenate(([0.0], self.values, [0.0]))

    @property
    def mass(self) -> float:
        return float(np.sum(self.values * np.diff(self.edges)))

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        idx = np.searchsorted(self.edges, x, side="right")
        return self.padded()[idx]


@dataclass(frozen=True)
class SideDensities:
    """One-sided densities of every species next to every particle.

    ``per_species[sigma][s, side, i]`` is the density of species ``s`` on the
    ``side`` (0 = left, 1 = right) of particle ``i`` of species ``sigma``.
    """

    per_species: tuple[np.ndarray, ...]

    def left(self, sigma: int) -> np.ndarray:
        return self.per_species[sigma][:, 0, :]

    def right(self, sigma: int) -> np.ndarray:
        return self.per_species[sigma][:, 1, :]


def _as_positions(p) -> np.ndarray:
    if isinstance(p, ParticleConfig):
        return p.positions
    return ParticleConfig(np.asarray(p, dtype=float)).positions


def reconstruct(p: ParticleConfig | Sequence[float]) -> PwcDensity:
    x = _as_positions(p)
    n = x.size - 1
    return PwcDensity(x, 1.0 / (n * np.diff(x)))


def total_variation(d: PwcDensity) -> float:
    return float(np.sum(np.abs(np.diff(d.padded()))))


def l1_distance(a: PwcDensity, b: PwcDensity) -> float:
    """Exact ``int |a - b|`` on the merged breakpoint partition."""
    pts = np.union1d(a.edges, b.edges)
    mids = 0.5 * (pts[1:] + pts[:-1])
    return float(np.sum(np.abs(a(mids) - b(mids)) * np.diff(pts)))


def w1_distance(a: ParticleConfig | Sequence[float], b: ParticleConfig | Sequence[float]) -> float:
    """Exact 1-Wasserstein distance between the two reconstructed densities.

    With equal ``N`` both quantile functions are affine on every
    ``[k/N, (k+1)/N]``, so each interval contributes the integral of the
    absolute value of an affine function.
    """
    xa, xb = _as_positions(a), _as_positions(b)
    if xa.size != xb.size:
        raise ValueError(f"w1_distance needs equal particle counts, got {xa.size} and {xb.size}")
    n = xa.size - 1
    d0 = (xa - xb)[:-1]
    d1 = (xa - xb)[1:]
    a0, a1 = np.abs(d0), np.abs(d1)
    same = d0 * d1 >= 0
    total = a0 + a1
    with np.errstate(invalid="ignore", divide="ignore"):
        crossing = np.where(total > 0, (d0 * d0 + d1 * d1) / (2.0 * total), 0.0)
    per = np.where(same, 0.5 * total, crossing)
    return float(np.sum(per) / n)


def side_densities(configs: Sequence[ParticleConfig | Sequence[float]]) -> SideDensities:
    """Left-to-right sweep over the merged particles of all species.

    At each visited coordinate every species owning a particle there is
    updated simultaneously: the running densities before the update are the
    left values, the densities after the update the right values.
    """
    xs = [_as_positions(c) for c in configs]
    n_species = len(xs)
    lens = [x.size for x in xs]
    dens = [np.empty((n_species, 2, n)) for n in lens]
    ind = [0] * n_species
    current = np.zeros(n_species)
    while True:
        active = [s for s in range(n_species) if ind[s] < lens[s]]
        if not active:
            break
        pos = min(xs[s][ind[s]] for s in active)
        group = [s for s in active if xs[s][ind[s]] == pos]
        for s in group:
            dens[s][:, 0, ind[s]] = current
        for s in group:
            k = ind[s]
            current[s] = 1.0 / ((lens[s] - 1) * (xs[s][k + 1] - xs[s][k])) if k + 1 < lens[s] else 0.0
        for s in group:
            dens[s][:, 1, ind[s]] = current
            ind[s] += 1
    return SideDensities(tuple(dens))


def side_limits(configs: Sequence[np.ndarray]) -> SideDensities:
    """Same result as :func:`side_densities`, computed by binary search.

    Used on the hot path of the velocity evaluation.
    """
    xs = [np.asarray(c, dtype=float) for c in configs]
    padded = [np.concatenate(([0.0], 1.0 / ((x.size - 1) * np.diff(x)), [0.0])) for x in xs]
    out = []
    for target in xs:
        block = np.empty((len(xs), 2, target.size))
        for s, (src, pad) in enumerate(zip(xs, padded)):
            block[s, 0] = pad[np.searchsorted(src, target, side="left")]
            block[s, 1] = pad[np.searchsorted(src, target, side="right")]
        out.append(block)
    return SideDensities(tuple(out))


# -- quadrature for density expressions ---------------------------------------


def adaptive_simpson(f: Callable[[float], float], a: float, b: float, tol: float = 1e-10,
                     max_depth: int = 48) -> float:
    """Adaptive composite Simpson rule with Richardson correction."""

    def simpson(fa, fm, fb, h):
        return h * (fa + 4.0 * fm + fb) / 6.0

    def recurse(a, b, fa, fm, fb, whole, tol, depth):
        m = 0.5 * (a + b)
        lm, rm = 0.5 * (a + m), 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = simpson(fa, flm, fm, m - a)
        right = simpson(fm, frm, fb, b - m)
        delta = left + right - whole
        if depth <= 0 or abs(delta) <= 15.0 * tol:
            return left + right + delta / 15.0
        return (recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)
                + recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth - 1))

    if b <= a:
        return 0.0
    fa, fb, fm = f(a), f(b), f(0.5 * (a + b))
    return recurse(a, b, fa, fm, fb, simpson(fa, fm, fb, b - a), tol, max_depth)


def _density_callable(d: DensityExpr) -> Callable[[float], float]:
    def f(x: float) -> float:
        return d.scale * float(d.expr(x=x))
    return f


def density_mass(d: DensityExpr, tol: float = 1e-10, panels: int = 64) -> float:
    return float(_cdf_table(d, tol, panels)[1][-1])


def _cdf_table(d: DensityExpr, tol: float, panels: int):
    a, b = d.support
    f = _density_callable(d)
    grid = np.linspace(a, b, panels + 1)
    pieces = [adaptive_simpson(f, grid[k], grid[k + 1], tol / panels) for k in range(panels)]
    return grid, np.concatenate(([0.0], np.cumsum(pieces)))


def _quantiles_density_expr(d: DensityExpr, n: int, tol: float = 1e-10, xtol: float = 1e-12,
                            panels: int = 64) -> np.ndarray:
    grid, table = _cdf_table(d, tol, panels)
    f = _density_callable(d)
    mass = table[-1]
    out = np.empty(n + 1)
    out[0], out[-1] = d.support
    for k in range(1, n):
        q = mass * k / n
        j = int(np.searchsorted(table, q, side="left")) - 1
        j = min(max(j, 0), panels - 1)
        lo, hi = grid[j], grid[j + 1]
        base = table[j]
        # leftmost point with CDF >= q
        while hi - lo > xtol:
            mid = 0.5 * (lo + hi)
            if base + adaptive_simpson(f, grid[j], mid, tol / panels) >= q:
                hi = mid
            else:
                lo = mid
        out[k] = hi
    return out


def _quantiles_blocks(d: UniformBlocks, n: int, tie_tol: float = 1e-12) -> np.ndarray:
    blocks = sorted(d.blocks)
    masses = np.array([m for _, _, m in blocks])
    cum = np.concatenate(([0.0], np.cumsum(masses)))
    total = cum[-1]
    out = np.empty(n + 1)
    out[0], out[-1] = blocks[0][0], blocks[-1][1]
    for k in range(1, n):
        q = total * k / n
        # first block whose cumulative mass reaches q; near-ties snap to the block end
        j = int(np.searchsorted(cum[1:], q - tie_tol * total, side="left"))
        j = min(j, len(blocks) - 1)
        a, b, m = blocks[j]
        if abs(cum[j + 1] - q) <= tie_tol * total:
            if j + 1 < len(blocks) and blocks[j + 1][0] > b:
                log.info("quantile %d/%d is not unique on [%g, %g]; using %g", k, n, b, blocks[j + 1][0], b)
            out[k] = b
        else:
            out[k] = a + (q - cum[j]) / m * (b - a)
    return out


def _quantiles_gaussian(d: TruncatedGaussian, n: int) -> np.ndarray:
    h = d.halfwidth
    lo, hi = special.ndtr(-h), special.ndtr(h)
    q = lo + (hi - lo) * np.arange(n + 1) / n
    z = special.ndtri(q)
    z[0], z[-1] = -h, h
    return d.center + d.sigma * z


def quantile_init(d: InitialDatum, n: int) -> ParticleConfig:
    """Place ``n + 1`` particles so consecutive pairs enclose mass ``1/n``.

    The outer particles sit on the convex hull of the support; quantile ties
    inside zero-density gaps resolve to the leftmost admissible point.
    """
    if n < 1:
        raise ValueError("need at least one interval")
    if isinstance(d, UniformBlocks):
        x = _quantiles_blocks(d, n)
    elif isinstance(d, TruncatedGaussian):
        x = _quantiles_gaussian(d, n)
    elif isinstance(d, ExplicitParticles):
        x = np.asarray(d.positions, dtype=float)
        if x.size != n + 1:
            raise ValueError(f"explicit datum has {x.size} particles, expected {n + 1}")
    elif isinstance(d, ParticleFormula):
        x = d.positions(n)
    elif isinstance(d, DensityExpr):
        x = _quantiles_density_expr(d, n)
    else:
        raise TypeError(f"unsupported initial datum {d!r}")
    return ParticleConfig(x)


def datum_density(d: InitialDatum) -> Callable[[np.ndarray], np.ndarray] | None:
    """Pointwise density of a datum, when it has one (blocks, Gaussian, expression)."""
    if isinstance(d, UniformBlocks):
        def f(x):
            x = np.asarray(x, dtype=float)
            out = np.zeros_like(x)
            for a, b, m in d.blocks:
                out = out + np.where((x > a) & (x < b), m / (b - a), 0.0)
            return out
        return f
    if isinstance(d, TruncatedGaussian):
        z = special.ndtr(d.halfwidth) - special.ndtr(-d.halfwidth)
        def f(x):
            u = (np.asarray(x, dtype=float) - d.center) / d.sigma
            pdf = np.exp(-0.5 * u * u) / np.sqrt(2 * np.pi) / (d.sigma * z)
            return np.where(np.abs(u) <= d.halfwidth, pdf, 0.0)
        return f
    if isinstance(d, DensityExpr):
        a, b = d.support
        def f(x):
            x = np.asarray(x, dtype=float)
            inside = (x >= a) & (x <= b)
            vals = np.zeros_like(x)
            vals[inside] = d.scale * np.asarray(d.expr(x=x[inside]))
            return vals
        return f
    return None
