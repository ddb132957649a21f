import logging

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conslaw_particles.density import (
    OrderingError,
    ParticleConfig,
    PwcDensity,
    l1_distance,
    quantile_init,
    reconstruct,
    side_densities,
    side_limits,
    total_variation,
    w1_distance,
)
from conslaw_particles.exprdsl import parse
from conslaw_particles.initial import (
    DensityExpr,
    ExplicitParticles,
    ParticleFormula,
    TruncatedGaussian,
    UniformBlocks,
)

from conftest import random_config, sorted_particles


def lattice_particles(rng, n, step=0.002):
    return np.sort(rng.choice(np.arange(-500, 501), n, replace=False)) * step


def riemann_l1(a: PwcDensity, b: PwcDensity, points=1_000_000, lo=-1.0, hi=1.0):
    """Midpoint Riemann sum of |a - b| over [lo, hi] (particles must lie inside)."""
    dx = (hi - lo) / points
    xm = lo + (np.arange(points) + 0.5) * dx
    return float(np.sum(np.abs(a(xm) - b(xm))) * dx)


def cdf_w1(xa, xb, points=2_000_001):
    """W1 as the integral of |F_a - F_b| on a dense grid (trapezoid rule)."""
    lo, hi = min(xa[0], xb[0]), max(xa[-1], xb[-1])
    g = np.linspace(lo, hi, points)
    q = np.arange(xa.size) / (xa.size - 1)
    fa = np.interp(g, xa, q, left=0, right=1)
    fb = np.interp(g, xb, np.arange(xb.size) / (xb.size - 1), left=0, right=1)
    return float(np.trapezoid(np.abs(fa - fb), g))


class TestReconstruct:
    def test_uniform(self):
        d = reconstruct([0, 0.5, 1])
        np.testing.assert_allclose(d.values, [1, 1])
        np.testing.assert_array_equal(d.padded()[[0, -1]], [0, 0])

    def test_nonuniform(self):
        np.testing.assert_allclose(reconstruct([0, 0.25, 1]).values, [2, 2 / 3])

    def test_non_strict_rejected(self):
        with pytest.raises(OrderingError):
            reconstruct([0, 0, 1])
        with pytest.raises(OrderingError):
            ParticleConfig(np.array([0, 0.5, 0.25]))

    @settings(max_examples=200, deadline=None)
    @given(sorted_particles(max_size=40, lo=-50, hi=50))
    def test_mass_is_one(self, x):
        assert abs(reconstruct(x).mass - 1.0) <= 1e-12

    def test_point_evaluation(self):
        d = reconstruct([0, 0.25, 1])
        np.testing.assert_allclose(d(np.array([-1, 0.1, 0.5, 2])), [0, 2, 2 / 3, 0])


class TestTotalVariation:
    def test_examples(self):
        assert total_variation(reconstruct([0, 0.5, 1])) == pytest.approx(2)
        assert total_variation(reconstruct([0, 0.25, 1])) == pytest.approx(4)

    def test_unimodal_is_twice_max(self):
        gaps = np.array([0.5, 0.3, 0.2, 0.1, 0.15, 0.4, 0.9])
        x = np.concatenate(([0], np.cumsum(gaps)))
        d = reconstruct(x)
        assert total_variation(d) == pytest.approx(2 * d.values.max())

    def test_blocks_bound(self):
        datum = UniformBlocks(((-1, -0.5, 0.5), (0, 0.5, 0.5)))
        tv0 = 4.0  # four unit jumps
        for n in (2, 3, 10, 11, 50, 101):
            assert total_variation(reconstruct(quantile_init(datum, n))) <= tv0 + 1e-9


class TestL1:
    def test_identity(self):
        d = reconstruct([0, 0.3, 1])
        assert l1_distance(d, d) == 0.0

    def test_overlap_geometry(self):
        a = reconstruct([0, 1])
        b = reconstruct([0.5, 1.5])
        assert l1_distance(a, b) == pytest.approx(1.0)

    def test_random_pairs_vs_riemann(self):
        # particles on a lattice commensurate with the Riemann grid, so the
        # oracle itself carries no discretization error
        rng = np.random.default_rng(1)
        for _ in range(5):
            a, b = (reconstruct(lattice_particles(rng, 5)) for _ in range(2))
            assert l1_distance(a, b) == pytest.approx(riemann_l1(a, b), abs=1e-6)

    def test_generic_pair_vs_riemann(self):
        rng = np.random.default_rng(5)
        a = reconstruct(np.sort(rng.uniform(-1, 1, 5)))
        b = reconstruct(np.sort(rng.uniform(-1, 1, 5)))
        assert l1_distance(a, b) == pytest.approx(riemann_l1(a, b), rel=1e-4)


class TestW1:
    def test_translation(self):
        x = np.array([0, 0.1, 0.5, 1.2])
        assert w1_distance(x, x + 0.37) == pytest.approx(0.37, abs=1e-15)

    def test_identity(self):
        x = np.array([0, 0.1, 0.5, 1.2])
        assert w1_distance(x, x) == 0.0

    def test_random_vs_cdf_integral(self):
        rng = np.random.default_rng(2)
        for _ in range(3):
            xa = np.sort(rng.uniform(-1, 1, 5))
            xb = np.sort(rng.uniform(-1, 1, 5))
            assert w1_distance(xa, xb) == pytest.approx(cdf_w1(xa, xb), abs=1e-8)

    def test_mismatched_sizes(self):
        with pytest.raises(ValueError):
            w1_distance([0, 1], [0, 0.5, 1])

    @settings(max_examples=200, deadline=None)
    @given(st.integers(2, 12), st.integers(0, 2 ** 32 - 1))
    def test_metric_axioms(self, n, seed):
        rng = np.random.default_rng(seed)
        a, b, c = (np.sort(rng.uniform(-3, 3, n + 1)) + np.arange(n + 1) * 1e-3 for _ in range(3))
        ab, ba = w1_distance(a, b), w1_distance(b, a)
        assert ab == pytest.approx(ba, abs=1e-12)
        assert ab <= w1_distance(a, c) + w1_distance(c, b) + 1e-12
        assert ab >= 0


class TestQuantileInit:
    def test_uniform(self):
        x = quantile_init(UniformBlocks(((0, 1, 1),)), 4).positions
        np.testing.assert_allclose(x, [0, 0.25, 0.5, 0.75, 1])

    def test_tie_resolves_leftmost(self, caplog):
        with caplog.at_level(logging.INFO):
            x = quantile_init(UniformBlocks(((-1, -0.5, 0.5), (0, 0.5, 0.5))), 2).positions
        np.testing.assert_allclose(x, [-1, -0.5, 0.5])
        assert "not unique" in caplog.text

    def test_block_quantiles_enclose_equal_mass(self):
        datum = UniformBlocks(((-2, -1.5, 0.5), (1.5, 2, 0.5)))
        x = quantile_init(datum, 101).positions
        cdf = lambda z: np.clip((z + 2) / 0.5, 0, 1) * 0.5 + np.clip((z - 1.5) / 0.5, 0, 1) * 0.5
        np.testing.assert_allclose(np.diff(cdf(x)), 1 / 101, atol=1e-13)

    def test_density_expr_vs_riemann(self):
        src = "exp(-1/max(1 - (x/3)^2, 1e-9))"
        e = parse(src, {"x"})
        g = np.linspace(-3, 3, 1_000_001)
        xm = 0.5 * (g[1:] + g[:-1])
        f = e(x=xm)
        cdf = np.concatenate(([0], np.cumsum(f) * (g[1] - g[0])))
        datum = DensityExpr(e, (-3.0, 3.0), scale=1 / cdf[-1])
        n = 75
        x = quantile_init(datum, n).positions
        oracle = np.interp(np.arange(1, n) / n, cdf / cdf[-1], g)
        np.testing.assert_allclose(x[1:-1], oracle, atol=1e-6)
        assert x[0] == -3 and x[-1] == 3

    def test_gaussian(self):
        from scipy import stats
        x = quantile_init(TruncatedGaussian(3.0, center=2.0), 74).positions
        assert x.size == 75 and x[0] == -1 and x[-1] == 5
        F = stats.truncnorm(-3, 3, loc=2).cdf(x)
        np.testing.assert_allclose(np.diff(F), 1 / 74, atol=1e-12)

    def test_explicit_and_formula(self):
        x = quantile_init(ExplicitParticles((0.0, 0.2, 1.0)), 2).positions
        np.testing.assert_array_equal(x, [0, 0.2, 1])
        with pytest.raises(ValueError):
            quantile_init(ExplicitParticles((0.0, 0.2, 1.0)), 3)
        f = ParticleFormula(parse("(2*i - N)/N", {"i", "N"}))
        np.testing.assert_allclose(quantile_init(f, 4).positions, [-1, -0.5, 0, 0.5, 1])


def brute_sides(configs, target):
    dens = [reconstruct(c) for c in configs]
    return (np.array([d(target - 1e-9) for d in dens]), np.array([d(target + 1e-9) for d in dens]))


class TestSideDensities:
    def test_single_species(self):
        sd = side_densities([ParticleConfig(np.array([0, 0.5, 1]))])
        assert sd.left(0)[0, 1] == 1 and sd.right(0)[0, 1] == 1
        np.testing.assert_array_equal(sd.left(0)[0], [0, 1, 1])
        np.testing.assert_array_equal(sd.right(0)[0], [1, 1, 0])

    def test_two_indicators(self):
        A, B = np.array([0.0, 1.0]), np.array([0.5, 1.5])
        sd = side_densities([A, B])
        # species A at x=1 (index 1)
        np.testing.assert_array_equal(sd.left(0)[:, 1], [1, 1])
        np.testing.assert_array_equal(sd.right(0)[:, 1], [0, 1])
        # species B at x=0.5 (index 0)
        np.testing.assert_array_equal(sd.left(1)[:, 0], [1, 0])
        np.testing.assert_array_equal(sd.right(1)[:, 0], [1, 1])

    def test_shared_coordinate(self):
        A = np.array([0.0, 0.5, 1.0])
        B = np.array([0.25, 0.5, 2.0])
        sd = side_densities([A, B])
        left, right = brute_sides([A, B], 0.5)
        np.testing.assert_allclose(sd.left(0)[:, 1], left)
        np.testing.assert_allclose(sd.right(0)[:, 1], right)
        np.testing.assert_allclose(sd.left(1)[:, 1], left)
        np.testing.assert_allclose(sd.right(1)[:, 1], right)

    def test_random_against_brute_force_and_search(self):
        rng = np.random.default_rng(3)
        for _ in range(30):
            S = rng.integers(1, 4)
            configs = []
            for _ in range(S):
                x = np.sort(rng.choice(np.round(rng.uniform(-2, 2, 40), 3), rng.integers(2, 12), replace=False))
                configs.append(np.unique(x))
            configs = [c for c in configs if c.size >= 2] or [np.array([0.0, 1.0])]
            sd = side_densities(configs)
            fast = side_limits(configs)
            for s, x in enumerate(configs):
                np.testing.assert_array_equal(sd.per_species[s], fast.per_species[s])
                for i, xi in enumerate(x):
                    left, right = brute_sides(configs, xi)
                    np.testing.assert_allclose(sd.left(s)[:, i], left, rtol=1e-12)
                    np.testing.assert_allclose(sd.right(s)[:, i], right, rtol=1e-12)

    def test_continuity_off_own_particles(self):
        A = np.array([0.0, 0.3, 1.0])
        B = np.array([0.1, 0.7, 0.9])
        sd = side_densities([A, B])
        # at B's particles species A has no jump
        np.testing.assert_array_equal(sd.left(1)[0], sd.right(1)[0])
        np.testing.assert_array_equal(sd.left(0)[1], sd.right(0)[1])

    def test_single_matches_reconstruct(self):
        rng = np.random.default_rng(4)
        for _ in range(20):
            x = random_config(rng, int(rng.integers(2, 30)))
            pad = reconstruct(x).padded()
            sd = side_densities([x])
            np.testing.assert_array_equal(sd.left(0)[0], pad[:-1])
            np.testing.assert_array_equal(sd.right(0)[0], pad[1:])
