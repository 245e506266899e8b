import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from peumlab.family import critical_orbit, tent
from peumlab.shadowing import pullback
from peumlab.transfer import (SIGNED, ConvergenceError, DensityCache, DensityGrid,
                              NoSpectralGapError, apply_operator, build_ulam, cached_density,
                              density_at_c, iterate_one, l1_residual, spectral_gap_estimate,
                              stationary_density, step_density)

from conftest import SQRT2, quadratic_family


class TestBuild:
    def test_uniform_fixed_point_t2(self, tent_family):
        op = build_ulam(tent_family, 2.0, 8)
        out = apply_operator(op, DensityGrid.uniform(8))
        np.testing.assert_allclose(out.values, 1.0, atol=1e-14)

    def test_too_coarse(self, tent_family):
        with pytest.raises(ValueError):
            build_ulam(tent_family, 2.0, 3)

    def test_entries_in_unit_interval(self, quad):
        op = build_ulam(quad, 1.8, 256)
        M = op.matrix.toarray() / 256
        assert M.min() >= 0 and M.max() <= 1 + 1e-12
        # each column (source cell) feeds at most a handful of targets per branch
        assert np.all((op.matrix > 0).sum(axis=0) <= 256)

    def test_mass_preserved(self, quad):
        op = build_ulam(quad, 1.7, 512)
        rng = np.random.default_rng(3)
        for _ in range(100):
            d = DensityGrid(rng.random(512)).normalized()
            assert abs(apply_operator(op, d).mass - 1.0) <= 1e-10

    def test_resolution_mismatch(self, tent_family):
        with pytest.raises(ValueError):
            apply_operator(build_ulam(tent_family, 2.0, 8), DensityGrid.uniform(16))

    def test_signed_weight_bound(self, tent_family, quad):
        for fam, t in ((tent_family, 1.9), (quad, 1.8)):
            op = build_ulam(fam, t, 512, mode=SIGNED)
            out = op.matrix @ np.ones(512)
            assert np.abs(out).max() <= 2 / fam.lam ** 2 + 1e-12


class TestStationary:
    def test_t2_uniform(self, tent_family):
        dens = stationary_density(build_ulam(tent_family, 2.0, 4096), tol=1e-10)
        assert np.max(np.abs(dens.values - 1.0)) <= 1e-8

    def test_sqrt2_support_and_plateaus(self, tent_family):
        d1 = stationary_density(build_ulam(tent_family, SQRT2, 8192), tol=1e-10)
        d2 = stationary_density(build_ulam(tent_family, SQRT2, 4096), tol=1e-10)
        lo, hi = SQRT2 - 1, SQRT2 / 2
        x = d1.midpoints
        outside = (x < lo - 1 / 8192) | (x > hi + 1 / 8192)
        assert np.all(d1.values[outside] <= 1e-8)
        # plateaus meet at the fixed point 2 - √2 of the right branch
        jump = 2 - SQRT2
        inner = (x > lo + 0.01) & (x < hi - 0.01) & (np.abs(x - jump) > 0.01)
        levels = np.unique(np.round(d1.values[inner], 3))
        assert levels.size == 2
        # two resolutions agree to 1e-2 in L1
        coarse = d1.values.reshape(-1, 2).mean(axis=1)
        assert np.abs(coarse - d2.values).sum() / 4096 <= 1e-2

    def test_zero_tolerance(self, tent_family):
        with pytest.raises(ValueError):
            stationary_density(build_ulam(tent_family, 2.0, 16), tol=0.0)

    def test_iteration_cap(self, quad):
        with pytest.raises(ConvergenceError):
            stationary_density(build_ulam(quad, 1.8, 256), tol=1e-15, max_iter=3)

    def test_residual(self, quad):
        op = build_ulam(quad, 1.8, 1024)
        dens = stationary_density(op, tol=1e-11)
        assert l1_residual(op, dens.values) <= 1e-10


class TestExactDensity:
    @pytest.mark.parametrize("t", [1.5, 1.7, 1.9])
    def test_ulam_converges_to_step_density(self, tent_family, t):
        exact = step_density(tent_family, t)
        errs = []
        for N in (1024, 4096):
            ulam = stationary_density(build_ulam(tent_family, t, N), tol=1e-12)
            errs.append(np.abs(ulam.values - exact.cell_averages(N).values).sum() / N)
        assert errs[1] < errs[0] and errs[1] < 5e-3

    def test_step_density_is_invariant(self, skew):
        exact = step_density(skew, 1.55)
        N = 2048
        cells = exact.cell_averages(N)
        assert abs(cells.mass - 1.0) <= 1e-12
        out = apply_operator(build_ulam(skew, 1.55, N), cells)
        # exact invariance up to the Ulam projection error
        assert np.abs(out.values - cells.values).sum() / N <= 20 / N

    def test_rho_at_c_tent(self, tent_family):
        # ρ(c) = (t/2)/Z for the symmetric tent
        for t in (1.6, 1.9):
            s = step_density(tent_family, t)
            assert s.at_c == pytest.approx(t / 2 / s.Z, rel=1e-12)

    def test_iterate_one_mass_and_limit(self, tent_family):
        atoms, w = iterate_one(tent_family, 1.9, 40)
        assert np.dot(atoms, w) == pytest.approx(1.0, abs=1e-12)
        s = step_density(tent_family, 1.9)
        x = np.linspace(0.01, 0.99, 97)
        vals = (x[:, None] <= atoms[None, :]) @ w
        assert np.max(np.abs(vals - s(x))) <= 1e-6


class TestGap:
    def test_t2_half(self, tent_family):
        g = spectral_gap_estimate(build_ulam(tent_family, 2.0, 4096), trials=8, rng=0)
        assert g.theta == pytest.approx(0.5, abs=0.1)

    def test_t19_below_one(self, tent_family):
        g = spectral_gap_estimate(build_ulam(tent_family, 1.9, 4096), trials=8, rng=1)
        assert 0 < g.theta < 1 and math.isfinite(g.residual)

    def test_zero_trials(self, tent_family):
        with pytest.raises(ValueError):
            spectral_gap_estimate(build_ulam(tent_family, 2.0, 64), trials=0)

    def test_gap_law(self, tent_family):
        op = build_ulam(tent_family, 1.9, 2048)
        theta = spectral_gap_estimate(op, trials=8, rng=2).theta
        rho = stationary_density(op, tol=1e-12).values
        rng = np.random.default_rng(5)
        for _ in range(20):
            g = rng.random(2048)
            mean = g.sum() / 2048
            norms = []
            for n in range(31):
                norms.append(np.abs(g - mean * rho).sum() / 2048)
                g = op.matrix @ g
            norms = np.array(norms)
            C = np.max(norms / theta ** np.arange(31))
            # fitted C must not blow up: the first few steps set it
            assert C <= 50 * max(norms[0], 1e-300)

    def test_weighted_operator_decay(self, tent_family):
        op = build_ulam(tent_family, 1.9, 2048, mode=SIGNED)
        g = np.ones(2048)
        sups = []
        for i in range(21):
            sups.append(np.abs(g).max())
            g = op.matrix @ g
        sups = np.array(sups)
        rate = np.exp(np.polyfit(np.arange(1, 21), np.log(sups[1:]), 1)[0])
        assert rate < 1


class TestDensityAtC:
    def test_t2(self, tent_family):
        dens = stationary_density(build_ulam(tent_family, 2.0, 1024))
        assert density_at_c(dens, 0.5) == pytest.approx(1.0)

    def test_two_cells(self):
        assert density_at_c(DensityGrid(np.array([0.5, 1.5])), 0.5) == pytest.approx(1.0)

    def test_plateau_at_sqrt2(self, tent_family):
        dens = stationary_density(build_ulam(tent_family, SQRT2, 4096))
        assert density_at_c(dens, 0.5) == pytest.approx(step_density(tent_family, SQRT2).at_c,
                                                        rel=1e-2)


class TestCache:
    def test_roundtrip_on_disk(self, tmp_path, quad):
        cache = DensityCache(tmp_path)
        d = cached_density(quad, 1.8, 256, cache=cache)
        fresh = DensityCache(tmp_path)
        hit = fresh.get(quad.hash, 1.8, 256)
        np.testing.assert_array_equal(hit.values, d.values)
        text = next(tmp_path.glob("density_*.csv")).read_text().splitlines()
        assert text[0].startswith("# family_hash=") and text[2] == "# N=256"

    def test_key_rounding(self, quad):
        assert DensityCache.key(quad.hash, 1.8, 16) == DensityCache.key(quad.hash, 1.8 + 1e-14, 16)


@settings(max_examples=25, deadline=None)
@given(a=st.floats(0, 0.95), w=st.floats(0.01, 0.5), n=st.integers(1, 5))
def test_duality_on_indicators(a, w, n):
    """∫_E L^n(1) = |f^{-n} E| with the pullback computed by inverse branches."""
    fam = quadratic_family()
    t, N = 1.8, 1024
    b = min(a + w, 1.0)
    op = build_ulam(fam, t, N)
    g = np.ones(N)
    for _ in range(n):
        g = op.matrix @ g
    x = (np.arange(N) + 0.5) / N
    edges = np.arange(N + 1) / N
    overlap = np.clip(np.minimum(edges[1:], b) - np.maximum(edges[:-1], a), 0, None)
    lhs = float(np.dot(g, overlap))
    lo, hi, _ = pullback(fam.at(t), a, b, n)
    assert abs(lhs - float(np.sum(hi - lo))) <= 2 / N + 1e-8
