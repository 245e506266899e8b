import math

import numpy as np
import pytest

from peumlab.modulus import (H_MAX, compose_constant, decomposition_audit, modulus_scan,
                             modulus_scan_both, scaling_denominator, theoretical_constant)
from peumlab.observables import centered_identity, constant, identity


class TestDenominator:
    def test_closed_form(self):
        h = math.exp(-math.e ** math.e)
        L = math.e ** math.e
        assert scaling_denominator(h) == pytest.approx(h * math.sqrt(L * math.log(math.log(L))))

    def test_guard(self):
        with pytest.raises(ValueError):
            scaling_denominator(H_MAX)
        with pytest.raises(ValueError):
            scaling_denominator(0.0)

    def test_increasing_near_zero(self):
        hs = np.logspace(-12, -3, 200)
        d = np.array([scaling_denominator(h) for h in hs])
        assert np.all(np.diff(d) > 0)


class TestConstant:
    def test_composition_t2(self):
        val = compose_constant(1.0, 0.5, 1 / math.sqrt(12), math.log(2))
        assert val == pytest.approx(math.sqrt(1 / (6 * math.log(2))), rel=1e-14)
        assert val == pytest.approx(0.49036, abs=1e-5)

    def test_t2_pipeline(self, tent_family):
        rep = theoretical_constant(tent_family, 2.0, centered_identity(), N=4096)
        assert rep.value == pytest.approx(0.4905, abs=1e-3)
        assert rep.in_hypothesis

    def test_constant_phi(self, tent_family):
        rep = theoretical_constant(tent_family, 1.9, constant(1.0), N=1024, K=10)
        assert rep.value == 0.0 and not rep.in_hypothesis

    def test_frozen(self, frozen):
        rep = theoretical_constant(frozen, 1.5, identity(), N=1024, K=10)
        assert rep.value == 0.0 and not rep.in_hypothesis


class TestScan:
    def test_constant_zero(self, tent_family):
        scan = modulus_scan(tent_family, 1.9, constant(2.0), steps=5)
        assert np.all(scan.lipschitz_ratio == 0) and np.all(scan.scaled_ratio == 0)

    def test_frozen_zero(self, frozen):
        scan = modulus_scan(frozen, 1.5, identity(), steps=4, N_min=1024, N_cap=1 << 14)
        np.testing.assert_allclose(scan.delta_gamma, 0.0, atol=1e-12)
        assert not scan.trusted.any()

    def test_zero_mean_invariance(self, tent_family):
        a = modulus_scan(tent_family, 1.9, identity(), steps=8)
        b = modulus_scan(tent_family, 1.9, identity().shifted(3.0), steps=8)
        np.testing.assert_allclose(a.delta_gamma, b.delta_gamma, atol=1e-12)

    def test_schedule(self, tent_family):
        scan = modulus_scan(tent_family, 1.9, identity(), h0=1e-2, r=0.5, steps=6)
        assert np.all(np.diff(scan.h) < 0)
        assert np.all(np.isfinite(scan.scaled_ratio))
        assert np.all(np.diff(scan.running_max_lip) >= 0)

    def test_bad_schedule(self, tent_family):
        with pytest.raises(ValueError):
            modulus_scan(tent_family, 1.9, identity(), r=1.5)
        with pytest.raises(ValueError):
            modulus_scan(tent_family, 1.9, identity(), h0=0.1)

    def test_resolution_cap(self, quad):
        with pytest.raises(ValueError):
            modulus_scan(quad, 1.8, identity(), h0=1e-2, steps=10, N_cap=4096)

    def test_ulam_matches_exact_for_tent(self, tent_family):
        ex = modulus_scan(tent_family, 1.9, identity(), steps=3, method="exact")
        ul = modulus_scan(tent_family, 1.9, identity(), steps=3, method="ulam", tol=1e-13)
        np.testing.assert_allclose(ul.delta_gamma, ex.delta_gamma, atol=2e-4)

    def test_both_sides(self, tent_family):
        scan = modulus_scan_both(tent_family, 1.9, identity(), steps=4)
        assert scan.negative is not None and np.all(scan.negative.h < 0)
        edge = modulus_scan_both(tent_family, tent_family.t_range[0] + 1e-3, identity(), steps=3)
        assert edge.negative is None


class TestAudit:
    def test_frozen_terms_zero(self, frozen):
        a = decomposition_audit(frozen, 1.5, 1e-3, identity(), method="ulam", N=1024)
        for v in (a.delta_gamma, a.r_term, a.complement_A_term, a.complement_B_term):
            assert v == pytest.approx(0.0, abs=1e-12)

    def test_constant_phi(self, tent_family):
        a = decomposition_audit(tent_family, 1.9, 1e-3, constant(1.0), n=6, convention="printed")
        assert a.delta_gamma == pytest.approx(0.0, abs=1e-14)
        assert abs(a.measure_A - a.measure_B) <= 10 * 1e-6 * 6

    def test_residual_law(self, tent_family):
        scaled = []
        for h in (1e-2, 1e-3, 1e-4):
            a = decomposition_audit(tent_family, 1.9, h, identity())
            scaled.append(abs(a.residual) / a.second_order_bound)
        assert max(scaled[1:]) <= 2 * scaled[0] + 1e-12

    def test_bad_h(self, tent_family):
        with pytest.raises(ValueError):
            decomposition_audit(tent_family, 1.9, 0.0, identity())
