"""Drift decomposition, diffusion assembly, integrator, and moment probes."""

import numpy as np
import pytest

from samlab import engine as eng
from samlab.data import analytic_family
from samlab.errors import DimensionTooLarge, GapViolated, NonFiniteState
from samlab.oracle import analytic_oracle, polynomial_oracle_1d, quadratic_oracle
from samlab.sde import (SampledNoise, SdeConfig, VARIANT_ALIGNED_RHO,
                        VARIANT_ALIGNED_RHO2, DriftDecomposition, drift,
                        drift_aligned, euler_maruyama_step, noise_sampled,
                        one_step_moment_probe, sde_coefficients, sigma_exact)
from samlab.toys import TOYS


class TestDrift:
    def test_quadratic_single_batch(self):
        # f = 0.5 x^T A x: term3 = 0, term2 = A^2 x / ||A x||.
        a = np.array([[2.0, 0.3], [0.3, 1.0]])
        fam = analytic_family([quadratic_oracle(a)])
        x = np.array([0.7, -0.4])
        dd = drift(fam, x, order=3, rho=0.1)
        np.testing.assert_allclose(dd.term3, 0.0, atol=1e-12)
        ax = a @ x
        np.testing.assert_allclose(dd.term2, a @ ax / np.linalg.norm(ax), atol=1e-12)
        np.testing.assert_allclose(dd.term1, ax, atol=1e-14)

    def test_cubic_three_terms(self):
        fam = analytic_family([polynomial_oracle_1d([0, 0, 0, 1.0])])
        dd = drift(fam, np.array([1.0]), order=3, rho=0.1)
        assert dd.term1[0] == pytest.approx(3.0)
        assert dd.term2[0] == pytest.approx(6.0)
        assert dd.term3[0] == pytest.approx(6.0)

    def test_two_batch_enumeration(self):
        # Batch losses x^2/2 and x^2 at x = 1: term2 = mean(1, 2) = 1.5.
        fam, x0 = TOYS["twobatch1d"]()
        dd = drift(fam, x0, order=3, rho=0.2)
        assert dd.term1[0] == pytest.approx(1.5)
        assert dd.term2[0] == pytest.approx(1.5)
        assert dd.term3[0] == pytest.approx(0.0, abs=1e-12)

    def test_order2_zeroes_term3(self):
        fam = analytic_family([polynomial_oracle_1d([0, 0, 0, 1.0])])
        dd = drift(fam, np.array([1.0]), order=2, rho=0.1)
        assert dd.term3[0] == 0.0

    def test_combined_identity(self):
        rng = np.random.default_rng(0)
        dd = DriftDecomposition(rng.standard_normal(4), rng.standard_normal(4),
                                rng.standard_normal(4), rho=0.3)
        manual = dd.term1 + 0.3 * dd.term2 + 0.5 * 0.09 * dd.term3
        np.testing.assert_array_equal(dd.combined(), manual)

    def test_degenerate_batch_contributes_zero(self):
        # One batch has its minimum at the probe point: it must not inject
        # a division blow-up into terms 2-3.
        fam = analytic_family([quadratic_oracle(np.eye(1)),
                               polynomial_oracle_1d([0, 0, 0.5])])
        dd = drift(fam, np.array([0.0]), order=3, rho=0.1)
        assert np.isfinite(dd.term2).all()
        np.testing.assert_array_equal(dd.term2, 0.0)


class TestSigmaExact:
    def test_single_batch_zero(self):
        fam = analytic_family([quadratic_oracle(np.diag([2.0, 1.0]))])
        dm = sigma_exact(fam, np.array([1.0, 1.0]), rho=0.3)
        np.testing.assert_allclose(dm.sigma, 0.0, atol=1e-14)
        np.testing.assert_allclose(dm.sqrt, 0.0, atol=1e-14)

    def test_rho0_is_gradient_covariance(self):
        fam, x0 = TOYS["twobatch2d"]()
        dm = sigma_exact(fam, x0, rho=0.0)
        grads = [o.grad(x0) for o in fam.oracles]
        mean = np.mean(grads, axis=0)
        want = np.mean([np.outer(g - mean, g - mean) for g in grads], axis=0)
        np.testing.assert_allclose(dm.sigma, want, atol=1e-12)

    def test_matches_brute_force_outer_products(self):
        fam, x0 = TOYS["twobatch2d"]()
        rho = 0.15
        g = [o.grad(x0) for o in fam.oracles]
        t2 = [o.hvp(x0, gi) / np.linalg.norm(gi) for o, gi in zip(fam.oracles, g)]
        t3 = [o.third_directional(x0, gi / np.linalg.norm(gi))
              for o, gi in zip(fam.oracles, g)]
        c1 = [v - np.mean(g, axis=0) for v in g]
        c2 = [v - np.mean(t2, axis=0) for v in t2]
        c3 = [v - np.mean(t3, axis=0) for v in t3]
        s11 = np.mean([np.outer(a, a) for a in c1], axis=0)
        s12 = np.mean([np.outer(a, b) for a, b in zip(c1, c2)], axis=0)
        s22 = np.mean([np.outer(b, b) for b in c2], axis=0)
        s13 = np.mean([np.outer(a, c) for a, c in zip(c1, c3)], axis=0)
        brute = s11 + rho * (s12 + s12.T) + rho ** 2 * (s22 + 0.5 * (s13 + s13.T))
        dm = sigma_exact(fam, x0, rho=rho)
        np.testing.assert_allclose(dm.sigma, 0.5 * (brute + brute.T), atol=1e-12)

    def test_psd_projection_and_root(self):
        fam, x0 = TOYS["twobatch2d"]()
        dm = sigma_exact(fam, x0, rho=0.2)
        vals = np.linalg.eigvalsh(dm.sqrt @ dm.sqrt)
        assert np.all(vals >= -1e-12)
        assert dm.clipped_mass >= 0.0

    def test_dimension_guard(self):
        fam = analytic_family([quadratic_oracle(np.eye(600))])
        with pytest.raises(DimensionTooLarge):
            sigma_exact(fam, np.zeros(600), rho=0.1)


class TestSampledNoise:
    def test_single_batch_always_zero(self):
        fam = analytic_family([quadratic_oracle(np.diag([2.0, 1.0]))])
        for k in range(5):
            out = noise_sampled(fam, np.array([1.0, -1.0]), 0.2, seed=3, step=k)
            np.testing.assert_array_equal(out, 0.0)

    def test_mean_and_covariance(self):
        fam, x0 = TOYS["twobatch2d"]()
        rho = 0.1
        sn = SampledNoise(fam, x0, rho)
        draws = np.array([sn.draw(11, k) for k in range(20_000)])
        stderr = draws.std(axis=0) / np.sqrt(len(draws))
        assert np.all(np.abs(draws.mean(axis=0)) <= 4.0 * stderr + 1e-12)
        emp = draws.T @ draws / len(draws)
        exact = sigma_exact(fam, x0, rho).sigma
        rel = np.linalg.norm(emp - exact) / np.linalg.norm(exact)
        assert rel < 0.05

    def test_deterministic_per_step(self):
        fam, x0 = TOYS["twobatch2d"]()
        a = noise_sampled(fam, x0, 0.1, seed=2, step=7)
        b = noise_sampled(fam, x0, 0.1, seed=2, step=7)
        np.testing.assert_array_equal(a, b)


class TestEulerMaruyama:
    def test_gradient_flow_step(self):
        fam = analytic_family([quadratic_oracle(np.array([[1.0]]))])
        cfg = SdeConfig(order=3, eta=0.1, rho=0.0, steps=1)
        dd = drift(fam, np.array([1.0]), 3, 0.0)
        out = euler_maruyama_step(np.array([1.0]), cfg, dd.combined(), None)
        assert out[0] == pytest.approx(0.9, abs=1e-15)

    def test_noise_increment_variance(self):
        # Zero drift, identity covariance: per-coordinate variance eta * dt.
        cfg = SdeConfig(order=3, eta=0.01, rho=0.0, steps=1)
        rng = np.random.default_rng(0)
        incs = np.array([euler_maruyama_step(np.zeros(2), cfg, np.zeros(2),
                                             rng.standard_normal(2))
                         for _ in range(100_000)])
        var = incs.var(axis=0)
        stderr = var * np.sqrt(2.0 / len(incs))
        assert np.all(np.abs(var - 1e-4) <= 4.0 * stderr)

    def test_third_order_drift_cubic(self):
        fam = analytic_family([polynomial_oracle_1d([0, 0, 0, 1.0])])
        cfg = SdeConfig(order=3, eta=0.01, rho=0.1, steps=1)
        dd = drift(fam, np.array([1.0]), 3, 0.1)
        out = euler_maruyama_step(np.array([1.0]), cfg, dd.combined(), None)
        assert out[0] == pytest.approx(0.9637, abs=1e-12)

    def test_nonfinite_state(self):
        cfg = SdeConfig(order=3, eta=0.1, rho=0.0, steps=1)
        with pytest.raises(NonFiniteState):
            euler_maruyama_step(np.array([1.0]), cfg, np.array([np.inf]), None)

    def test_substep_guard(self):
        with pytest.raises(ValueError):
            SdeConfig(order=3, eta=0.1, rho=0.0, steps=1, substeps=0)

    def test_rho_warning_flag(self):
        assert SdeConfig(order=3, eta=0.01, rho=0.3, steps=1).rho_warning
        assert not SdeConfig(order=3, eta=0.01, rho=0.2, steps=1).rho_warning

    def test_richardson_halving(self):
        fam, x0 = TOYS["twobatch2d"]()

        def endpoint(substeps):
            cfg = SdeConfig(order=3, eta=0.05, rho=0.1, steps=20,
                            substeps=substeps, diffusion="none")
            x = x0.copy()
            for _ in range(cfg.steps):
                for _ in range(cfg.substeps):
                    dd = drift(fam, x, 3, cfg.rho)
                    x = euler_maruyama_step(x, cfg, dd.combined(), None)
            return x

        e1, e2, e4 = endpoint(1), endpoint(2), endpoint(4)
        ratio = np.linalg.norm(e1 - e2) / np.linalg.norm(e2 - e4)
        assert 1.5 <= ratio <= 2.5


class TestDriftAligned:
    def test_1d_coincides_with_plain_drift(self):
        fam = analytic_family([polynomial_oracle_1d([0, 0, 0, 1.0])])
        x = np.array([1.0])
        plain = drift(fam, x, 3, 0.1)
        for variant in (VARIANT_ALIGNED_RHO, VARIANT_ALIGNED_RHO2):
            ad = drift_aligned(fam, x, variant, 0.1, q=50, seed=0, check_gap=False)
            np.testing.assert_allclose(ad.term1, plain.term1, atol=1e-12)
            np.testing.assert_allclose(ad.term3, plain.term3, atol=1e-8)
            np.testing.assert_allclose(ad.combined(), plain.combined(), atol=1e-8)

    def test_quadratic_constant_hessian(self):
        # Constant Hessian: grad of lambda1 vanishes, so the aligned-rho
        # drift is term1 + rho * term2 exactly.
        a = np.diag([3.0, 1.0])
        fam = analytic_family([quadratic_oracle(a)])
        x = np.array([0.8, 0.5])
        ad = drift_aligned(fam, x, VARIANT_ALIGNED_RHO, 0.1, q=80, seed=0,
                           check_gap=True)
        np.testing.assert_allclose(ad.term3, 0.0, atol=1e-10)
        plain = drift(fam, x, 2, 0.1)
        np.testing.assert_allclose(ad.term2, plain.term2, atol=1e-12)

    def test_aligned_rho2_term2_quadratic(self):
        # On a quadratic with gradient along the top eigenvector, term2
        # becomes s* lam1 v1 = H g / ||g|| exactly.
        a = np.diag([3.0, 1.0])
        fam = analytic_family([quadratic_oracle(a)])
        x = np.array([2.0, 0.0])  # gradient (6, 0) is the top eigendirection
        ad = drift_aligned(fam, x, VARIANT_ALIGNED_RHO2, 0.1, q=80, seed=0)
        np.testing.assert_allclose(ad.term2, [3.0, 0.0], atol=1e-8)

    def test_exact_alignment_construction_2d(self):
        # f = a x1^4 + b x2^2 with v1 = e2 along the x2 axis: on that axis the
        # gradient is parallel to v1, so aligned and plain drifts agree to
        # O(rho^3) (here: exactly, because the cubic term vanishes on-axis).
        def build(tape, x):
            x1 = eng.sum_all(eng.slice1d(x, 0, 1))
            x2 = eng.sum_all(eng.slice1d(x, 1, 2))
            return eng.add(eng.scale(eng.pow_int(x1, 4), 0.05),
                           eng.scale(eng.pow_int(x2, 2), 2.0))

        fam = analytic_family([analytic_oracle(build, 2)])
        x = np.array([0.0, 1.0])  # H = diag(0.6 x1^2, 4) = diag(0, 4): v1 = e2
        plain = drift(fam, x, 3, 0.05)
        ad = drift_aligned(fam, x, VARIANT_ALIGNED_RHO, 0.05, q=60, seed=0,
                           check_gap=False)
        np.testing.assert_allclose(ad.combined(), plain.combined(), atol=1e-6)

    def test_gap_violation_detected(self):
        fam = analytic_family([quadratic_oracle(np.eye(2))])
        with pytest.raises(GapViolated):
            drift_aligned(fam, np.array([1.0, 0.3]), VARIANT_ALIGNED_RHO, 0.1,
                          q=60, seed=0, check_gap=True)


class TestMomentProbe:
    def test_quadratic_errors_at_roundoff(self):
        fam, x0 = TOYS["quadratic1d"]()
        rep = one_step_moment_probe(fam, x0, 0.01, (0.02, 0.04, 0.08, 0.16))
        for row in rep.rows:
            assert row.e1_order3 < 1e-14
            assert row.e1_order2 < 1e-14
        assert np.isnan(rep.slope_e1_order3)
        assert np.isnan(rep.slope_e1_order2)

    def test_quartic_slopes_separate(self):
        fam, x0 = TOYS["quartic1d"]()
        rep = one_step_moment_probe(fam, x0, 0.01, (0.02, 0.04, 0.08, 0.16))
        assert rep.slope_e1_order3 >= 2.5
        assert rep.slope_e1_order2 <= 2.5
        # The quartic one-step error is exactly eta rho^3 for the full drift.
        for row in rep.rows:
            assert row.e1_order3 == pytest.approx(0.01 * row.rho ** 3, rel=1e-6)

    def test_two_batch_2d_slopes_separate(self):
        fam, x0 = TOYS["twobatch2d"]()
        rep = one_step_moment_probe(fam, x0, 0.01, (0.02, 0.04, 0.08, 0.16))
        assert rep.slope_e1_order3 >= 2.5
        assert rep.slope_e1_order2 <= 2.5

    def test_second_moment_dimension_guard(self):
        fam = analytic_family([quadratic_oracle(np.eye(70))])
        with pytest.raises(DimensionTooLarge):
            one_step_moment_probe(fam, np.zeros(70), 0.01, (0.1,))
        rep = one_step_moment_probe(fam, np.zeros(70), 0.01, (0.1,),
                                    with_second=False)
        assert np.isnan(rep.rows[0].e2_order3)


class TestSdeCoefficients:
    def test_shared_pass_matches_separate_calls(self):
        fam, x0 = TOYS["twobatch2d"]()
        dd, dm = sde_coefficients(fam, x0, 0.1, order=3, diffusion="exact")
        np.testing.assert_allclose(dd.combined(),
                                   drift(fam, x0, 3, 0.1).combined(), atol=1e-14)
        np.testing.assert_allclose(dm.sigma, sigma_exact(fam, x0, 0.1).sigma,
                                   atol=1e-14)

    def test_none_and_sampled_modes(self):
        fam, x0 = TOYS["twobatch2d"]()
        _, none = sde_coefficients(fam, x0, 0.1, order=2, diffusion="none")
        assert none is None
        _, sn = sde_coefficients(fam, x0, 0.1, order=3, diffusion="sampled")
        assert isinstance(sn, SampledNoise)
