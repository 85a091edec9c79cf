"""Tests for jump measures, quadrature, samplers, and subordinators."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcsde.errors import (ConfigurationError, DomainError,
                          IntegrabilityError)
from tcsde.levy_core import (CompoundPoissonSubordinator,
                             DeterministicSubordinator, GammaSubordinator,
                             LevyMeasure, QuadratureConfig,
                             StableSubordinator,
                             TemperedStableSubordinator, compensator_rule,
                             laplace_exponent, levy_integral,
                             levy_integral_truncated,
                             levy_integral_with_error, make_jump_sampler,
                             one_sided_stable_sample, truncated_mass,
                             uniform_levy_measure, validate_levy_measure)

UNIFORM = uniform_levy_measure(c=1.0, intensity=1.0)

# closed-form antiderivative of |1+y|^(1/2) - 1 - y/2 over (-1, 1):
# [2/3 (1+y)^(3/2) - y - y^2/4] evaluated at the endpoints
EXAMPLE1_JUMP_INTEGRAL = (2.0 / 3.0) * 2.0 ** 1.5 - 2.0


class TestLevyIntegral:
    def test_second_moment_uniform(self):
        assert levy_integral(UNIFORM, lambda y: y * y) == pytest.approx(
            2.0 / 3.0, rel=1e-8)

    def test_example1_integrand(self):
        val = levy_integral(
            UNIFORM, lambda y: abs(1 + y) ** 0.5 - 1 - 0.5 * y)
        assert val == pytest.approx(EXAMPLE1_JUMP_INTEGRAL, abs=1e-6)

    def test_error_estimate_returned(self):
        val, err = levy_integral_with_error(UNIFORM, lambda y: y * y)
        assert val == pytest.approx(2.0 / 3.0, rel=1e-8)
        assert 0 <= err < 1e-6

    def test_atoms_summed_exactly(self):
        nu = LevyMeasure(c=1.0, density=None,
                         atoms=((0.5, 2.0), (-0.25, 4.0)))
        assert levy_integral(nu, lambda y: y * y) == pytest.approx(
            2.0 * 0.25 + 4.0 * 0.0625)

    def test_non_integrable_raises_with_partial_sum(self):
        heavy = LevyMeasure(c=1.0, density=lambda y: abs(y) ** -2.5)
        with pytest.raises(IntegrabilityError) as exc:
            levy_integral(heavy, lambda y: abs(y),
                          QuadratureConfig(max_subdivisions=20))
        assert np.isfinite(exc.value.partial_sum)
        assert exc.value.partial_sum > 0

    def test_truncated_excludes_small_jumps(self):
        full = levy_integral(UNIFORM, lambda y: y * y)
        trunc = levy_integral_truncated(UNIFORM, lambda y: y * y, eps=0.5)
        # int_{0.5<=|y|<1} y^2 dy = 2 * (1/3 - 0.125/3)
        assert trunc == pytest.approx(2 * (1 - 0.125) / 3, rel=1e-8)
        assert trunc < full

    def test_truncated_mass_uniform(self):
        assert truncated_mass(UNIFORM, eps=1e-3) == pytest.approx(
            2 - 2e-3, rel=1e-9)


class TestLevyMeasure:
    def test_mass_of_interval(self):
        assert UNIFORM.mass_of_interval(0.5, 1.0) == pytest.approx(0.5)
        assert UNIFORM.mass_of_interval(-1.0, 1.0) == pytest.approx(2.0)

    def test_mass_additivity(self):
        left = UNIFORM.mass_of_interval(0.1, 0.4)
        right = UNIFORM.mass_of_interval(0.4, 0.9)
        both = UNIFORM.mass_of_interval(0.1, 0.9)
        assert left + right == pytest.approx(both, rel=1e-9)

    def test_invalid_interval(self):
        with pytest.raises(DomainError):
            UNIFORM.mass_of_interval(0.5, 0.5)

    def test_validation_accepts_integrable_density(self):
        nu = LevyMeasure(c=1.0, density=lambda y: abs(y) ** -1.5)
        report = validate_levy_measure(nu)
        assert report.passed

    def test_validation_rejects_heavy_density(self):
        nu = LevyMeasure(c=1.0, density=lambda y: abs(y) ** -3.0)
        report = validate_levy_measure(nu)
        assert not report.passed

    def test_bad_support_bound(self):
        with pytest.raises(ConfigurationError):
            LevyMeasure(c=-1.0, density=lambda y: 1.0)


class TestCompensatorRule:
    def test_matches_adaptive_integral(self):
        ys, ws = compensator_rule(UNIFORM, eps=1e-3)
        for fn in (lambda y: y, lambda y: y * y, np.cos):
            fast = float(np.sum(ws * fn(ys)))
            slow = levy_integral_truncated(UNIFORM, fn, eps=1e-3)
            assert fast == pytest.approx(slow, abs=1e-7)

    def test_includes_atoms(self):
        nu = LevyMeasure(c=1.0, density=None, atoms=((0.5, 3.0),))
        ys, ws = compensator_rule(nu, eps=1e-3)
        assert float(np.sum(ws * ys)) == pytest.approx(1.5)


class TestJumpSampler:
    def test_sample_moments(self):
        sampler = make_jump_sampler(UNIFORM)
        rng = np.random.default_rng(5)
        marks = sampler.sample(rng, 200000)
        assert sampler.total_mass == pytest.approx(2 - 2e-3, rel=1e-6)
        assert np.all(np.abs(marks) < 1.0)
        assert np.mean(marks) == pytest.approx(0.0, abs=0.01)
        assert np.mean(marks ** 2) == pytest.approx(1.0 / 3.0, abs=0.01)

    def test_atom_sampling(self):
        nu = LevyMeasure(c=1.0, density=None,
                         atoms=((0.5, 1.0), (-0.5, 3.0)))
        sampler = make_jump_sampler(nu)
        rng = np.random.default_rng(0)
        marks = sampler.sample(rng, 40000)
        assert set(np.unique(marks)) == {0.5, -0.5}
        assert np.mean(marks == -0.5) == pytest.approx(0.75, abs=0.02)


class TestKanterSampler:
    def test_laplace_transform(self):
        rng = np.random.default_rng(42)
        s = one_sided_stable_sample(rng, 0.5, 200000)
        assert np.all(s > 0)
        est = np.mean(np.exp(-s))
        se = np.std(np.exp(-s)) / np.sqrt(s.size)
        assert abs(est - math.exp(-1.0)) < 3 * se + 1e-4

    def test_beta_domain(self):
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigurationError):
            one_sided_stable_sample(rng, 1.5, 10)


SUBORDINATORS = [
    StableSubordinator(0.5),
    StableSubordinator(0.8),
    TemperedStableSubordinator(0.5, 1.0),
    GammaSubordinator(1.0, 1.0),
    CompoundPoissonSubordinator(2.0),
    DeterministicSubordinator(1.5),
]


class TestSubordinators:
    @pytest.mark.parametrize("sub", SUBORDINATORS[:-1],
                             ids=lambda s: s.family + str(id(s) % 97))
    def test_closed_form_matches_defining_integral(self, sub):
        # the deterministic clock is pure drift and has no jump measure,
        # so the quadrature cross-check only applies to the other families
        for lam in (0.3, 1.0, 2.7):
            closed = float(sub.laplace_exponent(lam))
            quad = sub.laplace_exponent_by_quadrature(lam)
            assert closed == pytest.approx(quad, rel=1e-4, abs=1e-6)

    def test_deterministic_exponent_is_linear(self):
        sub = DeterministicSubordinator(1.5)
        for lam in (0.3, 1.0, 2.7):
            assert float(sub.laplace_exponent(lam)) == pytest.approx(
                1.5 * lam)

    @pytest.mark.parametrize("sub", SUBORDINATORS,
                             ids=lambda s: s.family + str(id(s) % 97))
    def test_increments_nonnegative_and_shaped(self, sub):
        rng = np.random.default_rng(3)
        incr = sub.sample_increments(rng, 0.1, (4, 7))
        assert incr.shape == (4, 7)
        assert np.all(incr >= 0)

    def test_phi_zero_is_zero(self):
        for sub in SUBORDINATORS:
            assert float(sub.laplace_exponent(0.0)) == pytest.approx(0.0)

    def test_negative_argument_rejected(self):
        with pytest.raises(DomainError):
            laplace_exponent(StableSubordinator(0.5), -1.0)

    def test_reproducible_given_seed(self):
        a = StableSubordinator(0.5).sample_increments(
            np.random.default_rng(11), 0.01, 50)
        b = StableSubordinator(0.5).sample_increments(
            np.random.default_rng(11), 0.01, 50)
        np.testing.assert_array_equal(a, b)

    def test_parameter_validation(self):
        with pytest.raises(ConfigurationError):
            StableSubordinator(1.2)
        with pytest.raises(ConfigurationError):
            GammaSubordinator(-1.0, 1.0)
        with pytest.raises(ConfigurationError):
            DeterministicSubordinator(0.0)

    @settings(max_examples=40, deadline=None)
    @given(lam1=st.floats(0.0, 5.0), lam2=st.floats(0.0, 5.0),
           idx=st.integers(0, len(SUBORDINATORS) - 1))
    def test_phi_monotone(self, lam1, lam2, idx):
        sub = SUBORDINATORS[idx]
        lo, hi = sorted((lam1, lam2))
        assert float(sub.laplace_exponent(lo)) <= \
            float(sub.laplace_exponent(hi)) + 1e-12

    def test_stable_increment_scaling(self):
        # increments over dt have the law dt^(1/beta) * S
        rng1, rng2 = np.random.default_rng(7), np.random.default_rng(7)
        sub = StableSubordinator(0.5)
        a = sub.sample_increments(rng1, 1.0, 1000)
        b = sub.sample_increments(rng2, 0.25, 1000)
        np.testing.assert_allclose(b, 0.0625 * a)
