"""Tests for the time-changed Euler integrators, the duality route, the
batch driver, and the Lipschitz probe."""

import os

import numpy as np
import pytest

from tcsde.errors import (BlowUpError, ConfigurationError)
from tcsde.levy_core import (DeterministicSubordinator, StableSubordinator,
                             uniform_levy_measure)
from tcsde.paths import SeedSpec, simulate_operational_noise
from tcsde.sde_engine import (CoefficientSet, IntegratorConfig, TcSdeSpec,
                              classical_euler_maruyama, integrate_batch,
                              integrate_direct, integrate_duality,
                              lipschitz_probe)

UNIFORM = uniform_levy_measure(c=1.0, intensity=1.0)


def linear_coeffs(f_factor=-1.0, k_factor=0.0, g_factor=0.0,
                  with_jumps=False):
    h = (lambda t1, t2, x, y: x * y) if with_jumps \
        else (lambda t1, t2, x, y: 0.0 * x * y)
    return CoefficientSet(
        f=lambda t1, t2, x: f_factor * x,
        k=lambda t1, t2, x: k_factor * x,
        g=lambda t1, t2, x: g_factor * x,
        h=h, h_state_linear=True, h_autonomous=True)


def make_spec(co, x0=1.0, nu=None, sub=None):
    return TcSdeSpec(coefficients=co, c=1.0, x0=x0,
                     subordinator=sub or StableSubordinator(0.5), nu=nu)


class TestDirectIntegration:
    def test_trivial_solution_stays_zero(self):
        spec = make_spec(linear_coeffs(with_jumps=True), x0=0.0, nu=UNIFORM)
        res = integrate_direct(spec, IntegratorConfig(dt=1e-2, horizon=1.0),
                               SeedSpec(1))
        assert np.all(res.x == 0.0)

    def test_zero_noise_ode(self):
        # k = g = h = 0 leaves the pure ODE x' = -x: exact solution e^{-t}
        spec = make_spec(linear_coeffs())
        res = integrate_direct(spec, IntegratorConfig(dt=1e-3, horizon=1.0),
                               SeedSpec(2))
        assert res.x[-1] == pytest.approx(np.exp(-1.0), rel=5e-3)

    def test_clock_recorded_consistently(self):
        spec = make_spec(linear_coeffs(), nu=None)
        res = integrate_direct(spec, IntegratorConfig(dt=1e-2, horizon=1.0),
                               SeedSpec(3))
        assert res.e.size == res.grid.size
        np.testing.assert_allclose(np.diff(res.e), res.d_e)
        assert np.all(res.d_e >= 0)

    def test_blowup_raises_with_time(self):
        co = CoefficientSet(f=lambda t1, t2, x: 10.0 * x * x * x,
                            k=lambda t1, t2, x: 0.0 * x,
                            g=lambda t1, t2, x: 0.0 * x,
                            h=lambda t1, t2, x, y: 0.0 * x)
        spec = make_spec(co, x0=5.0)
        with pytest.raises(BlowUpError) as exc:
            integrate_direct(spec, IntegratorConfig(
                dt=1e-2, horizon=5.0, blowup_bound=1e6), SeedSpec(0))
        assert 0 < exc.value.time <= 5.0

    def test_reproducible(self):
        spec = make_spec(linear_coeffs(g_factor=1.0, with_jumps=True),
                         nu=UNIFORM)
        cfg = IntegratorConfig(dt=1e-2, horizon=1.0)
        a = integrate_direct(spec, cfg, SeedSpec(5, 2))
        b = integrate_direct(spec, cfg, SeedSpec(5, 2))
        np.testing.assert_array_equal(a.x, b.x)

    def test_nu_support_mismatch_rejected(self):
        with pytest.raises(ConfigurationError):
            TcSdeSpec(coefficients=linear_coeffs(), c=2.0, x0=1.0,
                      subordinator=StableSubordinator(0.5), nu=UNIFORM)


class TestDuality:
    def test_requires_reduced_equation(self):
        spec = make_spec(linear_coeffs(f_factor=-1.0))
        with pytest.raises(ConfigurationError):
            integrate_duality(spec, IntegratorConfig(dt=1e-2, horizon=0.5),
                              SeedSpec(1))

    def test_coupled_routes_agree_at_t0(self):
        co = linear_coeffs(f_factor=0.0, k_factor=-0.5, g_factor=0.5,
                           with_jumps=True)
        spec = make_spec(co, nu=UNIFORM)
        cfg = IntegratorConfig(dt=1e-2, horizon=0.5, d_tau=0.1)
        noise = simulate_operational_noise(
            spec.subordinator, spec.nu, 0.1, 0.5, SeedSpec(21))
        a = integrate_direct(spec, cfg, SeedSpec(21), noise=noise)
        b = integrate_duality(spec, cfg, SeedSpec(21), noise=noise)
        assert a.x[0] == b.x[0] == 1.0
        np.testing.assert_array_equal(a.e, b.e)
        np.testing.assert_array_equal(a.d_b, b.d_b)

    def test_deterministic_clock_collapse(self):
        # with D(tau) = tau the time change is the identity, and the
        # classical scheme on the recorded clock grid reproduces the
        # direct route bit-for-bit
        co = linear_coeffs(f_factor=0.0, k_factor=-1.0, g_factor=0.5,
                           with_jumps=True)
        spec = make_spec(co, nu=UNIFORM, sub=DeterministicSubordinator(1.0))
        cfg = IntegratorConfig(dt=1e-2, horizon=1.0)
        direct = integrate_direct(spec, cfg, SeedSpec(13))
        from tcsde.sde_engine import _rule_for
        classical = classical_euler_maruyama(
            co, spec.x0, direct.e, direct.d_b, direct.jump_marks,
            rule=_rule_for(spec, cfg))
        np.testing.assert_array_equal(direct.x, classical)


class TestBatch:
    def test_matches_scalar_statistics(self):
        spec = make_spec(linear_coeffs(f_factor=0.0, k_factor=-1.0))
        cfg = IntegratorConfig(dt=1e-2, horizon=1.0)
        res = integrate_batch(spec, cfg, 400, 17, [0.5, 1.0])
        assert res.n_paths == 400
        assert res.x_at.shape == (400, 2)
        assert not res.blown.any()
        # E X_t = x0 E e^{-E_t} ~ 0.43 at t = 1; crude sanity band only
        assert 0.2 < res.x_at[:, 1].mean() < 0.8

    def test_bit_identical_across_thread_counts(self):
        spec = make_spec(linear_coeffs(g_factor=1.0, with_jumps=True),
                         nu=UNIFORM)
        cfg = IntegratorConfig(dt=1e-2, horizon=0.5)
        a = integrate_batch(spec, cfg, 300, 23, [0.5], chunk_size=128,
                            n_threads=1)
        b = integrate_batch(spec, cfg, 300, 23, [0.5], chunk_size=128,
                            n_threads=4)
        np.testing.assert_array_equal(a.x_at, b.x_at)
        np.testing.assert_array_equal(a.e_at, b.e_at)
        np.testing.assert_array_equal(a.sup_abs, b.sup_abs)

    def test_env_var_thread_control(self):
        spec = make_spec(linear_coeffs())
        cfg = IntegratorConfig(dt=1e-2, horizon=0.5)
        baseline = integrate_batch(spec, cfg, 100, 29, [0.5], n_threads=1)
        old = os.environ.get("TCSDE_THREADS")
        os.environ["TCSDE_THREADS"] = "0"  # all cores
        try:
            res = integrate_batch(spec, cfg, 100, 29, [0.5])
        finally:
            if old is None:
                os.environ.pop("TCSDE_THREADS", None)
            else:
                os.environ["TCSDE_THREADS"] = old
        np.testing.assert_array_equal(res.x_at, baseline.x_at)

    def test_blown_paths_flagged_not_fatal(self):
        co = CoefficientSet(f=lambda t1, t2, x: 5.0 * x ** 3,
                            k=lambda t1, t2, x: 0.0 * x,
                            g=lambda t1, t2, x: 0.0 * x,
                            h=lambda t1, t2, x, y: 0.0 * x)
        spec = make_spec(co, x0=2.0)
        cfg = IntegratorConfig(dt=1e-2, horizon=2.0, blowup_bound=1e3)
        res = integrate_batch(spec, cfg, 8, 3, [2.0])
        assert res.blown.all()

    def test_off_grid_record_time_rejected(self):
        spec = make_spec(linear_coeffs())
        with pytest.raises(ConfigurationError):
            integrate_batch(spec, IntegratorConfig(dt=1e-2, horizon=1.0),
                            10, 0, [0.123456])


class TestLipschitzProbe:
    def test_linear_coefficients_bounded(self):
        co = linear_coeffs(f_factor=-1.0, k_factor=0.25, g_factor=1.0,
                           with_jumps=True)
        rep = lipschitz_probe(co, UNIFORM, 200, (-3.0, 3.0), seed=1)
        assert not rep.unbounded_flag
        # |f'|^2 + |k'|^2 + |g'|^2 + int y^2 dy = 1 + 1/16 + 1 + 2/3
        assert rep.max_quotient == pytest.approx(1 + 1 / 16 + 1 + 2 / 3,
                                                 rel=1e-6)

    def test_declared_constant_compared(self):
        co = CoefficientSet(f=lambda t1, t2, x: -x,
                            k=lambda t1, t2, x: 0.0 * x,
                            g=lambda t1, t2, x: 0.0 * x,
                            h=lambda t1, t2, x, y: 0.0 * x,
                            lipschitz_K=0.5)
        rep = lipschitz_probe(co, None, 100, (-1.0, 1.0), seed=2)
        assert rep.declared_K == 0.5
        assert rep.exceeds_declared is True

    def test_square_root_flagged_unbounded(self):
        co = CoefficientSet(f=lambda t1, t2, x: np.sqrt(np.abs(x)),
                            k=lambda t1, t2, x: 0.0 * x,
                            g=lambda t1, t2, x: 0.0 * x,
                            h=lambda t1, t2, x, y: 0.0 * x)
        rep = lipschitz_probe(co, None, 100, (0.0, 1.0), seed=3)
        assert rep.unbounded_flag
