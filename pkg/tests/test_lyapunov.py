"""Tests for Lyapunov candidates, the two generators, certificate
checkers, and the pathwise change-of-variables residual."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tcsde.errors import ConfigurationError, CriteriaError, DomainError
from tcsde.levy_core import (QuadratureConfig, StableSubordinator,
                             uniform_levy_measure)
from tcsde.lyapunov import (CheckGrid, LyapunovCandidate, StabilityCriteria,
                            abs_power_candidate, absolute_value_candidate,
                            check_asymptotic_stability,
                            check_global_stability, check_pth_moment,
                            check_stochastic_stability, eval_L1, eval_L2,
                            eval_L2_with_error, ito_residual,
                            quadratic_candidate, validate_candidate)
from tcsde.paths import SeedSpec
from tcsde.sde_engine import (CoefficientSet, IntegratorConfig, TcSdeSpec,
                              integrate_direct)

UNIFORM = uniform_levy_measure(c=1.0, intensity=1.0)

# closed form of int (|1+y|^{1/2} - 1 - y/2) dy over (-1, 1)
SQRT_JUMP_INTEGRAL = (2.0 / 3.0) * 2.0 ** 1.5 - 2.0


def decaying_sqrt_system():
    """f = -x, k = x/4, g = x, h = x y with V = |x|^{1/2}."""
    co = CoefficientSet(
        f=lambda t1, t2, x: -x,
        k=lambda t1, t2, x: 0.25 * x,
        g=lambda t1, t2, x: 1.0 * x,
        h=lambda t1, t2, x, y: x * y,
        h_state_linear=True, h_autonomous=True)
    return co, abs_power_candidate(0.5)


class TestCandidates:
    @pytest.mark.parametrize("vc", [abs_power_candidate(0.5),
                                    absolute_value_candidate(),
                                    quadratic_candidate()],
                             ids=["abs_power", "absolute_value", "quadratic"])
    def test_builders_validate(self, vc):
        checks = validate_candidate(vc)
        assert all(ok for _, ok, _ in checks), checks

    def test_broken_derivative_caught(self):
        vc = LyapunovCandidate(
            V=lambda t1, t2, x: np.asarray(x) ** 2,
            V_t1=lambda t1, t2, x: 0.0 * np.asarray(x),
            V_t2=lambda t1, t2, x: 0.0 * np.asarray(x),
            V_x=lambda t1, t2, x: 3.0 * np.asarray(x),   # wrong
            V_xx=lambda t1, t2, x: 2.0 + 0.0 * np.asarray(x),
            mu=lambda r: np.asarray(r) ** 2)
        checks = dict((name, ok) for name, ok, _ in validate_candidate(vc))
        assert not checks["V_x matches finite differences"]

    def test_nonvanishing_v_caught(self):
        vc = LyapunovCandidate(
            V=lambda t1, t2, x: 1.0 + np.asarray(x) ** 2,
            V_t1=lambda t1, t2, x: 0.0 * np.asarray(x),
            V_t2=lambda t1, t2, x: 0.0 * np.asarray(x),
            V_x=lambda t1, t2, x: 2.0 * np.asarray(x),
            V_xx=lambda t1, t2, x: 2.0 + 0.0 * np.asarray(x),
            mu=lambda r: np.asarray(r) ** 2)
        checks = dict((name, ok) for name, ok, _ in validate_candidate(vc))
        assert not checks["V(t1,t2,0)=0"]

    def test_negative_rho_rejected(self):
        with pytest.raises(ConfigurationError):
            abs_power_candidate(0.5, rho=-1.0)


class TestGenerators:
    def test_L1_sqrt_candidate(self):
        co, vc = decaying_sqrt_system()
        # L1 V = V_x f = (1/2)|x|^{-1/2} sign(x) (-x) = -(1/2)|x|^{1/2}
        assert eval_L1(vc, co, 0.0, 0.0, 1.0) == pytest.approx(-0.5)
        assert eval_L1(vc, co, 0.0, 0.0, 4.0) == pytest.approx(-1.0)
        assert eval_L1(vc, co, 0.0, 0.0, -1.0) == pytest.approx(-0.5)

    def test_L2_sqrt_candidate_frozen_value(self):
        co, vc = decaying_sqrt_system()
        val, err = eval_L2_with_error(vc, co, UNIFORM, x=1.0)
        # 1/8 - 1/8 + closed-form jump integral
        assert val == pytest.approx(SQRT_JUMP_INTEGRAL, abs=1e-6)
        assert val == pytest.approx(-0.1144, abs=1e-3)
        assert err < 1e-6

    def test_L2_quadratic_exact(self):
        co = CoefficientSet(
            f=lambda t1, t2, x: 0.0 * x,
            k=lambda t1, t2, x: -0.5 * x,
            g=lambda t1, t2, x: 0.25 * x,
            h=lambda t1, t2, x, y: x * y)
        vc = quadratic_candidate()
        # 2x k + g^2 + x^2 int y^2 dy = (-1 + 1/16 + 2/3) x^2
        want = (-1.0 + 0.0625 + 2.0 / 3.0)
        for x in (0.5, 1.0, -2.0):
            assert eval_L2(vc, co, UNIFORM, x=x) == pytest.approx(
                want * x * x, rel=1e-7)

    def test_exclusion_ball_guard(self):
        co, vc = decaying_sqrt_system()
        with pytest.raises(DomainError):
            eval_L1(vc, co, 0.0, 0.0, 1e-9)

    def test_shifted_state_inside_ball_tolerated(self):
        # quadrature nodes push x + h arbitrarily close to 0 when
        # h = x y on (-1, 1); only V values are needed there, so the
        # evaluation must succeed
        co, vc = decaying_sqrt_system()
        val = eval_L2(vc, co, UNIFORM, x=1e-3)
        assert np.isfinite(val)

    @settings(max_examples=30, deadline=None)
    @given(x=st.floats(0.01, 10.0), lam=st.floats(0.1, 10.0))
    def test_L2_homogeneity(self, x, lam):
        # with state-linear coefficients and V = x^2, L2 V is
        # 2-homogeneous in the state
        co = CoefficientSet(
            f=lambda t1, t2, x: 0.0 * x,
            k=lambda t1, t2, x: -x,
            g=lambda t1, t2, x: x,
            h=lambda t1, t2, x, y: x * y)
        vc = quadratic_candidate()
        a = eval_L2(vc, co, UNIFORM, x=lam * x)
        b = eval_L2(vc, co, UNIFORM, x=x)
        assert a == pytest.approx(lam * lam * b, rel=1e-6)


def small_grid(xs=(0.25, 0.5, 1.0, 2.0)):
    return CheckGrid(t1_points=(0.0, 1.0), t2_points=(0.0, 1.0),
                     x_points=tuple(xs) + tuple(-x for x in xs))


class TestCertificates:
    def test_global_pass_for_decaying_system(self):
        co, vc = decaying_sqrt_system()
        crit = StabilityCriteria(
            theorem="global", grid=small_grid(),
            gamma1=lambda a: 0.5 * a ** 0.5,
            gamma2=lambda a: 0.01 * a ** 0.5,
            alphas=(0.25, 1.0))
        cert = check_global_stability(vc, co, UNIFORM, crit, c=1.0)
        assert cert.verdict == "pass"
        assert cert.passed
        assert not cert.witnesses

    def test_fail_carries_witness(self):
        co, vc = decaying_sqrt_system()
        bad = CoefficientSet(f=lambda t1, t2, x: +x, k=co.k, g=co.g, h=co.h)
        crit = StabilityCriteria(theorem="stochastic", grid=small_grid(),
                                 h=4.0)
        cert = check_stochastic_stability(vc, bad, UNIFORM, crit, c=1.0)
        assert cert.verdict == "fail"
        assert cert.witnesses
        w = cert.witnesses[0]
        assert w.condition.startswith("L1V")
        assert abs(w.x) > 0

    def test_h_below_2c_rejected(self):
        co, vc = decaying_sqrt_system()
        crit = StabilityCriteria(theorem="stochastic", grid=small_grid(),
                                 h=1.5)
        with pytest.raises(CriteriaError):
            check_stochastic_stability(vc, co, UNIFORM, crit, c=1.0)

    def test_gammas_both_zero_rejected(self):
        co, vc = decaying_sqrt_system()
        crit = StabilityCriteria(
            theorem="asymptotic", grid=small_grid(), h=4.0,
            gamma1=lambda a: 0.0, gamma2=lambda a: 0.0, alphas=(0.5,))
        with pytest.raises(CriteriaError):
            check_asymptotic_stability(vc, co, UNIFORM, crit, c=1.0)

    def test_bounded_candidate_fails_radial_probe(self):
        co, _ = decaying_sqrt_system()
        bounded = LyapunovCandidate(
            V=lambda t1, t2, x: np.tanh(np.abs(x)),
            V_t1=lambda t1, t2, x: 0.0 * np.asarray(x),
            V_t2=lambda t1, t2, x: 0.0 * np.asarray(x),
            V_x=lambda t1, t2, x: np.sign(x) / np.cosh(x) ** 2,
            V_xx=lambda t1, t2, x: -2.0 * np.sign(x) * np.tanh(x)
            / np.cosh(x) ** 2,
            mu=lambda r: np.tanh(np.asarray(r)), rho=1e-6, name="tanh")
        crit = StabilityCriteria(
            theorem="global", grid=small_grid(),
            gamma1=lambda a: 1e-6, gamma2=lambda a: 0.0, alphas=(0.5,))
        cert = check_global_stability(bounded, co, UNIFORM, crit, c=1.0)
        assert cert.verdict == "fail"
        assert any(w.condition == "radial unboundedness"
                   for w in cert.witnesses)

    def test_indeterminate_on_quadrature_noise(self):
        # k tuned so L2 sits within the coarse quadrature's error band
        co, vc = decaying_sqrt_system()
        near = CoefficientSet(
            f=co.f,
            k=lambda t1, t2, x: (0.25 + 2 * -SQRT_JUMP_INTEGRAL) * x,
            g=co.g, h=co.h)
        grid = CheckGrid(t1_points=(0.0,), t2_points=(0.0,), x_points=(1.0,))
        crit = StabilityCriteria(theorem="stochastic", grid=grid, h=4.0)
        coarse = QuadratureConfig(rel_tol=0.5, abs_tol=0.5,
                                  max_subdivisions=2)
        cert = check_stochastic_stability(vc, near, UNIFORM, crit, q=coarse,
                                          c=1.0)
        assert cert.verdict == "indeterminate"

    def test_pth_moment_pass_with_bound(self):
        co = CoefficientSet(
            f=lambda t1, t2, x: -x,
            k=lambda t1, t2, x: 0.0 * x,
            g=lambda t1, t2, x: 0.0 * x,
            h=lambda t1, t2, x, y: 0.0 * x)
        vc = absolute_value_candidate()
        crit = StabilityCriteria(
            theorem="pth-moment", grid=small_grid(),
            p=1.0, alpha1=1.0, alpha2=1.0, alpha3=1.0)
        cert = check_pth_moment(vc, co, None, crit)
        assert cert.passed
        assert "exp(-1 t)" in cert.bound
        assert cert.bound_constants["rate"] == 1.0
        assert cert.bound_constants["prefactor"] == 1.0

    def test_pth_moment_sandwich_fail(self):
        co = CoefficientSet(
            f=lambda t1, t2, x: -x, k=lambda t1, t2, x: 0.0 * x,
            g=lambda t1, t2, x: 0.0 * x, h=lambda t1, t2, x, y: 0.0 * x)
        vc = quadratic_candidate()  # x^2 cannot be sandwiched by a|x|^1
        crit = StabilityCriteria(
            theorem="pth-moment", grid=small_grid(),
            p=1.0, alpha1=1.0, alpha2=1.0, alpha3=1.0)
        cert = check_pth_moment(vc, co, None, crit)
        assert cert.verdict == "fail"

    def test_unknown_theorem_rejected(self):
        with pytest.raises(CriteriaError):
            StabilityCriteria(theorem="nonsense", grid=small_grid())

    def test_scatter_points_extend_grid(self):
        g = CheckGrid(t1_points=(0.0, 1.0), t2_points=(0.0,),
                      x_points=(0.5, 1.0), scatter=7)
        pts = g.points()
        assert pts.shape == (2 * 1 * 2 + 7, 3)
        assert np.all(pts[:, 2] >= 0.5) and np.all(pts[:, 2] <= 1.0)


class TestItoResidual:
    def test_exact_for_linear_V_pure_drift(self):
        # k = g = h = 0 and x stays positive: V = |x| telescopes exactly
        co = CoefficientSet(
            f=lambda t1, t2, x: -x, k=lambda t1, t2, x: 0.0 * x,
            g=lambda t1, t2, x: 0.0 * x, h=lambda t1, t2, x, y: 0.0 * x)
        spec = TcSdeSpec(coefficients=co, c=1.0, x0=1.0,
                         subordinator=StableSubordinator(0.5))
        res = integrate_direct(spec, IntegratorConfig(dt=1e-2, horizon=1.0),
                               SeedSpec(4))
        r = ito_residual(absolute_value_candidate(), spec, res)
        assert r[0] == 0.0
        assert np.max(r) < 1e-12

    def test_exact_for_linear_V_with_jumps(self):
        # V = |x| along a path that stays positive: every term of the
        # identity is realized with the integrator's own increments, so
        # the residual is float-level even with jumps and diffusion
        co = CoefficientSet(
            f=lambda t1, t2, x: -x,
            k=lambda t1, t2, x: 0.1 * x,
            g=lambda t1, t2, x: 0.1 * x,
            h=lambda t1, t2, x, y: 0.1 * x * y,
            h_state_linear=True, h_autonomous=True)
        spec = TcSdeSpec(coefficients=co, c=1.0, x0=1.0,
                         subordinator=StableSubordinator(0.5), nu=UNIFORM)
        res = integrate_direct(spec, IntegratorConfig(dt=1e-2, horizon=1.0),
                               SeedSpec(7))
        assert np.all(res.x > 0)
        r = ito_residual(absolute_value_candidate(), spec, res)
        assert np.max(r) < 1e-10

    def test_quadratic_V_residual_shrinks_with_dt(self):
        co = CoefficientSet(
            f=lambda t1, t2, x: -x, k=lambda t1, t2, x: 0.0 * x,
            g=lambda t1, t2, x: 0.0 * x, h=lambda t1, t2, x, y: 0.0 * x)
        spec = TcSdeSpec(coefficients=co, c=1.0, x0=1.0,
                         subordinator=StableSubordinator(0.5))
        finals = []
        for dt in (1e-2, 1e-3):
            res = integrate_direct(spec, IntegratorConfig(dt=dt, horizon=1.0),
                                   SeedSpec(4))
            finals.append(ito_residual(quadratic_candidate(), spec, res)[-1])
        assert finals[1] < finals[0] / 5
