"""Noise schedules: closed forms, identities, and domain contracts."""

import math

import numpy as np
import pytest

from bridgekit import schedules as sched
from bridgekit.errors import ConfigError, DomainError
from bridgekit.rng import RngStream

VP = sched.NoiseSchedule.vp()
BROWNIAN = sched.NoiseSchedule.brownian()


class TestVpSchedule:
    def test_alpha_at_zero_is_one(self):
        alpha, sigma = sched.alpha_sigma(VP, 0.0)
        assert alpha == 1.0
        assert sigma == 0.0

    def test_alpha_at_horizon_frozen_value(self):
        """The linear 0.1 -> 20 ramp integrates to 10.05, so alpha(1) = exp(-5.025)."""
        alpha, _ = sched.alpha_sigma(VP, 1.0)
        assert abs(alpha - math.exp(-5.025)) <= 1e-12

    def test_variance_preserving_identity(self):
        ts = np.linspace(0.0, 1.0, 1000)
        alpha, sigma = sched.alpha_sigma_arrays(VP, ts)
        np.testing.assert_allclose(alpha * alpha + sigma * sigma, 1.0, rtol=0, atol=1e-12)

    def test_monotonicity(self):
        ts = np.linspace(0.0, 1.0, 1000)
        alpha, sigma = sched.alpha_sigma_arrays(VP, ts)
        assert np.all(np.diff(alpha) < 0)
        assert np.all(np.diff(sigma) > 0)

    def test_beta_is_linear(self):
        assert sched.beta_arrays(VP, np.array([0.0]))[0] == 0.1
        assert sched.beta_arrays(VP, np.array([1.0]))[0] == 20.0
        mid = sched.beta_arrays(VP, np.array([0.5]))[0]
        assert abs(mid - 0.5 * (0.1 + 20.0)) <= 1e-12

    def test_beta_rejected_on_brownian(self):
        with pytest.raises(DomainError):
            sched.beta_arrays(BROWNIAN, np.array([0.5]))

    def test_alpha_matches_quadrature(self):
        """alpha(t) = exp(-0.5 int beta) against trapezoid integration."""
        t = 0.63
        grid = np.linspace(0.0, t, 20_001)
        beta = sched.beta_arrays(VP, grid)
        integral = np.trapezoid(beta, grid)
        alpha, _ = sched.alpha_sigma(VP, t)
        assert abs(alpha - math.exp(-0.5 * integral)) < 1e-10


class TestBrownianClosedForms:
    @pytest.mark.parametrize("horizon", [1.0, 2.0])
    def test_bridge_coefficients(self, horizon):
        s = sched.NoiseSchedule.brownian(horizon=horizon)
        ts = np.linspace(0.0, horizon, 1000)
        a, b, c = sched.bridge_coefficient_arrays(s, ts)
        frac = ts / horizon
        np.testing.assert_allclose(a, frac, rtol=0, atol=1e-12)
        np.testing.assert_allclose(b, 1.0 - frac, rtol=0, atol=1e-12)
        np.testing.assert_allclose(c * c, ts * (1.0 - frac), rtol=0, atol=1e-12)

    def test_alpha_sigma(self):
        ts = np.linspace(0.0, 1.0, 100)
        alpha, sigma = sched.alpha_sigma_arrays(BROWNIAN, ts)
        np.testing.assert_array_equal(alpha, np.ones_like(ts))
        np.testing.assert_array_equal(sigma, np.sqrt(ts))

    def test_drift_and_diffusion(self):
        ts = np.linspace(0.0, 1.0, 50)
        np.testing.assert_array_equal(sched.linear_drift_arrays(BROWNIAN, ts), 0.0)
        np.testing.assert_array_equal(sched.diffusion_coefficient_arrays(BROWNIAN, ts), 1.0)


class TestBridgeCoefficientEndpoints:
    """At t=0 the kernel collapses onto x_0, at t=T onto x_T, exactly."""

    @pytest.mark.parametrize("s", [VP, BROWNIAN], ids=["vp", "brownian"])
    def test_start(self, s):
        co = sched.bridge_coefficients(s, 0.0)
        assert co.a == 0.0
        assert co.b == 1.0
        assert co.c == 0.0

    @pytest.mark.parametrize("s", [VP, BROWNIAN], ids=["vp", "brownian"])
    def test_end(self, s):
        co = sched.bridge_coefficients(s, s.horizon)
        assert co.a == 1.0
        assert co.b == 0.0
        assert co.c == 0.0

    def test_variance_nonnegative_everywhere(self):
        for s in (VP, BROWNIAN):
            ts = np.linspace(0.0, s.horizon, 2000)
            _, _, c = sched.bridge_coefficient_arrays(s, ts)
            assert np.all(c >= 0.0)

    def test_scalar_matches_array(self):
        ts = np.linspace(0.0, 1.0, 17)
        a, b, c = sched.bridge_coefficient_arrays(VP, ts)
        for i, t in enumerate(ts):
            co = sched.bridge_coefficients(VP, float(t))
            assert (co.a, co.b, co.c) == (a[i], b[i], c[i])


class TestSnrRatio:
    def test_identity_at_equal_times(self):
        for t in (0.1, 0.5, 0.9):
            assert sched.snr_ratio(VP, t, t) == 1.0

    def test_cocycle(self):
        """r(a,b) r(b,c) = r(a,c) over a seeded sweep of time triples."""
        rng = RngStream(7, 0)
        triples = 0.05 + 0.9 * rng.uniforms(300).reshape(100, 3)
        for t1, t2, t3 in triples:
            lhs = sched.snr_ratio(VP, t1, t2) * sched.snr_ratio(VP, t2, t3)
            rhs = sched.snr_ratio(VP, t1, t3)
            assert abs(lhs / rhs - 1.0) < 1e-10

    def test_zero_when_denominator_snr_infinite(self):
        assert sched.snr_ratio(VP, 0.5, 0.0) == 0.0

    def test_infinite_ratio_rejected(self):
        with pytest.raises(DomainError):
            sched.snr_ratio(VP, 0.0, 0.5)
        with pytest.raises(DomainError):
            sched.snr_ratio(VP, 0.0, 0.0)


class TestConditionalGaussian:
    def test_brownian_closed_form(self):
        ratio, var = sched.conditional_gaussian(BROWNIAN, 0.3, 0.8)
        assert ratio == 1.0
        assert abs(var - 0.5) <= 1e-15

    def test_degenerate_at_equal_times(self):
        ratio, var = sched.conditional_gaussian(VP, 0.4, 0.4)
        assert ratio == 1.0
        assert var == 0.0

    def test_semigroup_composition(self):
        """Transition s->t->u composes to s->u in mean and variance."""
        rng = RngStream(3, 0)
        for _ in range(50):
            s, t, u = np.sort(rng.uniforms(3))
            r_st, v_st = sched.conditional_gaussian(VP, float(s), float(t))
            r_tu, v_tu = sched.conditional_gaussian(VP, float(t), float(u))
            r_su, v_su = sched.conditional_gaussian(VP, float(s), float(u))
            assert abs(r_st * r_tu - r_su) < 1e-12
            assert abs(r_tu * r_tu * v_st + v_tu - v_su) < 1e-12

    def test_reversed_order_rejected(self):
        with pytest.raises(DomainError):
            sched.conditional_gaussian(VP, 0.8, 0.3)

    def test_consistency_with_marginals(self):
        """Composing the marginal at s with the transition lands on the marginal at t."""
        s, t = 0.25, 0.7
        a_s, s_s = sched.alpha_sigma(VP, s)
        a_t, s_t = sched.alpha_sigma(VP, t)
        ratio, var = sched.conditional_gaussian(VP, s, t)
        assert abs(ratio * a_s - a_t) < 1e-12
        assert abs(ratio * ratio * s_s * s_s + var - s_t * s_t) < 1e-12


class TestTimeDomain:
    @pytest.mark.parametrize("bad", [-0.1, 1.1, np.nan, np.inf])
    def test_out_of_range_times(self, bad):
        with pytest.raises(DomainError):
            sched.alpha_sigma_arrays(VP, np.array([bad]))

    def test_horizon_respected(self):
        s = sched.NoiseSchedule.brownian(horizon=2.0)
        sched.alpha_sigma_arrays(s, np.array([1.5]))  # fine inside the longer horizon
        with pytest.raises(DomainError):
            sched.alpha_sigma_arrays(BROWNIAN, np.array([1.5]))


class TestScheduleConstruction:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            sched.NoiseSchedule(kind="cosine")

    def test_bad_horizon(self):
        with pytest.raises(ConfigError):
            sched.NoiseSchedule(kind="vp", horizon=0.0)

    def test_bad_beta_ordering(self):
        with pytest.raises(ConfigError):
            sched.NoiseSchedule(kind="vp", beta_min=5.0, beta_max=1.0)

    def test_default_clamps_scale_with_horizon(self):
        s = sched.NoiseSchedule.brownian(horizon=4.0)
        assert s.t_clamp_lo == pytest.approx(4.0e-3)
        assert s.t_clamp_hi == pytest.approx(4.0 * (1.0 - 1e-3))

    def test_with_clamps(self):
        s = VP.with_clamps(0.01, 0.99)
        assert (s.t_clamp_lo, s.t_clamp_hi) == (0.01, 0.99)

    def test_invalid_clamps(self):
        with pytest.raises(ConfigError):
            VP.with_clamps(0.9, 0.1)

    def test_dict_roundtrip(self):
        s = sched.NoiseSchedule.vp(beta_min=0.2, beta_max=15.0).with_clamps(0.02, 0.95)
        assert sched.NoiseSchedule.from_dict(s.to_dict()) == s
