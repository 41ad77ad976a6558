import numpy as np
import pytest

from fnlab.coeffs import (
    CoefficientKind,
    CoefficientModel,
    FactorParams,
    Link,
    ParameterSpec,
    factor_path,
    sample,
    validate,
)
from fnlab.errors import DomainError

from conftest import constant_model


class TestValidate:
    def test_homogeneous_constants_are_valid(self, cara_model):
        assert validate(cara_model) == []

    def test_theta_above_one(self):
        assert "theta out of [0,1]" in validate(constant_model(theta=1.5))

    def test_zero_volatility(self):
        assert "Sigma must be strictly positive" in validate(constant_model(nu=0.0, sigma=0.0))

    def test_negative_sigma(self):
        assert "sigma must be nonnegative" in validate(constant_model(sigma=-0.1))

    def test_delta_floor(self):
        violations = validate(constant_model(delta=1e-9))
        assert any(v.startswith("delta below floor") for v in violations)

    def test_tanh_state_dependent_theta_needs_clamp(self):
        base = constant_model()
        theta = ParameterSpec(CoefficientKind.STATE_DEPENDENT, value=0.5, slope=0.6, link=Link.TANH)
        loose = CoefficientModel(base.mu, base.nu, base.sigma, base.delta, theta)
        assert "theta out of [0,1]" in validate(loose)

        clamped = ParameterSpec(CoefficientKind.STATE_DEPENDENT, value=0.5, slope=0.6, link=Link.TANH, clamp_lo=0.0, clamp_hi=1.0)
        assert validate(CoefficientModel(base.mu, base.nu, base.sigma, base.delta, clamped)) == []

    def test_exp_link_keeps_sigma_positive(self):
        base = constant_model(nu=0.0)
        sigma = ParameterSpec(CoefficientKind.COMMON_FACTOR, value=0.3, link=Link.EXP)
        model = CoefficientModel(base.mu, base.nu, sigma, base.delta, base.theta, factor=FactorParams(vol=0.5))
        assert validate(model) == []

    def test_time_trend_leaving_the_domain(self):
        base = constant_model()
        delta = ParameterSpec(CoefficientKind.DETERMINISTIC_TIME, intercept=1.0, slope=-2.0)
        model = CoefficientModel(base.mu, base.nu, base.sigma, delta, base.theta, horizon=1.0)
        assert any(v.startswith("delta below floor") for v in validate(model))

    def test_negative_factor_vol(self):
        base = constant_model()
        model = CoefficientModel(base.mu, base.nu, base.sigma, base.delta, base.theta, factor=FactorParams(vol=-1.0))
        assert "factor vol must be nonnegative" in validate(model)


class TestSample:
    def test_broadcasts_to_the_wealth_grid(self, cara_model):
        v = sample(cara_model, np.zeros((3, 5)), 0.0, 0.0)
        assert v.mu.shape == (3, 5)
        np.testing.assert_allclose(v.Sigma, 0.13)

    def test_per_agent_values(self):
        model = constant_model(delta=np.array([0.5, 1.0, 2.0]))
        v = sample(model, np.zeros((2, 3)), 0.0, 0.0)
        np.testing.assert_array_equal(v.delta[1], [0.5, 1.0, 2.0])

    def test_state_dependent_is_clamped(self):
        base = constant_model()
        mu = ParameterSpec(CoefficientKind.STATE_DEPENDENT, value=0.1, slope=1.0, clamp_lo=0.0, clamp_hi=0.2)
        model = CoefficientModel(mu, base.nu, base.sigma, base.delta, base.theta)
        v = sample(model, np.array([[-5.0, 0.05, 5.0]]), 0.0, 0.0)
        np.testing.assert_allclose(v.mu, [[0.0, 0.15, 0.2]])

    def test_overflowing_factor_link(self):
        base = constant_model()
        mu = ParameterSpec(CoefficientKind.COMMON_FACTOR, value=0.1, link=Link.EXP)
        model = CoefficientModel(mu, base.nu, base.sigma, base.delta, base.theta)
        with np.errstate(over="ignore"), pytest.raises(DomainError):
            sample(model, np.zeros((1, 1)), 1e6, 0.0)

    def test_deterministic_time(self):
        base = constant_model()
        mu = ParameterSpec(CoefficientKind.DETERMINISTIC_TIME, intercept=0.1, slope=0.2)
        model = CoefficientModel(mu, base.nu, base.sigma, base.delta, base.theta, horizon=1.0)
        np.testing.assert_allclose(sample(model, np.zeros((1, 2)), 0.0, 0.5).mu, 0.2)


class TestModel:
    def test_kind_is_the_most_general_block(self):
        base = constant_model()
        assert base.kind is CoefficientKind.CONSTANT
        assert base.is_common_measurable
        sigma = ParameterSpec(CoefficientKind.COMMON_FACTOR, value=0.3)
        mu = ParameterSpec(CoefficientKind.STATE_DEPENDENT, value=0.1, clamp_lo=0.0, clamp_hi=0.2)
        model = CoefficientModel(mu, base.nu, sigma, base.delta, base.theta)
        assert model.kind is CoefficientKind.STATE_DEPENDENT
        assert not model.is_common_measurable
        assert model.uses_factor


class TestFactorPath:
    def test_mean_reversion_without_noise(self):
        base = constant_model()
        model = CoefficientModel(base.mu, base.nu, base.sigma, base.delta, base.theta, factor=FactorParams(kappa=1.0, level=0.0, initial=1.0))
        z = factor_path(model, np.zeros(3), 0.1)
        np.testing.assert_allclose(z, [1.0, 0.9, 0.81, 0.729])

    def test_starts_at_level(self, cara_model):
        z = factor_path(cara_model, np.zeros(4), 0.25)
        np.testing.assert_array_equal(z, np.zeros(5))
