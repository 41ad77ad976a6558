import numpy as np
import pytest

from fnlab.errors import DomainError
from fnlab.measure_calc import (
    FD_REL_TOL,
    FieldParams,
    MeasureFunctional,
    UtilityKind,
    cara_derivatives,
    cara_field,
    crra_derivatives,
    crra_field,
    derivative_check_rows,
    empirical_projection_grad,
    fd_lift_check,
    fd_second_order_check,
    l_derivative,
    lifted_fd_bundle,
    second_order_projection,
)

ATOMS = np.array([0.7, 1.3, 1.9])


class TestProjection:
    def test_arithmetic_gradient(self):
        assert empirical_projection_grad(MeasureFunctional.ARITH_MEAN, ATOMS, 1) == pytest.approx(1 / 3)

    @pytest.mark.parametrize("functional", list(MeasureFunctional))
    def test_gradient_is_l_derivative_over_n(self, functional):
        for i in range(len(ATOMS)):
            scaled = len(ATOMS) * empirical_projection_grad(functional, ATOMS, i)
            assert scaled == pytest.approx(l_derivative(functional, ATOMS, i), rel=1e-14)

    @pytest.mark.parametrize("functional", list(MeasureFunctional))
    def test_finite_difference(self, functional):
        check = fd_lift_check(functional, ATOMS, 2)
        assert check.rel_err <= FD_REL_TOL

    def test_geometric_needs_positive_atoms(self):
        with pytest.raises(DomainError):
            empirical_projection_grad(MeasureFunctional.GEOM_MEAN, [1.0, 0.0], 0)

    @pytest.mark.parametrize("i,j", [(0, 0), (0, 2), (1, 1)])
    def test_second_order_geometric(self, i, j):
        check = fd_second_order_check(MeasureFunctional.GEOM_MEAN, ATOMS, i, j)
        assert check.rel_err <= 1e-4

    def test_second_order_arithmetic_vanishes(self):
        assert second_order_projection(MeasureFunctional.ARITH_MEAN, ATOMS, 0, 1) == 0.0


class TestFields:
    def test_cara_at_the_origin(self):
        assert cara_field(0.0, 0.0, 1.0, 0.0, 0.0) == -1.0

    def test_cara_zero_exponent(self):
        assert cara_field(0.6, 1.2, 2.0, 0.5, 0.0) == pytest.approx(-1.0)

    def test_crra_log_branch_at_the_average(self):
        assert float(crra_field(1.7, 1.7, 1.0, 1.0, 1.0, 0.0)) == pytest.approx(0.0, abs=1e-15)

    def test_crra_power_branch(self):
        # delta = 2: U = K sqrt(x lam^-theta) / 0.5
        assert float(crra_field(4.0, 1.0, 2.0, 0.5, 1.0, 0.0)) == pytest.approx(4.0)

    def test_crra_rejects_nonpositive_wealth(self):
        with pytest.raises(DomainError):
            crra_field(-1.0, 1.0, 2.0, 0.5, 1.0, 0.0)

    def test_elementwise_branches(self):
        out = crra_field(np.array([2.0, 2.0]), 1.0, np.array([1.0, 2.0]), 0.0, 1.0, 0.5)
        np.testing.assert_allclose(out, [np.log(2.0) + 0.5, 2.0 * np.sqrt(2.0)])


class TestDerivatives:
    def test_cara_bundle(self):
        params = FieldParams(delta=2.0, theta=0.5, K=0.1, K_rate=-0.3)
        b = cara_derivatives(0.4, ATOMS, 0.0, params)
        assert b.d_x == pytest.approx(-b.value / 2.0)
        assert b.d_mu(1.0) == pytest.approx(0.25 * b.value)
        assert b.d_v_dmu(1.0) == 0.0
        assert b.d_t == pytest.approx(-0.3 * b.value)

    def test_crra_log_branch_has_no_cross_term(self):
        b = crra_derivatives(1.2, ATOMS, 0.0, FieldParams(delta=1.0, theta=0.7, K=1.0))
        assert b.d_x == pytest.approx(1 / 1.2)
        assert b.d_mumu(1.0, 2.0) == 0.0
        assert b.d_x_dmu(1.0) == 0.0

    def test_crra_rejects_nonpositive_wealth(self):
        with pytest.raises(DomainError):
            crra_derivatives(0.0, ATOMS, 0.0, FieldParams(delta=2.0, theta=0.5, K=1.0))

    @pytest.mark.parametrize(
        "kind,params",
        [
            (UtilityKind.CARA, FieldParams(delta=0.8, theta=0.6, K=0.2, K_rate=0.4)),
            (UtilityKind.CRRA, FieldParams(delta=2.5, theta=0.4, K=1.1, K_rate=-0.2)),
            (UtilityKind.CRRA, FieldParams(delta=0.4, theta=0.9, K=0.9, K_rate=0.3)),
            (UtilityKind.CRRA, FieldParams(delta=1.0, theta=0.5, K=1.2, K_rate=0.1, G=0.3, G_rate=-0.5)),
        ],
    )
    def test_lifted_finite_differences(self, kind, params):
        checks = lifted_fd_bundle(kind, 1.1, ATOMS, params, j=1)
        assert set(checks) == {"d_t", "d_x", "d_xx", "d_mu", "d_x_dmu", "d_mumu", "d_v_dmu"}
        for entry in ("d_t", "d_x", "d_mu"):
            assert checks[entry].rel_err <= 1e-6, entry
        for entry in ("d_xx", "d_x_dmu", "d_mumu", "d_v_dmu"):
            assert checks[entry].rel_err <= 1e-4, entry


class TestDerivativeCheckRows:
    def test_every_row_within_tolerance(self):
        rows = derivative_check_rows(points=20, seed=3)
        assert rows
        failing = [r for r in rows if not r["rel_err"] <= r["tolerance"]]
        assert failing == []

    def test_deterministic(self):
        assert derivative_check_rows(points=3, seed=1) == derivative_check_rows(points=3, seed=1)

    def test_columns(self):
        row = derivative_check_rows(points=1, seed=0)[0]
        assert list(row) == ["point", "subject", "entry", "analytic", "finite_diff", "rel_err", "tolerance"]
