import numpy as np
import pytest

from fnlab.coeffs import CoefficientValues
from fnlab.equilibrium import KVariant
from fnlab.errors import DomainError, Inconclusive, InsufficientReplications
from fnlab.measure_calc import UtilityKind
from fnlab.particles import ParticleSystem, generate_noise
from fnlab.verify import (
    DriftReport,
    GameSetup,
    UtilityField,
    UtilityPathEnsemble,
    adjudicate_variant,
    estimate_drift,
    evaluate_utility_paths,
    martingale_test,
    perturbation_study,
    predicted_drift_cara,
    predicted_drift_crra,
    t_ratio,
)

from conftest import constant_model


def ensemble_of(U, dt=0.25, samples_over_agents=False):
    r, n, points = U.shape
    return UtilityPathEnsemble(
        kind=UtilityKind.CARA,
        U=U,
        agents=np.arange(n),
        K=np.zeros_like(U),
        G=np.zeros_like(U),
        exposure=np.zeros((r, n, points - 1)),
        additive=np.zeros((r, n, points - 1), dtype=bool),
        common_increments=np.zeros(points - 1),
        dt=dt,
        samples_over_agents=samples_over_agents,
    )


class TestPredictors:
    def test_cara_quadratic_form(self):
        values = CoefficientValues.build(0.1, 0.2, 0.3, 1.0, 0.5)
        assert float(predicted_drift_cara(-1.0, values, 2.0, 1.0)) == pytest.approx(-0.065)

    def test_cara_at_equilibrium(self):
        values = CoefficientValues.build(0.1, 0.2, 0.3, 1.0, 0.5)
        assert predicted_drift_cara(-1.0, values, 1.2, 1.2) == 0.0

    def test_crra_power_branch_is_nonpositive(self):
        for delta, U in [(2.0, 1.0), (0.5, -1.0)]:
            values = CoefficientValues.build(0.1, 0.2, 0.3, delta, 0.5)
            assert float(predicted_drift_crra(U, values, 1.0, 1.5, 1.0)) < 0

    def test_crra_log_branch(self):
        values = CoefficientValues.build(0.1, 0.2, 0.3, 1.0, 0.5)
        assert float(predicted_drift_crra(0.3, values, 1.0, 2.0, 1.0)) == pytest.approx(-0.065)


class TestEstimateDrift:
    def test_constant_paths_have_no_drift(self):
        report = estimate_drift(ensemble_of(np.full((3, 2, 5), -1.0)))
        np.testing.assert_array_equal(report.drift_estimate, 0.0)
        np.testing.assert_array_equal(report.t_stat, 0.0)
        assert report.max_abs_t == 0.0

    def test_deterministic_trend(self):
        U = np.broadcast_to(np.arange(5) * 0.25, (3, 2, 5)).copy()
        report = estimate_drift(ensemble_of(U))
        np.testing.assert_allclose(report.drift_estimate, 1.0)
        np.testing.assert_array_equal(report.stderr, 0.0)
        assert np.all(np.isinf(report.t_stat))
        assert np.all(report.t_stat > 0)
        assert report.max_abs_t == np.inf
        assert report.mean_drift == pytest.approx(1.0)

    def test_single_replication_needs_agent_samples(self):
        U = np.cumsum(np.random.default_rng(0).normal(size=(1, 3, 5)), axis=2)
        with pytest.raises(InsufficientReplications):
            estimate_drift(ensemble_of(U))
        report = estimate_drift(ensemble_of(U, samples_over_agents=True))
        assert report.n_replications == 3

    def test_rows(self):
        report = estimate_drift(ensemble_of(np.full((3, 2, 3), -1.0)))
        rows = report.rows(4, variant="half")
        assert len(rows) == 2
        assert rows[1]["variant"] == "half"
        assert rows[1]["scenario"] == 4
        assert rows[1]["time"] == pytest.approx(0.25)
        assert np.isnan(rows[0]["predicted_drift_mean"])

    def test_negative_trend_without_noise(self):
        U = np.broadcast_to(-np.arange(5) * 0.25, (3, 2, 5)).copy()
        report = estimate_drift(ensemble_of(U))
        assert np.all(report.t_stat == -np.inf)
        assert report.max_abs_t == np.inf
        assert report.supermartingale_fraction == 1.0

    def test_supermartingale_fraction(self):
        report = DriftReport(np.arange(4.0), np.zeros(4), np.ones(4), np.array([-5.0, -4.0, 0.0, 1.0]), 10)
        assert report.supermartingale_fraction == 0.5
        assert report.max_abs_t == 5.0


class TestTRatio:
    def test_regular_ratio(self):
        np.testing.assert_allclose(t_ratio([1.0, -3.0], [0.5, 1.5]), [2.0, -2.0])

    def test_zero_stderr(self):
        t = t_ratio([2.0, -1e-3, 1e-12, 0.0, np.nan], np.zeros(5))
        assert t[0] == np.inf
        assert t[1] == -np.inf
        np.testing.assert_array_equal(t[2:4], 0.0)
        assert np.isnan(t[4])

    def test_scalar_input(self):
        assert t_ratio(1.0, 0.0).shape == (1,)


class TestUtilityPaths:
    def test_crra_needs_geometric_dynamics(self, crra_model, small_bundle):
        system = ParticleSystem.initialise(1.0, crra_model, small_bundle)
        with pytest.raises(DomainError):
            evaluate_utility_paths(system, UtilityField(UtilityKind.CRRA, crra_model, None))

    def test_cara_utility_is_negative(self, cara_model, small_bundle):
        setup = GameSetup(UtilityKind.CARA, cara_model, np.zeros(4))
        run = martingale_test(setup, small_bundle, KVariant.SQUARE)
        assert np.all(run.ensemble.U < 0)
        np.testing.assert_allclose(run.ensemble.U[:, :, 0], -1.0)


class TestMartingale:
    def test_cara_drift_matches_generator(self, cara_model):
        bundle = generate_noise(21, 0, 2000, 4, 8, 1 / 8)
        setup = GameSetup(UtilityKind.CARA, cara_model, np.zeros(4))
        report = martingale_test(setup, bundle, KVariant.SQUARE).report
        z = (report.drift_estimate - report.predicted_drift_mean) / report.stderr
        assert np.max(np.abs(z)) < 4.5

    def test_cara_without_competition_is_a_martingale(self):
        model = constant_model(delta=2.0, theta=0.0)
        bundle = generate_noise(22, 0, 1000, 4, 8, 1 / 8)
        report = martingale_test(GameSetup(UtilityKind.CARA, model, np.zeros(4)), bundle, KVariant.HALF).report
        np.testing.assert_allclose(report.predicted_drift_mean, 0.0, atol=1e-12)
        assert report.max_abs_t < 4.0

    def test_crra_log_utility_is_a_martingale(self):
        model = constant_model(delta=1.0, theta=0.5)
        bundle = generate_noise(23, 0, 1000, 4, 8, 1 / 8)
        run = martingale_test(GameSetup(UtilityKind.CRRA, model, np.ones(4)), bundle, KVariant.HALF)
        np.testing.assert_array_equal(run.corrections.K, 1.0)
        z = (run.report.drift_estimate - run.report.predicted_drift_mean) / run.report.stderr
        assert np.max(np.abs(z)) < 4.5

    @pytest.mark.slow
    def test_cara_with_competition_is_a_martingale_under_square(self, cara_model):
        setup = GameSetup(UtilityKind.CARA, cara_model, np.zeros(8))
        max_t = [
            martingale_test(setup, generate_noise(seed, 0, 10000, 8, 64, 1 / 64)).report.max_abs_t for seed in range(5)
        ]
        assert sum(t <= 4.0 for t in max_t) >= 4

    @pytest.mark.slow
    def test_cara_half_variant_drifts_under_competition(self, cara_model):
        bundle = generate_noise(0, 0, 10000, 8, 64, 1 / 64)
        report = martingale_test(GameSetup(UtilityKind.CARA, cara_model, np.zeros(8)), bundle, KVariant.HALF).report
        assert report.max_abs_t > 6.0


class TestAdjudication:
    def test_identical_variants_are_inconclusive(self):
        model = constant_model(delta=1.0, theta=0.0)
        bundles = [generate_noise(5, s, 64, 3, 4, 0.25) for s in range(2)]
        result = adjudicate_variant(GameSetup(UtilityKind.CARA, model, np.zeros(3)), bundles)
        assert result.inconclusive
        assert set(result.reports) == {KVariant.SQUARE, KVariant.FULL}
        assert result.max_abs_t[KVariant.SQUARE] == pytest.approx(result.max_abs_t[KVariant.FULL])
        assert len(result.reports[KVariant.FULL]) == 2
        with pytest.raises(Inconclusive):
            result.require_verdict()

    def test_needs_two_different_candidates(self, cara_model):
        setup = GameSetup(UtilityKind.CARA, cara_model, np.zeros(2))
        with pytest.raises(ValueError):
            adjudicate_variant(setup, [], candidates=(KVariant.HALF,))
        with pytest.raises(ValueError):
            adjudicate_variant(setup, [], candidates=(KVariant.FULL, KVariant.FULL))

    def test_three_candidates_are_accepted(self):
        model = constant_model(delta=1.0, theta=0.0)
        bundles = [generate_noise(5, 0, 64, 3, 4, 0.25)]
        result = adjudicate_variant(GameSetup(UtilityKind.CARA, model, np.zeros(3)), bundles, candidates=tuple(KVariant))
        assert set(result.max_abs_t) == set(KVariant)

    @pytest.mark.slow
    def test_crra_power_utility_picks_square(self, crra_model):
        bundles = [generate_noise(1, 0, 10000, 8, 64, 1 / 64)]
        result = adjudicate_variant(GameSetup(UtilityKind.CRRA, crra_model, np.ones(8)), bundles)
        assert result.verdict is KVariant.SQUARE
        assert result.max_abs_t[KVariant.SQUARE] <= 4.0
        assert result.max_abs_t[KVariant.FULL] >= 6.0


class TestPerturbation:
    def test_rows(self):
        model = constant_model(delta=1.0, theta=0.0)
        bundle = generate_noise(8, 0, 128, 3, 4, 0.25)
        result = perturbation_study(GameSetup(UtilityKind.CARA, model, np.zeros(3)), bundle, offsets=(0.5, 1.0))
        assert [r["offset"] for r in result.rows] == [0.5, 1.0]
        assert set(result.rows[0]) == {
            "offset",
            "deviators",
            "mean_drift",
            "stderr",
            "mean_predicted",
            "mean_quadratic",
            "mean_z",
            "max_abs_z",
            "negative_steps",
        }
        assert all(r["deviators"] == "first" for r in result.rows)
        assert all(r["mean_quadratic"] < 0 for r in result.rows)
        assert np.isnan(result.slope_stderr)

    def test_symmetric_quadratic_is_even_in_the_offset(self):
        model = constant_model(delta=1.0, theta=0.0)
        bundle = generate_noise(8, 0, 128, 3, 4, 0.25)
        setup = GameSetup(UtilityKind.CARA, model, np.zeros(3))
        quadratic = [perturbation_study(setup, bundle, offsets=(c,)).rows[0]["mean_quadratic"] for c in (0.5, -0.5)]
        assert quadratic[0] == pytest.approx(quadratic[1])

    def test_unknown_deviators(self, cara_model, small_bundle):
        with pytest.raises(ValueError):
            perturbation_study(GameSetup(UtilityKind.CARA, cara_model, np.zeros(4)), small_bundle, deviators="some")

    @pytest.mark.slow
    def test_drift_is_quadratic_in_the_offset(self, cara_model):
        bundle = generate_noise(9, 0, 10000, 8, 64, 1 / 64)
        result = perturbation_study(GameSetup(UtilityKind.CARA, cara_model, np.zeros(8)), bundle)
        assert all(r["mean_drift"] < 0 for r in result.rows)
        assert all(abs(r["mean_z"]) <= 3.0 for r in result.rows)
        assert 1.8 <= result.slope <= 2.2
