"""
Monte Carlo checks of the (super)martingale property of the forward
relative performance processes along simulated equilibria.

The conditional drift of U given the common noise is estimated from the
increments of U across idiosyncratic replications of one scenario. The
part of each increment that loads on the common noise is identical across
those replications and does not average out, so it is replaced by its
conditional expectation before averaging.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .coeffs import CoefficientModel, CoefficientValues
from .equilibrium import (
    DEFAULT_VARIANT,
    CorrectionProcess,
    KVariant,
    Quadrature,
    StrategyClosure,
    build_corrections,
    correction_rates,
    equilibrium_strategy,
)
from .errors import DomainError, Inconclusive
from .measure_calc import UtilityKind, cara_field, crra_field
from .particles import AverageKind, Dynamics, NoiseBundle, ParticleSystem, average_paths, conditional_mean, simulate

logger = logging.getLogger(__name__)

# --- Thresholds ---
SUPERMARTINGALE_T = -3.0
# adjudication: the winner stays at or below PASS_T, every other candidate reaches REJECT_T
PASS_T = 4.0
REJECT_T = 6.0
# drifts this small with a zero standard error count as exact zeros (rounding)
ZERO_DRIFT_ATOL = 1e-10

DEFAULT_CANDIDATES = (KVariant.SQUARE, KVariant.FULL)


@dataclass(frozen=True)
class UtilityField:
    kind: UtilityKind
    model: CoefficientModel
    corrections: CorrectionProcess


@dataclass(frozen=True)
class UtilityPathEnsemble:
    """
    U on (replication, agent, step) for the chosen agents.

    `exposure` is the loading of each increment on the common noise: a
    log-loading, or an absolute loading where `additive` is set (the
    logarithmic CRRA branch).
    """

    kind: UtilityKind
    U: np.ndarray
    agents: np.ndarray
    K: np.ndarray
    G: np.ndarray
    exposure: np.ndarray
    additive: np.ndarray
    common_increments: np.ndarray
    dt: float
    samples_over_agents: bool = False


@dataclass
class DriftReport:
    time: np.ndarray
    drift_estimate: np.ndarray
    stderr: np.ndarray
    t_stat: np.ndarray
    n_replications: int
    predicted_drift_mean: np.ndarray | None = None
    mean_drift: float = 0.0
    mean_stderr: float = 0.0
    mean_predicted: float = float("nan")

    @property
    def max_abs_t(self) -> float:
        """Largest |t|; an infinite t (deterministic nonzero drift) is kept."""
        abs_t = np.abs(self.t_stat[~np.isnan(self.t_stat)])
        return float(abs_t.max()) if abs_t.size else 0.0

    @property
    def supermartingale_fraction(self) -> float:
        return float(np.mean(self.t_stat < SUPERMARTINGALE_T))

    def rows(self, scenario: int, **extra) -> list[dict]:
        predicted = self.predicted_drift_mean
        if predicted is None:
            predicted = np.full(len(self.time), np.nan)
        return [
            {
                **extra,
                "scenario": scenario,
                "step": k,
                "time": float(self.time[k]),
                "drift_estimate": float(self.drift_estimate[k]),
                "stderr": float(self.stderr[k]),
                "t_stat": float(self.t_stat[k]),
                "predicted_drift_mean": float(predicted[k]),
                "n_replications": self.n_replications,
            }
            for k in range(len(self.time))
        ]


# --- Utility paths ---


def _benchmark(kind: UtilityKind, wealth: np.ndarray) -> np.ndarray:
    avg = AverageKind.ARITHMETIC if kind is UtilityKind.CARA else AverageKind.GEOMETRIC
    return average_paths(wealth, avg)[:, None]


def evaluate_utility_paths(
    system: ParticleSystem,
    field: UtilityField,
    agents=None,
    samples_over_agents: bool | None = None,
) -> UtilityPathEnsemble:
    """
    U along the simulated paths, benchmarked against the average of the
    replication's own agents.

    samples_over_agents defaults to True for single-replication systems
    (particle clouds), where the particles themselves are the E1 sample.
    """
    if field.kind is UtilityKind.CRRA and system.dynamics is not Dynamics.GEOMETRIC:
        raise DomainError("the CRRA field needs geometric dynamics")
    sel = np.arange(system.n_agents) if agents is None else np.atleast_1d(np.asarray(agents))
    if samples_over_agents is None:
        samples_over_agents = system.n_replications == 1
    r, steps = system.n_replications, system.steps
    K = np.broadcast_to(field.corrections.K, system.wealth.shape)[:, sel, :]
    G = np.broadcast_to(field.corrections.G, system.wealth.shape)[:, sel, :]

    U = np.empty((r, len(sel), steps + 1))
    exposure = np.zeros((r, len(sel), steps))
    additive = np.zeros((r, len(sel), steps), dtype=bool)
    for k in range(steps + 1):
        v = system.coefficients_at(field.model, k)
        x = system.wealth[:, :, k]
        lam = _benchmark(field.kind, x)
        delta, theta = v.delta[:, sel], v.theta[:, sel]
        if field.kind is UtilityKind.CARA:
            U[:, :, k] = cara_field(x[:, sel], lam, delta, theta, K[:, :, k])
        else:
            U[:, :, k] = crra_field(x[:, sel], lam, delta, theta, K[:, :, k], G[:, :, k])
        if k == steps:
            break

        pi_sigma = system.strategy_path[:, :, k] * v.sigma
        loading = pi_sigma[:, sel] - theta * pi_sigma.mean(axis=1, keepdims=True)
        if field.kind is UtilityKind.CARA:
            exposure[:, :, k] = -loading / delta
        else:
            log_branch = delta == 1.0
            exposure[:, :, k] = np.where(log_branch, K[:, :, k + 1] * loading, (1.0 - 1.0 / delta) * loading)
            additive[:, :, k] = log_branch

    if field.kind is UtilityKind.CARA and not np.all(U < 0):
        raise DomainError("CARA utility must be negative on every path")
    return UtilityPathEnsemble(
        kind=field.kind,
        U=U,
        agents=sel,
        K=K,
        G=G,
        exposure=exposure,
        additive=additive,
        common_increments=system.common_increments,
        dt=float(system.time_grid[1] - system.time_grid[0]),
        samples_over_agents=samples_over_agents,
    )


def _increments(ensemble: UtilityPathEnsemble, compensate: bool) -> np.ndarray:
    nxt, prev = ensemble.U[:, :, 1:], ensemble.U[:, :, :-1]
    if compensate:
        dw0 = ensemble.common_increments[None, None, :]
        b = ensemble.exposure
        scaled = nxt * np.exp(-b * dw0 + 0.5 * b**2 * ensemble.dt)
        nxt = np.where(ensemble.additive, nxt - b * dw0, scaled)
    return (nxt - prev) / ensemble.dt


def _samples(ensemble: UtilityPathEnsemble, per_point: np.ndarray) -> np.ndarray:
    """(sample, step) view: agent averages per replication, or every agent for a cloud."""
    if ensemble.samples_over_agents:
        return per_point.reshape(-1, per_point.shape[-1])
    return per_point.mean(axis=1)


def t_ratio(gap, stderr) -> np.ndarray:
    """
    gap / stderr, with zero-stderr entries mapped to 0 when the gap is a
    rounding-level zero and to +-inf otherwise.
    """
    gap, stderr = np.atleast_1d(np.asarray(gap, dtype=float)), np.atleast_1d(np.asarray(stderr, dtype=float))
    with np.errstate(divide="ignore", invalid="ignore"):
        exact = np.where(np.abs(gap) <= ZERO_DRIFT_ATOL, 0.0, np.copysign(np.inf, gap))
        exact = np.where(np.isnan(gap), np.nan, exact)
        return np.where(stderr > 0, gap / stderr, exact)


def estimate_drift(
    ensemble: UtilityPathEnsemble,
    dt: float | None = None,
    compensate: bool = True,
    baseline: UtilityPathEnsemble | None = None,
    predicted: np.ndarray | None = None,
    mirror: UtilityPathEnsemble | None = None,
) -> DriftReport:
    """
    Conditional drift of U per step, estimated across replications.

    With a baseline ensemble (same noise, same agents) the drift of the
    difference is estimated, which cancels most of the sampling noise.
    With a mirror ensemble the increments of the two are averaged first,
    so drift(c) and drift(-c) give the part of the drift even in c.
    """
    if dt is not None and ensemble.dt != dt:
        ensemble = UtilityPathEnsemble(**{**ensemble.__dict__, "dt": dt})
    inc = _increments(ensemble, compensate)
    if mirror is not None:
        inc = 0.5 * (inc + _increments(mirror, compensate))
    if baseline is not None:
        inc = inc - _increments(baseline, compensate)
    samples = _samples(ensemble, inc)
    est, se = conditional_mean(samples, axis=0)
    est, se = np.atleast_1d(est), np.atleast_1d(se)
    t = t_ratio(est, se)
    mean_drift, mean_se = conditional_mean(samples.mean(axis=1))

    pred_mean, pred_total = None, float("nan")
    if predicted is not None:
        pred_samples = _samples(ensemble, predicted)
        pred_mean = pred_samples.mean(axis=0)
        pred_total = float(pred_samples.mean())
    steps = inc.shape[-1]
    return DriftReport(
        time=np.arange(steps) * ensemble.dt,
        drift_estimate=est,
        stderr=se,
        t_stat=t,
        n_replications=samples.shape[0],
        predicted_drift_mean=pred_mean,
        mean_drift=float(mean_drift),
        mean_stderr=float(mean_se),
        mean_predicted=pred_total,
    )


# --- Drift predictors ---


def predicted_drift_cara(U, values: CoefficientValues, pi, pi_star, residual_rate=0.0):
    """U (Sigma / (2 delta^2)) (pi - pi*)^2, plus U times any K-rate residual of the variant used."""
    return U * (values.Sigma / (2.0 * values.delta**2) * (pi - pi_star) ** 2 + residual_rate)


def predicted_drift_crra(U, values: CoefficientValues, K, pi, pi_star, residual_rate=0.0):
    """
    U (1 - 1/delta)(-Sigma / (2 delta)) (pi - pi*)^2 for delta != 1, and
    -Sigma K (pi - pi*)^2 / 2 for delta = 1; residual_rate is a log-K rate in
    the first case and a G rate in the second.
    """
    delta = np.asarray(values.delta, dtype=float)
    gap = (np.asarray(pi) - pi_star) ** 2
    p = 1.0 - 1.0 / delta
    power = U * (-p * values.Sigma / (2.0 * delta) * gap + residual_rate)
    log = -0.5 * values.Sigma * K * gap + residual_rate
    return np.where(delta == 1.0, log, power)


def variant_residual(game: UtilityKind, values: CoefficientValues, weights, variant: KVariant):
    """Correction rates of `variant` minus those of the completed square."""
    k_used, g_used = correction_rates(game, values, weights, variant)
    k_exact, g_exact = correction_rates(game, values, weights, KVariant.SQUARE)
    return k_used - k_exact, g_used - g_exact


def quadratic_drift_path(system: ParticleSystem, field: UtilityField, ensemble: UtilityPathEnsemble) -> np.ndarray:
    """Quadratic-form drift prediction on every (replication, agent, step) of the ensemble."""
    sel = ensemble.agents
    out = np.empty(ensemble.exposure.shape)
    for k in range(system.steps):
        v = system.coefficients_at(field.model, k)
        w = system.weights_path[k]
        star = np.broadcast_to(equilibrium_strategy(field.kind, v, w), v.mu.shape)[:, sel]
        pi = system.strategy_path[:, sel, k]
        vs = CoefficientValues.build(v.mu[:, sel], v.nu[:, sel], v.sigma[:, sel], v.delta[:, sel], v.theta[:, sel])
        k_res, g_res = variant_residual(field.kind, vs, w, field.corrections.variant)
        u = ensemble.U[:, :, k]
        if field.kind is UtilityKind.CARA:
            out[:, :, k] = predicted_drift_cara(u, vs, pi, star, k_res)
        else:
            residual = np.where(vs.delta == 1.0, g_res, k_res)
            out[:, :, k] = predicted_drift_crra(u, vs, ensemble.K[:, :, k], pi, star, residual)
    return out


def generator_drift_path(system: ParticleSystem, field: UtilityField, ensemble: UtilityPathEnsemble) -> np.ndarray:
    """
    Drift of U from the full Ito expansion along the simulated strategies.

    Uses the realised replication averages and the idiosyncratic
    cross-variation through the benchmark, so it stays exact when several
    agents deviate or n is small.
    """
    sel = ensemble.agents
    n = system.n_agents
    out = np.empty(ensemble.exposure.shape)
    for k in range(system.steps):
        v = system.coefficients_at(field.model, k)
        w = system.weights_path[k]
        pi = system.strategy_path[:, :, k]
        k_rate, g_rate = correction_rates(field.kind, v, w, field.corrections.variant)
        k_rate = np.broadcast_to(k_rate, pi.shape)[:, sel]
        g_rate = np.broadcast_to(g_rate, pi.shape)[:, sel]

        pi_mu_bar = (pi * v.mu).mean(axis=1, keepdims=True)
        pi_sigma_bar = (pi * v.sigma).mean(axis=1, keepdims=True)
        idio_sq = (pi * v.nu) ** 2
        idio_total = idio_sq.sum(axis=1, keepdims=True)
        th, d = v.theta, v.delta
        common = pi * v.sigma - th * pi_sigma_bar
        idio = idio_sq * (1.0 - th / n) ** 2 + (th / n) ** 2 * (idio_total - idio_sq)
        u = ensemble.U[:, :, k]

        if field.kind is UtilityKind.CARA:
            log_drift = -(pi * v.mu - th * pi_mu_bar) / d + 0.5 * (common**2 + idio) / d**2
            out[:, :, k] = u * (k_rate + log_drift[:, sel])
            continue

        pi2_sigma_bar = (pi**2 * v.Sigma).mean(axis=1, keepdims=True)
        rel_drift = (pi * v.mu - 0.5 * pi**2 * v.Sigma) - th * (pi_mu_bar - 0.5 * pi2_sigma_bar)
        p = 1.0 - 1.0 / d
        power = (p * rel_drift + 0.5 * p**2 * (common**2 + idio))[:, sel]
        log_branch = d[:, sel] == 1.0
        out[:, :, k] = np.where(log_branch, ensemble.K[:, :, k] * rel_drift[:, sel] + g_rate, u * (k_rate + power))
    return out


# --- Experiments ---


@dataclass(frozen=True)
class GameSetup:
    """Everything a martingale experiment needs besides the noise."""

    game: UtilityKind
    model: CoefficientModel
    initial_wealth: np.ndarray
    quadrature: Quadrature = Quadrature.LEFT

    @property
    def dynamics(self) -> Dynamics:
        return Dynamics.ARITHMETIC if self.game is UtilityKind.CARA else Dynamics.GEOMETRIC

    def equilibrium(self) -> StrategyClosure:
        return StrategyClosure.equilibrium(self.game, common_measurable=self.model.is_common_measurable)


@dataclass
class MartingaleRun:
    system: ParticleSystem
    corrections: CorrectionProcess
    ensemble: UtilityPathEnsemble
    report: DriftReport


def run_game(setup: GameSetup, bundle: NoiseBundle, strategy: StrategyClosure | None = None) -> ParticleSystem:
    system = ParticleSystem.initialise(setup.initial_wealth, setup.model, bundle, setup.dynamics)
    return simulate(system, strategy or setup.equilibrium(), setup.model, bundle)


def martingale_test(
    setup: GameSetup,
    bundle: NoiseBundle,
    variant: KVariant = DEFAULT_VARIANT,
    strategy: StrategyClosure | None = None,
    agents=None,
    compensate: bool = True,
    system: ParticleSystem | None = None,
) -> MartingaleRun:
    """Simulates (unless a system is given), builds K/G and estimates the drift of U."""
    system = system or run_game(setup, bundle, strategy)
    corrections = build_corrections(system, setup.model, setup.game, variant, setup.quadrature)
    field = UtilityField(setup.game, setup.model, corrections)
    ensemble = evaluate_utility_paths(system, field, agents)
    predicted = generator_drift_path(system, field, ensemble)
    report = estimate_drift(ensemble, compensate=compensate, predicted=predicted)
    return MartingaleRun(system, corrections, ensemble, report)


@dataclass
class AdjudicationResult:
    verdict: KVariant | None
    reports: dict
    max_abs_t: dict

    @property
    def inconclusive(self) -> bool:
        return self.verdict is None

    def require_verdict(self) -> KVariant:
        if self.verdict is None:
            summary = ", ".join(f"{v.value}: max|t|={t:.3f}" for v, t in self.max_abs_t.items())
            raise Inconclusive(f"variants not separated ({summary})")
        return self.verdict


def adjudicate_variant(
    setup: GameSetup,
    bundles: Sequence[NoiseBundle],
    candidates: Sequence[KVariant] = DEFAULT_CANDIDATES,
    strategy: StrategyClosure | None = None,
    map_fn: Callable = map,
) -> AdjudicationResult:
    """
    Runs the equilibrium martingale test under each candidate K variant.

    The strategies do not depend on the variant, so every scenario is
    simulated once and only the corrections change. The candidate with the
    smallest max |t| wins when it stays at or below PASS_T and every other
    candidate reaches REJECT_T. Scenarios go through map_fn (e.g. an
    executor's map); results are collected in scenario order.
    """
    candidates = tuple(candidates)
    if len(candidates) < 2 or len(set(candidates)) != len(candidates):
        raise ValueError("adjudication compares at least two different variants")

    def one_scenario(bundle):
        system = run_game(setup, bundle, strategy)
        return [martingale_test(setup, bundle, v, system=system).report for v in candidates]

    reports = {v: [] for v in candidates}
    for bundle, scenario_reports in zip(bundles, map_fn(one_scenario, bundles)):
        for variant, report in zip(candidates, scenario_reports):
            reports[variant].append(report)
            logger.info(
                "Scenario %d, variant %s: max|t| = %.3f",
                bundle.seed_lineage.scenario,
                variant.value,
                report.max_abs_t,
            )
    max_t = {v: max(r.max_abs_t for r in reps) for v, reps in reports.items()}
    best = min(candidates, key=lambda v: max_t[v])
    rejected = all(max_t[v] >= REJECT_T for v in candidates if v is not best)
    verdict = best if max_t[best] <= PASS_T and rejected else None
    if verdict is None:
        logger.warning("Adjudication inconclusive: %s", {v.value: round(t, 3) for v, t in max_t.items()})
    return AdjudicationResult(verdict, reports, max_t)


@dataclass
class PerturbationResult:
    rows: list
    reports: dict
    slope: float
    slope_stderr: float


def _even_part(plus: np.ndarray, minus: np.ndarray | None) -> np.ndarray:
    return plus if minus is None else 0.5 * (plus + minus)


def perturbation_study(
    setup: GameSetup,
    bundle: NoiseBundle,
    offsets: Sequence[float] = (0.25, 0.5, 1.0),
    deviators: str = "first",
    variant: KVariant = DEFAULT_VARIANT,
    paired: bool = True,
    symmetric: bool = True,
) -> PerturbationResult:
    """
    Drift of U under pi* + c for each offset c.

    deviators="first" perturbs agent 0 only (unilateral deviation),
    "all" perturbs every agent. With paired=True the equilibrium run on the
    same noise is subtracted, increment by increment. With symmetric=True
    the runs at +c and -c are averaged, which removes the part of the drift
    odd in c (the deviator moves the benchmark too) and leaves the
    quadratic loss the log-log slope is fitted on.
    """
    n = bundle.n_agents
    if deviators == "first":
        mask, agents = np.arange(n) == 0, np.array([0])
    elif deviators == "all":
        mask, agents = None, np.arange(n)
    else:
        raise ValueError(f"unknown deviator set '{deviators}'")

    cm = setup.model.is_common_measurable

    def perturbed_run(c):
        strategy = StrategyClosure.perturbed(setup.game, c, mask, common_measurable=cm)
        run = martingale_test(setup, bundle, variant, strategy=strategy, agents=agents)
        field = UtilityField(setup.game, setup.model, run.corrections)
        return run, generator_drift_path(run.system, field, run.ensemble), quadratic_drift_path(run.system, field, run.ensemble)

    base = martingale_test(setup, bundle, variant, agents=agents)
    base_generator = generator_drift_path(base.system, UtilityField(setup.game, setup.model, base.corrections), base.ensemble)
    reports, rows = {}, []
    for c in offsets:
        run, generator, quadratic = perturbed_run(c)
        mirror = None
        if symmetric:
            mirror, generator_m, quadratic_m = perturbed_run(-c)
            generator = _even_part(generator, generator_m)
            quadratic = _even_part(quadratic, quadratic_m)
        if paired:
            generator = generator - base_generator
        report = estimate_drift(
            run.ensemble,
            baseline=base.ensemble if paired else None,
            predicted=generator,
            mirror=None if mirror is None else mirror.ensemble,
        )
        reports[c] = report
        z = t_ratio(report.drift_estimate - report.predicted_drift_mean, report.stderr)
        mean_z = t_ratio(report.mean_drift - report.mean_predicted, report.mean_stderr)[0]
        rows.append(
            {
                "offset": c,
                "deviators": deviators,
                "mean_drift": report.mean_drift,
                "stderr": report.mean_stderr,
                "mean_predicted": report.mean_predicted,
                "mean_quadratic": float(_samples(run.ensemble, quadratic).mean()),
                "mean_z": float(mean_z),
                "max_abs_z": float(np.max(np.abs(z))),
                "negative_steps": float(np.mean(report.drift_estimate < 0)),
            }
        )
        logger.info("Offset %.3g (%s): mean drift %.6g +- %.2g", c, deviators, report.mean_drift, report.mean_stderr)

    slope, slope_se = float("nan"), float("nan")
    magnitudes = np.abs([r["mean_drift"] for r in rows])
    if len(offsets) >= 3 and np.all(magnitudes > 0):
        fit = stats.linregress(np.log(offsets), np.log(magnitudes))
        slope, slope_se = float(fit.slope), float(fit.stderr)
    elif len(offsets) == 2 and np.all(magnitudes > 0):
        slope = float(np.diff(np.log(magnitudes))[0] / np.diff(np.log(offsets))[0])
    return PerturbationResult(rows, reports, slope, slope_se)
