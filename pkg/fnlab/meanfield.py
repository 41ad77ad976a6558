"""
Representative-agent (McKean-Vlasov) side of the lab.

The conditional law of the representative agent's wealth given the common
noise is approximated by a particle cloud: one replication of a
ParticleSystem whose particles share the common-noise path. Every E1 in
the mean-field equilibrium is a particle average over that cloud.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
from scipy import stats

from .coeffs import PARAMETER_NAMES, CoefficientKind, CoefficientModel, CoefficientValues, ParameterSpec
from .equilibrium import (
    DEFAULT_VARIANT,
    CorrectionProcess,
    EquilibriumWeights,
    KVariant,
    Quadrature,
    StrategyClosure,
    accumulate,
    cara_strategy,
    cara_weights,
    cloud_e1,
    correction_rates,
    crra_strategy,
    crra_weights,
    equilibrium_strategy,
    equilibrium_weights,
)
from .errors import SizeMismatch
from .measure_calc import UtilityKind
from .particles import (
    Dynamics,
    EmpiricalMeasure,
    NoiseBundle,
    ParticleSystem,
    conditional_mean,
    generate_noise,
    simulate,
    subsample,
    wasserstein2,
)
from .verify import GameSetup, MartingaleRun, martingale_test

logger = logging.getLogger(__name__)

# spawn_key streams beyond the noise streams of particles.generate_noise
_TYPE_STREAM = 2
_SUBSAMPLE_STREAM = 3
# Idiosyncratic streams of the reference cloud start here so they never
# coincide with those of the n-agent replications.
REFERENCE_OFFSET = 2**31


@dataclass
class MfCloud:
    """Particle approximation of the conditional law; a one-replication ParticleSystem."""

    system: ParticleSystem

    @classmethod
    def initialise(cls, initial_wealth, model: CoefficientModel, bundle: NoiseBundle, dynamics: Dynamics) -> "MfCloud":
        if bundle.n_replications != 1:
            raise SizeMismatch(f"a particle cloud takes a one-replication bundle, got {bundle.n_replications}")
        return cls(ParticleSystem.initialise(initial_wealth, model, bundle, dynamics))

    @property
    def n_particles(self) -> int:
        return self.system.n_agents

    @property
    def wealth(self) -> np.ndarray:
        """(particle, step) grid."""
        return self.system.wealth[0]

    def law(self, step: int) -> EmpiricalMeasure:
        return EmpiricalMeasure(np.array(self.wealth[:, step]))


def mf_equilibrium(game: UtilityKind) -> StrategyClosure:
    """Mean-field equilibrium strategy with its law argument read off the cloud."""
    return StrategyClosure.equilibrium(game, common_measurable=True, e1=cloud_e1)


@dataclass
class FrozenWeightsStrategy:
    """Best response to an externally given path of mean-field aggregates."""

    game: UtilityKind
    weights_path: Sequence[EquilibriumWeights]

    def evaluate(self, values: CoefficientValues, wealth: np.ndarray, step: int):
        weights = self.weights_path[step]
        return equilibrium_strategy(self.game, values, weights), weights


def simulate_mkv(cloud: MfCloud, strategy, model: CoefficientModel, bundle: NoiseBundle) -> MfCloud:
    """Steps every particle; the strategy sees the whole cloud at each step."""
    simulate(cloud.system, strategy, model, bundle)
    return cloud


# --- Weights, strategies, corrections ---


def mf_weights_cara(cloud: MfCloud, model: CoefficientModel, step: int) -> EquilibriumWeights:
    return cara_weights(cloud.system.coefficients_at(model, step), e1=cloud_e1)


def mf_weights_crra(cloud: MfCloud, model: CoefficientModel, step: int) -> EquilibriumWeights:
    return crra_weights(cloud.system.coefficients_at(model, step), e1=cloud_e1)


def mf_strategy_cara(values: CoefficientValues, weights: EquilibriumWeights):
    return cara_strategy(values, weights)


def mf_strategy_crra(values: CoefficientValues, weights: EquilibriumWeights):
    return crra_strategy(values, weights)


def _mf_corrections(
    game: UtilityKind,
    weights_path: Sequence[EquilibriumWeights],
    values_path: Sequence[CoefficientValues],
    dt: float,
    variant: KVariant,
    quadrature: Quadrature,
) -> CorrectionProcess:
    if len(weights_path) != len(values_path):
        raise SizeMismatch(f"{len(weights_path)} weights for {len(values_path)} coefficient points")
    pairs = [correction_rates(game, v, w, variant) for v, w in zip(values_path, weights_path)]
    shape = np.broadcast_shapes(*(np.shape(k) for k, _ in pairs))
    k_rates = np.stack([np.broadcast_to(k, shape) for k, _ in pairs], axis=-1)
    g_rates = np.stack([np.broadcast_to(g, shape) for _, g in pairs], axis=-1)
    integral = accumulate(k_rates, dt, quadrature)
    K = integral if game is UtilityKind.CARA else np.exp(integral)
    return CorrectionProcess(game, K, accumulate(g_rates, dt, quadrature), variant, quadrature)


def mf_corrections_cara(weights_path, values_path, dt: float, variant=DEFAULT_VARIANT, quadrature=Quadrature.LEFT):
    """K along a weights path; K(0) = 0."""
    return _mf_corrections(UtilityKind.CARA, weights_path, values_path, dt, variant, quadrature)


def mf_corrections_crra(weights_path, values_path, dt: float, variant=DEFAULT_VARIANT, quadrature=Quadrature.LEFT):
    """K = exp(integrated log-K rate), K(0) = 1, and G for the logarithmic branch."""
    return _mf_corrections(UtilityKind.CRRA, weights_path, values_path, dt, variant, quadrature)


def mf_law_consistency(cloud: MfCloud, model: CoefficientModel, game: UtilityKind, weights_path) -> list[dict]:
    """
    Re-estimates phi and psi from the cloud the strategy generated.

    z is the gap over its particle standard error; an exact match with a
    zero standard error gives z = 0.
    """
    rows = []
    for k, given in enumerate(weights_path):
        if given is None:
            continue
        est = equilibrium_weights(game, cloud.system.coefficients_at(model, k), e1=cloud_e1)
        row = {"step": k, "time": float(cloud.system.time_grid[k])}
        for name, se_name in (("phi_sigma", "phi_stderr"), ("psi_sigma", "psi_stderr")):
            gap = getattr(est, name) - getattr(given, name)
            se = getattr(est, se_name)
            row[f"{name}_gap"] = gap
            row[f"{name}_z"] = gap / se if se > 0 else (0.0 if gap == 0 else np.inf)
        rows.append(row)
    return rows


# --- Propagation of chaos ---


@dataclass(frozen=True)
class TypeSampler:
    """
    i.i.d. agent types: uniform(a, b) draws that replace constant blocks of
    a base model, one value per agent.
    """

    base: CoefficientModel
    ranges: dict = field(default_factory=dict)

    def __post_init__(self):
        for name, (lo, hi) in self.ranges.items():
            if name not in PARAMETER_NAMES:
                raise ValueError(f"unknown type parameter '{name}'")
            if lo > hi:
                raise ValueError(f"empty range for {name}: ({lo}, {hi})")
            if self.base.spec(name).kind is not CoefficientKind.CONSTANT:
                raise ValueError(f"type draws only replace constant blocks ({name} is {self.base.spec(name).kind.value})")

    def draw(self, rng: np.random.Generator, count: int) -> CoefficientModel:
        blocks = {
            name: ParameterSpec(CoefficientKind.CONSTANT, value=rng.uniform(lo, hi, size=count))
            for name, (lo, hi) in sorted(self.ranges.items())
        }
        return replace(self.base, **blocks)


@dataclass
class ConvergenceTable:
    rows: list
    phi_slope: float = float("nan")
    phi_slope_stderr: float = float("nan")

    @property
    def n_list(self) -> list[int]:
        return [r["n"] for r in self.rows]


def _type_rng(seed: int, scenario: int, *key) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(scenario, *key)))


def _mean_se(samples: list[float]) -> tuple[float, float]:
    if len(samples) < 2:
        return float(samples[0]), float("nan")
    return conditional_mean(samples)


def convergence_study(
    type_sampler: TypeSampler,
    n_list: Sequence[int],
    replications: int,
    horizon: float,
    steps: int,
    seed: int = 0,
    game: UtilityKind = UtilityKind.CARA,
    initial_wealth: float = 1.0,
    repetitions: int = 1,
    reference_factor: int = 10,
    scenario: int = 0,
    progress: Callable[[int], None] | None = None,
) -> ConvergenceTable:
    """
    Gaps between n-agent and mean-field aggregates as n grows.

    The mean-field reference is a cloud of reference_factor * max(n_list)
    particles sharing the scenario's common noise. For every n and
    repetition the n-agent equilibrium is simulated on fresh types; the
    table reports the max-over-grid gaps of phi and psi, and the
    max-over-grid mean squared W2 between each replication's empirical
    measure and an equal-size subsample of the reference cloud.
    """
    n_list = [int(n) for n in n_list]
    if any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise ValueError("n_list must be strictly increasing")
    dt = horizon / steps
    dynamics = Dynamics.ARITHMETIC if game is UtilityKind.CARA else Dynamics.GEOMETRIC

    n_ref = reference_factor * max(n_list)
    ref_model = type_sampler.draw(_type_rng(seed, scenario, _TYPE_STREAM, 0, 0), n_ref)
    ref_bundle = generate_noise(seed, scenario, 1, n_ref, steps, dt, replication_offset=REFERENCE_OFFSET)
    ref = simulate_mkv(MfCloud.initialise(initial_wealth, ref_model, ref_bundle, dynamics), mf_equilibrium(game), ref_model, ref_bundle)
    ref_weights = ref.system.weights_path
    logger.info("Reference cloud: %d particles, psi(0) = %.6g", n_ref, ref_weights[0].psi_sigma)

    rows = []
    for n in n_list:
        phi_gaps, psi_gaps, w2s = [], [], []
        for rep in range(repetitions):
            model = type_sampler.draw(_type_rng(seed, scenario, _TYPE_STREAM, n, rep + 1), n)
            bundle = generate_noise(seed, scenario, replications, n, steps, dt, replication_offset=rep * replications)
            system = ParticleSystem.initialise(initial_wealth, model, bundle, dynamics)
            strategy = StrategyClosure.equilibrium(game, common_measurable=model.is_common_measurable)
            simulate(system, strategy, model, bundle)

            weights = system.weights_path
            phi_gaps.append(max(abs(w.phi_sigma - m.phi_sigma) for w, m in zip(weights, ref_weights)))
            psi_gaps.append(max(abs(w.psi_sigma - m.psi_sigma) for w, m in zip(weights, ref_weights)))

            rng = _type_rng(seed, scenario, _SUBSAMPLE_STREAM, n, rep)
            per_step = []
            for k in range(steps + 1):
                sub = subsample(ref.law(k), n, rng)
                per_step.append(np.mean([wasserstein2(EmpiricalMeasure(system.wealth[r, :, k]), sub) ** 2 for r in range(replications)]))
            w2s.append(float(np.max(per_step)))

        phi, phi_se = _mean_se(phi_gaps)
        psi, psi_se = _mean_se(psi_gaps)
        w2, w2_se = _mean_se(w2s)
        rows.append(
            {
                "n": n,
                "phi_gap": phi,
                "phi_gap_stderr": phi_se,
                "psi_gap": psi,
                "psi_gap_stderr": psi_se,
                "w2_sq": w2,
                "w2_sq_stderr": w2_se,
            }
        )
        logger.info("n = %d: |phi gap| = %.3g, |psi gap| = %.3g, W2^2 = %.3g", n, phi, psi, w2)
        if progress is not None:
            progress(n)

    table = ConvergenceTable(rows)
    gaps = np.array([r["phi_gap"] for r in rows])
    if len(rows) >= 3 and np.all(gaps > 0):
        fit = stats.linregress(np.log(n_list), np.log(gaps))
        table.phi_slope, table.phi_slope_stderr = float(fit.slope), float(fit.stderr)
    elif len(rows) >= 2:
        logger.warning("phi gap slope not estimated (zero gaps or fewer than three sizes)")
    return table


def mf_martingale_test(
    game: UtilityKind,
    model: CoefficientModel,
    initial_wealth,
    bundle: NoiseBundle,
    variant: KVariant,
    quadrature: Quadrature = Quadrature.LEFT,
) -> MartingaleRun:
    """The verify martingale test on a cloud driven by the mean-field equilibrium."""
    setup = GameSetup(game, model, np.asarray(initial_wealth, dtype=float), quadrature)
    return martingale_test(setup, bundle, variant, strategy=mf_equilibrium(game))
