"""
Particle simulation of the n-agent wealth system under common and
idiosyncratic noise, plus the empirical-measure utilities built on it.

Grids are indexed (replication, agent, step). Every replication of a
scenario shares the same common-noise path; replications differ only in
their idiosyncratic increments, so averaging over the replication axis
estimates conditional expectations given the common noise.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import Any, Protocol

import numpy as np

from .coeffs import CoefficientModel, CoefficientValues, factor_path, sample
from .errors import DomainError, InsufficientReplications, NumericalBlowup, SizeMismatch

logger = logging.getLogger(__name__)

# --- Guard bounds ---
ARITHMETIC_GUARD = 1e12
GEOMETRIC_LOG_GUARD = 50.0

# spawn_key layout: (scenario, stream, replication)
_COMMON_STREAM = 0
_IDIO_STREAM = 1


class Dynamics(str, Enum):
    ARITHMETIC = "arithmetic"
    GEOMETRIC = "geometric"


class AverageKind(str, Enum):
    ARITHMETIC = "arithmetic"
    GEOMETRIC = "geometric"


class Strategy(Protocol):
    """Anything that maps current coefficients and wealth to a strategy grid."""

    def evaluate(self, values: CoefficientValues, wealth: np.ndarray, step: int) -> tuple[np.ndarray, Any]:
        ...


@dataclass(frozen=True)
class SeedLineage:
    master_seed: int
    scenario: int
    replication_offset: int
    n_replications: int


@dataclass(frozen=True)
class NoiseBundle:
    dt: float
    steps: int
    common_increments: np.ndarray
    idio_increments: np.ndarray
    seed_lineage: SeedLineage

    @property
    def n_replications(self) -> int:
        return self.idio_increments.shape[0]

    @property
    def n_agents(self) -> int:
        return self.idio_increments.shape[1]

    def coarsen(self, factor: int) -> "NoiseBundle":
        """Same Brownian paths observed on a grid `factor` times coarser."""
        if factor == 1:
            return self
        if self.steps % factor:
            raise ValueError(f"steps={self.steps} is not divisible by {factor}")
        coarse = self.steps // factor
        r, n, _ = self.idio_increments.shape
        return NoiseBundle(
            dt=self.dt * factor,
            steps=coarse,
            common_increments=self.common_increments.reshape(coarse, factor).sum(axis=1),
            idio_increments=self.idio_increments.reshape(r, n, coarse, factor).sum(axis=3),
            seed_lineage=self.seed_lineage,
        )


def generate_noise(
    master_seed: int,
    scenario: int,
    n_replications: int,
    n_agents: int,
    steps: int,
    dt: float,
    replication_offset: int = 0,
) -> NoiseBundle:
    """
    Draws the Gaussian increments of one scenario.

    The common stream depends only on (master_seed, scenario); each
    replication owns an independent stream keyed by its absolute index, so
    adding replications never changes the earlier ones.
    """
    if steps < 1 or dt <= 0:
        raise ValueError("generate_noise needs steps >= 1 and dt > 0")
    scale = np.sqrt(dt)
    common_rng = np.random.default_rng(np.random.SeedSequence(master_seed, spawn_key=(scenario, _COMMON_STREAM)))
    common = common_rng.standard_normal(steps) * scale

    idio = np.empty((n_replications, n_agents, steps))
    for r in range(n_replications):
        seq = np.random.SeedSequence(master_seed, spawn_key=(scenario, _IDIO_STREAM, replication_offset + r))
        idio[r] = np.random.default_rng(seq).standard_normal((n_agents, steps)) * scale

    lineage = SeedLineage(master_seed, scenario, replication_offset, n_replications)
    return NoiseBundle(dt=dt, steps=steps, common_increments=common, idio_increments=idio, seed_lineage=lineage)


@dataclass
class ParticleSystem:
    wealth: np.ndarray
    factor_path: np.ndarray
    dynamics: Dynamics
    time_grid: np.ndarray
    strategy_path: np.ndarray
    common_increments: np.ndarray
    weights_path: list = field(default_factory=list)

    @property
    def n_replications(self) -> int:
        return self.wealth.shape[0]

    @property
    def n_agents(self) -> int:
        return self.wealth.shape[1]

    @property
    def steps(self) -> int:
        return self.wealth.shape[2] - 1

    @classmethod
    def initialise(
        cls,
        initial_wealth,
        model: CoefficientModel,
        bundle: NoiseBundle,
        dynamics: Dynamics = Dynamics.ARITHMETIC,
    ) -> "ParticleSystem":
        r, n = bundle.n_replications, bundle.n_agents
        x0 = np.broadcast_to(np.asarray(initial_wealth, dtype=float), (n,))
        if dynamics is Dynamics.GEOMETRIC and np.any(x0 <= 0):
            raise DomainError("geometric dynamics need strictly positive initial wealth")
        wealth = np.empty((r, n, bundle.steps + 1))
        wealth[:, :, 0] = x0
        return cls(
            wealth=wealth,
            factor_path=factor_path(model, bundle.common_increments, bundle.dt),
            dynamics=dynamics,
            time_grid=np.arange(bundle.steps + 1) * bundle.dt,
            strategy_path=np.zeros((r, n, bundle.steps)),
            common_increments=np.array(bundle.common_increments),
            weights_path=[None] * (bundle.steps + 1),
        )

    def coefficients_at(self, model: CoefficientModel, step: int) -> CoefficientValues:
        return sample(model, self.wealth[:, :, step], self.factor_path[step], self.time_grid[step])


def _evaluate(system, strategy, model, step):
    x = system.wealth[:, :, step]
    values = system.coefficients_at(model, step)
    pi, weights = strategy.evaluate(values, x, step)
    system.weights_path[step] = weights
    return x, values, np.broadcast_to(pi, x.shape)


def step_arithmetic(system: ParticleSystem, strategy: Strategy, model: CoefficientModel, bundle: NoiseBundle, step: int):
    """Euler-Maruyama step of dX = pi (mu dt + nu dW + sigma dW0)."""
    if step >= bundle.steps:
        raise IndexError(f"step {step} beyond the {bundle.steps}-step grid")
    x, v, pi = _evaluate(system, strategy, model, step)
    dw = bundle.idio_increments[:, :, step]
    dw0 = bundle.common_increments[step]
    new = x + pi * (v.mu * bundle.dt + v.nu * dw + v.sigma * dw0)
    if not np.all(np.abs(new) <= ARITHMETIC_GUARD):
        raise NumericalBlowup(f"|X| exceeded {ARITHMETIC_GUARD:g} at step {step + 1}", step=step + 1)
    system.strategy_path[:, :, step] = pi
    system.wealth[:, :, step + 1] = new
    return system


def step_geometric(system: ParticleSystem, strategy: Strategy, model: CoefficientModel, bundle: NoiseBundle, step: int):
    """Exact lognormal step of dX = pi X (mu dt + nu dW + sigma dW0) for pi frozen over the step."""
    if step >= bundle.steps:
        raise IndexError(f"step {step} beyond the {bundle.steps}-step grid")
    if system.dynamics is not Dynamics.GEOMETRIC:
        raise ValueError("step_geometric called on an arithmetic system")
    x, v, pi = _evaluate(system, strategy, model, step)
    dw = bundle.idio_increments[:, :, step]
    dw0 = bundle.common_increments[step]
    log_new = np.log(x) + pi * v.mu * bundle.dt - 0.5 * pi**2 * v.Sigma * bundle.dt + pi * (v.nu * dw + v.sigma * dw0)
    if not np.all(np.abs(log_new) <= GEOMETRIC_LOG_GUARD):
        raise NumericalBlowup(f"|log X| exceeded {GEOMETRIC_LOG_GUARD:g} at step {step + 1}", step=step + 1)
    system.strategy_path[:, :, step] = pi
    system.wealth[:, :, step + 1] = np.exp(log_new)
    return system


def simulate(system: ParticleSystem, strategy: Strategy, model: CoefficientModel, bundle: NoiseBundle) -> ParticleSystem:
    """Runs every step, then records the strategy's weights at the terminal point."""
    stepper = step_geometric if system.dynamics is Dynamics.GEOMETRIC else step_arithmetic
    for k in range(bundle.steps):
        stepper(system, strategy, model, bundle, k)
    _evaluate(system, strategy, model, bundle.steps)
    logger.debug(
        "Simulated scenario %d: %d replications x %d agents x %d steps",
        bundle.seed_lineage.scenario,
        system.n_replications,
        system.n_agents,
        bundle.steps,
    )
    return system


# --- Empirical measures ---


@dataclass(frozen=True)
class EmpiricalMeasure:
    atoms: np.ndarray

    def __post_init__(self):
        if np.asarray(self.atoms).size < 1:
            raise ValueError("an empirical measure needs at least one atom")

    @property
    def weights(self) -> np.ndarray:
        return np.full(len(self.atoms), 1.0 / len(self.atoms))

    def __len__(self) -> int:
        return len(self.atoms)


def empirical_measure(system: ParticleSystem, replication: int, step: int) -> EmpiricalMeasure:
    return EmpiricalMeasure(np.array(system.wealth[replication, :, step]))


def arithmetic_average(measure: EmpiricalMeasure) -> float:
    return float(np.mean(measure.atoms))


def geometric_average(measure: EmpiricalMeasure) -> float:
    atoms = np.asarray(measure.atoms, dtype=float)
    if np.any(atoms <= 0):
        raise DomainError("geometric average needs strictly positive atoms")
    return float(np.exp(np.mean(np.log(atoms))))


def average_paths(wealth: np.ndarray, kind: AverageKind) -> np.ndarray:
    """Per-replication average over the agent axis of a (replication, agent, ...) grid."""
    if kind is AverageKind.ARITHMETIC:
        return wealth.mean(axis=1)
    if np.any(wealth <= 0):
        raise DomainError("geometric average needs strictly positive wealth")
    return np.exp(np.log(wealth).mean(axis=1))


def conditional_mean(values, axis: int = 0) -> tuple:
    """
    Sample mean and standard error along the replication axis.

    Slices that are identical along the axis return their common value with
    a zero standard error, without rounding from the summation.
    """
    values = np.asarray(values, dtype=float)
    count = values.shape[axis]
    if count < 2:
        raise InsufficientReplications(f"conditional mean needs at least 2 samples, got {count}")
    first = np.take(values, 0, axis=axis)
    same = np.all(values == np.expand_dims(first, axis), axis=axis)
    mean = values.mean(axis=axis)
    stderr = values.std(axis=axis, ddof=1) / np.sqrt(count)
    estimate = np.where(same, first, mean)
    stderr = np.where(same, 0.0, stderr)
    if estimate.ndim == 0:
        return float(estimate), float(stderr)
    return estimate, stderr


def wasserstein2(a: EmpiricalMeasure, b: EmpiricalMeasure) -> float:
    """W2 between equal-size uniform measures through the sorted coupling."""
    if len(a) != len(b):
        raise SizeMismatch(f"atom counts differ: {len(a)} vs {len(b)}")
    diff = np.sort(a.atoms) - np.sort(b.atoms)
    return float(np.sqrt(np.mean(diff**2)))


def subsample(measure: EmpiricalMeasure, count: int, rng: np.random.Generator) -> EmpiricalMeasure:
    """Uniform subsample without replacement (identity when sizes already match)."""
    if count >= len(measure):
        return measure
    idx = rng.choice(len(measure), size=count, replace=False)
    return EmpiricalMeasure(np.asarray(measure.atoms)[idx])


# --- Average-wealth SDE ---


def average_sde_path(system: ParticleSystem, model: CoefficientModel, bundle: NoiseBundle, kind: AverageKind) -> np.ndarray:
    """
    Euler integration of the SDE solved by the average wealth Y.

    Arithmetic: dY = (pi mu)bar dt + mean(pi nu dW) + (pi sigma)bar dW0.
    Geometric:  dY/Y = eta dt + mean(pi nu dW) + (pi sigma)bar dW0 with
    eta = (pi mu)bar + ((pi sigma)bar^2 + mean((pi nu)^2)/n - mean(pi^2 Sigma)) / 2.
    """
    n = system.n_agents
    y = np.empty((system.n_replications, bundle.steps + 1))
    y[:, 0] = average_paths(system.wealth[:, :, :1], kind)[:, 0]
    for k in range(bundle.steps):
        v = system.coefficients_at(model, k)
        pi = system.strategy_path[:, :, k]
        dw = bundle.idio_increments[:, :, k]
        dw0 = bundle.common_increments[k]
        pi_mu = (pi * v.mu).mean(axis=1)
        pi_sigma = (pi * v.sigma).mean(axis=1)
        idio = (pi * v.nu * dw).mean(axis=1)
        if kind is AverageKind.ARITHMETIC:
            y[:, k + 1] = y[:, k] + pi_mu * bundle.dt + idio + pi_sigma * dw0
        else:
            eta = pi_mu + 0.5 * (pi_sigma**2 + ((pi * v.nu) ** 2).mean(axis=1) / n - (pi**2 * v.Sigma).mean(axis=1))
            y[:, k + 1] = y[:, k] * (1.0 + eta * bundle.dt + idio + pi_sigma * dw0)
    return y


@dataclass(frozen=True)
class ConsistencyLevel:
    dt: float
    discrepancy: float
    stderr: float
    order: float | None
    scenarios: int = 1


def _squared_max_gaps(model, strategy, initial_wealth, bundle: NoiseBundle, levels: int, dynamics: Dynamics) -> list[float]:
    """Replication mean of the squared maximal gap on each level of one scenario."""
    kind = AverageKind.GEOMETRIC if dynamics is Dynamics.GEOMETRIC else AverageKind.ARITHMETIC
    gaps = []
    for level in range(levels):
        coarse = bundle.coarsen(2**level)
        system = simulate(ParticleSystem.initialise(initial_wealth, model, coarse, dynamics), strategy, model, coarse)
        direct = average_paths(system.wealth, kind)
        euler = average_sde_path(system, model, coarse, kind)
        gaps.append(float(np.mean(np.max(np.abs(euler - direct), axis=1) ** 2)))
    return gaps


def average_consistency_study(
    model: CoefficientModel,
    strategy: Strategy,
    initial_wealth,
    bundles,
    levels: int = 3,
    dynamics: Dynamics = Dynamics.GEOMETRIC,
    map_fn=map,
) -> list[ConsistencyLevel]:
    """
    Compares the direct average with the Euler path of its SDE on nested grids.

    `bundles` holds one NoiseBundle per common-noise scenario (a single
    bundle is accepted). The finest grid is each bundle's own; every further
    level doubles dt on the same Brownian paths. The discrepancy is the mean
    squared maximal path gap over replications and scenarios; the common
    noise is shared by a scenario's replications, so only the scenario
    average settles the order. `order` is log2 of the ratio to the next
    finer level.
    """
    if isinstance(bundles, NoiseBundle):
        bundles = [bundles]
    bundles = list(bundles)
    per_scenario = np.array(
        list(map_fn(lambda b: _squared_max_gaps(model, strategy, initial_wealth, b, levels, dynamics), bundles))
    )
    count = len(bundles)
    means = per_scenario.mean(axis=0)
    stderrs = per_scenario.std(axis=0, ddof=1) / np.sqrt(count) if count > 1 else np.full(levels, np.nan)

    out = []
    finer = None
    for level in range(levels):
        gap = float(means[level])
        order = None if finer is None or finer <= 0 or gap <= 0 else float(np.log2(gap / finer))
        out.append(ConsistencyLevel(bundles[0].dt * 2**level, gap, float(stderrs[level]), order, count))
        finer = gap
    logger.info("Average consistency over %d scenarios: orders %s", count, [lvl.order for lvl in out[1:]])
    return out
