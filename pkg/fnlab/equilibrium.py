"""
Closed-form equilibria of the n-agent CARA and CRRA games.

Weights are conditional expectations given the common noise, estimated on
the replication axis of the particle system that the strategies drive.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from enum import Enum
from typing import Callable

import numpy as np

from .coeffs import CoefficientModel, CoefficientValues
from .errors import InsufficientReplications, NoConvergence, SingularEquilibrium
from .measure_calc import UtilityKind
from .particles import ParticleSystem, conditional_mean

logger = logging.getLogger(__name__)

# --- Constants ---
SINGULARITY_EPS = 1e-6
FIXED_POINT_TOL = 1e-14
FIXED_POINT_MAX_ITER = 10_000


class KVariant(str, Enum):
    """
    Form of the correction ODE.

    half:   1/2 on the E1[(pi^2 Sigma)bar] term (CRRA); printed cross term (CARA)
    full:   1 on the E1[(pi^2 Sigma)bar] term (CRRA); printed cross term (CARA)
    square: exact completion of the square in pi for both families

    Only square makes the equilibrium value process a martingale when
    theta > 0; it is the default everywhere.
    """

    HALF = "half"
    FULL = "full"
    SQUARE = "square"


DEFAULT_VARIANT = KVariant.SQUARE


class Quadrature(str, Enum):
    LEFT = "left"
    TRAPEZOID = "trapezoid"


class StrategyKind(str, Enum):
    CARA_EQUILIBRIUM = "cara_equilibrium"
    CRRA_EQUILIBRIUM = "crra_equilibrium"
    CONSTANT_OVERRIDE = "constant"
    PERTURBED_EQUILIBRIUM = "perturbed"


@dataclass(frozen=True)
class EquilibriumWeights:
    phi_sigma: float
    psi_sigma: float
    e1_pi_sigma: float
    e1_pi_mu: float
    e1_pi2_Sigma: float | None = None
    phi_stderr: float = 0.0
    psi_stderr: float = 0.0


# --- Conditional expectations ---

E1 = Callable[[np.ndarray], tuple]


def _grid(a) -> np.ndarray:
    """(replication, agent) view of a coefficient array."""
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    return a


def _agent_mean(a: np.ndarray) -> np.ndarray:
    first = a[:, :1]
    return np.where(np.all(a == first, axis=1), first[:, 0], a.mean(axis=1))


def replication_e1(common_measurable: bool = False) -> E1:
    """E1 of an agent average: mean over agents, then over replications."""

    def e1(a):
        per_rep = _agent_mean(_grid(a))
        if per_rep.size == 1:
            if not common_measurable:
                raise InsufficientReplications("one replication is enough only for common-noise measurable coefficients")
            return float(per_rep[0]), 0.0
        return conditional_mean(per_rep)

    return e1


def cloud_e1(a) -> tuple:
    """E1 over a particle cloud: every particle is one sample of the conditional law."""
    flat = np.ravel(np.asarray(a, dtype=float))
    if flat.size == 1:
        return float(flat[0]), 0.0
    return conditional_mean(flat)


def _weights(values: CoefficientValues, game: UtilityKind, e1: E1) -> EquilibriumWeights:
    mu, sigma, Sigma, delta, theta = values.mu, values.sigma, values.Sigma, values.delta, values.theta
    tilt = theta if game is UtilityKind.CARA else (1.0 - delta) * theta
    phi, phi_se = e1(mu * delta * sigma / Sigma)
    psi, psi_se = e1(tilt * sigma**2 / Sigma)
    if psi >= 1.0 - SINGULARITY_EPS:
        raise SingularEquilibrium(f"psi = {psi:.12g} is within {SINGULARITY_EPS:g} of 1", psi=psi)
    e1_pi_sigma = phi / (1.0 - psi)
    merton, _ = e1(mu**2 * delta / Sigma)
    cross, _ = e1(tilt * mu * sigma / Sigma)
    e1_pi2_Sigma = None
    if game is UtilityKind.CRRA:
        e1_pi2_Sigma, _ = e1((mu * delta + tilt * sigma * e1_pi_sigma) ** 2 / Sigma)
    return EquilibriumWeights(
        phi_sigma=phi,
        psi_sigma=psi,
        e1_pi_sigma=e1_pi_sigma,
        e1_pi_mu=merton + cross * e1_pi_sigma,
        e1_pi2_Sigma=e1_pi2_Sigma,
        phi_stderr=phi_se,
        psi_stderr=psi_se,
    )


def cara_weights(values: CoefficientValues, common_measurable: bool = False, e1: E1 | None = None) -> EquilibriumWeights:
    """phi, psi and the conditional moments of the CARA equilibrium at one time point."""
    return _weights(values, UtilityKind.CARA, e1 or replication_e1(common_measurable))


def crra_weights(values: CoefficientValues, common_measurable: bool = False, e1: E1 | None = None) -> EquilibriumWeights:
    """As cara_weights with the (1 - delta) tilt and E1[(pi^2 Sigma)bar]."""
    return _weights(values, UtilityKind.CRRA, e1 or replication_e1(common_measurable))


def equilibrium_weights(game: UtilityKind, values: CoefficientValues, common_measurable: bool = False, e1: E1 | None = None):
    if game is UtilityKind.CARA:
        return cara_weights(values, common_measurable, e1)
    return crra_weights(values, common_measurable, e1)


# --- Strategies ---


def cara_best_response(values: CoefficientValues, others_e1_pi_sigma):
    return (values.mu * values.delta + values.theta * values.sigma * others_e1_pi_sigma) / values.Sigma


def cara_strategy(values: CoefficientValues, weights: EquilibriumWeights):
    return cara_best_response(values, weights.e1_pi_sigma)


def crra_best_response(values: CoefficientValues, others_e1_pi_sigma):
    return (values.mu * values.delta + (1.0 - values.delta) * values.theta * values.sigma * others_e1_pi_sigma) / values.Sigma


def crra_strategy(values: CoefficientValues, weights: EquilibriumWeights):
    return crra_best_response(values, weights.e1_pi_sigma)


def best_response(game: UtilityKind, values: CoefficientValues, aggregate):
    if game is UtilityKind.CARA:
        return cara_best_response(values, aggregate)
    return crra_best_response(values, aggregate)


def equilibrium_strategy(game: UtilityKind, values: CoefficientValues, weights: EquilibriumWeights):
    return best_response(game, values, weights.e1_pi_sigma)


def aggregate_map(game: UtilityKind, values: CoefficientValues, e1: E1 | None = None) -> Callable[[float], float]:
    """a -> E1[(sigma * best_response(a))bar], whose fixed point is E1[(pi sigma)bar]."""
    e1 = e1 or replication_e1(common_measurable=True)
    return lambda a: e1(values.sigma * best_response(game, values, a))[0]


def fixed_point_solve(
    best_response_map: Callable[[float], float],
    initial: float = 0.0,
    tol: float = FIXED_POINT_TOL,
    max_iter: int = FIXED_POINT_MAX_ITER,
    damping: float = 1.0,
) -> float:
    """
    Iterates a <- (1 - damping) a + damping * map(a) until |delta a| <= tol.

    Raises:
        NoConvergence: after max_iter iterations or on a non-finite iterate.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    a = float(initial)
    for it in range(1, max_iter + 1):
        nxt = (1.0 - damping) * a + damping * float(best_response_map(a))
        if not np.isfinite(nxt):
            raise NoConvergence(f"fixed-point iterate diverged after {it} iterations")
        if abs(nxt - a) <= tol:
            logger.debug("Fixed point %.15g after %d iterations", nxt, it)
            return nxt
        a = nxt
    raise NoConvergence(f"no fixed point within {max_iter} iterations (last iterate {a:.6g})")


# --- Correction processes ---


def cara_K_rate(values: CoefficientValues, weights: EquilibriumWeights, variant: KVariant = DEFAULT_VARIANT):
    r = values.theta / values.delta
    e = weights.e1_pi_sigma
    cross = 1.0 if variant is KVariant.SQUARE else 0.5
    return -(
        r * weights.e1_pi_mu
        + 0.5 * r**2 * (values.nu**2 / values.Sigma) * e**2
        - cross * r * (values.mu * values.sigma / values.Sigma) * e
        - values.mu**2 / (2.0 * values.Sigma)
    )


def cara_K_increment(values: CoefficientValues, weights: EquilibriumWeights, dt: float, variant: KVariant = DEFAULT_VARIANT):
    """K increment over one step (left endpoint); K(0) = 0."""
    return cara_K_rate(values, weights, variant) * dt


def _pi2_coefficient(variant: KVariant) -> float:
    return 1.0 if variant is KVariant.FULL else 0.5


def crra_log_K_rate(values: CoefficientValues, weights: EquilibriumWeights, variant: KVariant = DEFAULT_VARIANT):
    """Rate of log K; zero where delta = 1."""
    delta, theta = values.delta, values.theta
    p = 1.0 - 1.0 / delta
    e = weights.e1_pi_sigma
    tilt = 1.0 if variant is not KVariant.SQUARE else 0.5
    a = values.mu * delta + (1.0 - delta) * theta * values.sigma * e
    inner = (
        -theta * (weights.e1_pi_mu - _pi2_coefficient(variant) * weights.e1_pi2_Sigma)
        + tilt * p * theta**2 * e**2
        + a**2 / (2.0 * delta * values.Sigma)
    )
    return -p * inner


def crra_K_increment(values: CoefficientValues, weights: EquilibriumWeights, dt: float, variant: KVariant = DEFAULT_VARIANT):
    """Increment of log K over one step; K = exp(accumulated), K(0) = 1."""
    return crra_log_K_rate(values, weights, variant) * dt


def crra_G_rate(values: CoefficientValues, weights: EquilibriumWeights, variant: KVariant = DEFAULT_VARIANT):
    """Rate of G for the logarithmic branch; zero where delta != 1."""
    rate = -(
        -values.theta * (weights.e1_pi_mu - _pi2_coefficient(variant) * weights.e1_pi2_Sigma)
        + values.mu**2 / (2.0 * values.Sigma)
    )
    return np.where(values.delta == 1.0, rate, 0.0)


def crra_G_increment(values: CoefficientValues, weights: EquilibriumWeights, dt: float, variant: KVariant = DEFAULT_VARIANT):
    return crra_G_rate(values, weights, variant) * dt


@dataclass(frozen=True)
class CorrectionProcess:
    """K and G on the (replication, agent, step) grid of the run they belong to."""

    kind: UtilityKind
    K: np.ndarray
    G: np.ndarray
    variant: KVariant
    quadrature: Quadrature = Quadrature.LEFT


def accumulate(rates: np.ndarray, dt: float, quadrature: Quadrature) -> np.ndarray:
    """Running integral over the last axis; starts at 0."""
    if quadrature is Quadrature.TRAPEZOID:
        pieces = 0.5 * (rates[..., :-1] + rates[..., 1:]) * dt
    else:
        pieces = rates[..., :-1] * dt
    out = np.zeros(rates.shape)
    out[..., 1:] = np.cumsum(pieces, axis=-1)
    return out


def correction_rates(game: UtilityKind, values: CoefficientValues, weights: EquilibriumWeights, variant: KVariant):
    """(K-rate, G-rate) pair; for CRRA the K-rate is the rate of log K."""
    if game is UtilityKind.CARA:
        return cara_K_rate(values, weights, variant), np.zeros(np.shape(values.mu))
    return crra_log_K_rate(values, weights, variant), crra_G_rate(values, weights, variant)


def build_corrections(
    system: ParticleSystem,
    model: CoefficientModel,
    game: UtilityKind,
    variant: KVariant = DEFAULT_VARIANT,
    quadrature: Quadrature = Quadrature.LEFT,
) -> CorrectionProcess:
    """Integrates K (and G) along a simulated system from the weights it recorded."""
    shape = system.wealth.shape
    k_rates = np.empty(shape)
    g_rates = np.empty(shape)
    for k in range(system.steps + 1):
        weights = system.weights_path[k]
        if weights is None:
            raise ValueError(f"no equilibrium weights recorded at step {k}")
        values = system.coefficients_at(model, k)
        kr, gr = correction_rates(game, values, weights, variant)
        k_rates[:, :, k] = np.broadcast_to(kr, shape[:2])
        g_rates[:, :, k] = np.broadcast_to(gr, shape[:2])
    dt = float(system.time_grid[1] - system.time_grid[0]) if system.steps else 0.0
    integral = accumulate(k_rates, dt, quadrature)
    K = integral if game is UtilityKind.CARA else np.exp(integral)
    return CorrectionProcess(game, K, accumulate(g_rates, dt, quadrature), variant, quadrature)


# --- Strategy closures ---


@dataclass
class StrategyClosure:
    """
    Strategy evaluated at each step from the current coefficient grid.

    Equilibrium weights are computed for every kind (the corrections need
    them); `deviators` masks the agents that add the offset, None for all.
    """

    kind: StrategyKind
    game: UtilityKind
    value: float = 0.0
    offset: float = 0.0
    deviators: np.ndarray | None = None
    common_measurable: bool = False
    e1: E1 | None = None

    @classmethod
    def equilibrium(cls, game: UtilityKind, **kwargs) -> "StrategyClosure":
        kind = StrategyKind.CARA_EQUILIBRIUM if game is UtilityKind.CARA else StrategyKind.CRRA_EQUILIBRIUM
        return cls(kind, game, **kwargs)

    @classmethod
    def constant(cls, game: UtilityKind, value: float, **kwargs) -> "StrategyClosure":
        return cls(StrategyKind.CONSTANT_OVERRIDE, game, value=value, **kwargs)

    @classmethod
    def perturbed(cls, game: UtilityKind, offset: float, deviators=None, **kwargs) -> "StrategyClosure":
        mask = None if deviators is None else np.asarray(deviators, dtype=bool)
        return cls(StrategyKind.PERTURBED_EQUILIBRIUM, game, offset=offset, deviators=mask, **kwargs)

    def weights(self, values: CoefficientValues) -> EquilibriumWeights:
        return equilibrium_weights(self.game, values, self.common_measurable, self.e1)

    def evaluate(self, values: CoefficientValues, wealth: np.ndarray, step: int):
        if self.kind is StrategyKind.CONSTANT_OVERRIDE:
            try:
                weights = self.weights(values)
            except SingularEquilibrium:
                weights = None
            return np.full(np.shape(wealth), float(self.value)), weights

        weights = self.weights(values)
        pi = equilibrium_strategy(self.game, values, weights)
        if self.kind is StrategyKind.PERTURBED_EQUILIBRIUM:
            bump = self.offset if self.deviators is None else self.offset * self.deviators
            pi = pi + bump
        return pi, weights


def weights_rows(system: ParticleSystem, scenario: int, model: CoefficientModel | None = None, game: UtilityKind | None = None) -> list[dict]:
    """Weights path as table rows; adds per-agent mean pi_star when model and game are given."""
    rows = []
    for k, w in enumerate(system.weights_path):
        if w is None:
            continue
        row = {
            "scenario": scenario,
            "step": k,
            "time": float(system.time_grid[k]),
            "phi_sigma": w.phi_sigma,
            "psi_sigma": w.psi_sigma,
            "e1_pi_sigma": w.e1_pi_sigma,
            "e1_pi_mu": w.e1_pi_mu,
            "e1_pi2_Sigma": np.nan if w.e1_pi2_Sigma is None else w.e1_pi2_Sigma,
        }
        if model is not None and game is not None:
            star = np.broadcast_to(equilibrium_strategy(game, system.coefficients_at(model, k), w), system.wealth.shape[:2])
            for i, value in enumerate(star.mean(axis=0)):
                row[f"pi_star_{i}"] = float(value)
        rows.append(row)
    return rows
