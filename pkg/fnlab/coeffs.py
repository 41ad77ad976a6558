"""
Random coefficient models for the market (mu, nu, sigma) and the
preferences (delta, theta) of every agent.

A CoefficientModel holds one ParameterSpec per coefficient. Values may be
scalars or per-agent arrays (agent classes, sampled types); every evaluation
broadcasts against the wealth grid it is given.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

# --- Constants ---
DELTA_FLOOR = 1e-6
PARAMETER_NAMES = ("mu", "nu", "sigma", "delta", "theta")


class CoefficientKind(str, Enum):
    CONSTANT = "constant"
    DETERMINISTIC_TIME = "deterministic_time"
    COMMON_FACTOR = "common_factor"
    STATE_DEPENDENT = "state_dependent"


# Generality order, used to report the kind of a whole model.
_KIND_RANK = {
    CoefficientKind.CONSTANT: 0,
    CoefficientKind.DETERMINISTIC_TIME: 1,
    CoefficientKind.COMMON_FACTOR: 2,
    CoefficientKind.STATE_DEPENDENT: 3,
}


class Link(str, Enum):
    EXP = "exp"
    AFFINE = "affine"
    TANH = "tanh"


class ValueRange(NamedTuple):
    """Bounds a parameter block can emit; lo_open means lo is never attained."""

    lo: np.ndarray
    hi: np.ndarray
    lo_open: np.ndarray


@dataclass(frozen=True)
class ParameterSpec:
    """
    One coefficient block.

    constant:           value
    deterministic_time: intercept + slope * t
    common_factor:      link(value, slope, z), clipped to [clamp_lo, clamp_hi]
    state_dependent:    link(value, slope, x), clipped to [clamp_lo, clamp_hi]

    Links: exp -> value * exp(slope * arg), affine -> value + slope * arg,
    tanh -> value + slope * tanh(arg). For the factor and state kinds the
    slope defaults to 1.
    """

    kind: CoefficientKind = CoefficientKind.CONSTANT
    value: float | np.ndarray = 0.0
    intercept: float = 0.0
    slope: float | None = None
    link: Link = Link.AFFINE
    clamp_lo: float = -np.inf
    clamp_hi: float = np.inf

    @property
    def effective_slope(self) -> float:
        if self.slope is not None:
            return float(self.slope)
        if self.kind in (CoefficientKind.COMMON_FACTOR, CoefficientKind.STATE_DEPENDENT):
            return 1.0
        return 0.0

    def _link(self, arg):
        slope = self.effective_slope
        if self.link is Link.EXP:
            out = self.value * np.exp(slope * arg)
        elif self.link is Link.TANH:
            out = self.value + slope * np.tanh(arg)
        else:
            out = self.value + slope * arg
        return np.clip(out, self.clamp_lo, self.clamp_hi)

    def evaluate(self, x, z, t):
        if self.kind is CoefficientKind.CONSTANT:
            return np.broadcast_to(np.asarray(self.value, dtype=float), np.broadcast(x, self.value).shape)
        if self.kind is CoefficientKind.DETERMINISTIC_TIME:
            out = self.intercept + self.effective_slope * np.asarray(t, dtype=float)
            return np.broadcast_to(out, np.broadcast(x, out).shape)
        if self.kind is CoefficientKind.COMMON_FACTOR:
            out = self._link(np.asarray(z, dtype=float))
            return np.broadcast_to(out, np.broadcast(x, out).shape)
        return self._link(np.asarray(x, dtype=float))

    def value_range(self, horizon: float | None) -> ValueRange:
        """Elementwise range of the block on its declared domain."""
        slope = self.effective_slope
        base = np.asarray(self.value, dtype=float)
        lo_open = np.zeros_like(base, dtype=bool)

        if self.kind is CoefficientKind.CONSTANT:
            lo, hi = base.copy(), base.copy()
        elif self.kind is CoefficientKind.DETERMINISTIC_TIME:
            a = np.asarray(self.intercept, dtype=float)
            end = a + slope * (np.inf if horizon is None else horizon) if slope != 0 else a
            lo, hi = np.minimum(a, end), np.maximum(a, end)
            lo_open = np.zeros_like(lo, dtype=bool)
        elif slope == 0:
            lo, hi = base.copy(), base.copy()
        elif self.link is Link.EXP:
            lo = np.where(base > 0, 0.0, np.where(base < 0, -np.inf, 0.0))
            hi = np.where(base > 0, np.inf, 0.0)
            lo_open = base > 0
        elif self.link is Link.TANH:
            lo, hi = base - abs(slope), base + abs(slope)
            lo_open = np.ones_like(base, dtype=bool)
        else:
            lo, hi = np.full_like(base, -np.inf), np.full_like(base, np.inf)

        if self.kind in (CoefficientKind.COMMON_FACTOR, CoefficientKind.STATE_DEPENDENT):
            clamped = self.clamp_lo > lo
            lo = np.maximum(lo, self.clamp_lo)
            hi = np.minimum(hi, self.clamp_hi)
            lo_open = np.where(clamped, False, lo_open)
        return ValueRange(np.asarray(lo), np.asarray(hi), np.asarray(lo_open))


@dataclass(frozen=True)
class FactorParams:
    """Mean-reverting scalar factor driven only by the common noise."""

    kappa: float = 1.0
    level: float = 0.0
    vol: float = 0.0
    initial: float | None = None


@dataclass(frozen=True)
class CoefficientValues:
    mu: np.ndarray
    nu: np.ndarray
    sigma: np.ndarray
    Sigma: np.ndarray
    delta: np.ndarray
    theta: np.ndarray

    @classmethod
    def build(cls, mu, nu, sigma, delta, theta) -> "CoefficientValues":
        nu = np.asarray(nu, dtype=float)
        sigma = np.asarray(sigma, dtype=float)
        return cls(
            mu=np.asarray(mu, dtype=float),
            nu=nu,
            sigma=sigma,
            Sigma=nu**2 + sigma**2,
            delta=np.asarray(delta, dtype=float),
            theta=np.asarray(theta, dtype=float),
        )


@dataclass(frozen=True)
class CoefficientModel:
    mu: ParameterSpec
    nu: ParameterSpec
    sigma: ParameterSpec
    delta: ParameterSpec
    theta: ParameterSpec
    factor: FactorParams = field(default_factory=FactorParams)
    horizon: float | None = None

    @classmethod
    def constant(cls, mu, nu, sigma, delta, theta, horizon: float | None = None) -> "CoefficientModel":
        def spec(v):
            return ParameterSpec(CoefficientKind.CONSTANT, value=v)

        return cls(spec(mu), spec(nu), spec(sigma), spec(delta), spec(theta), horizon=horizon)

    def spec(self, name: str) -> ParameterSpec:
        return getattr(self, name)

    @property
    def kind(self) -> CoefficientKind:
        return max((self.spec(n).kind for n in PARAMETER_NAMES), key=_KIND_RANK.__getitem__)

    @property
    def is_common_measurable(self) -> bool:
        """True when coefficients depend only on time and the common noise."""
        return self.kind is not CoefficientKind.STATE_DEPENDENT

    @property
    def uses_factor(self) -> bool:
        return any(self.spec(n).kind is CoefficientKind.COMMON_FACTOR for n in PARAMETER_NAMES)


def validate(model: CoefficientModel) -> list[str]:
    """
    Checks that every block can only emit admissible values on its domain.

    Returns:
        A list of human readable violations, empty when the model is valid.
    """
    violations = []
    ranges = {}
    for name in PARAMETER_NAMES:
        spec = model.spec(name)
        params = np.concatenate(
            [np.ravel(np.asarray(spec.value, dtype=float)), [spec.intercept, spec.effective_slope]]
        )
        if not np.all(np.isfinite(params)):
            violations.append(f"{name} parameters must be finite")
            continue
        if spec.clamp_lo > spec.clamp_hi:
            violations.append(f"{name} clamp_lo exceeds clamp_hi")
            continue
        ranges[name] = spec.value_range(model.horizon)

    if "sigma" in ranges and np.any(ranges["sigma"].lo < 0):
        violations.append("sigma must be nonnegative")
    if "nu" in ranges and np.any(ranges["nu"].lo < 0):
        violations.append("nu must be nonnegative")
    if "sigma" in ranges and "nu" in ranges:
        s, n = ranges["sigma"], ranges["nu"]
        positive = (s.lo > 0) | (n.lo > 0) | ((s.lo == 0) & s.lo_open) | ((n.lo == 0) & n.lo_open)
        if not np.all(positive):
            violations.append("Sigma must be strictly positive")
    if "delta" in ranges and np.any(ranges["delta"].lo < DELTA_FLOOR):
        violations.append(f"delta below floor {DELTA_FLOOR:g}")
    if "theta" in ranges:
        th = ranges["theta"]
        if np.any(th.lo < 0) or np.any(th.hi > 1):
            violations.append("theta out of [0,1]")
    if "mu" in ranges and np.any(ranges["mu"].lo <= 0):
        logger.warning("mu can be nonpositive; accepted, but the excess return is usually positive")

    if model.factor.kappa < 0:
        violations.append("factor kappa must be nonnegative")
    if model.factor.vol < 0:
        violations.append("factor vol must be nonnegative")
    return violations


def sample(model: CoefficientModel, x, z, t) -> CoefficientValues:
    """
    Evaluates all five coefficients at wealth x, factor value z and time t.

    x may be a (replication, agent) grid; z and t are scalars for one step.
    """
    values = {name: model.spec(name).evaluate(x, z, t) for name in PARAMETER_NAMES}
    for name, v in values.items():
        if not np.all(np.isfinite(v)):
            raise DomainError(f"{name} evaluated to a non-finite value at t={t}")
    out = CoefficientValues.build(**values)
    if np.any(out.Sigma <= 0):
        raise DomainError(f"Sigma evaluated to a nonpositive value at t={t}")
    if np.any(out.delta < DELTA_FLOOR) or np.any(out.theta < 0) or np.any(out.theta > 1):
        raise DomainError(f"preference coefficients left their range at t={t}")
    return out


def factor_path(model: CoefficientModel, common_increments: np.ndarray, dt: float) -> np.ndarray:
    """Euler path of dz = kappa (level - z) dt + vol dW0, one value per grid point."""
    fp = model.factor
    z = np.empty(len(common_increments) + 1)
    z[0] = fp.level if fp.initial is None else fp.initial
    for k, dw in enumerate(common_increments):
        z[k + 1] = z[k] + fp.kappa * (fp.level - z[k]) * dt + fp.vol * dw
    return z
