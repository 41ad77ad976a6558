"""
Calculus on functions of empirical measures.

Covers the two measure functionals (arithmetic and geometric mean), the
identity linking the gradient of an empirical projection to the L-derivative,
the CARA and CRRA utility fields with their closed-form derivative bundles,
and central finite differences of the lifted functions used to check them.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, NamedTuple

import numpy as np

from .errors import DomainError

logger = logging.getLogger(__name__)

# --- Finite-difference defaults ---
FD_BUMP = 1e-5
FD_SECOND_ORDER_BUMP = 1e-3
FD_REL_TOL = 1e-6
FD_SECOND_ORDER_REL_TOL = 1e-4
# N * (h / (N x)) vs h / x differ only by rounding
IDENTITY_REL_TOL = 1e-14


class MeasureFunctional(str, Enum):
    ARITH_MEAN = "arith_mean"
    GEOM_MEAN = "geom_mean"

    def evaluate(self, atoms) -> float:
        atoms = _atoms(self, atoms)
        if self is MeasureFunctional.ARITH_MEAN:
            return float(np.mean(atoms))
        return float(np.exp(np.mean(np.log(atoms))))


class UtilityKind(str, Enum):
    CARA = "cara"
    CRRA = "crra"


class FdCheck(NamedTuple):
    analytic: float
    finite_diff: float
    rel_err: float


def relative_error(analytic: float, approx: float) -> float:
    """Relative to the analytic value, absolute when the analytic value is 0."""
    gap = abs(analytic - approx)
    return gap / abs(analytic) if analytic != 0 else gap


def _atoms(functional: MeasureFunctional, atoms) -> np.ndarray:
    atoms = np.asarray(atoms, dtype=float)
    if atoms.size == 0:
        raise ValueError("at least one atom is required")
    if functional is MeasureFunctional.GEOM_MEAN and np.any(atoms <= 0):
        raise DomainError("geometric mean needs strictly positive atoms")
    return atoms


# --- Empirical projection ---


def empirical_projection_grad(functional: MeasureFunctional, atoms, i: int) -> float:
    """d u^(N) / d x^i of the projection u^(N)(x^1..x^N) = u(uniform measure on the x's)."""
    atoms = _atoms(functional, atoms)
    n = len(atoms)
    if functional is MeasureFunctional.ARITH_MEAN:
        return 1.0 / n
    return functional.evaluate(atoms) / (n * atoms[i])


def l_derivative(functional: MeasureFunctional, atoms, i: int) -> float:
    """(du/dmu)(empirical measure)(x_i)."""
    atoms = _atoms(functional, atoms)
    if functional is MeasureFunctional.ARITH_MEAN:
        return 1.0
    return functional.evaluate(atoms) / atoms[i]


def l_derivative_dv(functional: MeasureFunctional, atoms, v: float) -> float:
    """d/dv of the L-derivative at v."""
    if functional is MeasureFunctional.ARITH_MEAN:
        return 0.0
    return -functional.evaluate(atoms) / v**2


def l_derivative_mumu(functional: MeasureFunctional, atoms, v: float, w: float) -> float:
    """Second L-derivative at (v, w)."""
    if functional is MeasureFunctional.ARITH_MEAN:
        return 0.0
    return functional.evaluate(atoms) / (v * w)


def second_order_projection(functional: MeasureFunctional, atoms, i: int, j: int) -> float:
    """
    d2 u^(N) / dx^j dx^i through the L-derivatives:
    (1/N) d_v d_mu u(x_i) 1{i=j} + (1/N^2) d2_mu u(x_i, x_j).
    """
    atoms = _atoms(functional, atoms)
    n = len(atoms)
    out = l_derivative_mumu(functional, atoms, atoms[i], atoms[j]) / n**2
    if i == j:
        out += l_derivative_dv(functional, atoms, atoms[i]) / n
    return out


def _bumped(atoms: np.ndarray, index: int, amount: float) -> np.ndarray:
    out = atoms.copy()
    out[index] += amount
    return out


def fd_lift_check(functional: MeasureFunctional, atoms, i: int, bump: float = FD_BUMP) -> FdCheck:
    """Central difference of the projection in x^i against the analytic gradient."""
    if bump <= 0:
        raise ValueError("bump must be positive")
    atoms = _atoms(functional, atoms)
    analytic = empirical_projection_grad(functional, atoms, i)
    fd = (functional.evaluate(_bumped(atoms, i, bump)) - functional.evaluate(_bumped(atoms, i, -bump))) / (2 * bump)
    return FdCheck(analytic, fd, relative_error(analytic, fd))


def fd_second_order_check(functional: MeasureFunctional, atoms, i: int, j: int, bump: float = FD_SECOND_ORDER_BUMP) -> FdCheck:
    atoms = _atoms(functional, atoms)
    analytic = second_order_projection(functional, atoms, i, j)
    f = functional.evaluate
    if i == j:
        fd = (f(_bumped(atoms, i, bump)) - 2 * f(atoms) + f(_bumped(atoms, i, -bump))) / bump**2
    else:
        fd = (
            f(_bumped(_bumped(atoms, i, bump), j, bump))
            - f(_bumped(_bumped(atoms, i, bump), j, -bump))
            - f(_bumped(_bumped(atoms, i, -bump), j, bump))
            + f(_bumped(_bumped(atoms, i, -bump), j, -bump))
        ) / (4 * bump**2)
    return FdCheck(analytic, fd, relative_error(analytic, fd))


# --- Utility fields ---


@dataclass(frozen=True)
class FieldParams:
    delta: float
    theta: float
    K: float = 0.0
    K_rate: float = 0.0
    G: float = 0.0
    G_rate: float = 0.0


def cara_field(x, lam, delta, theta, K):
    """U = -exp(-(x - theta lam)/delta + K); works elementwise on arrays."""
    return -np.exp(-(np.asarray(x) - theta * lam) / delta + K)


def crra_field(x, lam, delta, theta, K, G):
    """
    U = K (x lam^-theta)^p / p with p = 1 - 1/delta, and
    U = K log(x lam^-theta) + G when delta = 1; elementwise on arrays.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0) or np.any(np.asarray(lam) <= 0):
        raise DomainError("CRRA field needs strictly positive wealth and average")
    delta = np.asarray(delta, dtype=float)
    log_term = np.log(x) - theta * np.log(lam)
    p = 1.0 - 1.0 / delta
    log_branch = delta == 1.0
    p_safe = np.where(log_branch, 1.0, p)
    power = K * np.exp(p_safe * log_term) / p_safe
    return np.where(log_branch, K * log_term + G, power)


@dataclass(frozen=True)
class DerivativeBundle:
    kind: UtilityKind
    value: float
    d_t: float
    d_x: float
    d_xx: float
    d_mu: Callable[[float], float]
    d_v_dmu: Callable[[float], float]
    d_mumu: Callable[[float, float], float]
    d_x_dmu: Callable[[float], float]


def cara_utility(x: float, atoms, params: FieldParams) -> float:
    lam = MeasureFunctional.ARITH_MEAN.evaluate(atoms)
    return float(cara_field(x, lam, params.delta, params.theta, params.K))


def crra_utility(x: float, atoms, params: FieldParams) -> float:
    lam = MeasureFunctional.GEOM_MEAN.evaluate(atoms)
    return float(crra_field(x, lam, params.delta, params.theta, params.K, params.G))


def cara_derivatives(x: float, measure, t: float, params: FieldParams) -> DerivativeBundle:
    """Closed-form partial and L-derivatives of the CARA field at (x, measure, t)."""
    d, th = params.delta, params.theta
    if d <= 0 or not 0 <= th <= 1:
        raise DomainError("CARA derivatives need delta > 0 and theta in [0,1]")
    atoms = getattr(measure, "atoms", measure)
    u = cara_utility(x, atoms, params)
    return DerivativeBundle(
        kind=UtilityKind.CARA,
        value=u,
        d_t=params.K_rate * u,
        d_x=-u / d,
        d_xx=u / d**2,
        d_mu=lambda v: th / d * u,
        d_v_dmu=lambda v: 0.0,
        d_mumu=lambda v, w: (th / d) ** 2 * u,
        d_x_dmu=lambda v: -th / d**2 * u,
    )


def crra_derivatives(x: float, measure, t: float, params: FieldParams) -> DerivativeBundle:
    """Closed-form derivatives of the CRRA field, logarithmic branch at delta = 1."""
    d, th = params.delta, params.theta
    atoms = np.asarray(getattr(measure, "atoms", measure), dtype=float)
    if x <= 0 or np.any(atoms <= 0):
        raise DomainError("CRRA derivatives need strictly positive wealth and atoms")
    if d <= 0:
        raise DomainError("CRRA derivatives need delta > 0")
    u = crra_utility(x, atoms, params)

    if d == 1.0:
        lam = MeasureFunctional.GEOM_MEAN.evaluate(atoms)
        k = params.K
        return DerivativeBundle(
            kind=UtilityKind.CRRA,
            value=u,
            d_t=np.log(x * lam**-th) * params.K_rate + params.G_rate,
            d_x=k / x,
            d_xx=-k / x**2,
            d_mu=lambda v: -th * k / v,
            d_v_dmu=lambda v: th * k / v**2,
            d_mumu=lambda v, w: 0.0,
            d_x_dmu=lambda v: 0.0,
        )

    p = 1.0 - 1.0 / d
    return DerivativeBundle(
        kind=UtilityKind.CRRA,
        value=u,
        d_t=params.K_rate / params.K * u,
        d_x=p * u / x,
        d_xx=-p * u / (d * x**2),
        d_mu=lambda v: -p * th * u / v,
        d_v_dmu=lambda v: p * th * u / v**2,
        d_mumu=lambda v, w: p**2 * th**2 * u / (v * w),
        d_x_dmu=lambda v: -(p**2) * th * u / (v * x),
    )


# --- Lifted finite differences ---


def _utility_fn(kind: UtilityKind):
    return cara_utility if kind is UtilityKind.CARA else crra_utility


def _derivatives_fn(kind: UtilityKind):
    return cara_derivatives if kind is UtilityKind.CARA else crra_derivatives


def lifted_fd_bundle(
    kind: UtilityKind,
    x: float,
    atoms,
    params: FieldParams,
    j: int = 0,
    bump: float = FD_BUMP,
    bump2: float = FD_SECOND_ORDER_BUMP,
) -> dict[str, FdCheck]:
    """
    Recovers every bundle entry from central differences of the lifted field.

    The atom x_j is duplicated so that the diagonal of the second
    L-derivative can be read off a mixed difference between the twins; the
    analytic bundle is evaluated on the same augmented measure.
    """
    atoms = np.append(np.asarray(atoms, dtype=float), atoms[j])
    twin = len(atoms) - 1
    other = (j + 1) % twin if twin > 1 else twin
    m = len(atoms)
    utility = _utility_fn(kind)
    exact = _derivatives_fn(kind)(x, atoms, 0.0, params)

    def u(xx=x, aa=atoms, pp=params):
        return utility(xx, aa, pp)

    def shift_t(h):
        return replace(params, K=params.K + params.K_rate * h, G=params.G + params.G_rate * h)

    def mixed(f, h):
        return (f(h, h) - f(h, -h) - f(-h, h) + f(-h, -h)) / (4 * h**2)

    h, h2 = bump, bump2
    vj, vo = atoms[j], atoms[other]
    fd = {
        "d_t": (u(pp=shift_t(h)) - u(pp=shift_t(-h))) / (2 * h),
        "d_x": (u(xx=x + h) - u(xx=x - h)) / (2 * h),
        "d_xx": (u(xx=x + h2) - 2 * u() + u(xx=x - h2)) / h2**2,
        "d_mu": m * (u(aa=_bumped(atoms, j, h)) - u(aa=_bumped(atoms, j, -h))) / (2 * h),
        "d_x_dmu": m * mixed(lambda a, b: u(xx=x + a, aa=_bumped(atoms, j, b)), h2),
        "d_mumu": m**2 * mixed(lambda a, b: u(aa=_bumped(_bumped(atoms, j, a), other, b)), h2),
    }
    diag = (u(aa=_bumped(atoms, j, h2)) - 2 * u() + u(aa=_bumped(atoms, j, -h2))) / h2**2
    twins = mixed(lambda a, b: u(aa=_bumped(_bumped(atoms, j, a), twin, b)), h2)
    fd["d_v_dmu"] = m * (diag - twins)

    analytic = {
        "d_t": exact.d_t,
        "d_x": exact.d_x,
        "d_xx": exact.d_xx,
        "d_mu": exact.d_mu(vj),
        "d_x_dmu": exact.d_x_dmu(vj),
        "d_mumu": exact.d_mumu(vj, vo),
        "d_v_dmu": exact.d_v_dmu(vj),
    }
    return {name: FdCheck(float(analytic[name]), float(fd[name]), relative_error(float(analytic[name]), float(fd[name]))) for name in analytic}


SECOND_ORDER_ENTRIES = frozenset({"d_xx", "d_x_dmu", "d_mumu", "d_v_dmu"})


def tolerance_for(entry: str) -> float:
    return FD_SECOND_ORDER_REL_TOL if entry in SECOND_ORDER_ENTRIES else FD_REL_TOL


def _random_params(rng: np.random.Generator, kind: UtilityKind) -> FieldParams:
    theta = rng.uniform(0.2, 1.0)
    if kind is UtilityKind.CARA:
        return FieldParams(rng.uniform(0.5, 2.0), theta, K=rng.uniform(-0.5, 0.5), K_rate=rng.uniform(-1, 1))
    branch = rng.integers(3)
    delta = 1.0 if branch == 0 else (rng.uniform(1.5, 3.0) if branch == 1 else rng.uniform(0.3, 0.6))
    return FieldParams(
        delta, theta, K=rng.uniform(0.5, 1.5), K_rate=rng.uniform(-1, 1), G=rng.uniform(-0.5, 0.5), G_rate=rng.uniform(-1, 1)
    )


def derivative_check_rows(points: int, seed: int, bump: float = FD_BUMP, bump2: float = FD_SECOND_ORDER_BUMP) -> list[dict]:
    """
    Randomised derivative checks at smooth points (wealth and atoms in [0.5, 2]).

    Returns one row per (point, subject, entry) with the analytic value, the
    finite difference, the relative error and the tolerance it is held to.
    """
    rng = np.random.default_rng(seed)
    rows = []
    for point in range(points):
        n = int(rng.integers(2, 5))
        atoms = rng.uniform(0.5, 2.0, n)
        x = rng.uniform(0.5, 2.0)
        i, j = int(rng.integers(n)), int(rng.integers(n))

        for functional in MeasureFunctional:
            check = fd_lift_check(functional, atoms, i, bump)
            rows.append(_row(point, functional.value, "projection_grad", check, FD_REL_TOL))
            exact = l_derivative(functional, atoms, i)
            scaled = n * empirical_projection_grad(functional, atoms, i)
            identity = FdCheck(exact, scaled, relative_error(exact, scaled))
            rows.append(_row(point, functional.value, "l_derivative_identity", identity, IDENTITY_REL_TOL))
        second = fd_second_order_check(MeasureFunctional.GEOM_MEAN, atoms, i, j, bump2)
        rows.append(_row(point, MeasureFunctional.GEOM_MEAN.value, "second_order_projection", second, FD_SECOND_ORDER_REL_TOL))

        for kind in UtilityKind:
            params = _random_params(rng, kind)
            for entry, check in lifted_fd_bundle(kind, x, atoms, params, j=i, bump=bump, bump2=bump2).items():
                rows.append(_row(point, kind.value, entry, check, tolerance_for(entry)))
    logger.info("Derivative check: %d rows over %d points", len(rows), points)
    return rows


def _row(point: int, subject: str, entry: str, check: FdCheck, tol: float) -> dict:
    return {
        "point": point,
        "subject": subject,
        "entry": entry,
        "analytic": check.analytic,
        "finite_diff": check.finite_diff,
        "rel_err": check.rel_err,
        "tolerance": tol,
    }
