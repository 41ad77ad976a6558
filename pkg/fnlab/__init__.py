"""
Initializes the 'fnlab' package: forward Nash and mean-field equilibria of
CARA/CRRA portfolio games under common noise.
"""

__version__ = "0.1.0"

# From errors.py
from .errors import (
    DomainError,
    Inconclusive,
    InsufficientReplications,
    LabError,
    NoConvergence,
    NumericalBlowup,
    ParseError,
    SingularEquilibrium,
    SizeMismatch,
    ValidationError,
)

# From coeffs.py
from .coeffs import CoefficientKind, CoefficientModel, CoefficientValues, FactorParams, ParameterSpec, sample, validate

# From particles.py
from .particles import (
    AverageKind,
    Dynamics,
    EmpiricalMeasure,
    NoiseBundle,
    ParticleSystem,
    average_consistency_study,
    average_paths,
    conditional_mean,
    generate_noise,
    simulate,
    wasserstein2,
)

# From measure_calc.py
from .measure_calc import MeasureFunctional, UtilityKind, derivative_check_rows

# From equilibrium.py
from .equilibrium import (
    DEFAULT_VARIANT,
    EquilibriumWeights,
    KVariant,
    Quadrature,
    StrategyClosure,
    build_corrections,
    cara_weights,
    crra_weights,
    fixed_point_solve,
    weights_rows,
)

# From verify.py
from .verify import GameSetup, adjudicate_variant, estimate_drift, evaluate_utility_paths, martingale_test, perturbation_study

# From meanfield.py
from .meanfield import MfCloud, TypeSampler, convergence_study, simulate_mkv

# From scenario.py (used by main.py)
from .scenario import Game, ScenarioConfig, load_config, parse_config

# From reports.py (used by main.py and the run-directory scripts)
from .reports import RunManifest, build_workbook, to_frame, write_table
