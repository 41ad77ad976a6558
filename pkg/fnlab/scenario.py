"""
Scenario configuration: INI-style text parsed into a validated ScenarioConfig.

    [scenario]
    game = crra_n
    agents = 8
    steps = 64
    horizon = 1

    [mu]
    value = 0.1
    ...

Unknown sections and keys are errors, reported with their line and column
and a suggestion when a known name is close.
"""

from __future__ import annotations

import configparser
import hashlib
import logging
import re
from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from thefuzz import process

from .coeffs import (
    PARAMETER_NAMES,
    CoefficientKind,
    CoefficientModel,
    FactorParams,
    Link,
    ParameterSpec,
    validate,
)
from .equilibrium import DEFAULT_VARIANT, KVariant, Quadrature, StrategyClosure, StrategyKind, cloud_e1
from .errors import ParseError, ValidationError
from .measure_calc import FD_BUMP, FD_SECOND_ORDER_BUMP, UtilityKind
from .meanfield import TypeSampler
from .particles import Dynamics, NoiseBundle, generate_noise
from .verify import DEFAULT_CANDIDATES, GameSetup

logger = logging.getLogger(__name__)

# --- Defaults ---
DEFAULT_REPLICATIONS = 256
DEFAULT_STEPS = 64
DEFAULT_HORIZON = 1.0
DEFAULT_AGENTS = 8
GRID_REL_TOL = 1e-12
SUGGESTION_SCORE = 80
OUTPUT_FORMATS = ("csv", "json", "xlsx")


class Game(str, Enum):
    CARA_N = "cara_n"
    CRRA_N = "crra_n"
    CARA_MF = "cara_mf"
    CRRA_MF = "crra_mf"

    @property
    def utility(self) -> UtilityKind:
        return UtilityKind.CARA if self in (Game.CARA_N, Game.CARA_MF) else UtilityKind.CRRA

    @property
    def mean_field(self) -> bool:
        return self in (Game.CARA_MF, Game.CRRA_MF)


# Allowed keys per section; class.<name> sections share one entry.
_BLOCK_KEYS = ("kind", "value", "intercept", "slope", "link", "clamp_lo", "clamp_hi", "kappa", "level", "vol")
SECTION_KEYS = {
    "scenario": ("game", "agents", "replications", "scenarios", "steps", "dt", "horizon", "seed", "variant", "quadrature"),
    **{name: _BLOCK_KEYS for name in PARAMETER_NAMES},
    "factor": ("kappa", "level", "vol", "initial"),
    "wealth": ("value",),
    "strategy": ("kind", "value", "offset", "deviators"),
    "class": ("count", *PARAMETER_NAMES, "wealth"),
    "types": PARAMETER_NAMES,
    "converge": ("n_list", "repetitions", "reference_factor"),
    "verify": ("agents", "paired", "offsets", "candidates"),
    "deriv_check": ("points", "bump", "bump2", "seed"),
    "output": ("path", "format"),
}

_SECTION_RE = re.compile(r"^\s*\[([^\]]+)\]")
_KEY_RE = re.compile(r"^(\s*)([^=:\s#;][^=:]*?)\s*[=:]")
_UNIFORM_RE = re.compile(r"^uniform\(\s*([^,\s]+)\s*,\s*([^)\s]+)\s*\)$")


@dataclass(frozen=True)
class StrategySpec:
    kind: StrategyKind = StrategyKind.CARA_EQUILIBRIUM
    value: float = 0.0
    offset: float = 0.0
    deviators: str = "first"

    def closure(self, game: UtilityKind, n_agents: int, common_measurable: bool) -> StrategyClosure:
        if self.kind is StrategyKind.CONSTANT_OVERRIDE:
            return StrategyClosure.constant(game, self.value, common_measurable=common_measurable)
        if self.kind is StrategyKind.PERTURBED_EQUILIBRIUM:
            mask = None if self.deviators == "all" else np.arange(n_agents) == 0
            return StrategyClosure.perturbed(game, self.offset, mask, common_measurable=common_measurable)
        return StrategyClosure.equilibrium(game, common_measurable=common_measurable)


@dataclass(frozen=True)
class AgentClass:
    name: str
    count: int
    overrides: dict = field(default_factory=dict)


@dataclass(frozen=True)
class ConvergeSpec:
    n_list: tuple = (10, 100, 1000)
    repetitions: int = 1
    reference_factor: int = 10


@dataclass(frozen=True)
class VerifySpec:
    agents: tuple | None = None
    paired: bool = True
    offsets: tuple = (0.25, 0.5, 1.0)
    candidates: tuple = DEFAULT_CANDIDATES


@dataclass(frozen=True)
class DerivCheckSpec:
    points: int = 100
    bump: float = FD_BUMP
    bump2: float = FD_SECOND_ORDER_BUMP
    # None follows the scenario seed, including a --seed override
    seed: int | None = None


@dataclass(frozen=True)
class OutputSpec:
    path: str | None = None
    format: str = "csv"


@dataclass(frozen=True)
class ScenarioConfig:
    game: Game
    agents: int
    replications: int
    scenarios: int
    steps: int
    dt: float
    horizon: float
    seed: int
    variant: KVariant
    quadrature: Quadrature
    model: CoefficientModel
    initial_wealth: np.ndarray
    strategy: StrategySpec
    classes: tuple = ()
    types: dict = field(default_factory=dict)
    converge: ConvergeSpec = field(default_factory=ConvergeSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    deriv_check: DerivCheckSpec = field(default_factory=DerivCheckSpec)
    output: OutputSpec = field(default_factory=OutputSpec)
    text: str = ""

    @property
    def utility(self) -> UtilityKind:
        return self.game.utility

    @property
    def dynamics(self) -> Dynamics:
        return Dynamics.ARITHMETIC if self.utility is UtilityKind.CARA else Dynamics.GEOMETRIC

    @property
    def sha256(self) -> str:
        """Hash of the config text with normalised line endings."""
        normalised = self.text.replace("\r\n", "\n").replace("\r", "\n")
        return hashlib.sha256(normalised.encode("utf-8")).hexdigest()

    def with_overrides(self, seed: int | None = None, path: str | None = None, fmt: str | None = None) -> "ScenarioConfig":
        out = self
        if seed is not None:
            out = replace(out, seed=int(seed))
        if path is not None or fmt is not None:
            out = replace(out, output=OutputSpec(path or out.output.path, fmt or out.output.format))
        if out.output.format not in OUTPUT_FORMATS:
            raise ValidationError([f"output format must be one of {', '.join(OUTPUT_FORMATS)}"])
        return out

    def bundle(self, scenario: int) -> NoiseBundle:
        """Noise of one scenario; mean-field games draw a single replication of `agents` particles."""
        replications = 1 if self.game.mean_field else self.replications
        return generate_noise(self.seed, scenario, replications, self.agents, self.steps, self.dt)

    def strategy_closure(self) -> StrategyClosure:
        """The configured strategy; mean-field games read their E1 off the particle cloud."""
        if self.game.mean_field:
            return replace(self.strategy.closure(self.utility, self.agents, True), e1=cloud_e1)
        return self.strategy.closure(self.utility, self.agents, self.model.is_common_measurable)

    def game_setup(self) -> GameSetup:
        return GameSetup(self.utility, self.model, self.initial_wealth, self.quadrature)

    @property
    def deriv_seed(self) -> int:
        return self.seed if self.deriv_check.seed is None else self.deriv_check.seed

    def type_sampler(self) -> TypeSampler:
        return TypeSampler(self.model, dict(self.types))


# --- Parsing ---


class _Locator:
    """Line and column of sections and keys in the raw text (1-based)."""

    def __init__(self, text: str):
        self.sections: dict[str, tuple[int, int]] = {}
        self.keys: dict[tuple[str, str], tuple[int, int]] = {}
        current = None
        for lineno, line in enumerate(text.splitlines(), start=1):
            m = _SECTION_RE.match(line)
            if m:
                current = m.group(1).strip()
                self.sections.setdefault(current, (lineno, line.index("[") + 2))
                continue
            m = _KEY_RE.match(line)
            if m and current is not None:
                key = m.group(2).strip().lower()
                self.keys.setdefault((current, key), (lineno, len(m.group(1)) + 1))

    def section(self, name: str) -> tuple[int, int]:
        return self.sections.get(name, (0, 0))

    def key(self, section: str, key: str) -> tuple[int, int]:
        return self.keys.get((section, key), self.section(section))


def _suggest(word: str, choices) -> str:
    if not choices:
        return ""
    best = process.extractOne(word, list(choices))
    if best and best[1] >= SUGGESTION_SCORE:
        return f"; did you mean '{best[0]}'?"
    return ""


def _column_of(text: str, lineno: int, word: str) -> int:
    lines = text.splitlines()
    if 1 <= lineno <= len(lines):
        pos = lines[lineno - 1].lower().find(word.lower())
        return pos + 1 if pos >= 0 else 1
    return 1


def _read(text: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(
        strict=True,
        interpolation=None,
        inline_comment_prefixes=("#", ";"),
        default_section="__defaults__",
    )
    try:
        parser.read_string(text)
    except configparser.DuplicateOptionError as e:
        raise ParseError(f"duplicate key '{e.option}' in [{e.section}]", e.lineno, _column_of(text, e.lineno, e.option)) from e
    except configparser.DuplicateSectionError as e:
        raise ParseError(f"duplicate section [{e.section}]", e.lineno, _column_of(text, e.lineno, e.section)) from e
    except configparser.MissingSectionHeaderError as e:
        raise ParseError("key outside of any section", e.lineno, 1) from e
    except configparser.ParsingError as e:
        lineno = e.errors[0][0] if e.errors else 0
        raise ParseError("malformed line (expected 'key = value')", lineno, 1) from e
    return parser


class _Section:
    """Typed access to one section, raising ParseError at the offending value."""

    def __init__(self, parser, locator: _Locator, name: str):
        self.name = name
        self.locator = locator
        self.data = dict(parser[name]) if parser.has_section(name) else {}

    def __contains__(self, key: str) -> bool:
        return key in self.data

    def _fail(self, key: str, message: str):
        line, col = self.locator.key(self.name, key)
        raise ParseError(f"[{self.name}] {key}: {message}", line, col)

    def get(self, key: str, convert=str, default=None):
        if key not in self.data:
            return default
        raw = self.data[key].strip()
        try:
            return convert(raw)
        except (ValueError, TypeError) as e:
            self._fail(key, f"invalid value '{raw}' ({e})")

    def enum(self, key: str, enum_cls, default):
        raw = self.get(key, default=None)
        if raw is None:
            return default
        try:
            return enum_cls(raw.lower())
        except ValueError:
            names = [m.value for m in enum_cls]
            self._fail(key, f"unknown value '{raw}'{_suggest(raw, names)}")


def _floats(raw: str) -> tuple:
    return tuple(float(v) for v in raw.replace(",", " ").split())


def _ints(raw: str) -> tuple:
    return tuple(int(v) for v in raw.replace(",", " ").split())


def _bool(raw: str) -> bool:
    lowered = raw.lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected true or false")


def _uniform(raw: str) -> tuple:
    m = _UNIFORM_RE.match(raw)
    if not m:
        raise ValueError("expected uniform(a, b)")
    return float(m.group(1)), float(m.group(2))


def _check_names(parser, locator: _Locator):
    known = set(SECTION_KEYS)
    for section in parser.sections():
        family = "class" if section.startswith("class.") else section
        if family not in known:
            line, col = locator.section(section)
            raise ParseError(f"unknown section [{section}]{_suggest(section, known)}", line, col)
        allowed = SECTION_KEYS[family]
        for key in parser[section]:
            if key not in allowed:
                line, col = locator.key(section, key)
                raise ParseError(f"unknown key '{key}' in [{section}]{_suggest(key, allowed)}", line, col)


def _grid(sec: _Section, violations: list) -> tuple[int, float, float]:
    """Resolves (steps, dt, horizon) from whichever of them are given."""
    steps = sec.get("steps", int)
    dt = sec.get("dt", float)
    horizon = sec.get("horizon", float)
    if steps is None and dt is None:
        steps = DEFAULT_STEPS
    if horizon is None and (steps is None or dt is None):
        horizon = DEFAULT_HORIZON
    if steps is None:
        steps = max(1, int(round(horizon / dt)))
    if dt is None:
        dt = horizon / steps
    if horizon is None:
        horizon = steps * dt
    if steps < 1 or dt <= 0 or horizon <= 0:
        violations.append("steps, dt and horizon must be positive")
    elif abs(steps * dt - horizon) > GRID_REL_TOL * abs(horizon):
        violations.append(f"horizon {horizon:g} != steps {steps} x dt {dt:g}")
    return steps, dt, horizon


def _block(sec: _Section, factor: dict, violations: list) -> ParameterSpec:
    kind = sec.enum("kind", CoefficientKind, CoefficientKind.CONSTANT)
    value = sec.get("value", float, 0.0)
    for key in ("kappa", "level", "vol"):
        given = sec.get(key, float)
        if given is None:
            continue
        if key in factor and factor[key] != given:
            violations.append(f"factor {key} given inconsistently ([{sec.name}] says {given:g}, elsewhere {factor[key]:g})")
        factor[key] = given
    if kind is CoefficientKind.DETERMINISTIC_TIME and "intercept" not in sec:
        intercept = value
    else:
        intercept = sec.get("intercept", float, 0.0)
    return ParameterSpec(
        kind=kind,
        value=value,
        intercept=intercept,
        slope=sec.get("slope", float),
        link=sec.enum("link", Link, Link.AFFINE),
        clamp_lo=sec.get("clamp_lo", float, -np.inf),
        clamp_hi=sec.get("clamp_hi", float, np.inf),
    )


def _apply_classes(blocks: dict, wealth: float, classes: list, agents: int, violations: list):
    """Per-agent constant arrays from the agent classes, in section order."""
    total = sum(c.count for c in classes)
    if total != agents:
        violations.append(f"agent classes hold {total} agents, [scenario] agents = {agents}")
        return blocks, np.full(agents, wealth)
    per_agent = {}
    for name in PARAMETER_NAMES:
        overridden = any(name in c.overrides for c in classes)
        if overridden and blocks[name].kind is not CoefficientKind.CONSTANT:
            violations.append(f"class overrides need a constant [{name}] block")
            continue
        if overridden:
            per_agent[name] = np.concatenate(
                [np.full(c.count, c.overrides.get(name, blocks[name].value), dtype=float) for c in classes]
            )
    x0 = np.concatenate([np.full(c.count, c.overrides.get("wealth", wealth), dtype=float) for c in classes])
    out = dict(blocks)
    for name, values in per_agent.items():
        out[name] = replace(blocks[name], value=values)
    return out, x0


def parse_config(text: str) -> ScenarioConfig:
    """
    Parses and validates scenario text.

    Raises:
        ParseError: malformed text, duplicates, unknown names or bad values.
        ValidationError: every semantic violation found, at once.
    """
    parser = _read(text)
    locator = _Locator(text)
    _check_names(parser, locator)

    def sec(name):
        return _Section(parser, locator, name)

    violations: list[str] = []
    scn = sec("scenario")
    game = scn.enum("game", Game, Game.CARA_N)
    classes = [
        AgentClass(
            name=name.split(".", 1)[1],
            count=sec(name).get("count", int, 0),
            overrides={
                k: sec(name).get(k, float) for k in ("wealth", *PARAMETER_NAMES) if k in sec(name)
            },
        )
        for name in parser.sections()
        if name.startswith("class.")
    ]
    agents = scn.get("agents", int, sum(c.count for c in classes) if classes else DEFAULT_AGENTS)
    replications = scn.get("replications", int, DEFAULT_REPLICATIONS)
    scenarios = scn.get("scenarios", int, 1)
    for label, count in (("agents", agents), ("replications", replications), ("scenarios", scenarios)):
        if count < 1:
            violations.append(f"{label} must be at least 1")
    if any(c.count < 1 for c in classes):
        violations.append("every agent class needs count >= 1")
    steps, dt, horizon = _grid(scn, violations)

    fac = sec("factor")
    factor = {k: fac.get(k, float) for k in ("kappa", "level", "vol") if k in fac}
    blocks = {}
    for name in PARAMETER_NAMES:
        if not parser.has_section(name):
            violations.append(f"missing section [{name}]")
            blocks[name] = ParameterSpec()
            continue
        blocks[name] = _block(sec(name), factor, violations)

    wealth = sec("wealth").get("value", float, 0.0 if game.utility is UtilityKind.CARA else 1.0)
    x0 = np.full(max(agents, 1), wealth, dtype=float)
    if classes and agents >= 1:
        blocks, x0 = _apply_classes(blocks, wealth, classes, agents, violations)

    model = CoefficientModel(
        **blocks,
        factor=FactorParams(
            kappa=factor.get("kappa", 1.0),
            level=factor.get("level", 0.0),
            vol=factor.get("vol", 0.0),
            initial=fac.get("initial", float),
        ),
        horizon=horizon,
    )
    if all(parser.has_section(n) for n in PARAMETER_NAMES):
        violations.extend(validate(model))
    if scn.get("seed", int, 0) < 0:
        violations.append("seed must be nonnegative")
    if game.utility is UtilityKind.CRRA and np.any(x0 <= 0):
        violations.append("CRRA games need strictly positive initial wealth")

    strat = sec("strategy")
    raw_kind = strat.get("kind", str, "equilibrium").lower()
    kinds = {"equilibrium": None, "constant": StrategyKind.CONSTANT_OVERRIDE, "perturbed": StrategyKind.PERTURBED_EQUILIBRIUM}
    if raw_kind not in kinds:
        strat._fail("kind", f"unknown strategy '{raw_kind}'{_suggest(raw_kind, kinds)}")
    kind = kinds[raw_kind] or (
        StrategyKind.CARA_EQUILIBRIUM if game.utility is UtilityKind.CARA else StrategyKind.CRRA_EQUILIBRIUM
    )
    deviators = strat.get("deviators", str, "first").lower()
    if deviators not in ("first", "all"):
        violations.append("strategy deviators must be 'first' or 'all'")
    if kind is StrategyKind.CONSTANT_OVERRIDE and "value" not in strat:
        violations.append("a constant strategy needs a value")
    strategy = StrategySpec(kind, strat.get("value", float, 0.0), strat.get("offset", float, 0.0), deviators)

    types = {}
    tsec = sec("types")
    for name in PARAMETER_NAMES:
        rng = tsec.get(name, _uniform)
        if rng is None:
            continue
        if rng[0] > rng[1]:
            violations.append(f"types {name}: empty range uniform({rng[0]:g}, {rng[1]:g})")
        if blocks[name].kind is not CoefficientKind.CONSTANT:
            violations.append(f"types {name}: draws replace a constant block only")
        types[name] = rng

    csec = sec("converge")
    converge = ConvergeSpec(
        n_list=csec.get("n_list", _ints, ConvergeSpec.n_list),
        repetitions=csec.get("repetitions", int, 1),
        reference_factor=csec.get("reference_factor", int, 10),
    )
    if any(b <= a for a, b in zip(converge.n_list, converge.n_list[1:])) or min(converge.n_list, default=0) < 1:
        violations.append("converge n_list must be positive and strictly increasing")
    if converge.repetitions < 1 or converge.reference_factor < 1:
        violations.append("converge repetitions and reference_factor must be at least 1")

    vsec = sec("verify")
    raw_agents = vsec.get("agents", str, "all").lower()
    verify_agents = None
    if raw_agents != "all":
        verify_agents = vsec.get("agents", _ints)
        if any(a < 0 or a >= agents for a in verify_agents):
            violations.append(f"verify agents must lie in [0, {agents})")
    raw_candidates = vsec.get("candidates", str, ", ".join(v.value for v in DEFAULT_CANDIDATES))
    try:
        candidates = tuple(KVariant(c.strip().lower()) for c in raw_candidates.split(","))
    except ValueError:
        vsec._fail("candidates", f"unknown variant in '{raw_candidates}' (half, full, square)")
    if len(candidates) < 2 or len(set(candidates)) != len(candidates):
        violations.append("verify candidates must name at least two different variants")
    verify = VerifySpec(
        agents=verify_agents,
        paired=vsec.get("paired", _bool, True),
        offsets=vsec.get("offsets", _floats, VerifySpec.offsets),
        candidates=candidates,
    )

    dsec = sec("deriv_check")
    deriv = DerivCheckSpec(
        points=dsec.get("points", int, 100),
        bump=dsec.get("bump", float, FD_BUMP),
        bump2=dsec.get("bump2", float, FD_SECOND_ORDER_BUMP),
        seed=dsec.get("seed", int),
    )
    if deriv.points < 1 or deriv.bump <= 0 or deriv.bump2 <= 0:
        violations.append("deriv_check needs points >= 1 and positive bumps")

    osec = sec("output")
    output = OutputSpec(osec.get("path"), osec.get("format", str, "csv").lower())
    if output.format not in OUTPUT_FORMATS:
        violations.append(f"output format must be one of {', '.join(OUTPUT_FORMATS)}")

    if violations:
        raise ValidationError(violations)

    config = ScenarioConfig(
        game=game,
        agents=agents,
        replications=replications,
        scenarios=scenarios,
        steps=steps,
        dt=dt,
        horizon=horizon,
        seed=scn.get("seed", int, 0),
        variant=scn.enum("variant", KVariant, DEFAULT_VARIANT),
        quadrature=scn.enum("quadrature", Quadrature, Quadrature.LEFT),
        model=model,
        initial_wealth=x0,
        strategy=strategy,
        classes=tuple(classes),
        types=types,
        converge=converge,
        verify=verify,
        deriv_check=deriv,
        output=output,
        text=text,
    )
    logger.debug("Parsed %s scenario: %d agents, %d steps of %g", game.value, agents, steps, dt)
    return config


def load_config(path) -> ScenarioConfig:
    with open(path, encoding="utf-8") as fh:
        return parse_config(fh.read())
