import numpy as np
import pytest

from fnlab.equilibrium import KVariant, StrategyKind, cloud_e1
from fnlab.errors import ParseError, ValidationError
from fnlab.measure_calc import UtilityKind
from fnlab.particles import Dynamics
from fnlab.scenario import Game, load_config, parse_config

from conftest import CARA_CONFIG


def with_lines(*lines, base=CARA_CONFIG):
    return base + "\n".join(lines) + "\n"


class TestDefaults:
    def test_parses_the_desk_example(self):
        config = parse_config(CARA_CONFIG)
        assert config.game is Game.CARA_N
        assert config.utility is UtilityKind.CARA
        assert config.dynamics is Dynamics.ARITHMETIC
        assert (config.agents, config.replications, config.scenarios) == (4, 32, 1)
        assert config.steps == 8
        assert config.dt == pytest.approx(0.125)
        assert config.seed == 11
        assert config.variant is KVariant.SQUARE
        assert config.strategy.deviators == "first"
        assert config.verify.candidates == (KVariant.SQUARE, KVariant.FULL)
        assert config.deriv_seed == 11
        assert config.strategy.kind is StrategyKind.CARA_EQUILIBRIUM
        assert config.output.format == "csv"
        np.testing.assert_array_equal(config.initial_wealth, np.zeros(4))

    def test_crra_wealth_defaults_to_one(self):
        config = parse_config(CARA_CONFIG.replace("cara_n", "crra_n"))
        assert config.dynamics is Dynamics.GEOMETRIC
        np.testing.assert_array_equal(config.initial_wealth, np.ones(4))

    def test_grid_from_dt(self):
        config = parse_config(CARA_CONFIG.replace("steps = 8", "dt = 0.25"))
        assert config.steps == 4

    def test_load_from_file(self, write_config):
        assert load_config(write_config(CARA_CONFIG)).seed == 11


class TestValidation:
    def test_theta_out_of_range(self):
        with pytest.raises(ValidationError) as err:
            parse_config(CARA_CONFIG.replace("value = 0.5", "value = 1.5"))
        assert "theta out of [0,1]" in err.value.violations

    def test_all_violations_at_once(self):
        text = CARA_CONFIG.replace("value = 0.5", "value = 1.5").replace("seed = 11", "seed = -1")
        with pytest.raises(ValidationError) as err:
            parse_config(text)
        assert "seed must be nonnegative" in err.value.violations
        assert len(err.value.violations) == 2

    def test_missing_section(self):
        text = CARA_CONFIG.replace("[theta]\nvalue = 0.5\n", "")
        with pytest.raises(ValidationError) as err:
            parse_config(text)
        assert "missing section [theta]" in err.value.violations

    def test_grid_inconsistency(self):
        with pytest.raises(ValidationError) as err:
            parse_config(with_lines("", "[output]", "format = csv").replace("steps = 8", "steps = 8\ndt = 0.1"))
        assert any(v.startswith("horizon 1") for v in err.value.violations)

    def test_crra_needs_positive_wealth(self):
        text = with_lines("", "[wealth]", "value = 0", base=CARA_CONFIG.replace("cara_n", "crra_n"))
        with pytest.raises(ValidationError) as err:
            parse_config(text)
        assert "CRRA games need strictly positive initial wealth" in err.value.violations


class TestParseErrors:
    def test_duplicate_key_has_its_line(self):
        with pytest.raises(ParseError) as err:
            parse_config("[scenario]\ngame = cara_n\n[mu]\nvalue = 0.1\nvalue = 0.2\n")
        assert err.value.line == 5
        assert "(line 5, column 1)" in str(err.value)

    def test_unknown_key_suggestion(self):
        with pytest.raises(ParseError) as err:
            parse_config(CARA_CONFIG.replace("[mu]\nvalue", "[mu]\nvaue"))
        assert "did you mean 'value'?" in str(err.value)
        assert err.value.details()["line"] == CARA_CONFIG.splitlines().index("[mu]") + 2

    def test_unknown_section_suggestion(self):
        with pytest.raises(ParseError) as err:
            parse_config(CARA_CONFIG.replace("[sigma]", "[sigm]"))
        assert "did you mean 'sigma'?" in str(err.value)

    def test_bad_value(self):
        with pytest.raises(ParseError) as err:
            parse_config(CARA_CONFIG.replace("agents = 4", "agents = four"))
        assert "[scenario] agents" in str(err.value)

    def test_unknown_enum_value(self):
        with pytest.raises(ParseError) as err:
            parse_config(CARA_CONFIG.replace("game = cara_n", "game = cara_m"))
        assert "did you mean" in str(err.value)

    def test_key_outside_a_section(self):
        with pytest.raises(ParseError):
            parse_config("game = cara_n\n")


class TestClassesAndTypes:
    def test_classes_build_per_agent_arrays(self):
        text = with_lines(
            "",
            "[class.cautious]",
            "count = 2",
            "delta = 2",
            "",
            "[class.rich]",
            "count = 1",
            "wealth = 3",
            base=CARA_CONFIG.replace("agents = 4\n", ""),
        )
        config = parse_config(text)
        assert config.agents == 3
        np.testing.assert_array_equal(config.model.delta.value, [2.0, 2.0, 1.0])
        np.testing.assert_array_equal(config.initial_wealth, [0.0, 0.0, 3.0])
        assert [c.name for c in config.classes] == ["cautious", "rich"]

    def test_class_count_must_match_agents(self):
        with pytest.raises(ValidationError) as err:
            parse_config(with_lines("", "[class.all]", "count = 3"))
        assert any(v.startswith("agent classes hold 3 agents") for v in err.value.violations)

    def test_types(self):
        config = parse_config(with_lines("", "[types]", "mu = uniform(0.05, 0.15)"))
        assert config.types == {"mu": (0.05, 0.15)}
        assert config.type_sampler().ranges == {"mu": (0.05, 0.15)}

    def test_types_need_uniform(self):
        with pytest.raises(ParseError):
            parse_config(with_lines("", "[types]", "mu = normal(0, 1)"))


class TestDerived:
    def test_overrides(self):
        config = parse_config(CARA_CONFIG).with_overrides(seed=5, path="out/run", fmt="json")
        assert config.seed == 5
        assert config.output.path == "out/run"
        assert config.output.format == "json"
        with pytest.raises(ValidationError):
            config.with_overrides(fmt="pdf")

    def test_hash_ignores_line_endings(self):
        unix = parse_config(CARA_CONFIG)
        windows = parse_config(CARA_CONFIG.replace("\n", "\r\n"))
        assert unix.sha256 == windows.sha256
        assert unix.sha256 != parse_config(CARA_CONFIG + "# comment\n").sha256

    def test_mean_field_bundle_is_one_cloud(self):
        config = parse_config(CARA_CONFIG.replace("cara_n", "cara_mf"))
        bundle = config.bundle(0)
        assert bundle.n_replications == 1
        assert bundle.n_agents == 4
        assert config.strategy_closure().e1 is cloud_e1

    def test_perturbed_first_agent(self):
        config = parse_config(with_lines("", "[strategy]", "kind = perturbed", "offset = 0.5", "deviators = first"))
        closure = config.strategy_closure()
        assert closure.kind is StrategyKind.PERTURBED_EQUILIBRIUM
        np.testing.assert_array_equal(closure.deviators, [True, False, False, False])

    def test_verify_section(self):
        config = parse_config(with_lines("", "[verify]", "agents = 0, 2", "candidates = square, full", "paired = no"))
        assert config.verify.agents == (0, 2)
        assert config.verify.candidates == (KVariant.SQUARE, KVariant.FULL)
        assert config.verify.paired is False

    def test_deriv_seed_follows_the_seed_override(self):
        config = parse_config(with_lines("", "[deriv_check]", "points = 3"))
        assert config.with_overrides(seed=5).deriv_seed == 5
        pinned = parse_config(with_lines("", "[deriv_check]", "seed = 9"))
        assert pinned.with_overrides(seed=5).deriv_seed == 9

    def test_perturbed_deviators_default_to_first(self):
        config = parse_config(with_lines("", "[strategy]", "kind = perturbed", "offset = 0.5"))
        np.testing.assert_array_equal(config.strategy_closure().deviators, [True, False, False, False])

    @pytest.mark.parametrize("candidates", ["square", "full, full"])
    def test_verify_needs_two_different_candidates(self, candidates):
        with pytest.raises(ValidationError, match="at least two"):
            parse_config(with_lines("", "[verify]", f"candidates = {candidates}"))

    def test_three_candidates(self):
        config = parse_config(with_lines("", "[verify]", "candidates = half, square, full"))
        assert config.verify.candidates == (KVariant.HALF, KVariant.SQUARE, KVariant.FULL)
