"""
Command-line entry point of the forward Nash lab.

    python main.py verify --config scenario.ini --out outputs/verify.csv --threads 4

Runs one subcommand on a scenario file, writes its tables and a
manifest.json next to the main output. Exit codes: 0 success,
2 inconclusive adjudication, 1 any other error.
"""

import argparse
import json
import logging
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

try:
    import numpy as np

    import fnlab
    from fnlab import (
        AverageKind,
        Inconclusive,
        LabError,
        ParticleSystem,
        RunManifest,
        ScenarioConfig,
        adjudicate_variant,
        average_consistency_study,
        average_paths,
        convergence_study,
        derivative_check_rows,
        load_config,
        martingale_test,
        perturbation_study,
        simulate,
        to_frame,
        weights_rows,
        write_table,
    )
    from fnlab.equilibrium import StrategyKind

    from config import EXIT_ERROR, EXIT_INCONCLUSIVE, EXIT_OK, LOG_ENV, OUTPUT_FOLDER, SUBCOMMANDS, TABLE_COLUMNS
except ImportError as e:
    print(f"Import Error: {e}", file=sys.stderr)
    print("Please ensure all dependencies from 'requirements.txt' are installed.", file=sys.stderr)
    print("Run 'install.sh'.", file=sys.stderr)
    sys.exit(1)

logger = logging.getLogger("fnlab.main")

LOG_LEVELS = ("DEBUG", "INFO", "WARNING", "ERROR")


def configure_logging(env=None):
    """Root logger on stderr at the FNL_LOG level (default WARNING)."""
    env = os.environ if env is None else env
    raw = env.get(LOG_ENV, "WARNING").strip().upper()
    level = raw if raw in LOG_LEVELS else "WARNING"
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    if raw != level:
        logger.warning("Unknown %s level '%s', using WARNING", LOG_ENV, raw)


class Runner:
    """
    Executes the subcommands of one configuration.

    Each subcommand returns its tables as {name: rows}; the first table is
    the main output. Scenarios run on a thread pool and are collected in
    scenario order, so the tables do not depend on the pool size.
    """

    def __init__(self, config: ScenarioConfig, threads: int = 1, dump_paths: bool = False, per_agent: bool = False):
        self.config = config
        self.threads = max(1, int(threads))
        self.dump_paths = dump_paths
        self.per_agent = per_agent
        self.verdict = None

    def map_scenarios(self, fn, items=None):
        items = list(range(self.config.scenarios)) if items is None else list(items)
        if self.threads == 1 or len(items) == 1:
            return [fn(item) for item in items]
        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            return list(pool.map(fn, items))

    def _system(self, scenario: int):
        cfg = self.config
        bundle = cfg.bundle(scenario)
        system = ParticleSystem.initialise(cfg.initial_wealth, cfg.model, bundle, cfg.dynamics)
        return simulate(system, cfg.strategy_closure(), cfg.model, bundle), bundle

    # --- Subcommands ---

    def simulate(self) -> dict:
        cfg = self.config

        def one(scenario):
            system, _ = self._system(scenario)
            rows, paths = [], []
            wealth = system.wealth
            arith = average_paths(wealth, AverageKind.ARITHMETIC).mean(axis=0)
            geom = average_paths(wealth, AverageKind.GEOMETRIC).mean(axis=0) if np.all(wealth > 0) else None
            for k in range(system.steps + 1):
                row = {
                    "scenario": scenario,
                    "step": k,
                    "time": float(system.time_grid[k]),
                    "mean_wealth": float(wealth[:, :, k].mean()),
                    "arithmetic_average": float(arith[k]),
                    "geometric_average": float("nan") if geom is None else float(geom[k]),
                    "mean_strategy": float(system.strategy_path[:, :, k].mean()) if k < system.steps else float("nan"),
                }
                if self.per_agent:
                    for i, value in enumerate(wealth[:, :, k].mean(axis=0)):
                        row[f"wealth_{i}"] = float(value)
                rows.append(row)
            if self.dump_paths:
                for r in range(system.n_replications):
                    for i in range(system.n_agents):
                        for k in range(system.steps + 1):
                            paths.append(
                                {
                                    "scenario": scenario,
                                    "replication": r,
                                    "agent": i,
                                    "step": k,
                                    "time": float(system.time_grid[k]),
                                    "wealth": float(wealth[r, i, k]),
                                }
                            )
            return rows, paths

        results = self.map_scenarios(one)
        tables = {"simulate": [r for rows, _ in results for r in rows]}
        if self.dump_paths:
            tables["paths"] = [p for _, paths in results for p in paths]
        if not cfg.game.mean_field and cfg.steps % 4 == 0:
            tables["consistency"] = self.consistency()
        return tables

    def consistency(self) -> list:
        """Average-SDE discrepancy pooled over every scenario of the run."""
        cfg = self.config
        study = average_consistency_study(
            cfg.model,
            cfg.strategy_closure(),
            cfg.initial_wealth,
            self.map_scenarios(cfg.bundle),
            levels=3,
            dynamics=cfg.dynamics,
            map_fn=self.map_scenarios,
        )
        return [
            {"dt": lvl.dt, "discrepancy": lvl.discrepancy, "stderr": lvl.stderr, "order": lvl.order, "scenarios": lvl.scenarios}
            for lvl in study
        ]

    def equilibrium(self) -> dict:
        cfg = self.config

        def one(scenario):
            system, _ = self._system(scenario)
            if self.per_agent:
                return weights_rows(system, scenario, cfg.model, cfg.utility)
            return weights_rows(system, scenario)

        return {"equilibrium": [row for rows in self.map_scenarios(one) for row in rows]}

    def verify(self) -> dict:
        cfg = self.config
        setup = cfg.game_setup()
        agents = None if cfg.verify.agents is None else np.asarray(cfg.verify.agents)

        def one(scenario):
            bundle = cfg.bundle(scenario)
            run = martingale_test(setup, bundle, cfg.variant, strategy=cfg.strategy_closure(), agents=agents)
            rows = run.report.rows(scenario)
            logger.info("Scenario %d: max|t| = %.3f", scenario, run.report.max_abs_t)
            perturbation = []
            if cfg.strategy.kind is StrategyKind.PERTURBED_EQUILIBRIUM and not cfg.game.mean_field:
                study = perturbation_study(
                    setup, bundle, cfg.verify.offsets, cfg.strategy.deviators, cfg.variant, cfg.verify.paired
                )
                perturbation = [{"scenario": scenario, **row, "slope": study.slope} for row in study.rows]
            return rows, perturbation

        results = self.map_scenarios(one)
        tables = {"verify": [r for rows, _ in results for r in rows]}
        perturbation = [p for _, rows in results for p in rows]
        if perturbation:
            tables["perturbation"] = perturbation
        return tables

    def adjudicate(self) -> dict:
        cfg = self.config
        bundles = self.map_scenarios(cfg.bundle)
        strategy = cfg.strategy_closure() if cfg.game.mean_field else None
        if self.threads == 1:
            result = adjudicate_variant(cfg.game_setup(), bundles, cfg.verify.candidates, strategy)
        else:
            with ThreadPoolExecutor(max_workers=self.threads) as pool:
                result = adjudicate_variant(cfg.game_setup(), bundles, cfg.verify.candidates, strategy, pool.map)
        rows = [
            row
            for variant, reports in result.reports.items()
            for bundle, report in zip(bundles, reports)
            for row in report.rows(bundle.seed_lineage.scenario, variant=variant.value)
        ]
        self.verdict = result
        return {"adjudicate": rows}

    def converge(self) -> dict:
        cfg = self.config
        table = convergence_study(
            cfg.type_sampler(),
            cfg.converge.n_list,
            cfg.replications,
            cfg.horizon,
            cfg.steps,
            seed=cfg.seed,
            game=cfg.utility,
            initial_wealth=float(cfg.initial_wealth[0]),
            repetitions=cfg.converge.repetitions,
            reference_factor=cfg.converge.reference_factor,
        )
        logger.info("phi gap slope %.3f (stderr %.3f)", table.phi_slope, table.phi_slope_stderr)
        return {"converge": table.rows}

    def deriv_check(self) -> dict:
        d = self.config.deriv_check
        return {"deriv-check": derivative_check_rows(d.points, self.config.deriv_seed, d.bump, d.bump2)}


def output_paths(main_path: str, names, fmt: str) -> dict:
    """Main table at main_path; the others beside it as <stem>.<name>.<ext>."""
    stem, _ = os.path.splitext(main_path)
    out = {}
    for i, name in enumerate(names):
        out[name] = main_path if i == 0 else f"{stem}.{name}.{fmt}"
    return out


def run(
    subcommand: str,
    config: ScenarioConfig,
    threads: int = 1,
    dump_paths: bool = False,
    per_agent: bool = False,
) -> RunManifest:
    """
    Runs one subcommand, writes its tables and the manifest.

    Raises:
        Inconclusive: after writing everything, when adjudication picks no variant.
    """
    if subcommand not in SUBCOMMANDS:
        raise ValueError(f"unknown subcommand '{subcommand}'")
    start = time.perf_counter()
    runner = Runner(config, threads, dump_paths, per_agent)
    tables = getattr(runner, subcommand.replace("-", "_"))()

    fmt = config.output.format
    main_path = config.output.path or os.path.join(OUTPUT_FOLDER, f"{subcommand}.{fmt}")
    folder = os.path.dirname(main_path)
    written = []
    for name, path in output_paths(main_path, tables, fmt).items():
        df = to_frame(tables[name], TABLE_COLUMNS.get(name))
        write_table(df, path, fmt, sheet_name=name)
        written.append(os.path.relpath(path, folder or "."))

    manifest = RunManifest(
        config_sha256=config.sha256,
        version=fnlab.__version__,
        seed=config.seed,
        subcommand=subcommand,
        threads=runner.threads,
        outputs=written,
    )
    result = runner.verdict
    if result is not None:
        manifest.verdict = "inconclusive" if result.inconclusive else result.verdict.value
        print(f"verdict: {manifest.verdict} " + " ".join(f"{v.value}={t:.3f}" for v, t in result.max_abs_t.items()))
    manifest.wall_clock_seconds = round(time.perf_counter() - start, 3)
    manifest.write(folder)
    if result is not None:
        result.require_verdict()
    return manifest


def render_error(exc: BaseException) -> str:
    payload = {"error": type(exc).__name__, "message": str(exc)}
    if isinstance(exc, LabError):
        payload.update(exc.details())
    return json.dumps(payload, default=str)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(description="Forward Nash and mean-field equilibrium lab")
    parser.add_argument("subcommand", choices=SUBCOMMANDS)
    parser.add_argument("--config", required=True, help="scenario file (INI sections)")
    parser.add_argument("--seed", type=int, help="overrides [scenario] seed")
    parser.add_argument("--out", help="main output file; other tables are written beside it")
    parser.add_argument("--format", choices=("csv", "json", "xlsx"))
    parser.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    parser.add_argument("--dump-paths", action="store_true", help="simulate: also write every wealth path")
    parser.add_argument("--per-agent", action="store_true", help="add per-agent columns")
    return parser


def main(argv=None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config).with_overrides(seed=args.seed, path=args.out, fmt=args.format)
        run(args.subcommand, config, args.threads, args.dump_paths, args.per_agent)
    except Inconclusive as e:
        print(render_error(e), file=sys.stderr)
        return EXIT_INCONCLUSIVE
    except (LabError, OSError, ValueError) as e:
        print(render_error(e), file=sys.stderr)
        return EXIT_ERROR
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
