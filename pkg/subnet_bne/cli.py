"""
cli.py - Command line entry point
Usage:
  python -m subnet_bne run configs/rent_seeking.yml             # Distributed run + oracle
  python -m subnet_bne oracle configs/rent_seeking.yml          # Centralized DBNE only
  python -m subnet_bne sweep configs/rent_seeking.yml --vary "N=10,20;rho=0.5,1"
  python -m subnet_bne validate configs/rent_seeking.yml        # Structural checks only
  python -m subnet_bne versions                                 # Pinned vs installed versions
"""

import argparse
import itertools
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import yaml

from subnet_bne.accounting import account_bytes
from subnet_bne.compression import effective_windows, verify_entry_connectivity, verify_entry_coverage
from subnet_bne.config import ExperimentConfig, config_digest, load_config, with_overrides
from subnet_bne.console import Logger, console, metrics_table, print_panel, setup_logging, summary_table, tick_progress
from subnet_bne.discretization import BlockStrategy, DiscreteTypeModel, approximation_bound, discretize_types
from subnet_bne.engine import RunResult, run
from subnet_bne.errors import ConfigError, NonConvergenceError, PartialResultError, SubnetBNEError
from subnet_bne.game import density_mass, validate_sum_structure
from subnet_bne.network import validate_schedule
from subnet_bne.oracle import MAX_GRID_POINTS, OracleReport, solve_dbne_oracle_report
from subnet_bne.output import OutputPaths, emit, write_strategies, write_summary
from subnet_bne.versions import runtime_versions, version_rows

log = logging.getLogger(__name__)
logger = Logger("subnet-bne")

DENSITY_TOLERANCE = 1e-8


@dataclass
class Prepared:
    cfg: ExperimentConfig
    model: DiscreteTypeModel


def prepare(cfg: ExperimentConfig) -> Prepared:
    game = cfg.spec
    model = discretize_types(game, cfg.N[0], cfg.N[1], cfg.quad_res)
    return Prepared(cfg, model)


def compute_oracle(prepared: Prepared) -> Optional[OracleReport]:
    cfg = prepared.cfg
    if not cfg.oracle.enabled:
        return None
    for s, m in enumerate(cfg.spec.m):
        if cfg.oracle.grid_res**m > MAX_GRID_POINTS:
            logger.warn(
                f"oracle grid of {cfg.oracle.grid_res}^{m} actions on side {s + 1} exceeds {MAX_GRID_POINTS}; "
                "continuing without oracle metrics"
            )
            return None
    with console.status("[bold blue]Solving the centralized DBNE..."):
        try:
            return solve_dbne_oracle_report(
                prepared.model, cfg.spec, cfg.oracle.tol, cfg.oracle.max_iters, grid_res=cfg.oracle.grid_res, seed=cfg.engine.seed
            )
        except NonConvergenceError as exc:
            logger.warn(f"oracle did not converge ({exc}); continuing without oracle metrics")
            return None


def base_summary(cfg: ExperimentConfig, model: DiscreteTypeModel, oracle: Optional[OracleReport]) -> Dict:
    summary = {
        "config_digest": config_digest(cfg),
        "config": cfg.to_dict(),
        "versions": runtime_versions(),
    }
    if oracle is not None:
        summary["oracle"] = {"gap": oracle.gap, "iterations": oracle.iterations, "lipschitz_estimate": oracle.lipschitz_estimate}
    bound = approximation_bound(model, cfg.spec)
    if bound is not None:
        summary["approximation_bound"] = bound.to_dict()
    return summary


def execute(cfg: ExperimentConfig, directory: Path, progress: bool = True) -> RunResult:
    """Discretize, solve the oracle, run the engine and write every result file"""
    prepared = prepare(cfg)
    game, model = cfg.spec, prepared.model
    sched = cfg.schedule.build(game.n)
    oracle = compute_oracle(prepared)
    oracle_pair: Optional[Tuple[BlockStrategy, BlockStrategy]] = None if oracle is None else (oracle.s1, oracle.s2)
    engine_cfg = cfg.engine_config()
    paths = OutputPaths(
        directory / cfg.outputs.metrics,
        directory / cfg.outputs.summary,
        directory / cfg.outputs.strategies,
        directory / cfg.outputs.trace if cfg.outputs.packet_trace else None,
        directory / cfg.outputs.trajectories if cfg.outputs.trajectory_types else None,
    )

    summary = base_summary(cfg, model, oracle)
    try:
        if progress:
            with tick_progress(engine_cfg.T, "Running engine") as advance:
                result = run(game, model, sched, engine_cfg, oracle_pair, advance)
        else:
            result = run(game, model, sched, engine_cfg, oracle_pair)
    except PartialResultError as exc:
        summary["partial"] = {"tick": exc.tick, "budget_seconds": exc.budget}
        emit(exc.partial, paths, model, summary)
        raise

    summary["accounting"] = account_bytes(result).to_dict()
    emit(result, paths, model, summary)
    if oracle is not None:
        write_strategies(directory / "oracle_strategies.csv", model, (oracle.s1, oracle.s2))
    return result


def output_directory(cfg: ExperimentConfig, override: Optional[str]) -> Path:
    return Path(override) if override else Path(cfg.outputs.directory)


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    setup_logging(args.log_level or cfg.log.level)
    directory = output_directory(cfg, args.out)
    print_panel(
        f"game={cfg.spec.name}  N={list(cfg.N)}  rho={list(cfg.rho)}  d={list(cfg.d)}  T={cfg.engine.T}",
        title="subnet-bne run",
        style="blue",
    )
    result = execute(cfg, directory, progress=not args.quiet)
    final = {k: result.summary[k] for k in ("side1_consensus", "side2_consensus", "side1_surplus", "side2_surplus", "oracle_dist", "gap_proxy")}
    final.update({"ticks": result.ticks, "R": result.summary["R"], "bytes_total": result.bytes_total})
    console.print(summary_table("Final metrics", final))
    logger.success(f"Run complete, results in {directory}")
    return 0


def cmd_oracle(args) -> int:
    cfg = load_config(args.config)
    setup_logging(args.log_level or cfg.log.level)
    directory = output_directory(cfg, args.out)
    prepared = prepare(cfg)
    with console.status("[bold blue]Solving the centralized DBNE..."):
        report = solve_dbne_oracle_report(
            prepared.model, cfg.spec, cfg.oracle.tol, cfg.oracle.max_iters, grid_res=cfg.oracle.grid_res, seed=cfg.engine.seed
        )
    write_strategies(directory / cfg.outputs.strategies, prepared.model, (report.s1, report.s2))
    summary = base_summary(cfg, prepared.model, report)
    write_summary(directory / cfg.outputs.summary, summary)
    console.print(summary_table("DBNE oracle", {"gap": report.gap, "iterations": report.iterations, "N": list(cfg.N)}))
    logger.success(f"Oracle strategies written to {directory / cfg.outputs.strategies}")
    return 0


def validation_checks(cfg: ExperimentConfig) -> Dict[str, bool]:
    game = cfg.spec
    structure = validate_sum_structure(game, sample_count=10_000, seed=cfg.engine.seed)
    checks = {"sum_structure": structure.passed}
    logger.verbose(f"f1 + f2 = {structure.c_estimate:.6g} (max deviation {structure.max_deviation:.3e})")
    mass = density_mass(game)
    checks["density_mass"] = abs(mass - 1.0) <= DENSITY_TOLERANCE
    sched = cfg.schedule.build(game.n)
    checks.update(validate_schedule(sched))
    dims = (cfg.N[0] * game.m[0], cfg.N[1] * game.m[1])
    R, S = effective_windows(cfg.N, game.m, cfg.d, sched.R0, sched.S0)
    for side in (1, 2):
        s = side - 1
        checks[f"side{side}_entry_connectivity"] = verify_entry_connectivity(sched, side, dims[s], cfg.d[s], R)
        checks[f"side{side}_entry_coverage"] = verify_entry_coverage(sched, side, dims[1 - s], cfg.d[1 - s], S)
    return checks


def cmd_validate(args) -> int:
    cfg = load_config(args.config)
    setup_logging(args.log_level or cfg.log.level)
    checks = validation_checks(cfg)
    console.print(metrics_table("Validation", ["Check", "Result"], [(k, "PASS" if ok else "FAIL") for k, ok in checks.items()]))
    failed = [name for name, ok in checks.items() if not ok]
    if failed:
        logger.error(f"validation failed: {', '.join(failed)}")
        return 2
    logger.success("All checks passed")
    return 0


def parse_vary(text: str) -> Dict[str, List]:
    """'N=10,20;rho=0.5,1' -> {'N': [10, 20], 'rho': [0.5, 1]}"""
    grid: Dict[str, List] = {}
    for assignment in filter(None, (part.strip() for part in text.split(";"))):
        if "=" not in assignment:
            raise ConfigError("--vary", f"expected key=v1,v2 in {assignment!r}")
        key, values = assignment.split("=", 1)
        parsed = [yaml.safe_load(v) for v in values.split(",") if v.strip()]
        if not parsed:
            raise ConfigError(f"--vary {key.strip()}", "no values given")
        grid[key.strip()] = parsed
    if not grid:
        raise ConfigError("--vary", "nothing to vary")
    return grid


def sweep_points(grid: Dict[str, List]) -> List[Dict]:
    keys = list(grid)
    return [dict(zip(keys, values)) for values in itertools.product(*(grid[k] for k in keys))]


def point_label(point: Dict) -> str:
    return "_".join(f"{key}={value}" for key, value in point.items())


def cmd_sweep(args) -> int:
    cfg = load_config(args.config)
    setup_logging(args.log_level or cfg.log.level)
    base = output_directory(cfg, args.out)
    points = sweep_points(parse_vary(args.vary))
    rows: List[Sequence] = []
    worst = 0
    for point in points:
        label = point_label(point)
        logger.verbose(f"sweep point {label}")
        try:
            result = execute(with_overrides(cfg, point), base / label, progress=not args.quiet)
            s = result.summary
            rows.append((label, s["side1_consensus"], s["side2_consensus"], s["oracle_dist"], s["gap_proxy"], result.bytes_total))
        except SubnetBNEError as exc:
            logger.error(f"{label}: {exc}")
            rows.append((label, "-", "-", "-", "-", type(exc).__name__))
            worst = max(worst, exc.exit_code)
    console.print(metrics_table("Sweep", ["point", "side1_consensus", "side2_consensus", "oracle_dist", "gap_proxy", "bytes"], rows))
    return worst


def cmd_versions(args) -> int:
    console.print(metrics_table("Versions", ["Key", "Pinned", "Installed"], version_rows()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="subnet-bne",
        description="Approximate Bayesian Nash equilibria of two-subnetwork zero-sum games",
        formatter_class=argparse.RawDescriptionHelpFormatter,
    )
    parser.add_argument("--log-level", choices=["debug", "info", "warning", "error"], help="Override the config's log level")
    subparsers = parser.add_subparsers(dest="command", help="Available commands")

    def with_config(name: str, help_text: str) -> argparse.ArgumentParser:
        sub = subparsers.add_parser(name, help=help_text)
        sub.add_argument("config", type=Path, help="Experiment YAML file")
        sub.add_argument("--out", help="Output directory (overrides outputs.directory)")
        sub.add_argument("--quiet", action="store_true", help="No progress bar")
        return sub

    with_config("run", "Run the distributed algorithm (and the oracle unless disabled)")
    with_config("oracle", "Solve the discretized game centrally")
    sweep = with_config("sweep", "Run the Cartesian product of --vary assignments")
    sweep.add_argument("--vary", required=True, help='Assignments such as "N=10,20;rho=0.5,1"')
    with_config("validate", "Connectivity and sum-structure checks only")
    subparsers.add_parser("versions", help="Show pinned and installed versions")
    return parser


COMMANDS = {
    "run": cmd_run,
    "oracle": cmd_oracle,
    "sweep": cmd_sweep,
    "validate": cmd_validate,
    "versions": cmd_versions,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        return COMMANDS[args.command](args)
    except SubnetBNEError as exc:
        logger.error(str(exc))
        return exc.exit_code
    except KeyboardInterrupt:
        logger.warn("Interrupted by user")
        return 130
