"""Command-line front end: ``mcusum <command> --config experiment.json``.

Every command reads the same experiment schema. Flags override the matching config fields, data goes
to files (or standard output for ``placements``), logging goes to standard error.
"""
import argparse
import csv
import json
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from mcusum import __version__
from mcusum.config import (
    ExperimentConfig,
    dump_json,
    parse_config,
    resolve_experiment,
    validate_config,
)
from mcusum.evaluation import calibrate_threshold, tradeoff_curve, write_curve_csv, write_trials_csv
from mcusum.exceptions import ConfigError, ConfigValidationError, McusumError
from mcusum.schema import to_dict
from mcusum.weights import OptimizerConfig, drift_report, optimize_weights, verify_lemma3

logger = logging.getLogger("mcusum")

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_RUNTIME = 3

DRIFT_STREAM = 3


def default_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))  # type: ignore[attr-defined]
    except AttributeError:
        return os.cpu_count() or 1


def read_config(path: Path) -> ExperimentConfig:
    """Load an experiment config, or the config recorded in a provenance file."""
    try:
        with open(path, encoding="utf-8") as handle:
            data = json.load(handle)
    except (OSError, json.JSONDecodeError) as error:
        raise ConfigValidationError(f"cannot read {path}: {error}") from error
    if isinstance(data, dict) and "config" in data and "model" not in data:
        data = data["config"]
    return parse_config(data)


def apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    changes: Dict[str, object] = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.out is not None:
        changes["out_dir"] = str(args.out)
    if getattr(args, "gamma", None):
        changes.update(gammas=list(args.gamma), thresholds=None)
    if getattr(args, "threshold", None):
        changes.update(thresholds=list(args.threshold), gammas=None)
    if getattr(args, "trials", None) is not None:
        changes["n_trials"] = args.trials
    if getattr(args, "list", False):
        changes["list_placements"] = True
    changes["workers"] = args.workers or config.workers or default_workers()
    return replace(config, **changes)


def _output_dir(config: ExperimentConfig) -> Path:
    out = Path(config.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def write_provenance(config: ExperimentConfig, command: str, output: Path) -> Path:
    """Record what produced `output`; the file doubles as a config for an exact rerun."""
    path = output.with_name(output.stem + ".provenance.json")
    dump_json(
        {
            "command": command,
            "config": to_dict(config),
            "output": output.name,
            "seed": config.seed,
            "version": __version__,
            "workers": config.workers,
        },
        path,
    )
    return path


def cmd_placements(config: ExperimentConfig) -> int:
    placements = validate_config(config).placements
    print(f"{len(placements)} placements")
    print(f"first: {list(placements[0])}")
    print(f"last: {list(placements[len(placements) - 1])}")
    if config.list_placements:
        for index, placement in enumerate(placements):
            print(f"{index}\t{' '.join(str(i) for i in placement)}")
    return EXIT_OK


def cmd_optimize(config: ExperimentConfig) -> int:
    model = validate_config(config)
    optimizer: OptimizerConfig = config.optimizer.build(config.seed)
    weights, report = optimize_weights(model, optimizer)
    verification = verify_lemma3(model, weights, report, report.tolerance())
    if not verification.passed:
        failed = ", ".join(check.name for check in verification.checks if not check.passed)
        logger.warning("optimality conditions not met: %s", failed)
    output = _output_dir(config) / "optimize.json"
    dump_json(
        {
            "weights": list(weights.values),
            "report": report.to_dict(),
            "optimality_conditions": verification.to_dict(),
            "optimizer": to_dict(optimizer),
        },
        output,
    )
    write_provenance(config, "optimize", output)
    print(f"I = {report.kl_number:.6f} +/- {report.kl_stderr:.6f} -> {output}")
    return EXIT_OK


def cmd_drift(config: ExperimentConfig) -> int:
    experiment = resolve_experiment(config)
    rng = np.random.default_rng(np.random.SeedSequence(config.seed, spawn_key=(DRIFT_STREAM,)))
    report = drift_report(
        experiment.model,
        experiment.weights,
        config.drift_samples,
        rng,
        support_epsilon=config.optimizer.support_epsilon,
    )
    lowest = int(np.argmin(report.drifts))
    output = _output_dir(config) / "drift.json"
    dump_json(
        {
            "report": report.to_dict(),
            "min_drift": report.drifts[lowest],
            "min_drift_placement": list(report.placements[lowest]),
        },
        output,
    )
    write_provenance(config, "drift", output)
    print(f"min drift {report.drifts[lowest]:.6f} at {list(report.placements[lowest])} -> {output}")
    return EXIT_OK


def cmd_calibrate(config: ExperimentConfig) -> int:
    if not config.gammas:
        raise ConfigValidationError("calibration needs target MTFA values", field_path="gammas")
    experiment = resolve_experiment(config)
    output = _output_dir(config) / "calibration.csv"
    rows: List[Sequence[object]] = []
    for detector in experiment.detectors:
        for gamma in config.gammas:
            calibration = calibrate_threshold(
                detector,
                experiment.model,
                gamma,
                config.rel_tol,
                config.seed,
                n_trials=config.n_trials_mtfa,
                horizon=config.horizon,
                policy=experiment.policies_for(detector)[0],
                workers=config.workers or 1,
            )
            mtfa = calibration.mtfa
            rows.append(
                (
                    detector.name,
                    repr(float(gamma)),
                    repr(calibration.threshold_b),
                    repr(mtfa.mean),
                    repr(mtfa.ci_halfwidth),
                    mtfa.n_trials,
                    mtfa.censored,
                    int(calibration.converged),
                    calibration.evaluations,
                )
            )
    with open(output, "w", encoding="utf-8", newline="") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(
            ("detector", "gamma", "b", "mtfa", "mtfa_ci", "n_trials", "censored", "converged", "evaluations")
        )
        writer.writerows(rows)
    write_provenance(config, "calibrate", output)
    print(f"{len(rows)} calibrations -> {output}")
    return EXIT_OK


def _run_curve(config: ExperimentConfig, name: str) -> None:
    experiment = resolve_experiment(config)
    points = tradeoff_curve(experiment, workers=config.workers)
    out = _output_dir(config)
    output = out / f"{name}.csv"
    write_curve_csv(points, output)
    dump_json({"points": [point.to_dict() for point in points]}, out / f"{name}_delays.json")
    write_provenance(config, name, output)
    if name == "simulate":
        write_trials_csv(points, out / "trials.csv")
    print(f"{len(points)} rows -> {output}")


def cmd_simulate(config: ExperimentConfig) -> int:
    _run_curve(config, "simulate")
    return EXIT_OK


def cmd_curve(config: ExperimentConfig) -> int:
    _run_curve(config, "curve")
    return EXIT_OK


COMMANDS: Dict[str, Callable[[ExperimentConfig], int]] = {
    "placements": cmd_placements,
    "optimize": cmd_optimize,
    "drift": cmd_drift,
    "calibrate": cmd_calibrate,
    "simulate": cmd_simulate,
    "curve": cmd_curve,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mcusum", description="Quickest detection of a moving anomaly.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, required=True, help="experiment JSON (or a provenance file)")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--workers", type=int, help="worker processes (default: available CPUs)")
    common.add_argument("--out", type=Path, help="output directory")
    verbosity = common.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")

    commands = parser.add_subparsers(dest="command", required=True)
    placements = commands.add_parser("placements", parents=[common], help="enumerate anomaly placements")
    placements.add_argument("--list", action="store_true", help="print every placement")
    commands.add_parser("optimize", parents=[common], help="fit the mixture weights")
    commands.add_parser("drift", parents=[common], help="per-placement drifts of the configured weights")
    calibrate = commands.add_parser("calibrate", parents=[common], help="thresholds for target MTFA values")
    calibrate.add_argument("--gamma", type=float, action="append", help="target MTFA (repeatable)")
    for name in ("simulate", "curve"):
        sub = commands.add_parser(name, parents=[common], help=f"{name} MTFA and worst delay over a grid")
        grid = sub.add_mutually_exclusive_group()
        grid.add_argument("--gamma", type=float, action="append", help="target MTFA (repeatable)")
        grid.add_argument("--threshold", type=float, action="append", help="threshold b (repeatable)")
        sub.add_argument("--trials", type=int, help="delay trials per grid point")
    return parser


def configure_logging(verbose: bool, quiet: bool) -> None:
    level = logging.DEBUG if verbose else logging.WARNING if quiet else logging.INFO
    logging.basicConfig(stream=sys.stderr, level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    configure_logging(args.verbose, args.quiet)
    try:
        config = apply_overrides(read_config(args.config), args)
        return COMMANDS[args.command](config)
    except ConfigError as error:
        logger.error("configuration error: %s", error)
        return EXIT_CONFIG
    except McusumError as error:
        logger.error("%s failed: %s", args.command, error)
        return EXIT_RUNTIME
