"""The ``nbvae`` command.

Subcommands: prepare, train, evaluate, predict, gradcheck, experiment.
Exit codes: 0 success, 1 check failure, 2 configuration or validation
error, 3 numeric abort.

"""
import logging
from contextlib import contextmanager
from typing import Dict, Optional

from runcommands import abort, arg, command, printer

from . import runner
from .exc import ConfigurationError, NBVAEError
from .renderers import render_metric_table
from .settings import get_setting, read_config, resolve_settings


__all__ = ["main"]


log = logging.getLogger(__name__)


SEED_SETTINGS = ("model.seed", "train.seed", "evaluation.seed", "data.split_seed")


@contextmanager
def exit_on_error():
    try:
        yield
    except NBVAEError as exc:
        abort(exc.exit_code, str(exc))


def configure_logging(level: str):
    numeric_level = logging.getLevelName(level.upper())
    if not isinstance(numeric_level, int):
        raise ConfigurationError(f"Setting log_level is not a log level: {level}")
    logging.basicConfig(
        level=numeric_level, format="%(asctime)s %(levelname)s %(name)s: %(message)s"
    )


def load_settings(
    config: Optional[str],
    seed: Optional[int] = None,
    out: Optional[str] = None,
    threads: Optional[int] = None,
    task: Optional[str] = None,
) -> Dict:
    """Resolve settings from a config file plus command line overrides.

    ``--seed`` sets every seed (model, train, evaluation, and split).

    """
    overrides: Dict = {}
    if task is not None:
        overrides["task"] = task
    if seed is not None:
        overrides.update((name, seed) for name in SEED_SETTINGS)
    if out is not None:
        overrides["output.dir"] = out
    if threads is not None:
        if threads < 1:
            raise ConfigurationError("--threads must be >= 1")
        overrides["output.threads"] = threads
    settings = resolve_settings(read_config(config) if config else {}, overrides)
    configure_logging(get_setting(settings, "log_level"))
    return settings


@command
def main(subcommand: arg() = None):
    """Train and evaluate negative-binomial variational autoencoders."""
    if subcommand is None:
        printer.info("Run `nbvae --help` to see the available subcommands")


@main.subcommand
def prepare(
    config: arg(help="JSON settings file") = None,
    seed: arg(type=int, help="Override every seed") = None,
    out: arg(help="Output directory") = None,
):
    """Validate a data file and write train/validation/test splits."""
    with exit_on_error():
        settings = load_settings(config, seed, out)
        prepared = runner.run_prepare(settings)
    for which, path in prepared.paths.items():
        printer.info(f"{which}: {prepared.n_rows[which]} rows -> {path}")
    printer.success(f"Wrote config for the prepared data to {prepared.config}")


@main.subcommand
def train(
    config: arg(help="JSON settings file") = None,
    seed: arg(type=int, help="Override every seed") = None,
    out: arg(help="Output directory") = None,
    threads: arg(type=int, help="Maximum evaluation worker threads") = None,
):
    """Train a model and report metrics on the validation data."""
    with exit_on_error():
        settings = load_settings(config, seed, out, threads)
        run = runner.run_train(settings)
    printer.hr("Validation metrics")
    printer.info(render_metric_table(run.eval_report.metrics))
    printer.info(f"Wall clock: {run.eval_report.wall_clock:.2f}s")
    if run.stopped_early:
        printer.info("Stopped early")
    printer.success(f"Checkpoint written to {run.checkpoint} ({run.checkpoint_sha256})")


@main.subcommand
def evaluate(
    checkpoint: arg(help="Checkpoint manifest written by train") = None,
    config: arg(help="JSON settings file") = None,
    data: arg(help="Data file (default: data.test from the config)") = None,
    seed: arg(type=int, help="Override every seed") = None,
    out: arg(help="Output directory") = None,
    threads: arg(type=int, help="Maximum worker threads") = None,
):
    """Evaluate a checkpoint and write an evaluation report."""
    with exit_on_error():
        settings = load_settings(config, seed, out, threads)
        report = runner.run_evaluate(settings, checkpoint, data)
    printer.hr("Metrics")
    printer.info(render_metric_table(report.metrics))
    printer.info(f"Wall clock: {report.wall_clock:.2f}s")


@main.subcommand
def predict(
    checkpoint: arg(help="Checkpoint manifest written by train") = None,
    config: arg(help="JSON settings file") = None,
    data: arg(help="Data file (default: data.test from the config)") = None,
    top: arg(type=int, help="Number of items/labels per row") = 10,
    seed: arg(type=int, help="Override every seed") = None,
    out: arg(help="Output directory") = None,
    threads: arg(type=int, help="Maximum worker threads") = None,
):
    """Write the top scored items (or labels) for every row as CSV."""
    with exit_on_error():
        settings = load_settings(config, seed, out, threads)
        path = runner.run_predict(settings, checkpoint, data, top)
    printer.success(f"Predictions written to {path}")


@main.subcommand
def gradcheck(
    seeds: arg(type=int, help="Number of seeds to check") = 100,
    op: arg(container=list, help="Only check these ops") = None,
):
    """Check every backward rule against finite differences."""
    with exit_on_error():
        configure_logging("WARNING")
        report = runner.run_gradcheck(seeds, op or None)
        width = max(len(name) for name in report.results)
        printer.hr("Worst relative error per operation")
        for name, result in report.results.items():
            line = f"{name.ljust(width)}  {result.worst_relative_error:.3e}"
            if result.passed:
                printer.info(line)
            else:
                printer.error(f"{line}  (tolerance {result.tolerance:.0e})")
        report.raise_for_failures()
    printer.success("All gradient checks passed")


@main.subcommand
def experiment(
    kind: arg(choices=("text", "binary", "multilabel")),
    seeds: arg(type=int, help="Number of seeds") = 5,
    out: arg(help="Output directory") = None,
    threads: arg(type=int, help="Maximum evaluation worker threads") = None,
):
    """Run a multi-seed comparison on synthetic data."""
    with exit_on_error():
        settings = load_settings(None, out=out, threads=threads)
        result = runner.run_experiment(settings, kind, range(seeds))
    printer.hr(f"{kind}: {result.metric}")
    for seed, scores in zip(result.seeds, result.scores):
        printer.info(f"seed {seed}: {scores}")
    for contender, wins in result.wins().items():
        n_seeds = len(result.seeds)
        printer.info(f"{contender} beat {result.baseline} on {wins}/{n_seeds} seeds")
