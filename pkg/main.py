"""Main entry point for the fairness audit: run, validate and report commands."""

import argparse
import logging
import sys
from typing import List, Optional

from src.config import load_config, validate_config
from src.errors import AuditError, ConfigError, DataError, RunFailure
from src.experiment import reaggregate, run_experiment
from src.report import emit_outputs, load_report
from src.ui import (
    configure_logging,
    console,
    display_banner,
    display_error,
    display_outputs,
    display_summary,
    display_validation,
)


logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_DATA = 2
EXIT_RUNTIME = 3


def build_parser() -> argparse.ArgumentParser:
    """Command-line parser."""
    parser = argparse.ArgumentParser(
        prog="fairaudit",
        description="Audit fairness of models trained on real versus synthetic tabular data.",
    )
    verbosity = parser.add_mutually_exclusive_group()
    verbosity.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    verbosity.add_argument("-q", "--quiet", action="store_true", help="warnings and errors only")
    commands = parser.add_subparsers(dest="command", required=True)

    run = commands.add_parser("run", help="run the experiment described by a config file")
    run.add_argument("config", help="YAML experiment config")
    run.add_argument("--seed-subset", type=int, nargs="+", metavar="SEED",
                     help="run only these seeds (must appear in the config)")
    run.add_argument("--output-dir", help="override the config's output directory")

    validate = commands.add_parser("validate", help="check a config file without running it")
    validate.add_argument("config", help="YAML experiment config")

    report = commands.add_parser("report", help="re-aggregate an existing output directory")
    report.add_argument("directory", help="directory containing report.json")
    return parser


def exit_code_for(error: BaseException) -> int:
    """Map an exception to the process exit code."""
    if isinstance(error, RunFailure):
        return exit_code_for(error.cause)
    if isinstance(error, ConfigError):
        return EXIT_CONFIG
    if isinstance(error, DataError):
        return EXIT_DATA
    return EXIT_RUNTIME


def _load_valid_config(path: str):
    config = load_config(path)
    problems = validate_config(config)
    if problems:
        display_validation(problems)
        raise ConfigError(f"{len(problems)} problem(s) in {path}")
    return config


def command_run(args: argparse.Namespace) -> int:
    """Run an experiment and write its outputs."""
    config = _load_valid_config(args.config)
    if args.seed_subset:
        unknown = sorted(set(args.seed_subset) - set(config.seeds))
        if unknown:
            raise ConfigError(f"--seed-subset seeds not in the config: {unknown}")
        config = config.with_seeds(tuple(sorted(set(args.seed_subset))))
    output_dir = args.output_dir or config.output_dir

    report = run_experiment(config)
    written = emit_outputs(report, output_dir)
    display_summary(report)
    display_outputs(written)
    return EXIT_OK


def command_validate(args: argparse.Namespace) -> int:
    """Validate a config file."""
    config = load_config(args.config)
    problems = validate_config(config)
    display_validation(problems)
    return EXIT_OK if not problems else EXIT_CONFIG


def command_report(args: argparse.Namespace) -> int:
    """Recompute aggregates of an existing run and rewrite its outputs."""
    report = reaggregate(load_report(args.directory))
    written = emit_outputs(report, args.directory)
    display_summary(report)
    display_outputs(written)
    return EXIT_OK


COMMANDS = {"run": command_run, "validate": command_validate, "report": command_report}


def main(argv: Optional[List[str]] = None) -> int:
    """Parse arguments, dispatch the command and return the exit code."""
    args = build_parser().parse_args(argv)
    configure_logging(1 if args.verbose else -1 if args.quiet else 0)
    display_banner(args.command)
    try:
        return COMMANDS[args.command](args)
    except AuditError as e:
        display_error(str(e))
        return exit_code_for(e)
    except Exception as e:
        logger.exception("Unexpected failure")
        display_error(f"Unexpected failure: {e}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    try:
        sys.exit(main())
    except KeyboardInterrupt:
        console.print("\n\n[yellow]Interrupted.[/yellow]\n")
        sys.exit(EXIT_RUNTIME)
