"""CLI entry points and argument parsing."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from vee_coherence.config import load_config, render_config
from vee_coherence.errors import InvariantViolation, ValidationError
from vee_coherence.logging_setup import configure_logging
from vee_coherence.runner import Figure, noise_check, replay, reproduce_figure, run_scenario

LOGGER = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_INVARIANT = 3
EXIT_FLAGGED = 4


def main(argv: Optional[Sequence[str]] = None) -> None:
    parser = _build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    sys.exit(_dispatch(args))


def _dispatch(args: argparse.Namespace) -> int:
    try:
        if args.command == "run":
            return _handle_run(args)
        if args.command == "reproduce":
            return _handle_reproduce(args)
        if args.command == "validate":
            return _handle_validate(args)
        if args.command == "noise-check":
            return _handle_noise_check(args)
        if args.command == "replay":
            return _handle_replay(args)
    except ValidationError as exc:
        for problem in exc.problems:
            LOGGER.error("Invalid config: %s", problem)
        return EXIT_CONFIG
    except (ValueError, FileNotFoundError) as exc:
        LOGGER.error("Invalid input: %s", exc)
        return EXIT_CONFIG
    except InvariantViolation as exc:
        LOGGER.error("%s", exc)
        return EXIT_INVARIANT
    except Exception:  # noqa: BLE001
        LOGGER.exception("Fatal error")
        return EXIT_FAILURE
    return EXIT_FAILURE


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vee-coherence")
    parser.add_argument("--log-level", default="INFO", help="Logging level (e.g. INFO, DEBUG)")
    parser.add_argument("--threads", type=int, default=None, help="Worker threads (default: env or CPU count)")
    subparsers = parser.add_subparsers(dest="command", required=True)

    run_parser = subparsers.add_parser("run", help="Simulate one scenario config and write CSV plus sidecar")
    run_parser.add_argument("config", help="Path to YAML scenario config")
    run_parser.add_argument("--output-dir", help="Override output.directory")

    reproduce_parser = subparsers.add_parser("reproduce", help="Run every curve of a figure sweep")
    reproduce_parser.add_argument("figure", help=", ".join(member.value for member in Figure))
    reproduce_parser.add_argument("--output-dir", default="output", help="Directory for CSV files")
    reproduce_parser.add_argument("--realizations", type=int, help="Override ensemble size for noisy curves")
    reproduce_parser.add_argument("--no-grid-check", action="store_true", help="Skip the dt/2 convergence re-run")

    validate_parser = subparsers.add_parser("validate", help="Check a config and print its canonical form")
    validate_parser.add_argument("config", help="Path to YAML scenario config")

    noise_parser = subparsers.add_parser("noise-check", help="Compare sampled noise correlations to the analytic form")
    noise_parser.add_argument("config", help="Path to a noisy-pulse scenario config")
    noise_parser.add_argument("--realizations", type=int, help="Number of sampled fields")

    replay_parser = subparsers.add_parser("replay", help="Re-run a sidecar and compare against its CSV")
    replay_parser.add_argument("sidecar", help="Path to <name>.meta.yaml")
    return parser


def _handle_run(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    output_dir = Path(args.output_dir) if args.output_dir else None
    outcome = run_scenario(config, threads=args.threads, output_dir=output_dir)
    print(outcome.csv_path)
    return EXIT_FLAGGED if outcome.flagged else EXIT_OK


def _handle_reproduce(args: argparse.Namespace) -> int:
    figure = Figure.parse(args.figure)
    result = reproduce_figure(
        figure,
        Path(args.output_dir),
        threads=args.threads,
        n_realizations=args.realizations,
        grid_check=not args.no_grid_check,
    )
    for run in result.runs:
        print(run.csv_path)
    return EXIT_FLAGGED if result.flagged else EXIT_OK


def _handle_validate(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    sys.stdout.write(render_config(config))
    return EXIT_OK


def _handle_noise_check(args: argparse.Namespace) -> int:
    config = load_config(args.config)
    report = noise_check(config, n_realizations=args.realizations, threads=args.threads)
    for pair in report.pairs:
        LOGGER.debug(
            "pair kind=%s t_a=%s t_b=%s z_real=%.3f z_imag=%.3f",
            pair.kind,
            pair.t_a,
            pair.t_b,
            pair.z_real,
            pair.z_imag,
        )
    print(f"pairs={len(report.pairs)} worst_z={report.worst_z:.3f} passed={report.passed}")
    return EXIT_OK if report.passed else EXIT_FLAGGED


def _handle_replay(args: argparse.Namespace) -> int:
    result = replay(Path(args.sidecar), threads=args.threads)
    print(f"{result.csv_path} matches={result.matches}")
    return EXIT_OK if result.matches else EXIT_FAILURE
