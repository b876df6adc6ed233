"""loctime command-line entry point.

Subcommands: identities, representation, clt, scaling, gamma.
Can be invoked as: python -m loctime.main <subcommand> [flags]

Exit codes: 0 pass, 1 scientific-check failure or unexpected error,
2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from collections.abc import Mapping, Sequence
from pathlib import Path
from typing import Optional

import yaml
from pydantic import ValidationError

from loctime import artifacts, harness, registry, studies
from loctime.errors import UsageError
from loctime.models import ExperimentConfig

logger = logging.getLogger(__name__)

_SETTINGS_PATH = Path(__file__).resolve().parent.parent / "config" / "settings.yml"

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_USAGE = 2

OUT_ENV_VAR = "LOCTIME_OUT"


def _load_settings() -> dict:
    """Load per-subcommand defaults from YAML."""
    with open(_SETTINGS_PATH, "r", encoding="utf-8") as f:
        return yaml.safe_load(f)


def load_config_file(path: str | Path) -> dict:
    """Read a JSON config document (parsed with the YAML loader).

    Raises:
        UsageError: If the file is missing, unparsable or not an object.
    """
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise UsageError(f"cannot parse config file {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise UsageError(f"config file {path} must hold a single JSON object")
    return data


def build_config(
    command: str,
    args: argparse.Namespace,
    environ: Mapping[str, str] = os.environ,
) -> ExperimentConfig:
    """Effective config: settings.yml < config file < LOCTIME_OUT < flags."""
    data = dict(_load_settings().get(command) or {})
    if args.config:
        data.update(load_config_file(args.config))
    if environ.get(OUT_ENV_VAR):
        data["out_dir"] = environ[OUT_ENV_VAR]
    overrides = {
        "master_seed": args.seed,
        "n_paths": args.paths,
        "n_steps": args.steps,
        "t": args.t,
        "h_list": args.h,
        "out_dir": args.out,
        "threads": args.threads,
    }
    data.update({k: v for k, v in overrides.items() if v is not None})
    config = ExperimentConfig.model_validate(data)
    logger.info("Effective config: %s", json.dumps(config.model_dump(), sort_keys=True))
    return config


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON config file")
    common.add_argument("--seed", type=int, help="master seed")
    common.add_argument("--paths", type=int, help="number of paths")
    common.add_argument("--steps", type=int, help="time steps per path")
    common.add_argument("--t", type=float, help="horizon")
    common.add_argument("--h", type=float, nargs="+", help="bandwidths, strictly decreasing")
    common.add_argument("--out", help="output directory")
    common.add_argument("--threads", type=int, help="worker processes")
    common.add_argument(
        "--dump", type=int, default=0, metavar="N",
        help="write path and field CSVs for the first N paths to OUT/dumps",
    )
    common.add_argument("--verbose", action="store_true", help="debug logging")

    parser = argparse.ArgumentParser(
        prog="loctime", description="Brownian local-time modulus laboratory",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("identities", parents=[common], help="deterministic identity suite")
    sub.add_parser("representation", parents=[common], help="Clark-Ocone, Tanaka and gamma refinement study")
    clt = sub.add_parser("clt", parents=[common], help="CLT ensemble and report")
    clt.add_argument("--p", type=int, choices=(2, 3), default=3, help="modulus exponent")
    sub.add_parser("scaling", parents=[common], help="modulus and increment scaling")
    sub.add_parser("gamma", parents=[common], help="gamma representations per path")
    return parser


# -- Subcommands --

def cmd_identities(args: argparse.Namespace) -> int:
    logger.info("=== Identity suite ===")
    groups = registry.run_identities()
    print(registry.render_table(groups))
    failed = sum(not r.passed for _, results in groups for r in results)
    return EXIT_FAILED if failed else EXIT_OK


def _dump(config: ExperimentConfig, args: argparse.Namespace) -> None:
    if args.dump < 0:
        raise UsageError(f"--dump must be non-negative, got {args.dump}")
    if args.dump:
        harness.dump_paths(config, args.dump, Path(config.out_dir) / "dumps")


def cmd_clt(args: argparse.Namespace) -> int:
    config = build_config("clt", args)
    if len(config.h_list) < 3:
        raise UsageError(f"clt needs at least 3 bandwidths, got {len(config.h_list)}")
    _dump(config, args)
    out = Path(config.out_dir)

    logger.info("=== Step 1: Running %d paths ===", config.n_paths)
    records = harness.run_ensemble(config, out / "records.csv")

    logger.info("=== Step 2: Reporting ===")
    report = harness.sweep(config, args.p, records)
    artifacts.write_report_json(report, out / f"report_p{args.p}.json")
    artifacts.write_plot_csv(report, out / f"plot_p{args.p}.csv")

    for entry in report.entries.values():
        logger.info(
            "h=%g: n=%d D=%.4f mean=%.4f var=%.4f kurt=%.3f ratio=%.2f",
            entry.h, entry.n, entry.ks_d, entry.mean, entry.var, entry.kurt, entry.second_moment_ratio,
        )
    logger.info("Report %s", "PASSED" if report.passed else "FAILED")
    return EXIT_OK if report.passed else EXIT_FAILED


def _run_study(command: str, args: argparse.Namespace) -> int:
    config = build_config(command, args)
    _dump(config, args)
    out = Path(config.out_dir)
    if command == "representation":
        report = studies.run_representation(config, out)
    elif command == "scaling":
        report = studies.run_scaling(config, out)
    else:
        report = studies.run_gamma(config, out)
    for name, ok in report.checks.items():
        logger.info("%s: %s", name, "PASS" if ok else "FAIL")
    return EXIT_OK if report.passed else EXIT_FAILED


def run(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments and dispatch; returns the exit code."""
    args = build_parser().parse_args(argv)
    if args.verbose:
        logging.getLogger().setLevel(logging.DEBUG)
    if args.command == "identities":
        return cmd_identities(args)
    if args.command == "clt":
        return cmd_clt(args)
    return _run_study(args.command, args)


def main() -> None:
    """Entry point for the laboratory."""
    logging.basicConfig(
        level=logging.INFO,
        format="%(asctime)s %(levelname)-8s %(name)s: %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    try:
        code = run()
    except (UsageError, ValidationError) as exc:
        logger.error("Usage error: %s", exc)
        code = EXIT_USAGE
    except Exception as exc:
        logger.error("Run failed: %s", exc, exc_info=True)
        code = EXIT_FAILED
    sys.exit(code)


if __name__ == "__main__":
    main()
