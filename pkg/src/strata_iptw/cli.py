"""Command-line interface for strata-iptw."""

import argparse
import logging
import sys
from typing import Any, Sequence

from strata_iptw.core.config import LOG_LEVELS, Config, load_environment, load_run_config, parse_formats
from strata_iptw.core.weights import STAGES
from strata_iptw.services import report_serializer as reports
from strata_iptw.services.analysis_service import AnalysisService
from strata_iptw.utils.errors import ConfigError, StrataIPTWError

logger = logging.getLogger(__name__)


def _add_common_arguments(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="YAML run-config file")
    parser.add_argument("--out-dir", help="Output directory (default: out)")
    parser.add_argument("--format", dest="formats", help="Report formats, comma separated (default: json,md)")
    parser.add_argument("--seed", type=int, help="Seed for simulation and bootstrap (default: 21082025)")
    parser.add_argument(
        "--log-level",
        choices=list(LOG_LEVELS),
        help="Log level (default: info)",
    )


def _add_input_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("input", "Cohort CSV and column roles (a simulated cohort is used without --input)")
    group.add_argument("--input", help="Cohort CSV file")
    group.add_argument("--id-col", help="Patient id column")
    group.add_argument("--exposure-col", help="Exposure column (default: Z)")
    group.add_argument("--stratum-col", help="Stratum column (default: stratum)")
    group.add_argument("--covariates", help="Covariate columns, comma separated")
    group.add_argument("--categorical", help="Categorical covariate columns, comma separated")
    group.add_argument("--outcome-col", help="Outcome column")


def _add_weighting_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("weighting")
    group.add_argument(
        "--stratify",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Fit per-stratum models with two-stage rescaling (default) or one global model",
    )
    group.add_argument("--truncate", type=float, help="Cap raw weights at this percentile and its mirror")


def _add_balance_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("balance")
    group.add_argument("--balance-covariates", help="Covariates to report, comma separated")
    group.add_argument("--stage", choices=list(STAGES), help="Weight stage for adjusted columns")
    group.add_argument("--smd-threshold", type=float, help="Flag adjusted |SMD| above this (default: 0.1)")


def _add_estimation_arguments(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("estimation")
    group.add_argument("--se-method", choices=["sandwich", "bootstrap", "both"], help="Standard error method")
    group.add_argument("--boot", type=int, help="Bootstrap resamples (default: 1000)")
    group.add_argument("--adjust-for", help="Outcome-model covariates, comma separated (conditional estimand)")
    group.add_argument(
        "--per-stratum",
        action=argparse.BooleanOptionalAction,
        default=None,
        help="Also report stratum-specific effects",
    )


def create_parser() -> argparse.ArgumentParser:
    """Create the argument parser for the CLI.

    Returns:
        Configured argument parser
    """
    parser = argparse.ArgumentParser(
        prog="strata-iptw",
        description="Stratified propensity-score weighting with two-stage rescaling",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  strata-iptw simulate --out-dir out
  strata-iptw weigh --input cohort.csv --covariates age,stage_IV --outcome-col y
  strata-iptw balance --input cohort.csv --covariates age,stage_IV --no-stratify
  strata-iptw estimate --config run.yaml --se-method both --boot 500 --per-stratum
  strata-iptw run --config run.yaml

Exit codes: 0 success, 2 configuration or input error,
3 stratum without an exposure arm, 4 numerical failure.
        """,
    )

    subparsers = parser.add_subparsers(
        dest="command",
        help="Command to run",
        required=True,
    )

    simulate_parser = subparsers.add_parser("simulate", help="Write a simulated demonstration cohort")
    _add_common_arguments(simulate_parser)
    simulate_parser.add_argument("--n", type=int, help="Total cohort size, keeping cell shares")

    weigh_parser = subparsers.add_parser("weigh", help="Fit propensity models and write weights")
    _add_common_arguments(weigh_parser)
    _add_input_arguments(weigh_parser)
    _add_weighting_arguments(weigh_parser)

    balance_parser = subparsers.add_parser("balance", help="Write overall and per-stratum balance reports")
    _add_common_arguments(balance_parser)
    _add_input_arguments(balance_parser)
    _add_weighting_arguments(balance_parser)
    _add_balance_arguments(balance_parser)

    estimate_parser = subparsers.add_parser("estimate", help="Estimate the marginal treatment effect")
    _add_common_arguments(estimate_parser)
    _add_input_arguments(estimate_parser)
    _add_weighting_arguments(estimate_parser)
    _add_estimation_arguments(estimate_parser)

    run_parser = subparsers.add_parser("run", help="Simulate (without input), weigh, balance and estimate")
    _add_common_arguments(run_parser)
    _add_input_arguments(run_parser)
    _add_weighting_arguments(run_parser)
    _add_balance_arguments(run_parser)
    _add_estimation_arguments(run_parser)

    return parser


def _split(value: str | None) -> list[str] | None:
    return parse_formats(value) if value is not None else None


def build_overrides(args: argparse.Namespace) -> dict[str, Any]:
    """Map command-line flags onto run-config sections; unset flags are skipped."""
    def get(name: str) -> Any:
        return getattr(args, name, None)

    sections: dict[str, dict[str, Any]] = {
        "input": {"path": get("input")},
        "columns": {
            "id": get("id_col"),
            "exposure": get("exposure_col"),
            "stratum": get("stratum_col"),
            "covariates": _split(get("covariates")),
            "categorical": _split(get("categorical")),
            "outcome": get("outcome_col"),
        },
        "weighting": {"stratify": get("stratify"), "truncate_percentile": get("truncate")},
        "balance": {
            "covariates": _split(get("balance_covariates")),
            "stage": get("stage"),
            "smd_threshold": get("smd_threshold"),
        },
        "estimation": {
            "se_method": get("se_method"),
            "n_boot": get("boot"),
            "seed": get("seed"),
            "adjust_for": _split(get("adjust_for")),
            "per_stratum": get("per_stratum"),
        },
        "output": {"out_dir": get("out_dir"), "formats": _split(get("formats"))},
        "simulation": {"seed": get("seed")},
    }
    overrides = {}
    for section, values in sections.items():
        present = {k: v for k, v in values.items() if v is not None}
        if present:
            overrides[section] = present
    return overrides


def _configure_logging(args: argparse.Namespace, env: Config) -> None:
    level = (args.log_level or env.log_level).upper()
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        stream=sys.stderr,
        force=True,
    )


def _prepare(args: argparse.Namespace, title: str) -> AnalysisService:
    """Load environment and config, configure logging, print the command banner."""
    load_environment()
    env = Config.from_env()
    _configure_logging(args, env)
    config = load_run_config(args.config, build_overrides(args), env)

    print(f"\n{'='*60}")
    print(title)
    print(f"{'='*60}")
    print(f"Input: {config.input.path or 'simulated cohort'}")
    print(f"Stratify: {config.weighting.stratify}")
    print(f"Output: {config.output.out_dir} ({', '.join(config.output.formats)})")
    print(f"{'='*60}\n")
    return AnalysisService(config)


def run_simulate_command(args: argparse.Namespace) -> None:
    """Simulate the demonstration cohort and write it as CSV."""
    service = _prepare(args, "Simulating Cohort")
    if args.n is not None:
        try:
            sim = service.config.simulation.with_total(args.n)
        except ValueError as e:
            raise ConfigError(str(e)) from None
        service.config = service.config.model_copy(update={"simulation": sim})
    cohort = service.simulate()
    print(reports.crosstab_markdown(cohort))


def run_weigh_command(args: argparse.Namespace) -> None:
    """Fit propensity models, write weights CSV and fit summaries."""
    service = _prepare(args, "Estimating Weights")
    cohort = service.load_cohort()
    weight_set = service.weigh(cohort)
    service.write_weights(cohort, weight_set)
    print(reports.dumps(reports.fits_to_dict(weight_set)))


def run_balance_command(args: argparse.Namespace) -> None:
    """Weigh and write balance reports."""
    service = _prepare(args, "Balance Diagnostics")
    cohort = service.load_cohort()
    weight_set = service.weigh(cohort)
    results = service.balance(cohort, weight_set)
    service.write_balance(results)
    print(results.to_markdown())


def run_estimate_command(args: argparse.Namespace) -> None:
    """Weigh and estimate the treatment effect."""
    service = _prepare(args, "Effect Estimation")
    cohort = service.load_cohort()
    plan = service.build_plan(cohort)
    weight_set = service.weigh(cohort, plan)
    estimates = service.estimate(cohort, weight_set, plan)
    service.write_estimates(estimates)
    print(reports.effects_markdown(estimates))


def run_full_command(args: argparse.Namespace) -> None:
    """Chain simulate, weigh, balance and estimate."""
    service = _prepare(args, "Full Analysis Run")
    result = service.run()
    print(result["balance"].to_markdown())
    if result["estimates"]:
        print(reports.effects_markdown(result["estimates"]))


def main(argv: Sequence[str] | None = None) -> None:
    """Main entry point for the CLI."""
    parser = create_parser()
    args = parser.parse_args(argv)

    command_map = {
        "simulate": run_simulate_command,
        "weigh": run_weigh_command,
        "balance": run_balance_command,
        "estimate": run_estimate_command,
        "run": run_full_command,
    }

    try:
        command_func = command_map.get(args.command)
        if command_func:
            command_func(args)
        else:
            print(f"Unknown command: {args.command}", file=sys.stderr)
            sys.exit(2)
    except KeyboardInterrupt:
        print("\n\nInterrupted by user", file=sys.stderr)
        sys.exit(130)
    except StrataIPTWError as e:
        print(f"\nError: {e}", file=sys.stderr)
        sys.exit(e.exit_code)
    except Exception as e:
        logger.exception("Unexpected failure")
        print(f"\nError: {str(e)}", file=sys.stderr)
        sys.exit(1)


if __name__ == "__main__":
    main()
