"""Command line entry point: ``gridstorm run | validate | attack``."""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click
from pydantic import ValidationError

from .grid_model import CaseError, load_case_file, parse_document, validate_document
from .market import solve_market
from .scenario import ScenarioConfig, default_branches, load_config, make_plan, run_sweep, write_reports

EXIT_SCENARIO_ERROR = 1
EXIT_CONFIG_ERROR = 2


def _setup_logging() -> None:
    level = os.environ.get("GRIDSTORM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s")


@click.group()
def main() -> None:
    """Coordinated T&D market, IoT load attacks and breaker cascades."""
    _setup_logging()


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False))
@click.option("--jobs", default=1, show_default=True, type=click.IntRange(min=1))
@click.option("--out", "out_dir", default=None, type=click.Path(file_okay=False), help="Overrides output_dir.")
@click.option("--dump-programs", is_flag=True, help="Write LP-format dumps of the market programs.")
def run(config_path: str, jobs: int, out_dir: str | None, dump_programs: bool) -> None:
    """Run a sweep and write summary.csv, margins.csv and per-scenario JSON."""
    try:
        config = load_config(config_path)
    except (OSError, ValidationError, ValueError) as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    out = Path(out_dir or config.output_dir)
    case_path = config.case_path(Path(config_path).parent)
    try:
        load_case_file(case_path)
    except (OSError, CaseError) as exc:
        click.echo(f"case error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    dump_dir = str(out / "programs") if dump_programs else None
    try:
        case, _, results = run_sweep(config, case_path, jobs=jobs, dump_dir=dump_dir)
    except Exception as exc:
        click.echo(json.dumps({"error": f"{type(exc).__name__}: {exc}"}), err=True)
        sys.exit(EXIT_SCENARIO_ERROR)
    write_reports(out, case, results, config)
    failed = [r for r in results if r.error]
    for r in failed:
        click.echo(json.dumps({"scenario": r.tag, "error": r.error}), err=True)
    click.echo(f"{len(results) - len(failed)}/{len(results)} scenarios written to {out}")
    sys.exit(EXIT_SCENARIO_ERROR if failed else 0)


@main.command()
@click.argument("case", type=click.Path(dir_okay=False))
def validate(case: str) -> None:
    """Check a case file; one diagnostic per line, exit 2 if any."""
    try:
        text = Path(case).read_text()
    except OSError as exc:
        click.echo(f"cannot read {case}: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    try:
        diags = validate_document(parse_document(text))
    except CaseError as exc:
        diags = exc.diagnostics
    for d in diags:
        click.echo(d)
    if diags:
        sys.exit(EXIT_CONFIG_ERROR)
    click.echo("ok")


@main.command()
@click.option("--strategy", type=click.Choice(["naive", "insidious"]), required=True)
@click.option("--rho", type=click.FloatRange(0.0, 1.0), required=True)
@click.option("--gamma", type=click.FloatRange(0.0, 1.0), default=0.0, show_default=True)
@click.option("--dump-programs", "dump_dir", default=None, type=click.Path(file_okay=False),
              help="Directory for LP-format dumps of the pre-attack market programs.")
@click.argument("case", type=click.Path(dir_okay=False))
def attack(strategy: str, rho: float, gamma: float, dump_dir: str | None, case: str) -> None:
    """Print the attack plan (no cascade) as JSON."""
    try:
        grid = load_case_file(case)
    except (OSError, CaseError) as exc:
        click.echo(f"case error: {exc}", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    if not grid.feeders:
        click.echo("case has no feeder", err=True)
        sys.exit(EXIT_CONFIG_ERROR)
    config = ScenarioConfig(case=case)
    pre = solve_market(grid, config=config.market_config(dump_dir))
    if not pre.optimal:
        click.echo(f"pre-attack market {pre.status}", err=True)
        sys.exit(EXIT_SCENARIO_ERROR)
    plan = make_plan(grid, pre, strategy, rho, gamma, config)
    click.echo(plan.to_json())


if __name__ == "__main__":
    main()
