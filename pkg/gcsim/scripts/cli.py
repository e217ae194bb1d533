#!/usr/bin/env python3
"""CLI for running guard-channel experiments."""

import json
import logging
import sys
from contextlib import contextmanager
from typing import Any, Callable, Iterator, Optional, TextIO

import click
from rich.panel import Panel
from rich.text import Text

from gcsim.config import configure_logging, console
from gcsim.errors import DomainError, LogicError, ScenarioInvalid
from gcsim.model import SchemeKind, Scenario, derive, load_scenario
from gcsim.oracle import ChainSpec, solve_chain
from gcsim.report import display_table, report_rows, write_rows
from gcsim.runner import ReplicationPool, SweepSpec, compare_schemes, run_scheme, sweep

logger = logging.getLogger(__name__)

EXIT_IO = 1
EXIT_VALIDATION = 2
EXIT_INTERNAL = 3

SCHEME_NAMES = [scheme.value for scheme in SchemeKind]


def load_or_exit(config_path: str) -> Scenario:
    try:
        return load_scenario(config_path)
    except OSError as e:
        console.print(f"❌ Cannot read {config_path}: {e}")
        sys.exit(EXIT_IO)
    except ScenarioInvalid as e:
        report_issues(e)
        sys.exit(EXIT_VALIDATION)


def report_issues(error: ScenarioInvalid) -> None:
    console.print(f"❌ Scenario invalid ({len(error.issues)} problem(s)):")
    for issue in error.issues:
        console.print(f"   • {issue.field}: {issue.rule}")


def apply_overrides(scenario: Scenario, **overrides: Any) -> Scenario:
    changes = {
        "base_seed": overrides.get("seed"),
        "replications": overrides.get("replications"),
        "scheme": overrides.get("scheme"),
    }
    changes = {key: value for key, value in changes.items() if value is not None}
    if not changes:
        return scenario
    try:
        return derive(scenario, changes)
    except ScenarioInvalid as e:
        report_issues(e)
        sys.exit(EXIT_VALIDATION)


@contextmanager
def output_stream(output: Optional[str]) -> Iterator[TextIO]:
    if output is None:
        yield sys.stdout
        return
    try:
        with open(output, "w", encoding="utf-8", newline="") as handle:
            yield handle
    except OSError as e:
        console.print(f"❌ Cannot write {output}: {e}")
        sys.exit(EXIT_IO)
    logger.info(f"💾 Report written to {output}")


def guarded(body: Callable[[], None], trace: Optional[str] = None) -> None:
    """Run a command body, mapping library errors to exit codes."""
    try:
        body()
    except ScenarioInvalid as e:
        report_issues(e)
        sys.exit(EXIT_VALIDATION)
    except DomainError as e:
        console.print(f"❌ {e}")
        sys.exit(EXIT_VALIDATION)
    except LogicError as e:
        pointer = f"event trace in {trace}" if trace else "re-run with --trace PATH to capture the event trace"
        console.print(f"🚨 Internal consistency failure: {e} ({pointer})")
        sys.exit(EXIT_INTERNAL)


def run_options(func: Callable) -> Callable:
    """Options shared by run, compare and sweep."""
    options = [
        click.option("--config", "config_path", required=True, type=click.Path(), help="Scenario JSON file"),
        click.option("--seed", type=click.IntRange(0, 2**64 - 1), help="Override base_seed"),
        click.option("--replications", type=click.IntRange(min=1), help="Override replication count"),
        click.option("--output", "-o", type=click.Path(), help="Write the report here instead of stdout"),
        click.option("--format", "fmt", type=click.Choice(["csv", "json"]), default="csv", help="Output format"),
        click.option("--quiet", "-q", is_flag=True, help="Skip the summary table on stderr"),
    ]
    for option in reversed(options):
        func = option(func)
    return func


@click.group()
@click.option("--log-level", default=None, help="Logging level (default from GCSIM_LOG_LEVEL or WARNING)")
def main(log_level: Optional[str]) -> None:
    """Guard-channel call admission simulator."""
    configure_logging(log_level)


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(), help="Scenario JSON file")
def validate(config_path: str) -> None:
    """Validate a scenario file and echo it normalized."""
    scenario = load_or_exit(config_path)
    click.echo(json.dumps(scenario.model_dump(mode="json"), indent=2))
    console.print(Panel.fit(Text(f"✅ Scenario '{scenario.scenario_id}' is valid", style="bold green"), border_style="green"))


@main.command()
@run_options
@click.option("--scheme", type=click.Choice(SCHEME_NAMES), help="Override the scheme")
@click.option("--trace", type=click.Path(), help="Dump the event trace of replication 0")
def run(config_path: str, seed: Optional[int], replications: Optional[int], output: Optional[str],
        fmt: str, quiet: bool, scheme: Optional[str], trace: Optional[str]) -> None:
    """Run one scenario and emit its blocking report."""
    scenario = apply_overrides(load_or_exit(config_path), seed=seed, replications=replications, scheme=scheme)

    def body() -> None:
        with ReplicationPool() as pool:
            if trace:
                try:
                    with open(trace, "w", encoding="utf-8", newline="") as trace_stream:
                        report = run_scheme(scenario, pool, trace_stream)
                except OSError as e:
                    console.print(f"❌ Cannot write trace {trace}: {e}")
                    sys.exit(EXIT_IO)
            else:
                report = run_scheme(scenario, pool)
        with output_stream(output) as stream:
            write_rows(report_rows([report]), stream, fmt)
        if not quiet:
            display_table([report], title=f"{scenario.scenario_id} ({scenario.scheme.value})")

    guarded(body, trace)


@main.command()
@run_options
def compare(config_path: str, seed: Optional[int], replications: Optional[int], output: Optional[str],
            fmt: str, quiet: bool) -> None:
    """Run all four schemes on one scenario with common random numbers."""
    scenario = apply_overrides(load_or_exit(config_path), seed=seed, replications=replications)

    def body() -> None:
        with ReplicationPool() as pool:
            reports = compare_schemes(scenario, pool)
        with output_stream(output) as stream:
            write_rows(report_rows(reports), stream, fmt)
        if not quiet:
            display_table(reports, title=f"{scenario.scenario_id}: scheme comparison")

    guarded(body)


@main.command(name="sweep")
@run_options
@click.option("--param", "parameter", required=True,
              type=click.Choice(["new_call_rate", "exogenous_handoff_rate", "total_channels"]))
@click.option("--from", "start", required=True, type=float, help="First grid value")
@click.option("--to", "stop", required=True, type=float, help="Last grid value")
@click.option("--steps", required=True, type=int, help="Number of grid points (>= 2)")
def sweep_command(config_path: str, seed: Optional[int], replications: Optional[int], output: Optional[str],
                  fmt: str, quiet: bool, parameter: str, start: float, stop: float, steps: int) -> None:
    """Compare all schemes at every point of a one-parameter grid."""
    scenario = apply_overrides(load_or_exit(config_path), seed=seed, replications=replications)

    def body() -> None:
        spec = SweepSpec(parameter, start, stop, steps)
        with ReplicationPool() as pool:
            points = sweep(scenario, spec, pool)
        rows = []
        for value, reports in points:
            rows.extend(report_rows(reports, parameter, value))
        with output_stream(output) as stream:
            write_rows(rows, stream, fmt)
        if not quiet:
            for value, reports in points:
                display_table(reports, title=f"{parameter} = {value}")

    guarded(body)


@main.command()
@click.option("--channels", "-S", "S", required=True, type=int, help="Channels per cell")
@click.option("--guard", "-g", "g", required=True, type=int, help="Guard channels (cutoff S - g)")
@click.option("--new-rate", "lambda_n", required=True, type=float, help="New-call arrival rate")
@click.option("--handoff-rate", "lambda_h", required=True, type=float, help="Handoff arrival rate")
@click.option("--service-rate", "mu", required=True, type=float, help="Per-call completion rate")
def oracle(S: int, g: int, lambda_n: float, lambda_h: float, mu: float) -> None:
    """Exact (P_new, P_handoff) of the cutoff birth-death chain."""

    def body() -> None:
        p_new, p_handoff = solve_chain(ChainSpec(S, g, lambda_n, lambda_h, mu))
        click.echo(f"P_new {p_new:.12g}")
        click.echo(f"P_handoff {p_handoff:.12g}")

    guarded(body)


if __name__ == "__main__":
    main()
