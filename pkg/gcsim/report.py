"""
CSV / JSON rendering of blocking reports, plus the console summary table.
"""
from __future__ import annotations

import csv
import json
from typing import Any, Iterable, Sequence, TextIO

from rich.table import Table

from gcsim import config
from gcsim.stats import METRICS, BlockingReport

CSV_HEADER = [
    "scenario_id",
    "scheme",
    "param_name",
    "param_value",
    "metric",
    "mean",
    "stderr",
    "ci95_half",
    "replications",
]
NOT_APPLICABLE = "NA"


def format_number(value: float | int | None) -> str:
    if value is None:
        return NOT_APPLICABLE
    if isinstance(value, int):
        return str(value)
    return f"{value:.12g}"


def _as_json_number(value: float | int | None) -> float | int | None:
    if value is None or isinstance(value, int):
        return value
    return float(f"{value:.12g}")


def report_rows(
    reports: Sequence[BlockingReport],
    param_name: str = "",
    param_value: float | int | None = None,
) -> list[dict[str, Any]]:
    """One row per (scheme, metric), schemes in input order, metrics in METRICS order."""
    rows = []
    for report in reports:
        for metric in METRICS:
            summary = report.metrics[metric]
            rows.append(
                {
                    "scenario_id": report.scenario_id,
                    "scheme": report.scheme.value,
                    "param_name": param_name,
                    "param_value": param_value,
                    "metric": metric,
                    "mean": summary.mean,
                    "stderr": summary.stderr,
                    "ci95_half": summary.ci95_half,
                    "replications": summary.replications,
                }
            )
    return rows


def write_csv(rows: Iterable[dict[str, Any]], stream: TextIO) -> None:
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for row in rows:
        writer.writerow(
            [
                row["scenario_id"],
                row["scheme"],
                row["param_name"],
                "" if row["param_value"] is None else format_number(row["param_value"]),
                row["metric"],
                format_number(row["mean"]),
                format_number(row["stderr"]),
                format_number(row["ci95_half"]),
                row["replications"],
            ]
        )


def write_json(rows: Iterable[dict[str, Any]], stream: TextIO) -> None:
    payload = [
        {
            **row,
            "param_value": _as_json_number(row["param_value"]),
            "mean": _as_json_number(row["mean"]),
            "stderr": _as_json_number(row["stderr"]),
            "ci95_half": _as_json_number(row["ci95_half"]),
        }
        for row in rows
    ]
    stream.write(json.dumps(payload, indent=2) + "\n")


def read_csv(stream: TextIO) -> list[dict[str, Any]]:
    """Parse rows written by ``write_csv`` back into typed values."""

    def number(text: str) -> float | None:
        return None if text == NOT_APPLICABLE else float(text)

    rows = []
    for raw in csv.DictReader(stream):
        rows.append(
            {
                "scenario_id": raw["scenario_id"],
                "scheme": raw["scheme"],
                "param_name": raw["param_name"],
                "param_value": float(raw["param_value"]) if raw["param_value"] else None,
                "metric": raw["metric"],
                "mean": float(raw["mean"]),
                "stderr": number(raw["stderr"]),
                "ci95_half": number(raw["ci95_half"]),
                "replications": int(raw["replications"]),
            }
        )
    return rows


def write_rows(rows: list[dict[str, Any]], stream: TextIO, fmt: str) -> None:
    if fmt == "json":
        write_json(rows, stream)
    else:
        write_csv(rows, stream)


def display_table(reports: Sequence[BlockingReport], title: str = "Blocking report") -> None:
    """Print a compact per-scheme summary on stderr."""
    table = Table(title=title)
    table.add_column("Scheme", style="cyan", min_width=9)
    table.add_column("P_new", style="white", justify="right")
    table.add_column("P_handoff", style="white", justify="right")
    table.add_column("P_forced", style="yellow", justify="right")
    table.add_column("Carried", style="green", justify="right")
    table.add_column("Mean S_R", style="magenta", justify="right")

    def cell(report: BlockingReport, metric: str) -> str:
        summary = report.metrics[metric]
        if summary.ci95_half is None:
            return f"{summary.mean:.4f}"
        return f"{summary.mean:.4f} ± {summary.ci95_half:.4f}"

    for report in reports:
        table.add_row(
            report.scheme.value,
            cell(report, "new_call_blocking"),
            cell(report, "handoff_blocking"),
            cell(report, "forced_termination"),
            cell(report, "carried_load"),
            cell(report, "mean_guard_count"),
        )
    config.console.print(table)
