"""
Replication aggregation: blocking probabilities with Student-t intervals.
"""
from __future__ import annotations

import logging
import math
from dataclasses import astuple, dataclass
from typing import Sequence

import numpy as np
from scipy import stats as sps

from gcsim.engine import CellCounters, ReplicationResult
from gcsim.errors import LogicError
from gcsim.model import SchemeKind

logger = logging.getLogger(__name__)

CONFIDENCE = 0.95

METRICS = (
    "new_call_blocking",
    "handoff_blocking",
    "forced_termination",
    "carried_load",
    "mean_guard_count",
    "channel_utilization",
)


def blocking_probability(blocks: int, attempts: int) -> float:
    if blocks < 0 or blocks > attempts:
        raise LogicError(f"blocks={blocks} outside 0..attempts={attempts}")
    if attempts == 0:
        return 0.0
    return blocks / attempts


def forced_termination_probability(result: ReplicationResult) -> float:
    """Share of admitted new calls later dropped at a handoff."""
    totals = result.totals
    if totals.admitted_new == 0:
        return 0.0
    return blocking_probability(totals.drops, totals.admitted_new)


def replication_metrics(result: ReplicationResult) -> dict[str, float]:
    totals = result.totals
    # per-cell time averages over the post-warmup window
    per_cell_time = result.observed_time * result.cell_count
    carried = totals.carried_integral / per_cell_time
    return {
        "new_call_blocking": blocking_probability(totals.new_blocks, totals.new_attempts),
        "handoff_blocking": blocking_probability(totals.handoff_blocks, totals.handoff_attempts),
        "forced_termination": forced_termination_probability(result),
        "carried_load": carried,
        "mean_guard_count": totals.guard_integral / per_cell_time,
        "channel_utilization": carried / result.total_channels,
    }


@dataclass(frozen=True)
class MetricSummary:
    mean: float
    stderr: float | None
    ci95_half: float | None
    replications: int


@dataclass(frozen=True)
class BlockingReport:
    scenario_id: str
    scenario_key: str
    scheme: SchemeKind
    replications: int
    metrics: dict[str, MetricSummary]

    def __getitem__(self, metric: str) -> MetricSummary:
        return self.metrics[metric]


def summarize(values: Sequence[float]) -> MetricSummary:
    n = len(values)
    data = np.asarray(values, dtype=float)
    mean = math.fsum(data) / n
    if n < 2:
        return MetricSummary(mean, None, None, n)
    if np.ptp(data) == 0:
        return MetricSummary(float(data[0]), 0.0, 0.0, n)
    stderr = float(sps.sem(data))
    low, high = sps.t.interval(CONFIDENCE, n - 1, loc=mean, scale=stderr)
    return MetricSummary(mean, stderr, float(high - low) / 2, n)


def _canonical_order(results: Sequence[ReplicationResult]) -> list[ReplicationResult]:
    return sorted(results, key=lambda r: (r.replication_index, astuple(r.totals)))


def aggregate(results: Sequence[ReplicationResult]) -> BlockingReport:
    """Fold replications of one scenario into a report; input order is irrelevant."""
    if not results:
        raise LogicError("aggregate needs at least one replication")
    keys = {(r.scenario_key, r.scheme) for r in results}
    if len(keys) > 1:
        raise LogicError(f"cannot aggregate replications of {len(keys)} different scenarios")

    ordered = _canonical_order(results)
    per_replication = [replication_metrics(r) for r in ordered]
    metrics = {name: summarize([m[name] for m in per_replication]) for name in METRICS}
    first = ordered[0]
    return BlockingReport(first.scenario_id, first.scenario_key, first.scheme, len(ordered), metrics)


def pooled_counts(results: Sequence[ReplicationResult]) -> CellCounters:
    """Raw counts summed over replications."""
    total = CellCounters()
    for result in _canonical_order(results):
        total = total + result.totals
    return total


def pooled_blocking(results: Sequence[ReplicationResult]) -> tuple[float, float]:
    """(P_new, P_handoff) from pooled raw counts rather than per-replication means."""
    counts = pooled_counts(results)
    return (
        blocking_probability(counts.new_blocks, counts.new_attempts),
        blocking_probability(counts.handoff_blocks, counts.handoff_attempts),
    )
