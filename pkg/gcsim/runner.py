"""
Replication fan-out, four-scheme comparison and parameter sweeps.

Workers only ever see the immutable scenario; results are re-keyed by
replication index after the join, so output never depends on worker count.
"""
from __future__ import annotations

import logging
from concurrent.futures import Executor, ProcessPoolExecutor
from dataclasses import dataclass
from itertools import repeat
from typing import Any, TextIO

import numpy as np

from gcsim import config
from gcsim.engine import ReplicationResult, TraceWriter, run_replication
from gcsim.errors import DomainError
from gcsim.model import SchemeKind, Scenario, derive
from gcsim.stats import BlockingReport, aggregate

logger = logging.getLogger(__name__)

# sweep parameter -> dotted scenario path
SWEEP_FIELDS = {
    "new_call_rate": "traffic.new_call_rate",
    "exogenous_handoff_rate": "traffic.exogenous_handoff_rate",
    "total_channels": "policy.total_channels",
}
INTEGER_PARAMETERS = {"total_channels"}


@dataclass(frozen=True)
class SweepSpec:
    parameter: str
    start: float
    stop: float
    steps: int

    def __post_init__(self) -> None:
        if self.parameter not in SWEEP_FIELDS:
            raise DomainError(f"unknown sweep parameter '{self.parameter}', expected one of {sorted(SWEEP_FIELDS)}")
        if not self.start < self.stop:
            raise DomainError(f"sweep needs from < to, got {self.start} >= {self.stop}")
        if self.steps < 2:
            raise DomainError(f"sweep needs at least 2 steps, got {self.steps}")

    @property
    def path(self) -> str:
        return SWEEP_FIELDS[self.parameter]

    def grid(self) -> list[float] | list[int]:
        points = np.linspace(self.start, self.stop, self.steps)
        if self.parameter in INTEGER_PARAMETERS:
            return sorted({int(round(x)) for x in points})
        return [float(x) for x in points]


class ReplicationPool:
    """Runs replications in-process or on a process pool sized by GCSIM_THREADS."""

    def __init__(self, workers: int | None = None):
        self.workers = workers if workers is not None else config.worker_count()
        self._executor: Executor | None = None

    def __enter__(self) -> ReplicationPool:
        if self.workers > 1:
            self._executor = ProcessPoolExecutor(max_workers=self.workers)
        return self

    def __exit__(self, *exc: object) -> None:
        if self._executor is not None:
            self._executor.shutdown()
            self._executor = None

    def run(self, scenario: Scenario, trace: TextIO | None = None) -> list[ReplicationResult]:
        indices = list(range(scenario.replications))
        results: list[ReplicationResult] = []
        if trace is not None:
            # traced replication stays in-process so the observer can write
            results.append(run_replication(scenario, 0, TraceWriter(trace)))
            indices = indices[1:]

        logger.info(
            f"🎲 Running {len(indices)} replications of '{scenario.scenario_id}' "
            f"({scenario.scheme.value}) on {self.workers} worker(s)"
        )
        if self._executor is None or len(indices) < 2:
            results.extend(run_replication(scenario, index) for index in indices)
        else:
            results.extend(self._executor.map(run_replication, repeat(scenario), indices))
        return sorted(results, key=lambda r: r.replication_index)


def run_scheme(scenario: Scenario, pool: ReplicationPool, trace: TextIO | None = None) -> BlockingReport:
    report = aggregate(pool.run(scenario, trace))
    logger.info(f"✅ {scenario.scheme.value}: {report.replications} replications aggregated")
    return report


def compare_schemes(scenario: Scenario, pool: ReplicationPool) -> list[BlockingReport]:
    """Same scenario under every scheme with shared per-replication seeds."""
    return [run_scheme(derive(scenario, {"scheme": scheme}), pool) for scheme in SchemeKind]


def sweep_point(scenario: Scenario, spec: SweepSpec, value: float | int) -> Scenario:
    """The scenario at one grid point.

    A ``total_channels`` point also caps the guard bounds at ``floor(S/2)``
    and pulls ``guard_min``, ``initial_guard`` and ``borrow_reserve`` inside
    them, so a grid that starts below the scenario's ``guard_max`` still runs.
    """
    changes: dict[str, Any] = {spec.path: value}
    if spec.parameter == "total_channels":
        policy = scenario.policy
        guard_max = min(policy.guard_max, int(value * config.GUARD_MAX_FRACTION))
        guard_min = min(policy.guard_min, guard_max)
        changes.update({
            "policy.guard_max": guard_max,
            "policy.guard_min": guard_min,
            "policy.initial_guard": min(max(policy.initial_guard, guard_min), guard_max),
            "policy.borrow_reserve": min(policy.borrow_reserve, guard_max),
        })
        if guard_max != policy.guard_max:
            logger.info(f"🔧 total_channels={value}: guard_max capped {policy.guard_max} -> {guard_max}")
    return derive(scenario, changes)


def sweep(scenario: Scenario, spec: SweepSpec, pool: ReplicationPool) -> list[tuple[float | int, list[BlockingReport]]]:
    points = []
    for value in spec.grid():
        logger.info(f"📈 Sweep point {spec.parameter}={value}")
        points.append((value, compare_schemes(sweep_point(scenario, spec, value), pool)))
    return points
