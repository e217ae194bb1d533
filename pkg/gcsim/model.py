"""
Scenario schema, cell topology and input validation.

Every other module consumes a validated ``Scenario``. Validation never stops
at the first problem: ``validate_scenario`` returns the complete list of
violated constraints, each naming the field path and the rule.
"""
from __future__ import annotations

import hashlib
import json
import logging
import math
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

from gcsim import config
from gcsim.errors import ScenarioInvalid, ValidationIssue

logger = logging.getLogger(__name__)

MAX_SEED = 2**64 - 1


class SchemeKind(str, Enum):
    FCA = "FCA"
    STATIC_GC = "StaticGC"
    DYNAMIC_GC = "DynamicGC"
    DGCA_CBS = "DGCA_CBS"

    @property
    def is_dynamic(self) -> bool:
        """Schemes whose guard count is driven by the periodic controller."""
        return self in (SchemeKind.DYNAMIC_GC, SchemeKind.DGCA_CBS)


class MobilityMode(str, Enum):
    ENDOGENOUS = "endogenous"
    EXOGENOUS = "exogenous"


class _Frozen(BaseModel):
    model_config = ConfigDict(extra="forbid", frozen=True)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def ring_adjacency(cell_count: int) -> list[tuple[int, int]]:
    if cell_count < 2:
        return []
    return sorted({tuple(sorted((i, (i + 1) % cell_count))) for i in range(cell_count)})


class Topology(_Frozen):
    cell_count: int = Field(config.DEFAULT_CELL_COUNT, ge=1)
    adjacency: tuple[tuple[int, int], ...] = ()

    @model_validator(mode="before")
    @classmethod
    def _default_ring(cls, data: Any) -> Any:
        if isinstance(data, dict) and "adjacency" not in data:
            count = data.get("cell_count", config.DEFAULT_CELL_COUNT)
            if isinstance(count, int) and count >= 1:
                data = {**data, "adjacency": ring_adjacency(count)}
        return data

    @field_validator("adjacency")
    @classmethod
    def _canonical_pairs(cls, pairs: tuple[tuple[int, int], ...]) -> tuple[tuple[int, int], ...]:
        # unordered pairs: (a, b) and (b, a) are the same link
        return tuple(sorted({(min(a, b), max(a, b)) for a, b in pairs}))

    @classmethod
    def ring(cls, cell_count: int) -> Topology:
        return cls(cell_count=cell_count, adjacency=tuple(ring_adjacency(cell_count)))

    @classmethod
    def complete(cls, cell_count: int) -> Topology:
        pairs = tuple((a, b) for a in range(cell_count) for b in range(a + 1, cell_count))
        return cls(cell_count=cell_count, adjacency=pairs)

    def neighbor_table(self) -> tuple[tuple[int, ...], ...]:
        """Ascending neighbor lists for every cell, indexed by cell."""
        table: list[set[int]] = [set() for _ in range(self.cell_count)]
        for a, b in self.adjacency:
            if 0 <= a < self.cell_count and 0 <= b < self.cell_count and a != b:
                table[a].add(b)
                table[b].add(a)
        return tuple(tuple(sorted(partners)) for partners in table)


def neighbors(topology: Topology, cell: int) -> list[int]:
    """Adjacency partners of ``cell`` in ascending order."""
    if not 0 <= cell < topology.cell_count:
        raise IndexError(f"cell {cell} out of range for {topology.cell_count} cells")
    return list(topology.neighbor_table()[cell])


# ---------------------------------------------------------------------------
# Traffic and policy
# ---------------------------------------------------------------------------

class TrafficParams(_Frozen):
    new_call_rate: float = Field(ge=0, allow_inf_nan=False)
    exogenous_handoff_rate: float = Field(0.0, ge=0, allow_inf_nan=False)
    mean_call_duration: float = Field(gt=0, allow_inf_nan=False)
    # None means the mobile never leaves its cell (eta = 0)
    mean_cell_dwell: float | None = Field(None, ge=0, allow_inf_nan=False)
    mobility_mode: MobilityMode = MobilityMode.ENDOGENOUS

    @property
    def service_rate(self) -> float:
        return 1.0 / self.mean_call_duration

    @property
    def dwell_rate(self) -> float:
        if not self.mean_cell_dwell:
            return 0.0
        return 1.0 / self.mean_cell_dwell

    @property
    def handoff_arrival_rate(self) -> float:
        """Exogenous handoff stream rate; zero in endogenous mode."""
        if self.mobility_mode is MobilityMode.EXOGENOUS:
            return self.exogenous_handoff_rate
        return 0.0


class PolicyParams(_Frozen):
    total_channels: int = Field(ge=1)
    initial_guard: int
    guard_min: int = Field(config.GUARD_MIN, ge=0)
    guard_max: int
    adjust_period: float = Field(gt=0, allow_inf_nan=False)
    handoff_block_target: float = Field(config.HANDOFF_BLOCK_TARGET, gt=0, lt=1)
    guard_util_floor: float = Field(config.GUARD_UTIL_FLOOR, ge=0, le=1)
    adjust_step: int = Field(config.ADJUST_STEP, ge=1)
    borrow_reserve: int = Field(ge=0)

    @model_validator(mode="before")
    @classmethod
    def _fill_defaults(cls, data: Any) -> Any:
        if not isinstance(data, dict):
            return data
        data = dict(data)
        total = data.get("total_channels")
        if data.get("guard_max") is None and isinstance(total, int):
            data["guard_max"] = int(total * config.GUARD_MAX_FRACTION)
        initial = data.get("initial_guard")
        if data.get("borrow_reserve") is None and isinstance(initial, int):
            data["borrow_reserve"] = max(0, math.ceil(initial / 2))
        return data


class Scenario(_Frozen):
    scenario_id: str = config.DEFAULT_SCENARIO_ID
    topology: Topology = Field(default_factory=lambda: Topology.ring(config.DEFAULT_CELL_COUNT))
    traffic: TrafficParams
    policy: PolicyParams
    scheme: SchemeKind
    sim_duration: float = Field(gt=0, allow_inf_nan=False)
    warmup: float = Field(ge=0, allow_inf_nan=False)
    replications: int = Field(ge=1)
    base_seed: int = Field(ge=0, le=MAX_SEED)

    @model_validator(mode="before")
    @classmethod
    def _default_warmup(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("warmup") is None:
            duration = data.get("sim_duration")
            if isinstance(duration, (int, float)) and not isinstance(duration, bool):
                data = {**data, "warmup": config.WARMUP_FRACTION * float(duration)}
        return data

    @property
    def observed_time(self) -> float:
        return self.sim_duration - self.warmup

    def fingerprint(self) -> str:
        """Identity of the scenario shape, ignoring the replication plan."""
        payload = self.model_dump(mode="json", exclude={"replications", "base_seed"})
        return hashlib.sha256(json.dumps(payload, sort_keys=True).encode("utf-8")).hexdigest()[:16]


# ---------------------------------------------------------------------------
# Cross-field rules
# ---------------------------------------------------------------------------

def _topology_issues(topology: Topology) -> list[ValidationIssue]:
    issues = []
    for a, b in topology.adjacency:
        if a == b:
            issues.append(ValidationIssue("topology.adjacency", f"self-loop on cell {a}"))
        for end in (a, b):
            if not 0 <= end < topology.cell_count:
                issues.append(
                    ValidationIssue(
                        "topology.adjacency",
                        f"cell {end} outside 0..{topology.cell_count - 1}",
                    )
                )
    return issues


def _traffic_issues(traffic: TrafficParams) -> list[ValidationIssue]:
    issues = []
    if traffic.mobility_mode is MobilityMode.ENDOGENOUS and traffic.dwell_rate <= 0:
        issues.append(
            ValidationIssue(
                "traffic.mean_cell_dwell",
                "endogenous mobility requires a positive mean_cell_dwell (eta > 0)",
            )
        )
    return issues


def _policy_issues(policy: PolicyParams) -> list[ValidationIssue]:
    issues = []
    S = policy.total_channels

    def check(ok: bool, field: str, rule: str) -> None:
        if not ok:
            issues.append(ValidationIssue(f"policy.{field}", rule))

    check(policy.initial_guard >= 0, "initial_guard", "initial_guard must be non-negative")
    check(policy.initial_guard <= S, "initial_guard", "initial_guard exceeds total_channels")
    check(policy.guard_min <= policy.initial_guard, "initial_guard", "initial_guard below guard_min")
    check(policy.initial_guard <= policy.guard_max, "initial_guard", "initial_guard exceeds guard_max")
    check(policy.guard_max <= S, "guard_max", "guard_max exceeds total_channels")
    check(policy.guard_min <= policy.guard_max, "guard_min", "guard_min exceeds guard_max")
    check(policy.borrow_reserve <= policy.guard_max, "borrow_reserve", "borrow_reserve exceeds guard_max")
    return issues


def _spanning_issues(
    warmup: float | None,
    sim_duration: float | None,
    topology: Topology | None,
    mode: MobilityMode | None,
) -> list[ValidationIssue]:
    """Rules that span sections. ``None`` means that part did not parse."""
    issues = []
    if warmup is not None and sim_duration is not None and warmup >= sim_duration:
        issues.append(ValidationIssue("warmup", "warmup must be shorter than sim_duration"))
    if topology is not None and mode is MobilityMode.ENDOGENOUS:
        for cell, partners in enumerate(topology.neighbor_table()):
            if not partners:
                issues.append(
                    ValidationIssue(
                        "topology.adjacency",
                        f"cell {cell} has no neighbor but mobility is endogenous",
                    )
                )
    return issues


def _scenario_issues(scenario: Scenario) -> list[ValidationIssue]:
    return (
        _topology_issues(scenario.topology)
        + _traffic_issues(scenario.traffic)
        + _policy_issues(scenario.policy)
        + _spanning_issues(
            scenario.warmup, scenario.sim_duration, scenario.topology, scenario.traffic.mobility_mode
        )
    )


def _issue_from_pydantic(error: Mapping[str, Any]) -> ValidationIssue:
    path = ".".join(str(part) for part in error.get("loc", ())) or "<root>"
    if error.get("type") == "extra_forbidden":
        return ValidationIssue(path, "unknown field")
    return ValidationIssue(path, str(error.get("msg", "invalid value")))


_SECTIONS: dict[str, tuple[type[BaseModel], Any]] = {
    "topology": (Topology, _topology_issues),
    "traffic": (TrafficParams, _traffic_issues),
    "policy": (PolicyParams, _policy_issues),
}


def _section_issues(raw: Mapping[str, Any]) -> list[ValidationIssue]:
    """Cross-field rules for every section that parsed on its own."""
    issues: list[ValidationIssue] = []
    for name, (model, rules) in _SECTIONS.items():
        if name not in raw:
            continue
        try:
            section = model.model_validate(raw[name])
        except ValidationError:
            continue
        issues.extend(rules(section))
    return issues


def _number(value: Any) -> float | None:
    if isinstance(value, (int, float)) and not isinstance(value, bool) and math.isfinite(value):
        return float(value)
    return None


def _raw_spanning_issues(raw: Mapping[str, Any]) -> list[ValidationIssue]:
    """Spanning rules on a document that failed to parse as a whole."""
    # a missing warmup defaults below sim_duration
    warmup = _number(raw.get("warmup"))
    sim_duration = _number(raw.get("sim_duration"))

    topology: Topology | None = Topology.ring(config.DEFAULT_CELL_COUNT)
    if "topology" in raw:
        try:
            topology = Topology.model_validate(raw["topology"])
        except ValidationError:
            topology = None

    traffic = raw.get("traffic")
    mode: MobilityMode | None = None
    if isinstance(traffic, Mapping):
        try:
            mode = MobilityMode(traffic.get("mobility_mode", MobilityMode.ENDOGENOUS.value))
        except (ValueError, TypeError):
            mode = None
    return _spanning_issues(warmup, sim_duration, topology, mode)


def validate_scenario(raw: Scenario | Mapping[str, Any]) -> Scenario | list[ValidationIssue]:
    """Return the validated scenario, or every violated constraint."""
    if isinstance(raw, Scenario):
        issues = _scenario_issues(raw)
        return issues if issues else raw

    if not isinstance(raw, Mapping):
        return [ValidationIssue("<root>", "scenario must be a JSON object")]

    try:
        scenario = Scenario.model_validate(dict(raw))
    except ValidationError as exc:
        issues = [_issue_from_pydantic(error) for error in exc.errors()]
        return issues + _section_issues(raw) + _raw_spanning_issues(raw)

    issues = _scenario_issues(scenario)
    return issues if issues else scenario


def require_valid(raw: Scenario | Mapping[str, Any]) -> Scenario:
    result = validate_scenario(raw)
    if isinstance(result, Scenario):
        return result
    raise ScenarioInvalid(result)


def load_scenario(path: str | Path) -> Scenario:
    """Read and validate a scenario JSON document.

    OSError propagates unchanged; undecodable text, malformed JSON and rule
    violations raise ScenarioInvalid.
    """
    data = Path(path).read_bytes()
    try:
        raw = json.loads(data.decode("utf-8"))
    except UnicodeDecodeError as exc:
        raise ScenarioInvalid([ValidationIssue("<root>", f"not UTF-8 text: {exc}")]) from exc
    except json.JSONDecodeError as exc:
        raise ScenarioInvalid([ValidationIssue("<root>", f"invalid JSON: {exc}")]) from exc
    scenario = require_valid(raw)
    logger.info(f"📄 Loaded scenario '{scenario.scenario_id}' from {path}")
    return scenario


def derive(scenario: Scenario, changes: Mapping[str, Any]) -> Scenario:
    """Copy ``scenario`` with dotted-path overrides applied, then re-validate.

    >>> derive(s, {"scheme": "FCA", "policy.initial_guard": 0})  # doctest: +SKIP
    """
    data = scenario.model_dump(mode="json")
    for dotted, value in changes.items():
        target = data
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target[part]
        target[leaf] = value.value if isinstance(value, Enum) else value
    return require_valid(data)
