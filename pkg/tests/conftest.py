# Shared scenario builders for the gcsim test-suite. Every builder returns a
# validated Scenario; overrides use the same dotted paths as model.derive.

import copy
import json
from pathlib import Path
from typing import Any, Callable

import pytest

from gcsim import config
from gcsim.model import Scenario, require_valid

# ----------------------------------------------------------------------------
# Raw scenario documents
# ----------------------------------------------------------------------------

def _apply(document: dict, overrides: dict[str, Any]) -> dict:
    document = copy.deepcopy(document)
    for dotted, value in overrides.items():
        target = document
        *parents, leaf = dotted.split(".")
        for part in parents:
            target = target.setdefault(part, {})
        target[leaf] = value
    return document


def reference_document(**overrides: Any) -> dict:
    """The six-cell reference scenario as a raw JSON-style dict."""
    return _apply(config.REFERENCE_SCENARIO, {k.replace("__", "."): v for k, v in overrides.items()})


def single_cell_document(
    scheme: str = "StaticGC",
    S: int = 10,
    guard: int = 2,
    lambda_n: float = 6.0,
    lambda_h: float = 2.0,
    mu: float = 1.0,
    reserve: int | None = None,
    duration: float = 1000.0,
    warmup: float = 50.0,
    replications: int = 10,
    seed: int = 1234,
) -> dict:
    """A one-cell exogenous scenario with a static guard count."""
    return {
        "scenario_id": "single-cell",
        "topology": {"cell_count": 1, "adjacency": []},
        "traffic": {
            "new_call_rate": lambda_n,
            "exogenous_handoff_rate": lambda_h,
            "mean_call_duration": 1.0 / mu,
            "mobility_mode": "exogenous",
        },
        "policy": {
            "total_channels": S,
            "initial_guard": guard,
            "guard_min": guard,
            "guard_max": guard,
            "adjust_period": 100.0,
            "borrow_reserve": guard if reserve is None else reserve,
        },
        "scheme": scheme,
        "sim_duration": duration,
        "warmup": warmup,
        "replications": replications,
        "base_seed": seed,
    }


def small_network_document(**overrides: Any) -> dict:
    """Two-cell endogenous network small enough for exact trace checks."""
    document = {
        "scenario_id": "small-network",
        "topology": {"cell_count": 2, "adjacency": [[0, 1]]},
        "traffic": {
            "new_call_rate": 2.0,
            "mean_call_duration": 1.0,
            "mean_cell_dwell": 1.5,
            "mobility_mode": "endogenous",
        },
        "policy": {
            "total_channels": 4,
            "initial_guard": 1,
            "guard_min": 0,
            "guard_max": 2,
            "adjust_period": 10.0,
            "borrow_reserve": 1,
        },
        "scheme": "DynamicGC",
        "sim_duration": 200.0,
        "warmup": 20.0,
        "replications": 4,
        "base_seed": 99,
    }
    return _apply(document, overrides)


# ----------------------------------------------------------------------------
# Fixtures
# ----------------------------------------------------------------------------

@pytest.fixture
def reference() -> Scenario:
    return require_valid(reference_document())


@pytest.fixture
def single_cell() -> Callable[..., Scenario]:
    def build(**kwargs: Any) -> Scenario:
        return require_valid(single_cell_document(**kwargs))

    return build


@pytest.fixture
def small_network() -> Callable[..., Scenario]:
    def build(**overrides: Any) -> Scenario:
        return require_valid(small_network_document(**overrides))

    return build


@pytest.fixture
def scenario_file(tmp_path: Path) -> Callable[[dict], Path]:
    """Write a raw scenario document to a temp JSON file."""

    def write(document: dict, name: str = "scenario.json") -> Path:
        path = tmp_path / name
        path.write_text(json.dumps(document), encoding="utf-8")
        return path

    return write
