"""
Configuration for the guard-channel simulator
"""
import logging
import os

from rich.console import Console
from rich.logging import RichHandler

# Controller defaults (applied when a scenario omits the field)
HANDOFF_BLOCK_TARGET = 0.02
GUARD_UTIL_FLOOR = 0.3
ADJUST_STEP = 1
GUARD_MIN = 0

# guard_max defaults to floor(S / 2)
GUARD_MAX_FRACTION = 0.5

# Statistics are gated after this share of sim_duration unless warmup is given
WARMUP_FRACTION = 0.1

DEFAULT_SCENARIO_ID = "scenario"
DEFAULT_CELL_COUNT = 6

# Reference six-cell comparison scenario
REFERENCE_SCENARIO = {
    "scenario_id": "reference",
    "topology": {
        "cell_count": DEFAULT_CELL_COUNT,
        "adjacency": [[i, (i + 1) % DEFAULT_CELL_COUNT] for i in range(DEFAULT_CELL_COUNT)],
    },
    "traffic": {
        "new_call_rate": 5.0,
        "exogenous_handoff_rate": 0.0,
        "mean_call_duration": 1.0,
        "mean_cell_dwell": 2.0,
        "mobility_mode": "endogenous",
    },
    "policy": {
        "total_channels": 10,
        "initial_guard": 2,
        "guard_min": 0,
        "guard_max": 5,
        "adjust_period": 50.0,
        "handoff_block_target": HANDOFF_BLOCK_TARGET,
        "guard_util_floor": GUARD_UTIL_FLOOR,
        "adjust_step": ADJUST_STEP,
        "borrow_reserve": 1,
    },
    "scheme": "DGCA_CBS",
    "sim_duration": 2000.0,
    "warmup": 200.0,
    "replications": 10,
    "base_seed": 20240601,
}

# Worker cap for replication fan-out (0 = auto)
THREADS_ENV = "GCSIM_THREADS"
LOG_LEVEL_ENV = "GCSIM_LOG_LEVEL"
DEFAULT_LOG_LEVEL = "WARNING"

# Logs and summaries share stderr so stdout carries only CSV/JSON
console = Console(stderr=True)


def worker_count() -> int:
    """Resolve GCSIM_THREADS to a positive worker count."""
    raw = os.getenv(THREADS_ENV, "0").strip() or "0"
    try:
        requested = int(raw)
    except ValueError:
        requested = 0
    if requested <= 0:
        return os.cpu_count() or 1
    return requested


def configure_logging(level: str | None = None) -> None:
    """Install the rich log handler on the root logger."""
    level_name = (level or os.getenv(LOG_LEVEL_ENV, DEFAULT_LOG_LEVEL)).upper()
    logging.basicConfig(
        level=getattr(logging, level_name, logging.WARNING),
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=console, show_path=False)],
        force=True,
    )
