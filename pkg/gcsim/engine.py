"""
Discrete-event replication engine.

One replication is a single sequential event loop over state it owns
exclusively. Arrivals are Poisson, holding and dwell times exponential.
Random draws come from named substreams keyed by
(base_seed, replication_index, label), so a replication is a pure function of
its inputs and identical across schemes that make identical decisions
(common random numbers).
"""
from __future__ import annotations

import hashlib
import heapq
import logging
import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Iterable, NamedTuple, Protocol, TextIO

import numpy as np

from gcsim.errors import ConfigError, DomainError, LogicError
from gcsim.model import MobilityMode, SchemeKind, Scenario, Topology, require_valid
from gcsim.policy import (
    AdmitDecision,
    CallType,
    CellChannelState,
    WindowStats,
    adjust_guard,
    admit,
    release,
)

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# Events and the event queue
# ---------------------------------------------------------------------------

class EventKind(str, Enum):
    NEW_ARRIVAL = "NewArrival"
    EXOGENOUS_HANDOFF_ARRIVAL = "ExogenousHandoffArrival"
    OUTBOUND_HANDOFF = "OutboundHandoff"
    COMPLETION = "Completion"
    ADJUST_TICK = "AdjustTick"


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    kind: EventKind
    cell: int
    call_id: int | None = None


class EventQueue:
    """Pending events ordered by (time, seq)."""

    def __init__(self) -> None:
        self._heap: list[tuple[float, int, Event]] = []
        self._next_seq = 0
        self.clock = 0.0

    def __len__(self) -> int:
        return len(self._heap)

    def next_seq(self) -> int:
        seq = self._next_seq
        self._next_seq += 1
        return seq

    def schedule(self, event: Event) -> None:
        if event.time < self.clock:
            raise LogicError(f"event {event.kind.value} at t={event.time} scheduled before clock {self.clock}")
        self._next_seq = max(self._next_seq, event.seq + 1)
        heapq.heappush(self._heap, (event.time, event.seq, event))

    def push(self, time: float, kind: EventKind, cell: int, call_id: int | None = None) -> Event:
        event = Event(time, self.next_seq(), kind, cell, call_id)
        self.schedule(event)
        return event

    def advance(self) -> Event | None:
        if not self._heap:
            return None
        time, _, event = heapq.heappop(self._heap)
        self.clock = time
        return event


def schedule(queue: EventQueue, event: Event) -> EventQueue:
    queue.schedule(event)
    return queue


def advance(queue: EventQueue) -> Event | None:
    """Remove and return the earliest event; None once the queue is empty."""
    return queue.advance()


# ---------------------------------------------------------------------------
# Random streams
# ---------------------------------------------------------------------------

def stream_key(label: str) -> int:
    return int.from_bytes(hashlib.sha256(label.encode("utf-8")).digest()[:8], "big")


class RngStream:
    """Named PCG64 substream, drawn in blocks for speed."""

    BLOCK = 4096

    def __init__(self, base_seed: int, replication_index: int, label: str):
        self.label = label
        seed_seq = np.random.SeedSequence(entropy=base_seed, spawn_key=(replication_index, stream_key(label)))
        self._gen = np.random.Generator(np.random.PCG64(seed_seq))
        self._buffer: list[float] = []
        self._pos = 0

    def random(self) -> float:
        """Uniform on [0, 1)."""
        if self._pos >= len(self._buffer):
            self._buffer = self._gen.random(self.BLOCK).tolist()
            self._pos = 0
        value = self._buffer[self._pos]
        self._pos += 1
        return value

    def uniform(self) -> float:
        """Uniform on (0, 1]."""
        return 1.0 - self.random()

    def index(self, n: int) -> int:
        return min(int(self.random() * n), n - 1)


def draw_exponential(stream: RngStream, rate: float) -> float:
    if not (rate > 0 and math.isfinite(rate)):
        raise DomainError(f"exponential rate must be positive and finite, got {rate}")
    u = stream.uniform()
    while u >= 1.0:
        # -ln(1) = 0 would break strict positivity
        u = stream.uniform()
    return -math.log(u) / rate


class Lifecycle(NamedTuple):
    kind: EventKind
    delay: float


def plan_call_lifecycle(stream: RngStream, mu: float, eta: float, mode: MobilityMode) -> Lifecycle:
    """Next event for a freshly admitted call: completion or outbound handoff.

    Re-drawing the full holding time at every cell is exact by
    memorylessness.
    """
    if not mu > 0:
        raise DomainError(f"service rate must be positive, got {mu}")
    holding = draw_exponential(stream, mu)
    if mode is MobilityMode.EXOGENOUS:
        return Lifecycle(EventKind.COMPLETION, holding)
    if not eta > 0:
        raise DomainError(f"dwell rate must be positive in endogenous mode, got {eta}")
    dwell = draw_exponential(stream, eta)
    if dwell < holding:
        return Lifecycle(EventKind.OUTBOUND_HANDOFF, dwell)
    return Lifecycle(EventKind.COMPLETION, holding)


def route_handoff(
    topology: Topology,
    from_cell: int,
    stream: RngStream,
    table: tuple[tuple[int, ...], ...] | None = None,
) -> int:
    """Uniform choice among the neighbors of ``from_cell``."""
    partners = (table or topology.neighbor_table())[from_cell]
    if not partners:
        raise ConfigError(f"cell {from_cell} has no neighbor to hand off to")
    return partners[stream.index(len(partners))]


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class CallRecord:
    call_id: int
    origin_type: CallType
    borrowed: bool
    admitted_at: float
    cell: int
    home_cell: int
    # admitted as a new call after warmup: a later drop counts as forced termination
    counts_for_drop: bool = False


@dataclass(frozen=True)
class CellCounters:
    new_attempts: int = 0
    new_blocks: int = 0
    handoff_attempts: int = 0
    handoff_blocks: int = 0
    completions: int = 0
    drops: int = 0
    admitted_new: int = 0
    borrowed_admissions: int = 0
    carried_integral: float = 0.0
    guard_integral: float = 0.0

    def __add__(self, other: CellCounters) -> CellCounters:
        return CellCounters(
            **{name: getattr(self, name) + getattr(other, name) for name in self.__dataclass_fields__}
        )


class GuardChange(NamedTuple):
    time: float
    cell: int
    guard: int


@dataclass(frozen=True)
class ReplicationResult:
    scenario_id: str
    scenario_key: str
    scheme: SchemeKind
    replication_index: int
    cell_count: int
    total_channels: int
    observed_time: float
    cells: tuple[CellCounters, ...]
    guard_changes: tuple[GuardChange, ...] = ()

    @property
    def totals(self) -> CellCounters:
        total = CellCounters()
        for counters in self.cells:
            total = total + counters
        return total


# ---------------------------------------------------------------------------
# Observers
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TraceRecord:
    time: float
    seq: int
    kind: EventKind
    cell: int
    call_id: int | None
    decision: AdmitDecision | None = None
    target: int | None = None

    def to_line(self) -> str:
        call = "-" if self.call_id is None else str(self.call_id)
        if self.decision is None:
            decision = "-"
        elif self.target is None:
            decision = self.decision.value
        else:
            decision = f"{self.decision.value}@{self.target}"
        return f"{self.time!r}\t{self.seq}\t{self.kind.value}\t{self.cell}\t{call}\t{decision}"

    @classmethod
    def from_line(cls, line: str) -> TraceRecord:
        time, seq, kind, cell, call, decision = line.rstrip("\n").split("\t")
        target = None
        if "@" in decision:
            decision, raw_target = decision.split("@")
            target = int(raw_target)
        return cls(
            time=float(time),
            seq=int(seq),
            kind=EventKind(kind),
            cell=int(cell),
            call_id=None if call == "-" else int(call),
            decision=None if decision == "-" else AdmitDecision(decision),
            target=target,
        )


class ReplicationObserver(Protocol):
    def on_event(self, record: TraceRecord) -> None: ...

    def on_window(self, cell: int, time: float, stats: WindowStats, old_guard: int, new_guard: int) -> None: ...


class TraceWriter:
    """Observer writing one tab-separated line per processed event."""

    def __init__(self, stream: TextIO):
        self.stream = stream

    def on_event(self, record: TraceRecord) -> None:
        self.stream.write(record.to_line() + "\n")

    def on_window(self, cell: int, time: float, stats: WindowStats, old_guard: int, new_guard: int) -> None:
        pass


def read_trace(lines: Iterable[str]) -> list[TraceRecord]:
    return [TraceRecord.from_line(line) for line in lines if line.strip()]


# ---------------------------------------------------------------------------
# Replication loop
# ---------------------------------------------------------------------------

@dataclass
class _CellRun:
    new_attempts: int = 0
    new_blocks: int = 0
    handoff_attempts: int = 0
    handoff_blocks: int = 0
    completions: int = 0
    drops: int = 0
    admitted_new: int = 0
    borrowed_admissions: int = 0
    carried_integral: float = 0.0
    guard_integral: float = 0.0
    # last busy or S_R change
    mark: float = 0.0

    def freeze(self) -> CellCounters:
        return CellCounters(
            new_attempts=self.new_attempts,
            new_blocks=self.new_blocks,
            handoff_attempts=self.handoff_attempts,
            handoff_blocks=self.handoff_blocks,
            completions=self.completions,
            drops=self.drops,
            admitted_new=self.admitted_new,
            borrowed_admissions=self.borrowed_admissions,
            carried_integral=self.carried_integral,
            guard_integral=self.guard_integral,
        )


@dataclass
class _Window:
    start: float = 0.0
    mark: float = 0.0
    handoff_attempts: int = 0
    handoff_blocks: int = 0
    new_attempts: int = 0
    new_blocks: int = 0
    guard_busy_integral: float = 0.0

    def snapshot(self, now: float) -> WindowStats:
        return WindowStats(
            handoff_attempts=self.handoff_attempts,
            handoff_blocks=self.handoff_blocks,
            new_attempts=self.new_attempts,
            new_blocks=self.new_blocks,
            guard_busy_integral=self.guard_busy_integral,
            window_length=now - self.start,
        )


@dataclass
class Replication:
    scenario: Scenario
    replication_index: int
    observer: ReplicationObserver | None = None
    queue: EventQueue = field(default_factory=EventQueue)

    def __post_init__(self) -> None:
        s = self.scenario
        n = s.topology.cell_count
        self.scheme = s.scheme
        self.policy = s.policy
        self.mode = s.traffic.mobility_mode
        self.mu = s.traffic.service_rate
        self.eta = s.traffic.dwell_rate
        self.new_rate = s.traffic.new_call_rate
        self.handoff_rate = s.traffic.handoff_arrival_rate
        self.warmup = s.warmup
        self.horizon = s.sim_duration
        self.table = s.topology.neighbor_table()

        guard = 0 if s.scheme is SchemeKind.FCA else s.policy.initial_guard
        self.states = [CellChannelState(s.policy.total_channels, guard) for _ in range(n)]
        self.runs = [_CellRun() for _ in range(n)]
        self.windows = [_Window() for _ in range(n)]
        self.calls: dict[int, CallRecord] = {}
        self.guard_changes: list[GuardChange] = []
        self._next_call_id = 0

        def streams(prefix: str) -> list[RngStream]:
            return [RngStream(s.base_seed, self.replication_index, f"{prefix}/{cell}") for cell in range(n)]

        self.new_streams = streams("new")
        self.handoff_streams = streams("handoff")
        self.lifecycle_streams = streams("lifecycle")
        self.routing_streams = streams("routing")

    # -- bookkeeping -------------------------------------------------------

    def _touch(self, cell: int, now: float) -> None:
        """Flush time integrals before busy or S_R of ``cell`` changes."""
        self._flush_window(cell, now)
        run, state = self.runs[cell], self.states[cell]
        start = max(run.mark, self.warmup)
        if now > start:
            run.carried_integral += state.busy * (now - start)
            run.guard_integral += state.S_R * (now - start)
        run.mark = now

    def _flush_window(self, cell: int, now: float) -> None:
        window = self.windows[cell]
        window.guard_busy_integral += self.states[cell].guard_occupancy * (now - window.mark)
        window.mark = now

    def _schedule_next(self, time: float, kind: EventKind, cell: int, call_id: int | None = None) -> None:
        if time <= self.horizon:
            self.queue.push(time, kind, cell, call_id)

    def _emit(self, event: Event, decision: AdmitDecision | None = None, target: int | None = None) -> None:
        if self.observer is not None:
            self.observer.on_event(
                TraceRecord(event.time, event.seq, event.kind, event.cell, event.call_id, decision, target)
            )

    def _attempt(self, cell: int, call: CallType, now: float) -> AdmitDecision:
        """Admission attempt at ``cell``: counts it and applies the transition."""
        decision, new_state = admit(self.scheme, self.states[cell], call, self.policy)
        counted = now >= self.warmup
        window, run = self.windows[cell], self.runs[cell]
        blocked = not decision.admitted
        if call is CallType.NEW:
            window.new_attempts += 1
            window.new_blocks += blocked
            if counted:
                run.new_attempts += 1
                run.new_blocks += blocked
        else:
            window.handoff_attempts += 1
            window.handoff_blocks += blocked
            if counted:
                run.handoff_attempts += 1
                run.handoff_blocks += blocked
        if decision.admitted:
            self._touch(cell, now)
            self.states[cell] = new_state
        return decision

    def _plan(self, record: CallRecord, now: float) -> None:
        self.calls[record.call_id] = record
        kind, delay = plan_call_lifecycle(self.lifecycle_streams[record.cell], self.mu, self.eta, self.mode)
        self.queue.push(now + delay, kind, record.cell, record.call_id)

    # -- event handlers ----------------------------------------------------

    def _on_arrival(self, event: Event, call: CallType) -> None:
        now, cell = event.time, event.cell
        if call is CallType.NEW:
            self._schedule_next(now + draw_exponential(self.new_streams[cell], self.new_rate), event.kind, cell)
        else:
            self._schedule_next(
                now + draw_exponential(self.handoff_streams[cell], self.handoff_rate), event.kind, cell
            )

        decision = self._attempt(cell, call, now)
        call_id = None
        if decision.admitted:
            call_id = self._next_call_id
            self._next_call_id += 1
            counted_new = call is CallType.NEW and now >= self.warmup
            borrowed = decision is AdmitDecision.ADMITTED_BORROWED
            if counted_new:
                self.runs[cell].admitted_new += 1
                self.runs[cell].borrowed_admissions += borrowed
            self._plan(CallRecord(call_id, call, borrowed, now, cell, cell, counted_new), now)
        self._emit(replace(event, call_id=call_id), decision)

    def _on_completion(self, event: Event) -> None:
        now, cell = event.time, event.cell
        record = self._pop_call(event)
        self._touch(cell, now)
        self.states[cell] = release(self.states[cell], record.borrowed)
        if now >= self.warmup:
            self.runs[cell].completions += 1
        self._emit(event)

    def _on_outbound_handoff(self, event: Event) -> None:
        now, cell = event.time, event.cell
        record = self._pop_call(event)
        # the source channel is freed before the target is asked
        self._touch(cell, now)
        self.states[cell] = release(self.states[cell], record.borrowed)

        target = route_handoff(self.scenario.topology, cell, self.routing_streams[cell], self.table)
        decision = self._attempt(target, CallType.HANDOFF, now)
        if decision.admitted:
            moved = replace(record, origin_type=CallType.HANDOFF, borrowed=False, admitted_at=now, cell=target)
            self._plan(moved, now)
        elif record.counts_for_drop:
            self.runs[record.home_cell].drops += 1
        self._emit(event, decision, target)

    def _on_tick(self, event: Event) -> None:
        now, cell = event.time, event.cell
        self._flush_window(cell, now)
        stats = self.windows[cell].snapshot(now)
        old_guard = self.states[cell].S_R
        new_guard = adjust_guard(stats, self.policy, old_guard)
        if new_guard != old_guard:
            self._touch(cell, now)
            self.states[cell] = replace(self.states[cell], S_R=new_guard)
            if now >= self.warmup:
                self.guard_changes.append(GuardChange(now, cell, new_guard))
            logger.debug(f"🛡️ cell {cell} guard {old_guard} -> {new_guard} at t={now:.6g} (p_h={stats.handoff_blocking:.4f})")
        if self.observer is not None:
            self.observer.on_window(cell, now, stats, old_guard, new_guard)
        self.windows[cell] = _Window(start=now, mark=now)
        self._schedule_next(now + self.policy.adjust_period, EventKind.ADJUST_TICK, cell)
        self._emit(event)

    def _pop_call(self, event: Event) -> CallRecord:
        record = self.calls.pop(event.call_id, None) if event.call_id is not None else None
        if record is None or record.cell != event.cell:
            raise LogicError(f"{event.kind.value} for unknown call {event.call_id} in cell {event.cell}")
        return record

    # -- driver ------------------------------------------------------------

    def _seed_events(self) -> None:
        for cell in range(self.scenario.topology.cell_count):
            if self.new_rate > 0:
                self._schedule_next(draw_exponential(self.new_streams[cell], self.new_rate), EventKind.NEW_ARRIVAL, cell)
            if self.handoff_rate > 0:
                self._schedule_next(
                    draw_exponential(self.handoff_streams[cell], self.handoff_rate),
                    EventKind.EXOGENOUS_HANDOFF_ARRIVAL,
                    cell,
                )
            if self.scheme.is_dynamic:
                self._schedule_next(self.policy.adjust_period, EventKind.ADJUST_TICK, cell)

    def run(self) -> ReplicationResult:
        self._seed_events()
        handlers = {
            EventKind.NEW_ARRIVAL: lambda e: self._on_arrival(e, CallType.NEW),
            EventKind.EXOGENOUS_HANDOFF_ARRIVAL: lambda e: self._on_arrival(e, CallType.HANDOFF),
            EventKind.COMPLETION: self._on_completion,
            EventKind.OUTBOUND_HANDOFF: self._on_outbound_handoff,
            EventKind.ADJUST_TICK: self._on_tick,
        }
        while True:
            event = self.queue.advance()
            if event is None or event.time > self.horizon:
                break
            handlers[event.kind](event)

        for cell in range(len(self.states)):
            self._touch(cell, self.horizon)
        self._check_conservation()

        return ReplicationResult(
            scenario_id=self.scenario.scenario_id,
            scenario_key=self.scenario.fingerprint(),
            scheme=self.scheme,
            replication_index=self.replication_index,
            cell_count=len(self.states),
            total_channels=self.policy.total_channels,
            observed_time=self.scenario.observed_time,
            cells=tuple(run.freeze() for run in self.runs),
            guard_changes=tuple(self.guard_changes),
        )

    def _check_conservation(self) -> None:
        live = [0] * len(self.states)
        borrowed = [0] * len(self.states)
        for record in self.calls.values():
            live[record.cell] += 1
            borrowed[record.cell] += record.borrowed
        for cell, state in enumerate(self.states):
            state.check()
            if state.busy != live[cell] or state.busy_borrowed != borrowed[cell]:
                raise LogicError(
                    f"cell {cell}: busy={state.busy}/{state.busy_borrowed} but "
                    f"{live[cell]}/{borrowed[cell]} live calls"
                )


def run_replication(
    scenario: Scenario,
    replication_index: int,
    observer: ReplicationObserver | None = None,
) -> ReplicationResult:
    """Simulate one independent replication of ``scenario``."""
    scenario = require_valid(scenario)
    return Replication(scenario, replication_index, observer).run()
