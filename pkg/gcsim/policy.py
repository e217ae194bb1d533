"""
Admission control for the four channel-allocation schemes.

Channels are occupancy counts against two thresholds: the shared pool
S_C = S - S_R and the full cell S. Transitions are pure: ``admit`` and
``release`` return new ``CellChannelState`` values and never mutate.

Decision rule per scheme:

    FCA                  any call   busy < S
    StaticGC, DynamicGC  handoff    busy < S
                         new        busy < S - S_R
    DGCA_CBS             handoff    busy < S
                         new        busy < S - S_R  -> AdmittedShared
                                    busy < S - r    -> AdmittedBorrowed
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

from gcsim.errors import LogicError
from gcsim.model import PolicyParams, SchemeKind


class CallType(str, Enum):
    NEW = "NewCall"
    HANDOFF = "HandoffCall"


class AdmitDecision(str, Enum):
    ADMITTED_SHARED = "AdmittedShared"
    ADMITTED_GUARD = "AdmittedGuard"
    ADMITTED_BORROWED = "AdmittedBorrowed"
    BLOCKED = "Blocked"

    @property
    def admitted(self) -> bool:
        return self is not AdmitDecision.BLOCKED


@dataclass(frozen=True)
class CellChannelState:
    S: int
    S_R: int
    busy: int = 0
    busy_borrowed: int = 0

    @property
    def shared_pool(self) -> int:
        """S_C, the channels open to new calls without borrowing."""
        return self.S - self.S_R

    @property
    def guard_occupancy(self) -> int:
        """Channels in use beyond the shared pool."""
        return max(self.busy - self.shared_pool, 0)

    def check(self) -> None:
        if not 0 <= self.busy <= self.S:
            raise LogicError(f"busy={self.busy} outside 0..{self.S}")
        if not 0 <= self.busy_borrowed <= self.busy:
            raise LogicError(f"busy_borrowed={self.busy_borrowed} outside 0..busy={self.busy}")
        if not 0 <= self.S_R <= self.S:
            raise LogicError(f"S_R={self.S_R} outside 0..{self.S}")


@dataclass(frozen=True)
class WindowStats:
    """Counters for one controller window of one cell."""

    handoff_attempts: int = 0
    handoff_blocks: int = 0
    new_attempts: int = 0
    new_blocks: int = 0
    guard_busy_integral: float = 0.0
    window_length: float = 0.0

    @property
    def handoff_blocking(self) -> float:
        # no attempts means no evidence of blocking
        if self.handoff_attempts == 0:
            return 0.0
        return self.handoff_blocks / self.handoff_attempts


def decide(scheme: SchemeKind, state: CellChannelState, call: CallType, params: PolicyParams) -> AdmitDecision:
    """Admission decision without the state transition."""
    busy, S = state.busy, state.S

    if scheme is SchemeKind.FCA:
        return AdmitDecision.ADMITTED_SHARED if busy < S else AdmitDecision.BLOCKED

    if call is CallType.HANDOFF:
        if busy >= S:
            return AdmitDecision.BLOCKED
        if busy >= state.shared_pool:
            return AdmitDecision.ADMITTED_GUARD
        return AdmitDecision.ADMITTED_SHARED

    if busy < state.shared_pool:
        return AdmitDecision.ADMITTED_SHARED
    if scheme is SchemeKind.DGCA_CBS and busy < S - params.borrow_reserve:
        return AdmitDecision.ADMITTED_BORROWED
    return AdmitDecision.BLOCKED


def admit(
    scheme: SchemeKind,
    state: CellChannelState,
    call: CallType,
    params: PolicyParams,
) -> tuple[AdmitDecision, CellChannelState]:
    decision = decide(scheme, state, call, params)
    if not decision.admitted:
        return decision, state
    borrowed = 1 if decision is AdmitDecision.ADMITTED_BORROWED else 0
    return decision, replace(state, busy=state.busy + 1, busy_borrowed=state.busy_borrowed + borrowed)


def release(state: CellChannelState, was_borrowed: bool) -> CellChannelState:
    if state.busy < 1:
        raise LogicError("release on an empty cell")
    if was_borrowed and state.busy_borrowed < 1:
        raise LogicError("release of a borrowed channel with none outstanding")
    return replace(
        state,
        busy=state.busy - 1,
        busy_borrowed=state.busy_borrowed - (1 if was_borrowed else 0),
    )


def guard_utilization(window: WindowStats, S_R: int) -> float:
    """Share of guard channel-time actually occupied during the window."""
    if S_R == 0:
        return 1.0
    if window.window_length <= 0:
        raise LogicError("guard utilization over an empty window")
    return min(max(window.guard_busy_integral / (S_R * window.window_length), 0.0), 1.0)


def adjust_guard(window: WindowStats, params: PolicyParams, S_R: int) -> int:
    """Next guard count for a cell after one controller window.

    Raising on excess handoff blocking takes precedence over lowering on
    idle guard capacity.
    """
    if window.handoff_blocking > params.handoff_block_target:
        return min(S_R + params.adjust_step, params.guard_max)
    if guard_utilization(window, S_R) < params.guard_util_floor:
        return max(S_R - params.adjust_step, params.guard_min)
    return S_R
