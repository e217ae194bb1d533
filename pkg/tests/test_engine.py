"""Event queue, random streams, call lifecycle and the replication loop."""

import io
import math

import numpy as np
import pytest

from conftest import small_network_document
from gcsim.engine import (
    Event,
    EventKind,
    EventQueue,
    Replication,
    RngStream,
    TraceRecord,
    TraceWriter,
    advance,
    draw_exponential,
    plan_call_lifecycle,
    read_trace,
    route_handoff,
    run_replication,
    schedule,
)
from gcsim.errors import ConfigError, DomainError, LogicError, ScenarioInvalid
from gcsim.model import MobilityMode, Topology, derive, require_valid
from gcsim.oracle import erlang_b
from gcsim.policy import AdmitDecision, CellChannelState
from gcsim.stats import aggregate


class Recorder:
    """Observer keeping every callback in call order."""

    def __init__(self):
        self.log = []

    def on_event(self, record):
        self.log.append(("event", record))

    def on_window(self, cell, time, stats, old_guard, new_guard):
        self.log.append(("window", cell, time, stats, old_guard, new_guard))

    @property
    def records(self):
        return [entry[1] for entry in self.log if entry[0] == "event"]

    @property
    def windows(self):
        return [entry[1:] for entry in self.log if entry[0] == "window"]


# ----------------------------------------------------------------------------
# Event queue
# ----------------------------------------------------------------------------

class TestEventQueue:
    def test_ties_break_on_sequence(self):
        queue = EventQueue()
        schedule(queue, Event(5.0, 2, EventKind.COMPLETION, 0, 1))
        schedule(queue, Event(5.0, 1, EventKind.NEW_ARRIVAL, 0))
        first, second = advance(queue), advance(queue)
        assert (first.seq, second.seq) == (1, 2)
        assert queue.clock == 5.0

    def test_time_order(self):
        queue = EventQueue()
        for t in (3.0, 1.0, 2.0):
            queue.push(t, EventKind.NEW_ARRIVAL, 0)
        assert [advance(queue).time for _ in range(3)] == [1.0, 2.0, 3.0]

    def test_past_event_rejected(self):
        queue = EventQueue()
        queue.push(4.0, EventKind.NEW_ARRIVAL, 0)
        advance(queue)
        with pytest.raises(LogicError):
            schedule(queue, Event(3.0, 10, EventKind.NEW_ARRIVAL, 0))

    def test_empty_queue(self):
        assert advance(EventQueue()) is None

    def test_push_after_explicit_seq(self):
        queue = EventQueue()
        schedule(queue, Event(1.0, 7, EventKind.NEW_ARRIVAL, 0))
        assert queue.push(1.0, EventKind.NEW_ARRIVAL, 0).seq == 8


# ----------------------------------------------------------------------------
# Random streams and lifecycle draws
# ----------------------------------------------------------------------------

class TestRandom:
    def test_exponential_mean(self):
        stream = RngStream(1, 0, "test/exp")
        draws = np.array([draw_exponential(stream, 2.0) for _ in range(1_000_000)])
        assert draws.min() > 0
        assert draws.mean() == pytest.approx(0.5, rel=0.01)

    @pytest.mark.parametrize("rate", [0.0, -1.0, math.inf, math.nan])
    def test_exponential_bad_rate(self, rate):
        with pytest.raises(DomainError):
            draw_exponential(RngStream(1, 0, "x"), rate)

    def test_streams_replay(self):
        a, b = RngStream(42, 3, "new/0"), RngStream(42, 3, "new/0")
        assert [a.random() for _ in range(5000)] == [b.random() for _ in range(5000)]

    def test_streams_are_independent_by_label_and_index(self):
        base = [RngStream(42, 0, "new/0").random() for _ in range(10)]
        assert base != [RngStream(42, 0, "new/1").random() for _ in range(10)]
        assert base != [RngStream(42, 1, "new/0").random() for _ in range(10)]
        assert base != [RngStream(43, 0, "new/0").random() for _ in range(10)]

    def test_uniform_excludes_zero(self):
        stream = RngStream(5, 0, "u")
        assert all(0.0 < stream.uniform() <= 1.0 for _ in range(10_000))

    @pytest.mark.parametrize("mu, eta, expected", [(1.0, 1.0, 0.5), (1.0, 3.0, 0.75)])
    def test_handoff_fraction(self, mu, eta, expected):
        stream = RngStream(11, 0, "lifecycle/0")
        n = 1_000_000
        handoffs = sum(
            plan_call_lifecycle(stream, mu, eta, MobilityMode.ENDOGENOUS).kind is EventKind.OUTBOUND_HANDOFF
            for _ in range(n)
        )
        assert handoffs / n == pytest.approx(expected, abs=0.005)

    def test_exogenous_always_completes(self):
        stream = RngStream(11, 0, "lifecycle/0")
        kinds = {plan_call_lifecycle(stream, 1.0, 5.0, MobilityMode.EXOGENOUS).kind for _ in range(1000)}
        assert kinds == {EventKind.COMPLETION}

    def test_endogenous_needs_dwell(self):
        with pytest.raises(DomainError):
            plan_call_lifecycle(RngStream(1, 0, "l"), 1.0, 0.0, MobilityMode.ENDOGENOUS)


class TestRouting:
    def test_uniform_over_ring_neighbors(self):
        stream = RngStream(3, 0, "routing/0")
        n = 1_000_000
        hits = sum(route_handoff(Topology.ring(6), 0, stream) == 1 for _ in range(n))
        assert hits / n == pytest.approx(0.5, abs=0.005)

    def test_only_neighbors_chosen(self):
        stream = RngStream(3, 0, "routing/2")
        assert {route_handoff(Topology.ring(6), 2, stream) for _ in range(200)} == {1, 3}

    def test_single_neighbor(self):
        stream = RngStream(3, 0, "routing/0")
        assert {route_handoff(Topology.ring(2), 0, stream) for _ in range(100)} == {1}

    def test_isolated_cell(self):
        with pytest.raises(ConfigError):
            route_handoff(Topology(cell_count=2, adjacency=()), 0, RngStream(3, 0, "routing/0"))


# ----------------------------------------------------------------------------
# Replication loop
# ----------------------------------------------------------------------------

class TestReplication:
    def test_zero_traffic(self, single_cell):
        result = run_replication(single_cell(lambda_n=0.0, lambda_h=0.0), 0)
        totals = result.totals
        assert totals.new_attempts == totals.handoff_attempts == 0
        assert totals.carried_integral == 0.0
        assert totals.guard_integral == pytest.approx(2 * result.observed_time)

    def test_bit_identical_reruns(self, small_network):
        scenario = small_network()
        assert run_replication(scenario, 2) == run_replication(scenario, 2)

    def test_replications_differ(self, small_network):
        scenario = small_network()
        assert run_replication(scenario, 0).cells != run_replication(scenario, 1).cells

    def test_run_validates(self, small_network):
        broken = small_network().model_copy(update={"warmup": 500.0})
        with pytest.raises(ScenarioInvalid) as excinfo:
            run_replication(broken, 0)
        assert [issue.field for issue in excinfo.value.issues] == ["warmup"]

    def test_drops_bounded_by_admissions(self, reference):
        result = run_replication(derive(reference, {"sim_duration": 300.0, "warmup": 30.0}), 0)
        for cell in result.cells:
            assert 0 <= cell.drops <= cell.admitted_new
            assert 0 <= cell.new_blocks <= cell.new_attempts
            assert 0 <= cell.handoff_blocks <= cell.handoff_attempts
            assert cell.borrowed_admissions <= cell.admitted_new

    def test_occupancy_stays_in_range(self, small_network):
        scenario = small_network(scheme="DGCA_CBS")
        recorder = Recorder()
        replication = Replication(scenario, 0, recorder)
        original = replication._touch

        def checked_touch(cell, now):
            replication.states[cell].check()
            original(cell, now)

        replication._touch = checked_touch
        replication.run()
        assert recorder.records

    def test_static_schemes_never_tick(self, single_cell):
        recorder = Recorder()
        run_replication(single_cell(duration=300.0), 0, recorder)
        assert not any(r.kind is EventKind.ADJUST_TICK for r in recorder.records)
        assert recorder.windows == []

    def test_events_in_time_order(self, small_network):
        recorder = Recorder()
        run_replication(small_network(), 0, recorder)
        keys = [(r.time, r.seq) for r in recorder.records]
        assert keys == sorted(keys)
        assert all(r.time <= 200.0 for r in recorder.records)


class TestTraceReplay:
    def test_window_integrals_match_replay(self, small_network):
        scenario = small_network()
        S = scenario.policy.total_channels
        recorder = Recorder()
        run_replication(scenario, 0, recorder)

        n = scenario.topology.cell_count
        busy = [0] * n
        guard = [scenario.policy.initial_guard] * n
        integral = [0.0] * n
        mark = [0.0] * n
        handoffs = [0] * n
        windows_checked = 0

        def flush(cell, now):
            occupancy = max(busy[cell] - (S - guard[cell]), 0)
            integral[cell] += occupancy * (now - mark[cell])
            mark[cell] = now

        for entry in recorder.log:
            if entry[0] == "window":
                _, cell, now, stats, old_guard, new_guard = entry
                flush(cell, now)
                assert old_guard == guard[cell]
                assert stats.window_length == pytest.approx(scenario.policy.adjust_period)
                assert stats.guard_busy_integral == pytest.approx(integral[cell], rel=1e-9, abs=1e-9)
                assert stats.handoff_attempts == handoffs[cell]
                integral[cell] = 0.0
                handoffs[cell] = 0
                guard[cell] = new_guard
                windows_checked += 1
                continue

            record = entry[1]
            if record.kind is EventKind.NEW_ARRIVAL:
                if record.decision.admitted:
                    flush(record.cell, record.time)
                    busy[record.cell] += 1
            elif record.kind is EventKind.COMPLETION:
                flush(record.cell, record.time)
                busy[record.cell] -= 1
            elif record.kind is EventKind.OUTBOUND_HANDOFF:
                flush(record.cell, record.time)
                busy[record.cell] -= 1
                handoffs[record.target] += 1
                if record.decision.admitted:
                    flush(record.target, record.time)
                    busy[record.target] += 1
            assert all(0 <= b <= S for b in busy)

        assert windows_checked >= 2 * 19

    def test_trace_file_round_trip(self, small_network):
        recorder, buffer = Recorder(), io.StringIO()
        scenario = small_network()
        run_replication(scenario, 0, recorder)
        run_replication(scenario, 0, TraceWriter(buffer))
        buffer.seek(0)
        assert read_trace(buffer) == recorder.records

    def test_trace_line_format(self):
        record = TraceRecord(1.5, 7, EventKind.OUTBOUND_HANDOFF, 2, 31, AdmitDecision.BLOCKED, 3)
        assert record.to_line() == "1.5\t7\tOutboundHandoff\t2\t31\tBlocked@3"
        assert TraceRecord.from_line(record.to_line()) == record
        tick = TraceRecord(50.0, 9, EventKind.ADJUST_TICK, 0, None)
        assert tick.to_line() == "50.0\t9\tAdjustTick\t0\t-\t-"
        assert TraceRecord.from_line(tick.to_line()) == tick


# ----------------------------------------------------------------------------
# Statistical checks against closed forms
# ----------------------------------------------------------------------------

def within(report, metric, expected, k=3.0, slack=0.0):
    summary = report[metric]
    return abs(summary.mean - expected) <= k * summary.stderr + slack


@pytest.mark.slow
class TestAgainstOracle:
    """Simulated blocking against the exact chain, within 3 standard errors.

    Every check runs 20 replications carrying at least 2e5 arrivals in total
    (e.g. 1500 time units at 8 arrivals per unit is 12k per replication).
    """

    def test_single_channel_loss(self, single_cell):
        scenario = single_cell(scheme="FCA", S=1, guard=0, lambda_n=1.0, lambda_h=0.0,
                               duration=10000.0, warmup=50.0, replications=20)
        report = aggregate([run_replication(scenario, i) for i in range(scenario.replications)])
        assert within(report, "new_call_blocking", 0.5)

    def test_arrivals_see_time_averages(self, single_cell):
        scenario = single_cell(scheme="FCA", guard=0, duration=2000.0, replications=20)
        results = [run_replication(scenario, i) for i in range(scenario.replications)]
        report = aggregate(results)
        expected = erlang_b(10, 8.0)
        assert within(report, "new_call_blocking", expected)
        assert within(report, "handoff_blocking", expected)

        gaps = []
        for result in results:
            totals = result.totals
            gaps.append(totals.new_blocks / totals.new_attempts - totals.handoff_blocks / totals.handoff_attempts)
        gap_se = np.std(gaps, ddof=1) / math.sqrt(len(gaps))
        assert abs(np.mean(gaps)) <= 3 * gap_se

    def test_static_guard_matches_chain(self, single_cell):
        from gcsim.oracle import ChainSpec, solve_chain

        scenario = single_cell(scheme="StaticGC", duration=1500.0, replications=20)
        report = aggregate([run_replication(scenario, i) for i in range(scenario.replications)])
        p_new, p_handoff = solve_chain(ChainSpec(10, 2, 6.0, 2.0, 1.0))
        assert within(report, "new_call_blocking", p_new)
        assert within(report, "handoff_blocking", p_handoff)
        assert report["carried_load"].mean == pytest.approx(
            6.0 * (1 - p_new) + 2.0 * (1 - p_handoff), rel=0.02
        )

    @pytest.mark.parametrize("reserve", [0, 1, 2])
    def test_borrowing_matches_chain(self, single_cell, reserve):
        from gcsim.oracle import predicted_cbs_blocking

        scenario = single_cell(scheme="DGCA_CBS", reserve=reserve, duration=1500.0, replications=20)
        report = aggregate([run_replication(scenario, i) for i in range(scenario.replications)])
        p_new, p_handoff = predicted_cbs_blocking(10, 2, reserve, 6.0, 2.0, 1.0)
        assert within(report, "new_call_blocking", p_new)
        assert within(report, "handoff_blocking", p_handoff)
        assert report["mean_guard_count"].mean == pytest.approx(2.0)


class TestSchemeIdentities:
    def test_zero_guard_equals_full_sharing(self, reference):
        base = derive(reference, {"sim_duration": 400.0, "warmup": 40.0, "policy.initial_guard": 0,
                                  "policy.borrow_reserve": 0})
        fca = derive(base, {"scheme": "FCA"})
        static = derive(base, {"scheme": "StaticGC"})
        for index in range(3):
            assert run_replication(fca, index).cells == run_replication(static, index).cells

    def test_frozen_controller_borrowing_equals_static_guard(self, reference):
        base = derive(reference, {"sim_duration": 400.0, "warmup": 40.0, "policy.initial_guard": 2,
                                  "policy.guard_min": 2, "policy.guard_max": 2, "policy.borrow_reserve": 2})
        static = derive(base, {"scheme": "StaticGC"})
        borrowing = derive(base, {"scheme": "DGCA_CBS"})
        for index in range(3):
            a, b = run_replication(static, index), run_replication(borrowing, index)
            assert a.cells == b.cells
            assert b.guard_changes == ()
            assert b.totals.borrowed_admissions == 0


@pytest.mark.slow
class TestController:
    def test_guard_climbs_then_settles_under_overload(self, single_cell):
        overloaded = single_cell(scheme="DynamicGC", guard=0, lambda_n=9.0, lambda_h=3.0,
                                 duration=15000.0, warmup=0.0, replications=1)
        scenario = derive(overloaded, {"policy.guard_max": 8, "policy.adjust_period": 500.0})
        assert scenario.policy.guard_util_floor == pytest.approx(0.3)
        recorder = Recorder()
        run_replication(scenario, 0, recorder)
        windows = recorder.windows
        assert len(windows) == 30

        target = scenario.policy.handoff_block_target
        settled = next(i for i, (_, _, stats, _, _) in enumerate(windows) if stats.handoff_blocking <= target)
        for _, _, _, old_guard, new_guard in windows[:settled]:
            assert new_guard >= old_guard
        level = windows[settled][3]
        assert level > 0
        for _, _, _, old_guard, new_guard in windows[settled:]:
            assert abs(old_guard - level) <= 1
            assert abs(new_guard - level) <= 1
        # low guard utilization pulls the count back down once blocking is met
        assert any(new_guard < old_guard for *_, old_guard, new_guard in windows[settled:])

    def test_idle_guard_drains_to_minimum(self, single_cell):
        scenario = derive(
            single_cell(scheme="DynamicGC", guard=4, lambda_n=0.5, lambda_h=0.1, duration=1000.0),
            {"policy.guard_min": 0, "policy.guard_max": 5},
        )
        recorder = Recorder()
        result = run_replication(scenario, 0, recorder)
        assert [new_guard for *_, new_guard in recorder.windows] == [3, 2, 1, 0, 0, 0, 0, 0, 0, 0]
        assert [change.guard for change in result.guard_changes] == [3, 2, 1, 0]

    def test_recorded_guard_changes(self, small_network):
        result = run_replication(small_network(), 0)
        for change in result.guard_changes:
            assert change.time >= 20.0
            assert 0 <= change.guard <= 2


def test_replication_loop_rejects_unknown_call():
    scenario = require_valid(small_network_document())
    replication = Replication(scenario, 0)
    replication.states[0] = CellChannelState(4, 1, busy=1)
    with pytest.raises(LogicError):
        replication._on_completion(Event(1.0, 0, EventKind.COMPLETION, 0, 12345))
