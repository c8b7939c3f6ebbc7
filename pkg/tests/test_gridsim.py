import random

import pytest

from nlpgrid.broker import SchedulingPreferences, plan
from nlpgrid.errors import NoRetryTarget, StubMissing
from nlpgrid.gridsim import (
    ExecutionTrace,
    NodeFailure,
    StubTable,
    TraceEvent,
    execute,
    generic_stub,
    render_trace,
    verify_trace,
)
from nlpgrid.resultstore import ContentStore, ResultCache
from nlpgrid.speclang import RequirementSet

from test_broker import MB, chain_dag, node, pool_of


class TestNoFailureReplay:
    def test_single_task_event_sequence(self):
        dag = chain_dag(1, size_bytes=10 * MB)
        pool = pool_of([node("A")])
        schedule = plan(dag, pool)
        trace = execute(schedule, dag, pool)
        assert [(e.kind, pytest.approx(e.time_s)) for e in trace.events] == [
            ("transfer_start", 0.0),
            ("transfer_end", 0.8),
            ("task_start", 0.8),
            ("task_end", 10.8),
        ]
        assert trace.wall_makespan_s == pytest.approx(schedule.makespan_s)
        assert verify_trace(trace, schedule, dag) == []

    def test_wall_equals_planned_makespan_on_chains(self):
        rng = random.Random(1234)
        for _ in range(100):
            n_tasks = rng.randint(1, 4)
            dag = chain_dag(
                n_tasks,
                size_bytes=rng.choice([1 * MB, 10 * MB, 25 * MB]),
                wupm=[rng.choice([None, 0.5, 2.0]) for _ in range(n_tasks)],
            )
            nodes = [
                node(f"n{i}", speed=rng.choice([0.5, 1.0, 2.0]))
                for i in range(rng.randint(1, 3))
            ]
            pool = pool_of(nodes)
            schedule = plan(dag, pool)
            trace = execute(schedule, dag, pool)
            assert verify_trace(trace, schedule, dag) == []
            assert trace.wall_makespan_s == pytest.approx(schedule.makespan_s)

    def test_same_inputs_identical_traces(self):
        dag = chain_dag(3, size_bytes=25 * MB)
        pool = pool_of([node("a"), node("b", speed=2.0)])
        schedule = plan(dag, pool)
        t1 = execute(schedule, dag, pool, seed=1)
        t2 = execute(schedule, dag, pool, seed=1)
        assert render_trace(t1) == render_trace(t2)

    def test_output_digests_are_seed_independent(self):
        dag = chain_dag(2, size_bytes=10 * MB)
        pool = pool_of([node("A")])
        schedule = plan(dag, pool)
        d1 = {p: r.digest for p, r in execute(schedule, dag, pool, seed=1).final_outputs.items()}
        d2 = {p: r.digest for p, r in execute(schedule, dag, pool, seed=99).final_outputs.items()}
        assert d1 == d2


class TestFailureAndRetry:
    def test_hand_computed_retry_timeline(self):
        dag = chain_dag(1, size_bytes=10 * MB)
        pool = pool_of([node("A"), node("B")])
        schedule = plan(dag, pool)
        assert schedule.assignments[0].node_id == "A"
        trace = execute(schedule, dag, pool, failures=[NodeFailure("A", 5.0)])
        got = [(e.kind, round(e.time_s, 6), e.node_id) for e in trace.events]
        assert got == [
            ("transfer_start", 0.0, "A"),
            ("transfer_end", 0.8, "A"),
            ("task_start", 0.8, "A"),
            ("node_fail", 5.0, "A"),
            ("retry", 5.0, "B"),
            ("transfer_start", 5.0, "B"),
            ("transfer_end", 5.8, "B"),
            ("task_start", 5.8, "B"),
            ("task_end", 15.8, "B"),
        ]
        assert trace.wall_makespan_s == pytest.approx(15.8)
        assert verify_trace(trace, schedule, dag) == []

    def test_downstream_tasks_shift_after_retry(self):
        dag = chain_dag(2, size_bytes=10 * MB)
        pool = pool_of([node("A"), node("B")])
        schedule = plan(dag, pool)
        trace = execute(schedule, dag, pool, failures=[NodeFailure("A", 5.0)])
        assert verify_trace(trace, schedule, dag) == []
        # The second task may only start after the retried first task ends.
        end1 = max(
            e.time_s for e in trace.events if e.kind == "task_end" and e.process_id == 1
        )
        start2 = min(
            e.time_s for e in trace.events if e.kind == "task_start" and e.process_id == 2
        )
        assert start2 >= end1 - 1e-9

    def test_no_retry_target(self):
        dag = chain_dag(1, size_bytes=10 * MB)
        pool = pool_of([node("A")])
        schedule = plan(dag, pool)
        with pytest.raises(NoRetryTarget):
            execute(schedule, dag, pool, failures=[NodeFailure("A", 1.0)])

    def test_retry_skips_infeasible_nodes(self):
        dag = chain_dag(1, size_bytes=10 * MB, requires=[RequirementSet(cpu="x86")])
        pool = pool_of([node("A"), node("other", cpu="sparc"), node("C")])
        schedule = plan(dag, pool)
        trace = execute(schedule, dag, pool, failures=[NodeFailure("A", 2.0)])
        retry = [e for e in trace.events if e.kind == "retry"]
        assert [e.node_id for e in retry] == ["C"]
        assert verify_trace(trace, schedule, dag) == []

    def test_failure_traces_are_deterministic(self):
        dag = chain_dag(3, size_bytes=25 * MB)
        pool = pool_of([node("a"), node("b", speed=2.0)])
        schedule = plan(dag, pool)
        failures = [NodeFailure("a", 3.0)]
        t1 = execute(schedule, dag, pool, failures=list(failures))
        t2 = execute(schedule, dag, pool, failures=list(failures))
        assert render_trace(t1) == render_trace(t2)


class TestStubsAndStore:
    def test_generic_stub_is_pure(self):
        dag = chain_dag(1)
        c = dag.task(1).component
        assert generic_stub("key", c) == generic_stub("key", c)
        assert generic_stub("key", c) != generic_stub("other", c)
        assert len(generic_stub("key", c)) == 64

    def test_missing_stub_raises(self):
        table = StubTable(stubs={}, default=None)
        with pytest.raises(StubMissing):
            table.generate("packaging", "k", None)

    def test_outputs_stored_and_cached(self, tmp_path):
        dag = chain_dag(2, size_bytes=10 * MB)
        pool = pool_of([node("A")])
        store = ContentStore(tmp_path / "results")
        cache = ResultCache(tmp_path / "cache.json")
        schedule = plan(dag, pool, cache=cache)
        trace = execute(schedule, dag, pool, store=store, cache=cache)
        for ref in trace.final_outputs.values():
            assert store.get(ref.digest)
        assert len(cache) == 2
        # Replanning against the warm cache hits every task.
        second = plan(dag, pool, cache=cache)
        assert second.cache_hits == {1, 2}
        retrace = execute(second, dag, pool, store=store, cache=cache)
        assert verify_trace(retrace, second, dag) == []
        assert {p: r.digest for p, r in retrace.final_outputs.items()} == {
            p: r.digest for p, r in trace.final_outputs.items()
        }


class TestVerifyTrace:
    def test_detects_unordered_events(self):
        trace = ExecutionTrace(
            events=(
                TraceEvent(2.0, "task_start", 1, 0, "A"),
                TraceEvent(1.0, "task_end", 1, 0, "A"),
            )
        )
        schedule = plan(chain_dag(1, size_bytes=10 * MB), pool_of([node("A")]))
        assert "events are not time-ordered" in verify_trace(trace, schedule)

    def test_detects_start_before_transfer_end(self):
        trace = ExecutionTrace(
            events=(
                TraceEvent(0.0, "transfer_start", 1, 0, "A"),
                TraceEvent(0.5, "task_start", 1, 0, "A"),
                TraceEvent(1.0, "transfer_end", 1, 0, "A"),
                TraceEvent(2.0, "task_end", 1, 0, "A"),
            ),
            wall_makespan_s=2.0,
        )
        dag = chain_dag(1, size_bytes=10 * MB)
        schedule = plan(dag, pool_of([node("A")]))
        problems = verify_trace(trace, schedule, dag)
        assert any("before its transfer ends" in p for p in problems)

    def test_render_contains_outputs_and_makespan(self):
        dag = chain_dag(1, size_bytes=10 * MB)
        pool = pool_of([node("A")])
        schedule = plan(dag, pool)
        text = render_trace(execute(schedule, dag, pool))
        lines = text.strip().split("\n")
        assert lines[-1].startswith("MAKESPAN\t")
        assert any(line.startswith("OUTPUT\t1\t") for line in lines)
