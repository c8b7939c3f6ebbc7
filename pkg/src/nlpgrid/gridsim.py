"""Deterministic simulated execution of a Schedule against a grid pool.

Time is an event clock, never wall time.  Components run as deterministic
byte-transform stubs: output bytes are a pure function of the task's cache
key and component identity, so re-running an application reproduces the
same result digests (which is what makes the broker cache sound).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

from .broker import GridPool, Schedule, match_nodes, transfer_seconds
from .errors import NoRetryTarget, StubMissing
from .resolver import PipelineDag
from .resultstore import ContentStore, ResultCache, ResultRef, content_digest

EVENT_KINDS = (
    "transfer_end",
    "task_end",
    "node_fail",
    "retry",
    "transfer_start",
    "task_start",
)
_KIND_RANK = {kind: i for i, kind in enumerate(EVENT_KINDS)}


@dataclass(frozen=True)
class TraceEvent:
    time_s: float
    kind: str
    process_id: int
    chunk_index: int
    node_id: str


@dataclass(frozen=True)
class ExecutionTrace:
    events: tuple[TraceEvent, ...]
    final_outputs: dict = field(default_factory=dict, hash=False)
    wall_makespan_s: float = 0.0


@dataclass(frozen=True)
class NodeFailure:
    node_id: str
    time_s: float


# ---------------------------------------------------------------------------
# Stubs
# ---------------------------------------------------------------------------

def generic_stub(task_key: str, component) -> bytes:
    """Deterministic 64-byte transform of the task identity."""
    material = f"{component.functionality_type}|{component.identifier_uri}|{task_key}"
    first = hashlib.sha256(material.encode("utf-8")).digest()
    second = hashlib.sha256(first).digest()
    return first + second


class StubTable:
    """Maps functionality terms to deterministic output generators."""

    def __init__(self, stubs: dict | None = None, default=None):
        self.stubs = dict(stubs or {})
        self.default = default

    @classmethod
    def generic(cls) -> "StubTable":
        return cls(default=generic_stub)

    def generate(self, functionality: str, task_key: str, component) -> bytes:
        stub = self.stubs.get(functionality, self.default)
        if stub is None:
            raise StubMissing(f"no stub for functionality {functionality!r}")
        return stub(task_key, component)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

def execute(
    schedule: Schedule,
    dag: PipelineDag,
    pool: GridPool,
    stubs: StubTable | None = None,
    seed: int = 0,
    failures: list[NodeFailure] | None = None,
    store: ContentStore | None = None,
    cache: ResultCache | None = None,
) -> ExecutionTrace:
    """Replay a schedule as timed events.

    Identical (schedule, seed, failures) yield a byte-identical trace.  A
    node failure at time t aborts every assignment on that node that has
    not finished by t; each aborted assignment is retried exactly once on
    the next feasible node, with its timing recomputed (downstream tasks
    shift accordingly).  Outputs are stored content-addressed and recorded
    in the cache when one is supplied.
    """
    stubs = stubs or StubTable.generic()
    failures = sorted(failures or [], key=lambda f: (f.time_s, f.node_id))
    fail_time = {}
    for f in failures:
        fail_time.setdefault(f.node_id, f.time_s)

    events: list[TraceEvent] = []
    for f in failures:
        events.append(TraceEvent(f.time_s, "node_fail", 0, 0, f.node_id))

    node_free = {node.node_id: 0.0 for node in pool.nodes}
    task_end: dict[int, float] = {}

    def emit_run(a, node_id, t0, transfer_s, compute_s):
        if transfer_s > 0:
            events.append(TraceEvent(t0, "transfer_start", a.process_id, a.chunk_index, node_id))
            events.append(
                TraceEvent(t0 + transfer_s, "transfer_end", a.process_id, a.chunk_index, node_id)
            )
        start = t0 + transfer_s
        end = start + compute_s
        events.append(TraceEvent(start, "task_start", a.process_id, a.chunk_index, node_id))
        events.append(TraceEvent(end, "task_end", a.process_id, a.chunk_index, node_id))
        node_free[node_id] = end
        return end

    def recompute_transfer(a, node_id):
        node = pool.node(node_id)
        total = 0.0
        for inp in a.inputs:
            if inp.source_uri is not None and inp.source_uri in node.colocated_data:
                continue
            if inp.location == node_id:
                continue
            total += transfer_seconds(inp.size_bytes, pool.bandwidth_mbps(inp.location, node_id))
        return total

    for a in schedule.assignments:
        if a.cached:
            task_end[a.process_id] = max(task_end.get(a.process_id, 0.0), a.end_s)
            continue
        preds = dag.predecessors(a.process_id)
        ready = max((task_end[p] for p in preds), default=0.0)
        node = pool.node(a.node_id)
        transfer_s = a.transfer_in_s  # planned node: replay the planned transfer
        compute_s = a.work_units / node.speed_factor
        t0 = max(node_free[a.node_id], ready)
        end = t0 + transfer_s + compute_s
        failed_at = fail_time.get(a.node_id)

        if failed_at is None or end <= failed_at:
            end = emit_run(a, a.node_id, t0, transfer_s, compute_s)
        else:
            # Abort (emitting any events that happened before the failure),
            # then retry once on the next feasible node in pool order.
            if t0 < failed_at:
                if transfer_s > 0:
                    events.append(
                        TraceEvent(t0, "transfer_start", a.process_id, a.chunk_index, a.node_id)
                    )
                    if t0 + transfer_s <= failed_at:
                        events.append(
                            TraceEvent(
                                t0 + transfer_s, "transfer_end", a.process_id, a.chunk_index, a.node_id
                            )
                        )
                if t0 + transfer_s <= failed_at:
                    events.append(
                        TraceEvent(
                            t0 + transfer_s, "task_start", a.process_id, a.chunk_index, a.node_id
                        )
                    )
            task = dag.task(a.process_id)
            feasible = match_nodes(task.component.requires, list(pool.nodes))
            ordered = feasible[feasible.index(a.node_id) + 1 :] + feasible[: feasible.index(a.node_id)] if a.node_id in feasible else feasible
            target = None
            for candidate in ordered:
                if candidate == a.node_id:
                    continue
                t0r = max(node_free[candidate], ready, failed_at)
                transfer_r = recompute_transfer(a, candidate)
                compute_r = a.work_units / pool.node(candidate).speed_factor
                end_r = t0r + transfer_r + compute_r
                other_fail = fail_time.get(candidate)
                if other_fail is not None and end_r > other_fail:
                    continue
                target = (candidate, t0r, transfer_r, compute_r)
                break
            if target is None:
                raise NoRetryTarget(
                    f"task {a.process_id} chunk {a.chunk_index}: node {a.node_id} "
                    f"failed and no alternative feasible node remains"
                )
            candidate, t0r, transfer_r, compute_r = target
            events.append(TraceEvent(failed_at, "retry", a.process_id, a.chunk_index, candidate))
            end = emit_run(a, candidate, t0r, transfer_r, compute_r)

        task_end[a.process_id] = max(task_end.get(a.process_id, 0.0), end)

    events.sort(key=lambda e: (e.time_s, _KIND_RANK[e.kind], e.process_id, e.chunk_index, e.node_id))

    # Materialize outputs: deterministic stub bytes per task.
    final_outputs: dict[int, ResultRef] = {}
    for process_id in dag.topological_ids():
        key = schedule.task_keys[process_id]
        if process_id in schedule.cache_hits and cache is not None:
            final_outputs[process_id] = cache.lookup(key)
            continue
        component = dag.task(process_id).component
        data = stubs.generate(component.functionality_type, key, component)
        if store is not None:
            ref = store.put(data, component.output_type)
        else:
            ref = ResultRef(
                digest=content_digest(data),
                size_bytes=len(data),
                media_type=component.output_type,
            )
        final_outputs[process_id] = ref
        if cache is not None:
            cache.store(key, ref)

    wall = max((e.time_s for e in events), default=0.0)
    return ExecutionTrace(
        events=tuple(events), final_outputs=final_outputs, wall_makespan_s=wall
    )


# ---------------------------------------------------------------------------
# Trace verification and rendering
# ---------------------------------------------------------------------------

def verify_trace(trace: ExecutionTrace, schedule: Schedule, dag: PipelineDag | None = None) -> list[str]:
    """Check trace invariants; an empty list means the trace is valid."""
    violations = []
    times = [e.time_s for e in trace.events]
    if times != sorted(times):
        violations.append("events are not time-ordered")

    transfer_end_at = {}
    task_end_at: dict[int, float] = {}
    for e in trace.events:
        if e.kind == "transfer_end":
            transfer_end_at[(e.process_id, e.chunk_index, e.node_id)] = e.time_s
        if e.kind == "task_end":
            task_end_at[e.process_id] = max(task_end_at.get(e.process_id, 0.0), e.time_s)

    starts = [e for e in trace.events if e.kind == "task_start"]
    for e in starts:
        t_end = transfer_end_at.get((e.process_id, e.chunk_index, e.node_id))
        if t_end is not None and t_end > e.time_s + 1e-9:
            violations.append(
                f"task {e.process_id}.{e.chunk_index} starts before its transfer ends"
            )
    if dag is not None:
        completed_starts = {
            (e.process_id, e.chunk_index, e.node_id) for e in trace.events if e.kind == "task_end"
        }
        for e in starts:
            if (e.process_id, e.chunk_index, e.node_id) not in completed_starts:
                continue  # aborted attempt
            for producer in dag.predecessors(e.process_id):
                if producer in schedule.cache_hits:
                    continue
                if task_end_at.get(producer, 0.0) > e.time_s + 1e-9:
                    violations.append(
                        f"task {e.process_id} starts before producer {producer} ends"
                    )

    failed = any(e.kind == "node_fail" for e in trace.events)
    if not failed and abs(trace.wall_makespan_s - schedule.makespan_s) > 1e-9:
        violations.append(
            f"wall makespan {trace.wall_makespan_s} != planned {schedule.makespan_s} "
            f"with no failures injected"
        )
    return violations


def _num(x: float) -> str:
    return ("%.6f" % x).rstrip("0").rstrip(".") or "0"


def render_trace(trace: ExecutionTrace) -> str:
    """Tab-separated event lines, then OUTPUT and MAKESPAN summary lines."""
    lines = []
    for e in trace.events:
        lines.append(
            "\t".join([_num(e.time_s), e.kind, str(e.process_id), str(e.chunk_index), e.node_id])
        )
    for process_id in sorted(trace.final_outputs):
        ref = trace.final_outputs[process_id]
        lines.append("OUTPUT\t%d\t%s\t%d\t%s" % (process_id, ref.digest, ref.size_bytes, ref.media_type))
    lines.append("MAKESPAN\t%s" % _num(trace.wall_makespan_s))
    return "\n".join(lines) + "\n"
