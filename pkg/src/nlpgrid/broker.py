"""Brokering: match tasks to grid nodes under requirement constraints,
package oversized data sources, estimate placement-aware costs, compute
deterministic schedules, and reuse cached results.

Planning is topological list scheduling with per-task greedy node choice:
tasks in topological order (ties: smaller process id), each task or chunk
placed on the feasible node minimizing the chosen objective.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

from .errors import (
    BudgetExceeded,
    DeadlineInfeasible,
    MissingLink,
    NoFeasibleNode,
    NonPositiveChunk,
    UnknownSize,
)
from .resolver import PipelineDag
from .resultstore import ResultCache
from .speclang import (
    ComponentDescription,
    DataSourceDescription,
    RequirementSet,
    serialize_component,
)

PROCESSOR_CENTRIC = "processor_centric"
DATA_CENTRIC = "data_centric"
MIN_TIME = "min_time"
MIN_COST = "min_cost"

CLIENT = "client"
DEFAULT_CHUNK_BYTES = 10 * 1000 * 1000  # 10 MB

_MB = 1000 * 1000.0


# ---------------------------------------------------------------------------
# Grid pool
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GridNodeDescription:
    node_id: str
    cpu: str
    os: str
    speed_factor: float
    memory_mb: int
    storage_mb: int
    price_per_cpu_s: float
    licenses_available: frozenset[str] = frozenset()
    colocated_data: frozenset[str] = frozenset()


@dataclass(frozen=True)
class GridPool:
    nodes: tuple[GridNodeDescription, ...]
    links: dict = field(default_factory=dict, hash=False)

    def node(self, node_id: str) -> GridNodeDescription:
        for n in self.nodes:
            if n.node_id == node_id:
                return n
        raise KeyError(node_id)

    def bandwidth_mbps(self, a: str, b: str) -> float:
        if a == b:
            return math.inf
        bw = self.links.get((a, b)) or self.links.get((b, a))
        if bw is None:
            raise MissingLink(f"no bandwidth entry for link {a} <-> {b}")
        return bw


def parse_pool(text: str) -> GridPool:
    """Pool file: one node per line
    ``node_id cpu os speed mem_mb storage_mb price licenses_csv colocated_csv``
    plus a ``LINK a b mbps`` line per link ('-' marks an empty csv field)."""
    nodes = []
    links = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.split()
        if parts[0] == "LINK":
            if len(parts) != 4:
                raise ValueError(f"pool line {lineno}: LINK takes 3 fields")
            links[(parts[1], parts[2])] = float(parts[3])
            continue
        if len(parts) != 9:
            raise ValueError(f"pool line {lineno}: expected 9 fields, got {len(parts)}")
        def csv(fieldtext):
            return frozenset() if fieldtext == "-" else frozenset(fieldtext.split(","))
        nodes.append(
            GridNodeDescription(
                node_id=parts[0],
                cpu=parts[1],
                os=parts[2],
                speed_factor=float(parts[3]),
                memory_mb=int(parts[4]),
                storage_mb=int(parts[5]),
                price_per_cpu_s=float(parts[6]),
                licenses_available=csv(parts[7]),
                colocated_data=csv(parts[8]),
            )
        )
    return GridPool(nodes=tuple(nodes), links=links)


# ---------------------------------------------------------------------------
# Matchmaking
# ---------------------------------------------------------------------------

def node_satisfies(req: RequirementSet, node: GridNodeDescription) -> bool:
    """Each present requirement axis must match; absent axes are
    unconstrained."""
    if req.cpu is not None and node.cpu != req.cpu:
        return False
    if req.os is not None and node.os != req.os:
        return False
    if req.license is not None and req.license not in node.licenses_available:
        return False
    if req.memory_mb is not None and req.memory_mb > node.memory_mb:
        return False
    if req.storage_mb is not None and req.storage_mb > node.storage_mb:
        return False
    return True


def match_nodes(req: RequirementSet, pool: list[GridNodeDescription]) -> list[str]:
    return [node.node_id for node in pool if node_satisfies(req, node)]


# ---------------------------------------------------------------------------
# Data source packaging
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ChunkDescriptor:
    parent_uri: str
    index: int
    offset: int
    length: int


def package(ds: DataSourceDescription, chunk_bytes: int) -> list[ChunkDescriptor]:
    """Split a sized datasource into ceil(size/chunk_bytes) contiguous chunks
    whose ranges partition [0, size)."""
    if ds.size_bytes is None or ds.size_bytes <= 0:
        raise UnknownSize(f"datasource {ds.uri} has no known positive size")
    if chunk_bytes <= 0:
        raise NonPositiveChunk(f"chunk size must be positive, got {chunk_bytes}")
    chunks = []
    offset = 0
    index = 0
    while offset < ds.size_bytes:
        length = min(chunk_bytes, ds.size_bytes - offset)
        chunks.append(ChunkDescriptor(parent_uri=ds.uri, index=index, offset=offset, length=length))
        offset += length
        index += 1
    return chunks


# ---------------------------------------------------------------------------
# Cost model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class PlannedInput:
    """One input a task pulls before running: where it lives, how big it is,
    and the datasource URI when it is raw data (colocation checks)."""

    location: str  # node_id or CLIENT
    size_bytes: int
    source_uri: str | None = None


@dataclass(frozen=True)
class CostEstimate:
    compute_s: float
    transfer_s: float
    money: float


def transfer_seconds(size_bytes: float, bandwidth_mbps: float) -> float:
    if math.isinf(bandwidth_mbps):
        return 0.0
    return size_bytes * 8.0 / (bandwidth_mbps * 1e6)


def estimate_cost(
    work_units: float,
    inputs: list[PlannedInput],
    node: GridNodeDescription,
    pool: GridPool,
    placement: str = PROCESSOR_CENTRIC,
    code_size_bytes: float = 0.0,
) -> CostEstimate:
    """Compute/transfer/money estimate for running a task (or chunk) on a
    node.  Colocated inputs transfer for free; under data-centric placement
    a node holding the data pays a fixed code-shipping transfer instead."""
    compute_s = work_units / node.speed_factor
    transfer_s = 0.0
    for inp in inputs:
        colocated = inp.source_uri is not None and inp.source_uri in node.colocated_data
        if colocated:
            if placement == DATA_CENTRIC and code_size_bytes > 0:
                transfer_s += transfer_seconds(
                    code_size_bytes, pool.bandwidth_mbps(CLIENT, node.node_id)
                )
            continue
        if inp.location == node.node_id:
            continue
        transfer_s += transfer_seconds(
            inp.size_bytes, pool.bandwidth_mbps(inp.location, node.node_id)
        )
    return CostEstimate(
        compute_s=compute_s,
        transfer_s=transfer_s,
        money=node.price_per_cpu_s * compute_s,
    )


# ---------------------------------------------------------------------------
# Cache keys
# ---------------------------------------------------------------------------

def datasource_digest(ds: DataSourceDescription) -> str:
    raw = f"{ds.uri}|{ds.size_bytes}|{ds.format}".encode("utf-8")
    return hashlib.sha256(raw).hexdigest()


def cache_key(
    component: ComponentDescription, input_digests: list[str], params: str = ""
) -> str:
    """Deterministic 256-bit key over component identity, canonical
    requirements, ordered input digests and substituted parameters."""
    blob = "\x1f".join(
        [
            component.identifier_uri,
            component.identifier_name,
            serialize_component(component),
            "\x1e".join(input_digests),
            params,
        ]
    ).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


# ---------------------------------------------------------------------------
# Scheduling
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SchedulingPreferences:
    deadline_s: float | None = None
    budget: float | None = None
    placement: str = PROCESSOR_CENTRIC
    objective: str = MIN_TIME
    code_size_bytes: float = 0.0


@dataclass(frozen=True)
class Assignment:
    process_id: int
    chunk_index: int
    node_id: str
    start_s: float  # compute start (transfer precedes it)
    end_s: float
    transfer_in_s: float
    cost: float
    cached: bool = False
    # Replay metadata for the simulator (not part of the report surface).
    work_units: float = 0.0
    inputs: tuple[PlannedInput, ...] = ()


@dataclass(frozen=True)
class Schedule:
    assignments: tuple[Assignment, ...]
    makespan_s: float
    total_cost: float
    cache_hits: frozenset[int] = frozenset()
    task_keys: dict = field(default_factory=dict, hash=False, compare=False)

    def for_task(self, process_id: int) -> list[Assignment]:
        return [a for a in self.assignments if a.process_id == process_id]


def _data_location(uri: str, pool: GridPool) -> str:
    for node in pool.nodes:
        if uri in node.colocated_data:
            return node.node_id
    return CLIENT


def plan(
    dag: PipelineDag,
    pool: GridPool,
    prefs: SchedulingPreferences = SchedulingPreferences(),
    cache: ResultCache | None = None,
    chunk_bytes: int | None = DEFAULT_CHUNK_BYTES,
) -> Schedule:
    """Deterministic list schedule for a resolved dag.

    Entry tasks with a sized datasource are packaged into chunks which may
    run in parallel on distinct nodes.  Tasks whose cache key hits get zero
    duration and cost.  Raises NoFeasibleNode / DeadlineInfeasible /
    BudgetExceeded, each carrying the best partial schedule.
    """
    order = dag.topological_ids()
    node_free = {node.node_id: 0.0 for node in pool.nodes}
    assignments: list[Assignment] = []
    cache_hits: set[int] = set()
    task_end: dict[int, float] = {}
    task_outputs: dict[int, list[PlannedInput]] = {}  # what consumers pull
    task_bytes: dict[int, int] = {}
    task_keys: dict[int, str] = {}

    def partial() -> Schedule:
        return _finish(assignments, cache_hits, task_keys)

    for process_id in order:
        task = dag.task(process_id)
        component = task.component
        preds = dag.predecessors(process_id)

        # Inputs, total size and per-chunk layout.
        if process_id in dag.sources:
            ds = dag.sources[process_id]
            location = _data_location(ds.uri, pool)
            size = ds.size_bytes or 0
            if chunk_bytes and ds.size_bytes:
                chunk_lengths = [c.length for c in package(ds, chunk_bytes)]
            else:
                chunk_lengths = [size]
            chunk_inputs = [
                [PlannedInput(location=location, size_bytes=length, source_uri=ds.uri)]
                for length in chunk_lengths
            ]
            input_digests = [datasource_digest(ds)]
            total_in = size
        else:
            inputs = []
            for pred in preds:
                inputs.extend(task_outputs[pred])
            chunk_inputs = [inputs]
            input_digests = [task_keys[pred] for pred in preds]
            total_in = sum(inp.size_bytes for inp in inputs)

        key = cache_key(component, input_digests, params=f"chunk_bytes={chunk_bytes}")
        task_keys[process_id] = key
        ready = max((task_end[pred] for pred in preds), default=0.0)

        if cache is not None and cache.lookup(key) is not None:
            cached_ref = cache.lookup(key)
            cache_hits.add(process_id)
            assignments.append(
                Assignment(
                    process_id=process_id,
                    chunk_index=0,
                    node_id="cache",
                    start_s=ready,
                    end_s=ready,
                    transfer_in_s=0.0,
                    cost=0.0,
                    cached=True,
                )
            )
            task_end[process_id] = ready
            task_bytes[process_id] = cached_ref.size_bytes
            task_outputs[process_id] = [
                PlannedInput(location=CLIENT, size_bytes=cached_ref.size_bytes)
            ]
            continue

        feasible_ids = match_nodes(component.requires, list(pool.nodes))
        if not feasible_ids:
            raise NoFeasibleNode(
                f"no node satisfies the requirements of task {process_id} "
                f"({component.identifier_name})",
                partial(),
            )
        feasible = [pool.node(node_id) for node_id in feasible_ids]

        # Data-centric placement: restrict to data-holding nodes when possible.
        if prefs.placement == DATA_CENTRIC and process_id in dag.sources:
            uri = dag.sources[process_id].uri
            holders = [n for n in feasible if uri in n.colocated_data]
            if holders:
                feasible = holders

        wupm = component.work_units_per_mb or 1.0
        outputs = []
        ends = []
        for chunk_index, inputs in enumerate(chunk_inputs):
            chunk_in_bytes = sum(inp.size_bytes for inp in inputs)
            work_units = (chunk_in_bytes / _MB) * wupm
            best = None
            for pool_index, node in enumerate(feasible):
                est = estimate_cost(
                    work_units,
                    inputs,
                    node,
                    pool,
                    placement=prefs.placement,
                    code_size_bytes=prefs.code_size_bytes,
                )
                t0 = max(node_free[node.node_id], ready)
                finish = t0 + est.transfer_s + est.compute_s
                if prefs.objective == MIN_COST:
                    rank = (est.money, finish, pool_index)
                else:
                    rank = (finish, pool_index)
                if best is None or rank < best[0]:
                    best = (rank, node, est, t0, finish)
            _, node, est, t0, finish = best
            node_free[node.node_id] = finish
            assignments.append(
                Assignment(
                    process_id=process_id,
                    chunk_index=chunk_index,
                    node_id=node.node_id,
                    start_s=t0 + est.transfer_s,
                    end_s=finish,
                    transfer_in_s=est.transfer_s,
                    cost=est.money,
                    work_units=work_units,
                    inputs=tuple(inputs),
                )
            )
            outputs.append(PlannedInput(location=node.node_id, size_bytes=chunk_in_bytes))
            ends.append(finish)
        task_end[process_id] = max(ends)
        task_bytes[process_id] = total_in
        task_outputs[process_id] = outputs

    schedule = _finish(assignments, cache_hits, task_keys)
    if prefs.deadline_s is not None and schedule.makespan_s > prefs.deadline_s:
        raise DeadlineInfeasible(
            f"makespan {schedule.makespan_s:.3f}s exceeds deadline {prefs.deadline_s}s",
            schedule,
        )
    if prefs.budget is not None and schedule.total_cost > prefs.budget:
        raise BudgetExceeded(
            f"cost {schedule.total_cost:.3f} exceeds budget {prefs.budget}", schedule
        )
    return schedule


def _finish(assignments, cache_hits, task_keys) -> Schedule:
    makespan = max((a.end_s for a in assignments), default=0.0)
    total_cost = sum(a.cost for a in assignments)
    return Schedule(
        assignments=tuple(assignments),
        makespan_s=makespan,
        total_cost=total_cost,
        cache_hits=frozenset(cache_hits),
        task_keys=dict(task_keys),
    )


# ---------------------------------------------------------------------------
# Schedule checking and reporting
# ---------------------------------------------------------------------------

def schedule_violations(s: Schedule, dag: PipelineDag, pool: GridPool) -> list[str]:
    """Precedence, per-node non-overlap and feasibility checks; empty list
    means the schedule honours its invariants."""
    violations = []
    ends = {}
    for a in s.assignments:
        ends[a.process_id] = max(ends.get(a.process_id, 0.0), a.end_s)
    for producer, consumer in dag.edges:
        for a in s.for_task(consumer):
            # Inbound transfer may only begin once every producer has ended.
            if a.start_s - a.transfer_in_s + 1e-9 < ends.get(producer, 0.0):
                violations.append(
                    f"task {consumer} starts at {a.start_s} before producer "
                    f"{producer} ends at {ends[producer]}"
                )
    per_node: dict[str, list[tuple[float, float]]] = {}
    for a in s.assignments:
        if a.cached:
            continue
        per_node.setdefault(a.node_id, []).append((a.start_s - a.transfer_in_s, a.end_s))
    for node_id, windows in per_node.items():
        windows.sort()
        for (s0, e0), (s1, _) in zip(windows, windows[1:]):
            if s1 + 1e-9 < e0:
                violations.append(f"node {node_id}: overlapping windows at {s1}")
    for a in s.assignments:
        if a.cached:
            continue
        task = dag.task(a.process_id)
        if not node_satisfies(task.component.requires, pool.node(a.node_id)):
            violations.append(
                f"task {a.process_id} assigned to infeasible node {a.node_id}"
            )
    return violations


def _num(x: float) -> str:
    return ("%.6f" % x).rstrip("0").rstrip(".") or "0"


def render_schedule_report(s: Schedule) -> str:
    """Tab-separated report: one line per assignment plus a TOTAL line."""
    lines = []
    for a in s.assignments:
        lines.append(
            "\t".join(
                [
                    str(a.process_id),
                    str(a.chunk_index),
                    a.node_id,
                    _num(a.start_s),
                    _num(a.end_s),
                    _num(a.transfer_in_s),
                    _num(a.cost),
                    "yes" if a.cached else "no",
                ]
            )
        )
    lines.append("TOTAL\t%s\t%s" % (_num(s.makespan_s), _num(s.total_cost)))
    return "\n".join(lines) + "\n"
