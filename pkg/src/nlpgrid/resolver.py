"""Pipeline dependency resolution: build the task DAG, detect media-type
incompatibilities between adjacent components, repair them with minimal
conversion chains discovered from the registry, and flatten aggregated
applications.

Chain choice is deterministic: minimal length, ties broken by the
lexicographically smallest sequence of converter names.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass, field, replace
from pathlib import Path
from urllib.parse import urlparse

from .errors import (
    CyclicPipeline,
    NoConversionPath,
    NotFound,
    RecursiveAggregation,
    SourceArityMismatch,
    SpliceTypeMismatch,
)
from .registry import MetadataRecord, Query, Registry
from .speclang import (
    ApplicationDescription,
    ComponentDescription,
    DataSourceDescription,
    PipelineStep,
    RequirementSet,
    parse_application,
    precedence_edges,
    topological_order,
)

#: Sentinel producer id used for datasource->task bindings in findings.
SOURCE = 0


@dataclass(frozen=True)
class TaskNode:
    process_id: int
    component: ComponentDescription
    bandwidth_hint_mbps: float | None = None


@dataclass(frozen=True)
class Incompatibility:
    edge: tuple[int, int]  # (producer, consumer); producer == SOURCE for bindings
    produced: str
    required: str


@dataclass(frozen=True)
class PipelineDag:
    tasks: tuple[TaskNode, ...]
    edges: tuple[tuple[int, int], ...]
    sources: dict[int, DataSourceDescription] = field(default_factory=dict, hash=False)

    def task(self, process_id: int) -> TaskNode:
        for t in self.tasks:
            if t.process_id == process_id:
                return t
        raise KeyError(process_id)

    def predecessors(self, process_id: int) -> list[int]:
        return sorted(a for a, b in self.edges if b == process_id)

    def successors(self, process_id: int) -> list[int]:
        return sorted(b for a, b in self.edges if a == process_id)

    def entry_ids(self) -> list[int]:
        consumers = {b for _, b in self.edges}
        return [t.process_id for t in self.tasks if t.process_id not in consumers]

    def topological_ids(self) -> list[int]:
        indeg = {t.process_id: 0 for t in self.tasks}
        for _, b in self.edges:
            indeg[b] += 1
        ready = sorted(i for i, d in indeg.items() if d == 0)
        order = []
        while ready:
            node = ready.pop(0)
            order.append(node)
            for nxt in self.successors(node):
                indeg[nxt] -= 1
                if indeg[nxt] == 0:
                    ready.append(nxt)
            ready.sort()
        if len(order) != len(self.tasks):
            raise CyclicPipeline("dag contains a cycle")
        return order


def build_dag(a: ApplicationDescription) -> PipelineDag:
    """One task per pipeline step; edges from `after` (or chain order);
    entry tasks bound to datasources in declaration order."""
    by_name = {c.identifier_name: c for c in a.components}
    tasks = tuple(
        TaskNode(
            process_id=s.process_id,
            component=by_name[s.component_name],
            bandwidth_hint_mbps=s.bandwidth_hint_mbps,
        )
        for s in a.pipeline
    )
    edges = tuple(precedence_edges(a))
    if topological_order(a) is None:
        raise CyclicPipeline("pipeline precedence relation contains a cycle")

    consumers = {b for _, b in edges}
    entry_ids = [s.process_id for s in a.pipeline if s.process_id not in consumers]
    if len(entry_ids) != len(a.datasources):
        raise SourceArityMismatch(
            f"{len(entry_ids)} entry tasks but {len(a.datasources)} datasources"
        )
    sources = dict(zip(entry_ids, a.datasources))
    return PipelineDag(tasks=tasks, edges=edges, sources=sources)


def check_compat(d: PipelineDag) -> list[Incompatibility]:
    """Media-type mismatches on source bindings and producer/consumer edges,
    ordered by (producer, consumer)."""
    findings = []
    for consumer_id, ds in d.sources.items():
        required = d.task(consumer_id).component.input_type
        if ds.format != required:
            findings.append(
                Incompatibility(edge=(SOURCE, consumer_id), produced=ds.format, required=required)
            )
    for producer_id, consumer_id in d.edges:
        produced = d.task(producer_id).component.output_type
        required = d.task(consumer_id).component.input_type
        if produced != required:
            findings.append(
                Incompatibility(edge=(producer_id, consumer_id), produced=produced, required=required)
            )
    findings.sort(key=lambda i: i.edge)
    return findings


# ---------------------------------------------------------------------------
# Conversion chains
# ---------------------------------------------------------------------------

def component_from_record(r: MetadataRecord) -> ComponentDescription:
    """Reconstruct a component surface from its registry record."""
    requires = RequirementSet(
        cpu=r.extensions.get("cpu"),
        os=r.extensions.get("os"),
        proglang=r.extensions.get("proglang"),
        sourcestatus=r.extensions.get("sourcestatus"),
        license=r.extensions.get("license"),
    )
    return ComponentDescription(
        identifier_uri=r.dc_first("identifier") or "",
        identifier_name=r.dc_first("title") or "",
        functionality_type=r.extensions.get("functionality", ""),
        requires=requires,
        input_type=r.extensions.get("input", ""),
        output_type=r.extensions.get("output", ""),
    )


def _converters(reg: Registry) -> list[ComponentDescription]:
    records = reg.query(Query(kind="component", functionality="media_conversion"))
    converters = [component_from_record(r) for r in records]
    converters.sort(key=lambda c: c.identifier_name)
    return converters


def conversion_chain(
    reg: Registry, produced: str, required: str
) -> list[ComponentDescription] | None:
    """Shortest converter chain turning `produced` into `required`, or None.

    Cost order is (length, name sequence), so equal-length alternatives
    resolve to the lexicographically smallest identifier_name sequence.
    """
    if produced == required:
        return []
    converters = _converters(reg)
    outgoing: dict[str, list[ComponentDescription]] = {}
    for c in converters:
        outgoing.setdefault(c.input_type, []).append(c)

    # Dijkstra over media types with lexicographic (length, names) cost.
    counter = 0
    heap = [(0, (), produced, counter, ())]
    best: set[str] = set()
    while heap:
        length, names, media, _, path = heapq.heappop(heap)
        if media == required:
            return list(path)
        if media in best:
            continue
        best.add(media)
        for c in outgoing.get(media, ()):
            if c.output_type in best:
                continue
            counter += 1
            heapq.heappush(
                heap,
                (length + 1, names + (c.identifier_name,), c.output_type, counter, path + (c,)),
            )
    return None


def resolve(d: PipelineDag, reg: Registry, report: list | None = None) -> PipelineDag:
    """Insert minimal conversion chains until check_compat(result) is empty.

    Idempotent; original tasks and edges survive up to subdivision.  When
    `report` is given, one tab-separated line per insertion is appended:
    ``producer<TAB>consumer<TAB>chain_csv``.
    """
    findings = check_compat(d)
    if not findings:
        return d

    tasks = list(d.tasks)
    edges = list(d.edges)
    sources = dict(d.sources)
    next_id = max(t.process_id for t in tasks) + 1

    for finding in findings:
        chain = conversion_chain(reg, finding.produced, finding.required)
        if chain is None:
            raise NoConversionPath(finding.edge, finding.produced, finding.required)
        producer_id, consumer_id = finding.edge
        chain_ids = []
        for component in chain:
            tasks.append(TaskNode(process_id=next_id, component=component))
            chain_ids.append(next_id)
            next_id += 1
        if producer_id == SOURCE:
            sources[chain_ids[0]] = sources.pop(consumer_id)
        else:
            edges.remove((producer_id, consumer_id))
            edges.append((producer_id, chain_ids[0]))
        for a, b in zip(chain_ids, chain_ids[1:]):
            edges.append((a, b))
        edges.append((chain_ids[-1], consumer_id))
        if report is not None:
            report.append(
                "%d\t%d\t%s"
                % (producer_id, consumer_id, ",".join(c.identifier_name for c in chain))
            )

    result = PipelineDag(tasks=tuple(tasks), edges=tuple(edges), sources=sources)
    assert check_compat(result) == []
    return result


# ---------------------------------------------------------------------------
# Aggregated-application flattening
# ---------------------------------------------------------------------------

MAX_FLATTEN_DEPTH = 8

#: Placeholder functionality marking a pipeline step that references a
#: stored sub-application rather than a concrete component.
AGGREGATE_FUNCTIONALITY = "application"


def _load_sub_application(reg: Registry, placeholder: ComponentDescription):
    """Locate the application record named by a placeholder component and
    parse the application document behind its payload_ref."""
    candidates = reg.query(Query(kind="application"))
    match = None
    for record in candidates:
        identifiers = record.dc.get("identifier", ()) + record.dc.get("title", ())
        if placeholder.identifier_uri in identifiers or (
            placeholder.identifier_name and placeholder.identifier_name in identifiers
        ):
            match = record
            break
    if match is None:
        raise NotFound(
            f"no application record for aggregate reference "
            f"{placeholder.identifier_name!r} ({placeholder.identifier_uri})"
        )
    if not match.payload_ref:
        raise NotFound(f"application record {match.record_id} has no payload_ref")
    path = match.payload_ref
    if path.startswith("file://"):
        path = urlparse(path).path
    text = Path(path).read_text(encoding="utf-8")
    return match.record_id, parse_application(text)


def _is_aggregate(c: ComponentDescription) -> bool:
    return c.functionality_type == AGGREGATE_FUNCTIONALITY


def flatten(a: ApplicationDescription, reg: Registry, _depth: int = 0,
            _stack: tuple = ()) -> ApplicationDescription:
    """Inline every aggregated sub-application reference.

    A pipeline step whose component carries functionality "application" is
    replaced by the referenced application's pipeline; process ids are
    renumbered 1..n, seam type mismatches are repaired with registry
    conversion chains, and recursion is capped.
    """
    by_name = {c.identifier_name: c for c in a.components}
    if not any(_is_aggregate(by_name[s.component_name]) for s in a.pipeline):
        return a
    if _depth >= MAX_FLATTEN_DEPTH:
        raise RecursiveAggregation(f"aggregation depth exceeds {MAX_FLATTEN_DEPTH}")

    # Mutable view: steps keyed by id with explicit predecessor sets.
    preds: dict[int, set[int]] = {s.process_id: set() for s in a.pipeline}
    for producer, consumer in precedence_edges(a):
        preds[consumer].add(producer)
    comp_of = {s.process_id: by_name[s.component_name] for s in a.pipeline}
    order = [s.process_id for s in a.pipeline]
    components = {c.identifier_name: c for c in a.components}
    variables = list(a.variables)
    next_id = max(order) + 1

    for step_id in list(order):
        placeholder = comp_of[step_id]
        if not _is_aggregate(placeholder):
            continue
        record_id, sub = _load_sub_application(reg, placeholder)
        if record_id in _stack:
            raise RecursiveAggregation(
                f"application record {record_id} references itself"
            )
        sub = flatten(sub, reg, _depth + 1, _stack + (record_id,))

        # Splice the sub pipeline in place of the placeholder step.
        sub_by_name = {c.identifier_name: c for c in sub.components}
        renumbered: dict[int, int] = {}
        sub_preds: dict[int, set[int]] = {}
        for s in sub.pipeline:
            renumbered[s.process_id] = next_id
            next_id += 1
        for producer, consumer in precedence_edges(sub):
            sub_preds.setdefault(renumbered[consumer], set()).add(renumbered[producer])
        sub_consumer_ids = {renumbered[b] for _, b in precedence_edges(sub)}
        sub_producer_ids = {renumbered[a_] for a_, _ in precedence_edges(sub)}
        entry_ids = [renumbered[s.process_id] for s in sub.pipeline
                     if renumbered[s.process_id] not in sub_consumer_ids]
        exit_ids = [renumbered[s.process_id] for s in sub.pipeline
                    if renumbered[s.process_id] not in sub_producer_ids]

        for name, component in sub_by_name.items():
            existing = components.get(name)
            if existing is not None and existing != component:
                raise SpliceTypeMismatch(
                    f"component name {name!r} declared incompatibly by a sub-application"
                )
            components[name] = component

        position = order.index(step_id)
        order[position:position + 1] = [renumbered[s.process_id] for s in sub.pipeline]
        step_preds = preds.pop(step_id)
        step_succs = [i for i, p in preds.items() if step_id in p]
        for s in sub.pipeline:
            new_id = renumbered[s.process_id]
            comp_of[new_id] = sub_by_name[s.component_name]
            preds[new_id] = sub_preds.get(new_id, set())
        del comp_of[step_id]

        # Seam wiring plus conversion repair where typing disagrees.
        for succ in step_succs:
            preds[succ].discard(step_id)
        for entry in entry_ids:
            entry_input = comp_of[entry].input_type
            for pred in step_preds:
                produced = comp_of[pred].output_type
                chain = conversion_chain(reg, produced, entry_input)
                if chain is None:
                    raise SpliceTypeMismatch(
                        f"cannot adapt {produced} to {entry_input} at splice entry"
                    )
                upstream = pred
                for component in chain:
                    components.setdefault(component.identifier_name, component)
                    comp_of[next_id] = component
                    preds[next_id] = {upstream}
                    order.insert(order.index(entry), next_id)
                    upstream = next_id
                    next_id += 1
                preds[entry].add(upstream)
        for succ in step_succs:
            succ_input = comp_of[succ].input_type
            for exit_id in exit_ids:
                produced = comp_of[exit_id].output_type
                chain = conversion_chain(reg, produced, succ_input)
                if chain is None:
                    raise SpliceTypeMismatch(
                        f"cannot adapt {produced} to {succ_input} at splice exit"
                    )
                upstream = exit_id
                for component in chain:
                    components.setdefault(component.identifier_name, component)
                    comp_of[next_id] = component
                    preds[next_id] = {upstream}
                    order.insert(order.index(succ), next_id)
                    upstream = next_id
                    next_id += 1
                preds[succ].add(upstream)
        for name, default in sub.variables:
            if name not in {n for n, _ in variables}:
                variables.append((name, default))
        components.pop(placeholder.identifier_name, None)

    # Renumber 1..n in the final document order and rebuild the description.
    new_ids = {old: i for i, old in enumerate(order, 1)}
    pipeline = tuple(
        PipelineStep(
            process_id=new_ids[old],
            component_name=comp_of[old].identifier_name,
            after=frozenset(new_ids[p] for p in preds[old]),
        )
        for old in order
    )
    used = []
    for old in order:
        name = comp_of[old].identifier_name
        if name not in used:
            used.append(name)
    result = ApplicationDescription(
        datasources=a.datasources,
        components=tuple(components[name] for name in used),
        pipeline=pipeline,
        variables=tuple(variables),
    )
    return flatten(result, reg, _depth + 1, _stack)
