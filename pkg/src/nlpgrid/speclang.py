"""Parse, validate, serialize and variable-substitute the XML description
languages for components and applications.

The grammar (see README) is fixed and namespace-free:

- component: ``identifier(uri,name)``, ``functionality(type)``,
  ``requires(cpu?,os?,proglang?,sourcestatus?,license?,memory_mb?,storage_mb?,deadline_s?)``,
  ``input(type,format?)``, ``output(type,format?)``.
- application: ``variable(name,default?)*``, ``datasource(uri,format,language,size_bytes?)+``,
  ``component``+ (embedded component grammar),
  ``pipeline`` of ``process(id,component,after?,bandwidth_mbps?)+``.

Serialization is canonical: schema attribute order, 2-space indentation,
LF line endings. ``parse(serialize(d)) == d`` for every valid description
and ``serialize`` is byte-stable under re-parsing.

All operations are pure functions over immutable values.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field, replace

from .errors import (
    CyclicPipeline,
    DanglingReference,
    IllegalReference,
    MalformedXml,
    SchemaViolation,
    UnboundVariable,
)
from .vocab import VocabularyTables

MEDIA_TYPE_RE = re.compile(r"^[a-z0-9][a-z0-9.+_-]*/[a-z0-9][a-z0-9.+_-]*$")
LANGUAGE_RE = re.compile(r"^[A-Za-z]{2,3}$")
URI_RE = re.compile(r"^(?:[a-z][a-z0-9+.-]*://\S+|repo:\S+)$")
VAR_RE = re.compile(r"\$\{([A-Za-z_][A-Za-z0-9_.]*)\}")
TASK_REF_RE = re.compile(r"^task\.(\d+)\.output$")


# ---------------------------------------------------------------------------
# Domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RequirementSet:
    """Technical constraints of a component (all axes optional)."""

    cpu: str | None = None
    os: str | None = None
    proglang: str | None = None
    sourcestatus: str | None = None
    license: str | None = None
    memory_mb: int | None = None
    storage_mb: int | None = None
    deadline_s: float | None = None

    def vocabulary_terms(self):
        """(axis, term) pairs for the present vocabulary-valued axes."""
        return [
            (axis, value)
            for axis, value in (
                ("cpu", self.cpu),
                ("os", self.os),
                ("proglang", self.proglang),
                ("sourcestatus", self.sourcestatus),
                ("license", self.license),
            )
            if value is not None
        ]

    def is_empty(self) -> bool:
        return all(
            getattr(self, f) is None
            for f in (
                "cpu", "os", "proglang", "sourcestatus", "license",
                "memory_mb", "storage_mb", "deadline_s",
            )
        )


@dataclass(frozen=True)
class ComponentDescription:
    identifier_uri: str
    identifier_name: str
    functionality_type: str
    input_type: str
    output_type: str
    requires: RequirementSet = field(default_factory=RequirementSet)
    input_format: str | None = None
    output_format: str | None = None
    # Extension attribute: expected work per MB of input (planning cost model).
    work_units_per_mb: float | None = None


@dataclass(frozen=True)
class DataSourceDescription:
    uri: str
    format: str
    language: str
    size_bytes: int | None = None


@dataclass(frozen=True)
class PipelineStep:
    process_id: int
    component_name: str
    after: frozenset[int] | None = None
    bandwidth_hint_mbps: float | None = None


@dataclass(frozen=True)
class ApplicationDescription:
    datasources: tuple[DataSourceDescription, ...]
    components: tuple[ComponentDescription, ...]
    pipeline: tuple[PipelineStep, ...]
    variables: tuple[tuple[str, str | None], ...] = ()

    def component_by_name(self, name: str) -> ComponentDescription | None:
        for c in self.components:
            if c.identifier_name == name:
                return c
        return None

    def step_by_id(self, process_id: int) -> PipelineStep | None:
        for s in self.pipeline:
            if s.process_id == process_id:
                return s
        return None


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "warning"
    code: str
    location: str
    message: str


@dataclass(frozen=True)
class ValidationReport:
    findings: tuple[Finding, ...]

    @property
    def errors(self):
        return [f for f in self.findings if f.severity == "error"]

    @property
    def warnings(self):
        return [f for f in self.findings if f.severity == "warning"]

    @property
    def valid(self) -> bool:
        return not self.errors


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

def _parse_xml(doc: str) -> ET.Element:
    try:
        return ET.fromstring(doc)
    except ET.ParseError as exc:
        raise MalformedXml(str(exc)) from exc


def _req_attr(elem: ET.Element, name: str, where: str) -> str:
    value = elem.get(name)
    if value is None:
        raise SchemaViolation(f"{where}: missing mandatory attribute '{name}'")
    return value


def _opt_int(elem: ET.Element, name: str, where: str) -> int | None:
    raw = elem.get(name)
    if raw is None:
        return None
    try:
        value = int(raw)
    except ValueError:
        raise SchemaViolation(f"{where}: attribute '{name}' is not an integer: {raw!r}")
    if value < 0:
        raise SchemaViolation(f"{where}: attribute '{name}' must be >= 0")
    return value


def _opt_float(elem: ET.Element, name: str, where: str) -> float | None:
    raw = elem.get(name)
    if raw is None:
        return None
    try:
        value = float(raw)
    except ValueError:
        raise SchemaViolation(f"{where}: attribute '{name}' is not a number: {raw!r}")
    if not (value == value and abs(value) != float("inf")):
        raise SchemaViolation(f"{where}: attribute '{name}' must be finite")
    if value < 0:
        raise SchemaViolation(f"{where}: attribute '{name}' must be >= 0")
    return value


def _component_from_element(root: ET.Element) -> ComponentDescription:
    if root.tag != "component":
        raise SchemaViolation(f"expected root element 'component', got '{root.tag}'")

    identifier = root.find("identifier")
    functionality = root.find("functionality")
    input_el = root.find("input")
    output_el = root.find("output")
    for name, el in (
        ("identifier", identifier),
        ("functionality", functionality),
        ("input", input_el),
        ("output", output_el),
    ):
        if el is None:
            raise SchemaViolation(f"component: missing mandatory element '{name}'")

    requires = RequirementSet()
    requires_el = root.find("requires")
    if requires_el is not None:
        requires = RequirementSet(
            cpu=requires_el.get("cpu"),
            os=requires_el.get("os"),
            proglang=requires_el.get("proglang"),
            sourcestatus=requires_el.get("sourcestatus"),
            license=requires_el.get("license"),
            memory_mb=_opt_int(requires_el, "memory_mb", "requires"),
            storage_mb=_opt_int(requires_el, "storage_mb", "requires"),
            deadline_s=_opt_float(requires_el, "deadline_s", "requires"),
        )

    work = root.get("work_units_per_mb")
    work_units = None
    if work is not None:
        try:
            work_units = float(work)
        except ValueError:
            raise SchemaViolation(f"component: bad work_units_per_mb {work!r}")
        if work_units <= 0:
            raise SchemaViolation("component: work_units_per_mb must be > 0")

    return ComponentDescription(
        identifier_uri=_req_attr(identifier, "uri", "identifier"),
        identifier_name=identifier.get("name", ""),
        functionality_type=_req_attr(functionality, "type", "functionality"),
        requires=requires,
        input_type=_req_attr(input_el, "type", "input"),
        output_type=_req_attr(output_el, "type", "output"),
        input_format=input_el.get("format"),
        output_format=output_el.get("format"),
        work_units_per_mb=work_units,
    )


def parse_component(doc: str) -> ComponentDescription:
    """Parse a component description document.

    Raises MalformedXml for non-well-formed input and SchemaViolation when
    a mandatory element or attribute is absent.  Vocabulary membership is
    not checked here; use `validate` / `component_findings` for that
    (unknown terms are warnings, never parse failures).
    """
    return _component_from_element(_parse_xml(doc))


def _parse_after(raw: str | None, where: str) -> frozenset[int] | None:
    if raw is None:
        return None
    ids = set()
    for tok in raw.split(","):
        tok = tok.strip()
        if not tok:
            continue
        try:
            ids.add(int(tok))
        except ValueError:
            raise SchemaViolation(f"{where}: bad 'after' entry {tok!r}")
    return frozenset(ids)


def parse_application(doc: str) -> ApplicationDescription:
    """Parse an application description document.

    Pipeline order is the document order of `process` elements; a step
    without an `after` attribute in a pipeline where none carries one
    implicitly follows its document predecessor (chain semantics).
    """
    root = _parse_xml(doc)
    if root.tag != "application":
        raise SchemaViolation(f"expected root element 'application', got '{root.tag}'")

    variables = []
    for v in root.findall("variable"):
        variables.append((_req_attr(v, "name", "variable"), v.get("default")))

    datasources = []
    for ds in root.findall("datasource"):
        datasources.append(
            DataSourceDescription(
                uri=_req_attr(ds, "uri", "datasource"),
                format=_req_attr(ds, "format", "datasource"),
                language=_req_attr(ds, "language", "datasource"),
                size_bytes=_opt_int(ds, "size_bytes", "datasource"),
            )
        )
    if not datasources:
        raise SchemaViolation("application: at least one datasource is required")

    components = [_component_from_element(c) for c in root.findall("component")]
    if not components:
        raise SchemaViolation("application: at least one component is required")

    pipeline_el = root.find("pipeline")
    if pipeline_el is None:
        raise SchemaViolation("application: missing mandatory element 'pipeline'")
    steps = []
    for p in pipeline_el.findall("process"):
        where = "process"
        raw_id = _req_attr(p, "id", where)
        try:
            process_id = int(raw_id)
        except ValueError:
            raise SchemaViolation(f"{where}: id is not an integer: {raw_id!r}")
        if process_id <= 0:
            raise SchemaViolation(f"{where}: id must be positive")
        bandwidth = _opt_float(p, "bandwidth_mbps", where)
        if bandwidth is not None and bandwidth <= 0:
            raise SchemaViolation(f"{where}: bandwidth_mbps must be > 0")
        steps.append(
            PipelineStep(
                process_id=process_id,
                component_name=_req_attr(p, "component", where),
                after=_parse_after(p.get("after"), where),
                bandwidth_hint_mbps=bandwidth,
            )
        )
    if not steps:
        raise SchemaViolation("pipeline: at least one process is required")

    app = ApplicationDescription(
        datasources=tuple(datasources),
        components=tuple(components),
        pipeline=tuple(steps),
        variables=tuple(variables),
    )
    _check_references(app)
    _check_acyclic(app)
    return app


def _check_references(app: ApplicationDescription) -> None:
    declared = {c.identifier_name for c in app.components}
    ids = [s.process_id for s in app.pipeline]
    if len(ids) != len(set(ids)):
        raise SchemaViolation("pipeline: duplicate process ids")
    id_set = set(ids)
    for step in app.pipeline:
        if step.component_name not in declared:
            raise DanglingReference(
                f"process {step.process_id} references undeclared component "
                f"'{step.component_name}'"
            )
        for pred in step.after or ():
            if pred not in id_set:
                raise SchemaViolation(
                    f"process {step.process_id}: 'after' references unknown id {pred}"
                )


def precedence_edges(app: ApplicationDescription) -> list[tuple[int, int]]:
    """Edges (producer, consumer) implied by `after`, or by document order
    when no step declares `after` (chain semantics)."""
    if any(s.after is not None for s in app.pipeline):
        edges = []
        for step in app.pipeline:
            for pred in sorted(step.after or ()):
                edges.append((pred, step.process_id))
        return edges
    ids = [s.process_id for s in app.pipeline]
    return list(zip(ids, ids[1:]))


def _check_acyclic(app: ApplicationDescription) -> None:
    order = topological_order(app)
    if order is None:
        raise CyclicPipeline("pipeline precedence relation contains a cycle")


def topological_order(app: ApplicationDescription) -> list[int] | None:
    """Topological order of process ids (smaller id first among ready ones),
    or None when the precedence relation is cyclic."""
    edges = precedence_edges(app)
    ids = [s.process_id for s in app.pipeline]
    indeg = {i: 0 for i in ids}
    succs: dict[int, list[int]] = {i: [] for i in ids}
    for a, b in edges:
        indeg[b] += 1
        succs[a].append(b)
    ready = sorted(i for i in ids if indeg[i] == 0)
    order = []
    while ready:
        node = ready.pop(0)
        order.append(node)
        for nxt in succs[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                ready.append(nxt)
        ready.sort()
    if len(order) != len(ids):
        return None
    return order


# ---------------------------------------------------------------------------
# Serialization (canonical form)
# ---------------------------------------------------------------------------

def _fmt_num(value) -> str:
    if isinstance(value, int):
        return str(value)
    if float(value).is_integer():
        return str(int(value))
    return repr(float(value))


def _attrs(pairs) -> str:
    parts = []
    for name, value in pairs:
        if value is None:
            continue
        if isinstance(value, (int, float)):
            value = _fmt_num(value)
        escaped = (
            value.replace("&", "&amp;").replace("<", "&lt;").replace('"', "&quot;")
        )
        parts.append(f'{name}="{escaped}"')
    return " ".join(parts)


def _component_lines(c: ComponentDescription, indent: int) -> list[str]:
    pad = " " * indent
    inner = " " * (indent + 2)
    root_attrs = _attrs([("work_units_per_mb", c.work_units_per_mb)])
    lines = [pad + ("<component %s>" % root_attrs if root_attrs else "<component>")]
    lines.append(
        inner
        + "<identifier %s/>" % _attrs([("uri", c.identifier_uri), ("name", c.identifier_name)])
    )
    lines.append(inner + "<functionality %s/>" % _attrs([("type", c.functionality_type)]))
    if not c.requires.is_empty():
        r = c.requires
        lines.append(
            inner
            + "<requires %s/>"
            % _attrs(
                [
                    ("cpu", r.cpu),
                    ("os", r.os),
                    ("proglang", r.proglang),
                    ("sourcestatus", r.sourcestatus),
                    ("license", r.license),
                    ("memory_mb", r.memory_mb),
                    ("storage_mb", r.storage_mb),
                    ("deadline_s", r.deadline_s),
                ]
            )
        )
    lines.append(
        inner + "<input %s/>" % _attrs([("type", c.input_type), ("format", c.input_format)])
    )
    lines.append(
        inner + "<output %s/>" % _attrs([("type", c.output_type), ("format", c.output_format)])
    )
    lines.append(pad + "</component>")
    return lines


def serialize_component(c: ComponentDescription) -> str:
    """Canonical XML text for a component description (round-trips)."""
    return "\n".join(_component_lines(c, 0)) + "\n"


def serialize_application(a: ApplicationDescription) -> str:
    """Canonical XML text for an application description (round-trips)."""
    lines = ["<application>"]
    for name, default in a.variables:
        lines.append("  <variable %s/>" % _attrs([("name", name), ("default", default)]))
    for ds in a.datasources:
        lines.append(
            "  <datasource %s/>"
            % _attrs(
                [
                    ("uri", ds.uri),
                    ("format", ds.format),
                    ("language", ds.language),
                    ("size_bytes", ds.size_bytes),
                ]
            )
        )
    for c in a.components:
        lines.extend(_component_lines(c, 2))
    lines.append("  <pipeline>")
    for step in a.pipeline:
        after = None
        if step.after is not None:
            after = ",".join(str(i) for i in sorted(step.after))
        lines.append(
            "    <process %s/>"
            % _attrs(
                [
                    ("id", step.process_id),
                    ("component", step.component_name),
                    ("after", after),
                    ("bandwidth_mbps", step.bandwidth_hint_mbps),
                ]
            )
        )
    lines.append("  </pipeline>")
    lines.append("</application>")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Validation
# ---------------------------------------------------------------------------

def component_findings(
    c: ComponentDescription, vocab: VocabularyTables, location: str = "component"
) -> list[Finding]:
    findings = []
    if not c.identifier_uri or not URI_RE.match(c.identifier_uri):
        findings.append(
            Finding(
                "error",
                "bad-identifier-uri",
                location,
                f"identifier uri {c.identifier_uri!r} is neither an absolute URI "
                f"nor a 'repo:<id>' key",
            )
        )
    if not vocab.known("functionality", c.functionality_type):
        findings.append(
            Finding(
                "warning",
                "unknown-vocabulary-term",
                location,
                f"functionality term {c.functionality_type!r} is not in the "
                f"functionality vocabulary",
            )
        )
    for axis, term in c.requires.vocabulary_terms():
        if not vocab.known(axis, term):
            findings.append(
                Finding(
                    "warning",
                    "unknown-vocabulary-term",
                    location,
                    f"requirement {axis}={term!r} is not in the {axis} vocabulary",
                )
            )
    for label, media in (("input", c.input_type), ("output", c.output_type)):
        if not MEDIA_TYPE_RE.match(media):
            findings.append(
                Finding(
                    "error",
                    "bad-media-type",
                    f"{location}/{label}",
                    f"media type {media!r} does not match token/token",
                )
            )
    return findings


def validate(a: ApplicationDescription, vocab: VocabularyTables | None = None) -> ValidationReport:
    """Check every invariant of an application description.

    Pure: identical inputs produce an identical report.  An application
    with zero error findings is valid; warnings never block.
    """
    vocab = vocab or VocabularyTables.builtin()
    findings: list[Finding] = []

    for i, ds in enumerate(a.datasources, 1):
        loc = f"datasource[{i}]"
        if not ds.uri:
            findings.append(Finding("error", "empty-uri", loc, "datasource uri is empty"))
        if not MEDIA_TYPE_RE.match(ds.format):
            findings.append(
                Finding(
                    "error",
                    "bad-media-type",
                    loc,
                    f"format {ds.format!r} does not match token/token",
                )
            )
        if not LANGUAGE_RE.match(ds.language):
            findings.append(
                Finding(
                    "error",
                    "bad-language",
                    loc,
                    f"language {ds.language!r} is not a 2-3 letter code",
                )
            )

    names = [c.identifier_name for c in a.components]
    dupes = {n for n in names if names.count(n) > 1}
    for name in sorted(dupes):
        findings.append(
            Finding(
                "error",
                "duplicate-component-name",
                "components",
                f"component name {name!r} declared more than once",
            )
        )
    for c in a.components:
        findings.extend(component_findings(c, vocab, f"component[{c.identifier_name}]"))

    referenced = {s.component_name for s in a.pipeline}
    for c in a.components:
        if c.identifier_name not in referenced:
            findings.append(
                Finding(
                    "warning",
                    "unreferenced-component",
                    f"component[{c.identifier_name}]",
                    "component is declared but never referenced by the pipeline",
                )
            )

    ids = [s.process_id for s in a.pipeline]
    if len(ids) != len(set(ids)):
        findings.append(
            Finding("error", "duplicate-process-id", "pipeline", "duplicate process ids")
        )
    else:
        for step in a.pipeline:
            if step.component_name not in set(names):
                findings.append(
                    Finding(
                        "error",
                        "dangling-reference",
                        f"process[{step.process_id}]",
                        f"references undeclared component {step.component_name!r}",
                    )
                )
        if topological_order(a) is None:
            findings.append(
                Finding("error", "cyclic-pipeline", "pipeline", "precedence relation has a cycle")
            )

    return ValidationReport(tuple(findings))


# ---------------------------------------------------------------------------
# Variable substitution
# ---------------------------------------------------------------------------

def _substitute_text(
    text: str,
    resolved: dict[str, str],
    declared_ids: set[int],
    phase: str,
    location: str,
) -> str:
    def repl(match: re.Match) -> str:
        name = match.group(1)
        task_ref = TASK_REF_RE.match(name)
        if task_ref:
            if int(task_ref.group(1)) not in declared_ids:
                raise IllegalReference(
                    f"{location}: ${{{name}}} names undeclared process id"
                )
            if name in resolved:
                return resolved[name]
            if phase == "static":
                return match.group(0)  # resolved later by the broker
            raise UnboundVariable(
                f"{location}: task reference ${{{name}}} unresolved in dynamic phase"
            )
        if name in resolved:
            return resolved[name]
        raise UnboundVariable(f"{location}: variable ${{{name}}} has no binding or default")

    return VAR_RE.sub(repl, text)


def substitute_variables(
    a: ApplicationDescription,
    bindings: dict[str, str],
    phase: str = "static",
) -> ApplicationDescription:
    """Replace ``${name}`` occurrences in attribute values.

    Static phase: every plain variable must have a binding or a declared
    default; ``${task.<id>.output}`` references are checked against the
    declared process ids and left intact.  Dynamic phase: task references
    must also resolve (binding key ``task.<id>.output``).
    """
    if phase not in ("static", "dynamic"):
        raise ValueError(f"unknown phase {phase!r}")
    resolved = {name: default for name, default in a.variables if default is not None}
    resolved.update(bindings)
    declared_ids = {s.process_id for s in a.pipeline}

    def sub(text, location):
        if text is None:
            return None
        return _substitute_text(text, resolved, declared_ids, phase, location)

    datasources = tuple(
        replace(
            ds,
            uri=sub(ds.uri, f"datasource[{i}]"),
            format=sub(ds.format, f"datasource[{i}]"),
            language=sub(ds.language, f"datasource[{i}]"),
        )
        for i, ds in enumerate(a.datasources, 1)
    )
    components = tuple(
        replace(
            c,
            identifier_uri=sub(c.identifier_uri, f"component[{c.identifier_name}]"),
            input_type=sub(c.input_type, f"component[{c.identifier_name}]"),
            output_type=sub(c.output_type, f"component[{c.identifier_name}]"),
            input_format=sub(c.input_format, f"component[{c.identifier_name}]"),
            output_format=sub(c.output_format, f"component[{c.identifier_name}]"),
        )
        for c in a.components
    )
    return replace(a, datasources=datasources, components=components)
