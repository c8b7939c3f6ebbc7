"""OLAC-flavoured metadata registry: store, query, export/import records
describing data sources, components, applications, grid nodes and results.

Persistence is one XML record file per record under ``records/`` plus an
``index.tsv`` mapping record_id to (path, datestamp); a registry may also
run purely in memory (root=None).  Concurrency contract: many readers or
one writer per store.
"""

from __future__ import annotations

import re
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path

from .errors import InvariantViolation, NotFound, ProtocolError
from .speclang import ApplicationDescription, ComponentDescription

RESOURCE_KINDS = ("data", "component", "application", "node", "result")
DC_NS = "http://purl.org/dc/elements/1.1/"
DATESTAMP_RE = re.compile(r"^\d{4}-\d{2}-\d{2}T\d{2}:\d{2}:\d{2}Z$")
EPOCH = "1970-01-01T00:00:00Z"

# Canonical element order for export; remaining elements sorted by name.
_DC_ORDER = ("identifier", "title", "format", "language", "rights", "date", "relation")


def parse_datestamp(ts: str) -> datetime:
    if not DATESTAMP_RE.match(ts):
        raise InvariantViolation(f"bad datestamp {ts!r}")
    return datetime.strptime(ts, "%Y-%m-%dT%H:%M:%SZ").replace(tzinfo=timezone.utc)


def format_datestamp(dt: datetime) -> str:
    return dt.astimezone(timezone.utc).strftime("%Y-%m-%dT%H:%M:%SZ")


@dataclass
class MetadataRecord:
    """Dublin-Core record with requirement-axis extension attributes."""

    record_id: str
    resource_kind: str
    dc: dict[str, tuple[str, ...]]
    extensions: dict[str, str] = field(default_factory=dict)
    payload_ref: str | None = None
    datestamp: str = EPOCH

    def check(self) -> None:
        if self.resource_kind not in RESOURCE_KINDS:
            raise InvariantViolation(f"unknown resource kind {self.resource_kind!r}")
        for required in ("identifier", "title"):
            if not self.dc.get(required):
                raise InvariantViolation(f"dc.{required} is mandatory")
        parse_datestamp(self.datestamp)

    def dc_first(self, element: str) -> str | None:
        values = self.dc.get(element)
        return values[0] if values else None


# ---------------------------------------------------------------------------
# Record XML (export / import)
# ---------------------------------------------------------------------------

def _escape(text: str) -> str:
    return (
        text.replace("&", "&amp;")
        .replace("<", "&lt;")
        .replace(">", "&gt;")
        .replace('"', "&quot;")
    )


def record_to_xml(r: MetadataRecord) -> str:
    """OLAC-style wrapper: header(identifier, datestamp) + dc metadata with
    extension attributes.  Lossless: `record_from_xml` inverts it."""
    attrs = [f'kind="{_escape(r.resource_kind)}"', f'xmlns:dc="{DC_NS}"']
    lines = ["<record %s>" % " ".join(attrs)]
    lines.append("  <header>")
    lines.append(f"    <identifier>{_escape(r.record_id)}</identifier>")
    lines.append(f"    <datestamp>{_escape(r.datestamp)}</datestamp>")
    lines.append("  </header>")
    meta_attrs = ""
    ext_parts = [f'{k}="{_escape(v)}"' for k, v in sorted(r.extensions.items())]
    if r.payload_ref is not None:
        ext_parts.insert(0, f'payload_ref="{_escape(r.payload_ref)}"')
    if ext_parts:
        meta_attrs = " " + " ".join(ext_parts)
    lines.append(f"  <metadata{meta_attrs}>")
    ordered = [e for e in _DC_ORDER if e in r.dc]
    ordered += sorted(e for e in r.dc if e not in _DC_ORDER)
    for element in ordered:
        for value in r.dc[element]:
            lines.append(f"    <dc:{element}>{_escape(value)}</dc:{element}>")
    lines.append("  </metadata>")
    lines.append("</record>")
    return "\n".join(lines) + "\n"


def record_from_element(root: ET.Element) -> MetadataRecord:
    if root.tag != "record":
        raise ProtocolError(f"expected 'record' element, got {root.tag!r}")
    kind = root.get("kind")
    header = root.find("header")
    metadata = root.find("metadata")
    if kind is None or header is None or metadata is None:
        raise ProtocolError("record is missing kind/header/metadata")
    ident = header.findtext("identifier")
    datestamp = header.findtext("datestamp")
    if not ident or not datestamp:
        raise ProtocolError("record header is missing identifier/datestamp")
    dc: dict[str, list[str]] = {}
    prefix = "{%s}" % DC_NS
    for child in metadata:
        if not child.tag.startswith(prefix):
            raise ProtocolError(f"unexpected metadata element {child.tag!r}")
        dc.setdefault(child.tag[len(prefix):], []).append(child.text or "")
    extensions = {k: v for k, v in metadata.attrib.items() if k != "payload_ref"}
    record = MetadataRecord(
        record_id=ident,
        resource_kind=kind,
        dc={k: tuple(v) for k, v in dc.items()},
        extensions=extensions,
        payload_ref=metadata.get("payload_ref"),
        datestamp=datestamp,
    )
    record.check()
    return record


def record_from_xml(text: str) -> MetadataRecord:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ProtocolError(f"malformed record XML: {exc}") from exc
    return record_from_element(root)


# ---------------------------------------------------------------------------
# Queries
# ---------------------------------------------------------------------------

@dataclass
class Query:
    kind: str | None = None
    functionality: str | None = None
    input_type: str | None = None
    output_type: str | None = None
    requirements: dict[str, str] = field(default_factory=dict)
    free_text: str | None = None
    since: str | None = None

    def is_empty(self) -> bool:
        return not any(
            (
                self.kind,
                self.functionality,
                self.input_type,
                self.output_type,
                self.requirements,
                self.free_text,
                self.since,
            )
        )

    def matches(self, r: MetadataRecord) -> bool:
        """Conjunction of the present fields; a requirement-axis filter
        matches when the record's value is absent (unconstrained) or equal."""
        if self.kind is not None and r.resource_kind != self.kind:
            return False
        if self.functionality is not None and r.extensions.get("functionality") != self.functionality:
            return False
        if self.input_type is not None and r.extensions.get("input") != self.input_type:
            return False
        if self.output_type is not None and r.extensions.get("output") != self.output_type:
            return False
        for axis, term in self.requirements.items():
            present = r.extensions.get(axis)
            if present is not None and present != term:
                return False
        if self.free_text is not None:
            haystack = list(r.dc.get("title", ())) + list(r.dc.get("identifier", ()))
            if not any(self.free_text in value for value in haystack):
                return False
        if self.since is not None and r.datestamp < self.since:
            return False
        return True


# ---------------------------------------------------------------------------
# Registry store
# ---------------------------------------------------------------------------

class Registry:
    """Record store with durable directory layout (or in-memory when root
    is None).  Datestamps are assigned monotonically on insert/update."""

    def __init__(self, root=None, name: str = "nlpgrid-registry", clock=None):
        self.root = Path(root) if root is not None else None
        self.name = name
        self._clock = clock or (lambda: datetime.now(timezone.utc))
        self._records: dict[str, MetadataRecord] = {}
        self._last_assigned: datetime | None = None
        self._counter = 0
        if self.root is not None:
            (self.root / "records").mkdir(parents=True, exist_ok=True)
            self._load()

    # -- persistence --

    def _load(self) -> None:
        index = self.root / "index.tsv"
        if not index.exists():
            return
        for line in index.read_text(encoding="utf-8").splitlines():
            if not line.strip():
                continue
            record_id, rel_path, datestamp = line.split("\t")
            record = record_from_xml((self.root / rel_path).read_text(encoding="utf-8"))
            self._records[record_id] = record
            ts = parse_datestamp(datestamp)
            if self._last_assigned is None or ts > self._last_assigned:
                self._last_assigned = ts
        self._counter = len(self._records)

    def _persist(self, r: MetadataRecord) -> None:
        if self.root is None:
            return
        rel_path = f"records/{r.record_id}.xml"
        (self.root / rel_path).write_text(record_to_xml(r), encoding="utf-8")
        rows = [
            (rid, f"records/{rid}.xml", rec.datestamp)
            for rid, rec in sorted(self._records.items())
        ]
        index = "".join("\t".join(row) + "\n" for row in rows)
        (self.root / "index.tsv").write_text(index, encoding="utf-8")

    # -- datestamps --

    def _next_datestamp(self) -> str:
        now = self._clock().astimezone(timezone.utc).replace(microsecond=0)
        if self._last_assigned is not None and now <= self._last_assigned:
            now = self._last_assigned + timedelta(seconds=1)
        self._last_assigned = now
        return format_datestamp(now)

    # -- core operations --

    def add_record(self, r: MetadataRecord) -> str:
        """Insert or update; assigns record_id when empty and always bumps
        the datestamp."""
        if not r.record_id:
            self._counter += 1
            while f"rec-{self._counter:04d}" in self._records:
                self._counter += 1
            r.record_id = f"rec-{self._counter:04d}"
        r.datestamp = self._next_datestamp()
        r.check()
        stored = MetadataRecord(
            record_id=r.record_id,
            resource_kind=r.resource_kind,
            dc=dict(r.dc),
            extensions=dict(r.extensions),
            payload_ref=r.payload_ref,
            datestamp=r.datestamp,
        )
        self._records[stored.record_id] = stored
        self._persist(stored)
        return stored.record_id

    def import_record(self, r: MetadataRecord) -> str:
        """Harvest-side upsert preserving the incoming datestamp.

        Returns 'inserted', 'updated' or 'unchanged'.
        """
        r.check()
        existing = self._records.get(r.record_id)
        if existing is None:
            status = "inserted"
        elif r.datestamp > existing.datestamp or (
            r.datestamp == existing.datestamp and r != existing
        ):
            status = "updated"
        else:
            return "unchanged"
        self._records[r.record_id] = r
        ts = parse_datestamp(r.datestamp)
        if self._last_assigned is None or ts > self._last_assigned:
            self._last_assigned = ts
        self._persist(r)
        return status

    def get(self, record_id: str) -> MetadataRecord:
        try:
            return self._records[record_id]
        except KeyError:
            raise NotFound(f"no record {record_id!r}") from None

    def __len__(self) -> int:
        return len(self._records)

    def all_records(self) -> list[MetadataRecord]:
        """All records ordered by (datestamp, record_id) ascending."""
        return sorted(self._records.values(), key=lambda r: (r.datestamp, r.record_id))

    def query(self, q: Query) -> list[MetadataRecord]:
        """Conjunctive query; results ordered datestamp descending then id."""
        if q.is_empty():
            raise InvariantViolation("query must constrain at least one field")
        hits = [r for r in self._records.values() if q.matches(r)]
        hits.sort(key=lambda r: (_desc(r.datestamp), r.record_id))
        return hits

    def export_record(self, record_id: str) -> str:
        return record_to_xml(self.get(record_id))

    def snapshot(self) -> dict[str, MetadataRecord]:
        return dict(self._records)

    def earliest_datestamp(self) -> str:
        if not self._records:
            return EPOCH
        return min(r.datestamp for r in self._records.values())


def _desc(ts: str) -> str:
    # Lexicographic inversion of a fixed-width ISO timestamp for sorting.
    return "".join(chr(255 - ord(ch)) for ch in ts)


# ---------------------------------------------------------------------------
# Record builders for the toolkit's own resource kinds
# ---------------------------------------------------------------------------

def record_from_component(c: ComponentDescription, payload_ref=None) -> MetadataRecord:
    """Describe a component so discovery can filter on its requirement axes,
    functionality and I/O media types."""
    extensions = {"functionality": c.functionality_type, "input": c.input_type, "output": c.output_type}
    for axis, term in c.requires.vocabulary_terms():
        extensions[axis] = term
    return MetadataRecord(
        record_id="",
        resource_kind="component",
        dc={
            "identifier": (c.identifier_uri,),
            "title": (c.identifier_name or c.identifier_uri,),
            "format": (c.input_type, c.output_type),
        },
        extensions=extensions,
        payload_ref=payload_ref,
    )


def record_from_application(
    a: ApplicationDescription, name: str, payload_ref=None
) -> MetadataRecord:
    entry = a.components[0]
    exit_ = a.components[-1]
    return MetadataRecord(
        record_id="",
        resource_kind="application",
        dc={
            "identifier": (name,),
            "title": (name,),
            "language": tuple(sorted({ds.language for ds in a.datasources})),
        },
        extensions={"input": entry.input_type, "output": exit_.output_type},
        payload_ref=payload_ref,
    )
