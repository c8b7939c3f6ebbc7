"""Harvest-oriented provider protocol over registry stores.

Implements the {Identify, ListRecords} verb subset with from-date filtering
and resumption tokens — exactly what aggregation needs.  Providers can be
served over HTTP (GET ?verb=...), read from a registry directory on disk,
or addressed in-process; the harvester treats all three uniformly.
"""

from __future__ import annotations

import urllib.error
import urllib.parse
import urllib.request
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from pathlib import Path

from .errors import (
    BadToken,
    BadVerb,
    EndpointUnreachable,
    PartialHarvest,
    ProtocolError,
)
from .registry import (
    MetadataRecord,
    Registry,
    record_from_element,
    record_to_xml,
)

DEFAULT_PAGE_SIZE = 10


@dataclass
class ProviderRequest:
    verb: str
    from_ts: str | None = None
    resumption_token: str | None = None


@dataclass
class ProviderResponse:
    verb: str
    repository_name: str | None = None
    earliest_datestamp: str | None = None
    records: list[MetadataRecord] = field(default_factory=list)
    resumption_token: str | None = None


# ---------------------------------------------------------------------------
# Provider side
# ---------------------------------------------------------------------------

def _make_token(offset: int, from_ts: str | None) -> str:
    return f"off:{offset}:{from_ts or '-'}"


def _parse_token(token: str) -> tuple[int, str | None]:
    parts = token.split(":", 2)
    if len(parts) != 3 or parts[0] != "off":
        raise BadToken(f"malformed resumption token {token!r}")
    try:
        offset = int(parts[1])
    except ValueError:
        raise BadToken(f"malformed resumption token {token!r}") from None
    if offset < 0:
        raise BadToken(f"malformed resumption token {token!r}")
    return offset, None if parts[2] == "-" else parts[2]


def serve_provider(
    store: Registry, request: ProviderRequest, page_size: int = DEFAULT_PAGE_SIZE
) -> ProviderResponse:
    """Answer one provider request against a registry store (read-only).

    Ordering is deterministic: (datestamp, record_id) ascending.  ListRecords
    pages carry a resumption token while records remain.
    """
    if request.verb == "Identify":
        return ProviderResponse(
            verb="Identify",
            repository_name=store.name,
            earliest_datestamp=store.earliest_datestamp(),
        )
    if request.verb != "ListRecords":
        raise BadVerb(f"unsupported verb {request.verb!r}")

    from_ts = request.from_ts
    offset = 0
    if request.resumption_token is not None:
        offset, from_ts = _parse_token(request.resumption_token)

    records = store.all_records()
    if from_ts is not None:
        records = [r for r in records if r.datestamp >= from_ts]
    if offset > len(records):
        raise BadToken(f"resumption token out of range: {request.resumption_token!r}")

    page = records[offset : offset + page_size]
    token = None
    if offset + page_size < len(records):
        token = _make_token(offset + page_size, from_ts)
    return ProviderResponse(verb="ListRecords", records=page, resumption_token=token)


def render_response(resp: ProviderResponse) -> str:
    lines = ["<provider>"]
    if resp.verb == "Identify":
        lines.append("  <Identify>")
        lines.append(f"    <repositoryName>{resp.repository_name}</repositoryName>")
        lines.append(
            f"    <earliestDatestamp>{resp.earliest_datestamp}</earliestDatestamp>"
        )
        lines.append("  </Identify>")
    else:
        lines.append("  <ListRecords>")
        for record in resp.records:
            body = record_to_xml(record).rstrip("\n")
            lines.extend("    " + line for line in body.split("\n"))
        if resp.resumption_token is not None:
            lines.append(
                f"    <resumptionToken>{resp.resumption_token}</resumptionToken>"
            )
        lines.append("  </ListRecords>")
    lines.append("</provider>")
    return "\n".join(lines) + "\n"


def parse_response(text: str) -> ProviderResponse:
    try:
        root = ET.fromstring(text)
    except ET.ParseError as exc:
        raise ProtocolError(f"malformed provider response: {exc}") from exc
    if root.tag != "provider":
        raise ProtocolError(f"unexpected root element {root.tag!r}")
    identify = root.find("Identify")
    if identify is not None:
        return ProviderResponse(
            verb="Identify",
            repository_name=identify.findtext("repositoryName"),
            earliest_datestamp=identify.findtext("earliestDatestamp"),
        )
    listing = root.find("ListRecords")
    if listing is None:
        raise ProtocolError("provider response carries neither Identify nor ListRecords")
    records = [record_from_element(el) for el in listing.findall("record")]
    token = listing.findtext("resumptionToken")
    return ProviderResponse(verb="ListRecords", records=records, resumption_token=token)


# ---------------------------------------------------------------------------
# Provider clients (in-process, directory, HTTP)
# ---------------------------------------------------------------------------

class InProcessProvider:
    def __init__(self, store: Registry, page_size: int = DEFAULT_PAGE_SIZE):
        self.store = store
        self.page_size = page_size

    def request(self, req: ProviderRequest) -> ProviderResponse:
        return serve_provider(self.store, req, self.page_size)


class DirectoryProvider(InProcessProvider):
    """Serve a registry directory on disk without going through HTTP."""

    def __init__(self, path, page_size: int = DEFAULT_PAGE_SIZE):
        path = Path(path)
        if not path.is_dir():
            raise EndpointUnreachable(f"no registry directory at {path}")
        super().__init__(Registry(root=path), page_size)


class HttpProvider:
    def __init__(self, base_url: str, timeout: float = 10.0):
        self.base_url = base_url.rstrip("/")
        self.timeout = timeout

    def request(self, req: ProviderRequest) -> ProviderResponse:
        params = {"verb": req.verb}
        if req.from_ts is not None:
            params["from"] = req.from_ts
        if req.resumption_token is not None:
            params["resumptionToken"] = req.resumption_token
        url = self.base_url + "/?" + urllib.parse.urlencode(params)
        try:
            with urllib.request.urlopen(url, timeout=self.timeout) as response:
                body = response.read().decode("utf-8")
        except (urllib.error.URLError, OSError, TimeoutError) as exc:
            raise EndpointUnreachable(f"cannot reach {url}: {exc}") from exc
        return parse_response(body)


def provider_for(endpoint) -> object:
    """Resolve an endpoint (Registry, URL, or directory path) to a client."""
    if isinstance(endpoint, Registry):
        return InProcessProvider(endpoint)
    if hasattr(endpoint, "request"):
        return endpoint
    endpoint = str(endpoint)
    if endpoint.startswith(("http://", "https://")):
        return HttpProvider(endpoint)
    if endpoint.startswith("file://"):
        endpoint = urllib.parse.urlparse(endpoint).path
    return DirectoryProvider(endpoint)


# ---------------------------------------------------------------------------
# Harvester
# ---------------------------------------------------------------------------

@dataclass
class HarvestReport:
    fetched: int = 0
    inserted: int = 0
    updated: int = 0
    pages: int = 0
    complete: bool = True


def harvest(store: Registry, endpoint, since: str | None = None) -> HarvestReport:
    """Pull every provider record with datestamp >= since into `store`.

    Resumption tokens are followed to exhaustion.  Idempotent: a repeat
    harvest with the same `since` inserts and updates nothing.  A failure
    after the first page leaves already-upserted records in place and
    raises PartialHarvest carrying the incomplete report.
    """
    client = provider_for(endpoint)
    report = HarvestReport()
    token = None
    while True:
        request = ProviderRequest(
            verb="ListRecords",
            from_ts=None if token else since,
            resumption_token=token,
        )
        try:
            response = client.request(request)
        except (EndpointUnreachable, ProtocolError, BadToken):
            if report.pages == 0:
                raise
            report.complete = False
            raise PartialHarvest("harvest interrupted mid-stream", report) from None
        report.pages += 1
        for record in response.records:
            report.fetched += 1
            status = store.import_record(record)
            if status == "inserted":
                report.inserted += 1
            elif status == "updated":
                report.updated += 1
        token = response.resumption_token
        if token is None:
            return report


# ---------------------------------------------------------------------------
# HTTP server glue
# ---------------------------------------------------------------------------

class _ProviderHandler(BaseHTTPRequestHandler):
    store: Registry = None
    page_size: int = DEFAULT_PAGE_SIZE

    def do_GET(self):  # noqa: N802 (http.server API)
        params = urllib.parse.parse_qs(urllib.parse.urlparse(self.path).query)

        def first(name):
            values = params.get(name)
            return values[0] if values else None

        verb = first("verb")
        try:
            if verb is None:
                raise BadVerb("missing verb")
            response = serve_provider(
                self.store,
                ProviderRequest(
                    verb=verb,
                    from_ts=first("from"),
                    resumption_token=first("resumptionToken"),
                ),
                self.page_size,
            )
        except (BadVerb, BadToken) as exc:
            body = f"<error>{exc}</error>\n".encode("utf-8")
            self.send_response(400)
            self.send_header("Content-Type", "text/xml; charset=utf-8")
            self.send_header("Content-Length", str(len(body)))
            self.end_headers()
            self.wfile.write(body)
            return
        body = render_response(response).encode("utf-8")
        self.send_response(200)
        self.send_header("Content-Type", "text/xml; charset=utf-8")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):  # quiet by default
        pass


def make_http_server(
    store: Registry, host: str = "127.0.0.1", port: int = 0,
    page_size: int = DEFAULT_PAGE_SIZE,
) -> ThreadingHTTPServer:
    """Build (not start) an HTTP provider server; port 0 picks a free port."""
    handler = type(
        "ProviderHandler", (_ProviderHandler,), {"store": store, "page_size": page_size}
    )
    return ThreadingHTTPServer((host, port), handler)
