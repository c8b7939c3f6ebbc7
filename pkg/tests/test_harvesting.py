import random
import threading

import pytest

from nlpgrid.errors import BadToken, BadVerb, EndpointUnreachable, ProtocolError
from nlpgrid.harvesting import (
    HttpProvider,
    InProcessProvider,
    ProviderRequest,
    harvest,
    make_http_server,
    parse_response,
    render_response,
    serve_provider,
)
from nlpgrid.registry import EPOCH

from conftest import fresh_registry, random_record


def seeded_registry(n, seed=1, **kwargs):
    reg = fresh_registry(**kwargs)
    rng = random.Random(seed)
    for _ in range(n):
        reg.add_record(random_record(rng))
    return reg


class TestProvider:
    def test_identify_reports_earliest_datestamp(self):
        reg = seeded_registry(3)
        response = serve_provider(reg, ProviderRequest(verb="Identify"))
        assert response.repository_name == reg.name
        assert response.earliest_datestamp == min(
            r.datestamp for r in reg.all_records()
        )

    def test_identify_on_empty_registry(self):
        reg = fresh_registry()
        response = serve_provider(reg, ProviderRequest(verb="Identify"))
        assert response.earliest_datestamp == EPOCH

    def test_list_records_pages_deterministically(self):
        reg = seeded_registry(25)
        seen = []
        token = None
        pages = 0
        while True:
            response = serve_provider(
                reg, ProviderRequest(verb="ListRecords", resumption_token=token)
            )
            seen.extend(response.records)
            pages += 1
            token = response.resumption_token
            if token is None:
                break
        assert pages == 3
        assert seen == reg.all_records()

    def test_from_after_max_is_empty_without_token(self):
        reg = seeded_registry(3)
        top = max(r.datestamp for r in reg.all_records())
        bumped = top[:17] + "%02dZ" % ((int(top[17:19]) + 1) % 60)
        late = max(top, bumped)
        response = serve_provider(
            reg, ProviderRequest(verb="ListRecords", from_ts=late)
        )
        assert response.records == []
        assert response.resumption_token is None

    def test_bad_verb(self):
        with pytest.raises(BadVerb):
            serve_provider(fresh_registry(), ProviderRequest(verb="GetRecord"))

    def test_bad_token(self):
        reg = seeded_registry(3)
        with pytest.raises(BadToken):
            serve_provider(
                reg, ProviderRequest(verb="ListRecords", resumption_token="garbage")
            )
        with pytest.raises(BadToken):
            serve_provider(
                reg, ProviderRequest(verb="ListRecords", resumption_token="off:999:-")
            )

    def test_response_xml_round_trip(self):
        reg = seeded_registry(12)
        response = serve_provider(reg, ProviderRequest(verb="ListRecords"))
        parsed = parse_response(render_response(response))
        assert parsed.records == response.records
        assert parsed.resumption_token == response.resumption_token

    def test_malformed_response_is_protocol_error(self):
        with pytest.raises(ProtocolError):
            parse_response("<provider><ListRecords></provider>")


class TestHarvest:
    def test_three_record_fixture_idempotent(self):
        provider = seeded_registry(3)
        local = fresh_registry(name="local")
        report = harvest(local, provider, since=EPOCH)
        assert report.fetched == 3 and report.inserted == 3
        again = harvest(local, provider, since=EPOCH)
        assert again.inserted == 0 and again.updated == 0
        assert local.snapshot() == provider.snapshot()

    def test_pagination_counts_match_direct_enumeration(self):
        provider = seeded_registry(25)
        local = fresh_registry(name="local")
        report = harvest(local, provider, since=EPOCH)
        assert report.pages == 3
        assert report.fetched == len(provider.all_records()) == 25
        assert local.snapshot() == provider.snapshot()

    def test_since_filters(self):
        provider = seeded_registry(10)
        cutoff = provider.all_records()[5].datestamp
        local = fresh_registry(name="local")
        report = harvest(local, provider, since=cutoff)
        expected = [r for r in provider.all_records() if r.datestamp >= cutoff]
        assert report.fetched == len(expected)

    def test_unreachable_endpoint_leaves_store_unchanged(self, tmp_path):
        local = fresh_registry(name="local")
        with pytest.raises(EndpointUnreachable):
            harvest(local, tmp_path / "does-not-exist")
        assert len(local) == 0

    def test_directory_endpoint(self, tmp_path):
        provider = seeded_registry(4, root=tmp_path / "prov")
        local = fresh_registry(name="local")
        report = harvest(local, tmp_path / "prov")
        assert report.inserted == 4
        assert local.snapshot() == provider.snapshot()


class TestClosure:
    def test_in_process_closure(self):
        original = seeded_registry(23)
        clone = fresh_registry(name="clone")
        harvest(clone, original)
        assert clone.snapshot() == original.snapshot()

    def test_http_closure(self):
        original = seeded_registry(15)
        server = make_http_server(original, page_size=4)
        host, port = server.server_address[:2]
        thread = threading.Thread(target=server.serve_forever, daemon=True)
        thread.start()
        try:
            url = f"http://{host}:{port}"
            identify = HttpProvider(url).request(ProviderRequest(verb="Identify"))
            assert identify.repository_name == original.name
            clone = fresh_registry(name="clone")
            report = harvest(clone, url)
            assert report.pages == 4
            assert clone.snapshot() == original.snapshot()
        finally:
            server.shutdown()
            server.server_close()

    def test_partial_harvest_keeps_upserted_records(self):
        provider = seeded_registry(25)
        local = fresh_registry(name="local")

        class Flaky:
            def __init__(self):
                self.calls = 0

            def request(self, req):
                self.calls += 1
                if self.calls > 1:
                    raise EndpointUnreachable("link dropped")
                return InProcessProvider(provider).request(req)

        from nlpgrid.errors import PartialHarvest

        with pytest.raises(PartialHarvest) as info:
            harvest(local, Flaky())
        assert info.value.report.pages == 1
        assert info.value.report.complete is False
        assert len(local) == 10  # first page stayed
