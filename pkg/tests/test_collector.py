import pytest

from app.internal import codec, collector
from app.models.observation import AuthLogRecord, Openness, Rcode, ResolverRole, ScannerResponse
from app.models.probe import ProbeDomain, ProbeKind, TransportZone
from app.models.verdict import ForwarderCategory
from conftest import addr


def name(target: str, kind=ProbeKind.SPOOFED, nonce="abcdef", zones=None, **kwargs) -> str:
    d = ProbeDomain(nonce=nonce, target=addr(target), kind=kind, **kwargs)
    return codec.encode(d, zones or codec.default_zones())


def record(src: str, qname: str, ts: int = 0, qtype: str = "A") -> AuthLogRecord:
    return AuthLogRecord(ts=ts, src=addr(src), qname=qname, qtype=qtype)


def response(dst: str, responder: str = None, rcode=Rcode.NOERROR, answered=True) -> ScannerResponse:
    return ScannerResponse(
        ts=0, probed_dst=addr(dst), responder=addr(responder or dst), rcode=rcode, answered=answered
    )


def test_dedup_keeps_first_per_source_and_name():
    q = name("1.2.3.5")
    records = [record("1.2.3.5", q, 1), record("1.2.3.5", q.upper(), 2), record("9.9.9.9", q, 3)]
    stats = collector.IngestStats()
    kept = collector.dedup(records, stats)
    assert [r.ts for r in kept] == [1, 3]
    assert stats.records == 3 and stats.duplicates == 1
    assert collector.dedup(kept) == kept


def test_dedup_ratio():
    records = []
    for i in range(79):
        records.append(record("1.2.3.5", name("1.2.3.5", nonce=f"n{i:05d}"), i))
    records.extend(records[:21])
    assert len(records) == 100
    kept = collector.dedup(records)
    assert collector.dedup_ratio(len(records), len(kept)) == pytest.approx(79.0, abs=0.1)
    assert collector.dedup_ratio(0, 0) == 0.0


def test_classify_roles():
    records = [
        record("1.2.3.5", name("1.2.3.5")),
        record("9.9.9.9", name("1.2.3.5", kind=ProbeKind.UNSPOOFED, nonce="bbbbbb")),
    ]
    obs = collector.classify(records, codec.default_zones())
    assert [o.role for o in obs] == [ResolverRole.NON_FORWARDER, ResolverRole.FORWARDER]
    assert obs[1].kind is ProbeKind.UNSPOOFED
    assert all(o.target == addr("1.2.3.5") for o in obs)


def test_classify_counts_drops():
    stats = collector.IngestStats()
    records = [
        record("1.2.3.5", "www.example.com"),
        record("1.2.3.5", "zzzzzz.bogus.s1.v4.drakkardnsv4.com"),
        record("1.2.3.5", name("1.2.3.5"), qtype="AAAA"),
        record("1.2.3.5", name("1.2.3.5", nf=True, transport_zone=TransportZone.V4_TO_V6)),
    ]
    obs = collector.classify(records, codec.default_zones(), stats)
    assert len(obs) == 1
    assert obs[0].nf_flag and obs[0].transport_zone is TransportZone.V4_TO_V6
    assert (stats.foreign, stats.malformed, stats.non_a, stats.classified) == (1, 1, 1, 1)
    assert stats.dropped == 3


def test_openness():
    obs = collector.classify(
        [record("1.2.3.5", name("1.2.3.5")), record("1.2.3.6", name("1.2.3.6"))], codec.default_zones()
    )
    result = collector.openness(
        obs,
        [
            response("1.2.3.5"),
            response("1.2.3.7", rcode=Rcode.REFUSED, answered=False),
            response("1.2.3.8", rcode=Rcode.NOERROR, answered=False),
        ],
    )
    assert result == {
        addr("1.2.3.5"): Openness.OPEN,
        addr("1.2.3.6"): Openness.CLOSED,
        addr("1.2.3.7"): Openness.CLOSED,
        addr("1.2.3.8"): Openness.CLOSED,
    }


def test_openness_counts_responses():
    obs = collector.classify([record("1.2.3.5", name("1.2.3.5"))], codec.default_zones())
    stats = collector.IngestStats()
    collector.openness(
        obs,
        [response("1.2.3.5"), response("1.2.3.5"), response("1.2.3.6", rcode=Rcode.REFUSED, answered=False)],
        stats,
    )
    assert (stats.responses, stats.answered, stats.open) == (3, 2, 1)


def test_roles_prefer_non_forwarder():
    obs = collector.classify(
        [record("9.9.9.9", name("1.2.3.5")), record("1.2.3.5", name("1.2.3.5", nonce="cccccc"))],
        codec.default_zones(),
    )
    assert collector.roles(obs) == {addr("1.2.3.5"): ResolverRole.NON_FORWARDER}


def test_forwarder_mismatch_categories(table):
    responses = [
        response("1.2.3.5", "5.6.7.8"),
        response("1.2.3.5", "1.2.3.5"),
        response("1.2.3.5", "1.2.3.9"),
        response("1.2.3.5", "10.0.0.1"),
        response("1.2.3.5", "8.8.8.8"),
        response("1.2.3.5", "5.6.7.8"),
    ]
    mismatches = collector.forwarder_mismatches(responses, table)
    assert [(str(m.responder), m.category) for m in mismatches] == [
        ("5.6.7.8", ForwarderCategory.CROSS_AS),
        ("1.2.3.9", ForwarderCategory.SAME_AS),
        ("10.0.0.1", ForwarderCategory.PRIVATE),
        ("8.8.8.8", ForwarderCategory.UNROUTED),
    ]
    assert mismatches[0].probed_asn == 200 and mismatches[0].responder_asn == 300
    assert collector.misconfigured_forwarders(responses, table) == [
        (addr("1.2.3.5"), addr("5.6.7.8")),
        (addr("1.2.3.5"), addr("10.0.0.1")),
        (addr("1.2.3.5"), addr("8.8.8.8")),
    ]
