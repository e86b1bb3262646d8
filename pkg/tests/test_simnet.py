import io

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.internal import codec, planner, simnet
from app.internal.errors import FormatError, TopologyError
from app.internal.netaddr import NetworkLevel, NetworkUnit
from app.models.observation import Openness, Rcode, ResolverRole
from app.models.probe import Purpose, ScanPlan, TransportZone
from app.models.topology import ResolverBehavior, SimNetwork
from app.models.verdict import Outcome, VerdictStatus
from conftest import addr, net, resolver, topology

RESOLVER = "20.0.0.5"


def pair_plan(*targets: str) -> ScanPlan:
    p = planner.Planner()
    nonces = codec.NonceGenerator(0)
    probes = []
    for target in targets:
        probes.extend(p.pair(addr(target), nonces, Purpose.MAIN_SCAN, TransportZone.V4_ONLY))
    return ScanPlan(probes=tuple(probes))


def single(inbound_sav=False, outbound_sav=False, asn=64512, **kwargs):
    return SimNetwork(
        prefix=net("20.0.0.0/24"),
        asn=asn,
        inbound_sav=inbound_sav,
        outbound_sav=outbound_sav,
        resolvers=(resolver(RESOLVER, **kwargs),),
    )


def test_open_recursive_without_sav():
    auth, responses = simnet.simulate(topology(single()), pair_plan(RESOLVER))
    assert len(auth) == 2
    assert {r.src for r in auth} == {addr(RESOLVER)}
    assert len(responses) == 1
    assert responses[0].rcode is Rcode.NOERROR and responses[0].answered
    assert responses[0].responder == addr(RESOLVER)


def test_inbound_sav_drops_spoofed_probe(zones):
    auth, responses = simnet.simulate(topology(single(inbound_sav=True)), pair_plan(RESOLVER))
    assert len(auth) == 1
    assert codec.decode(auth[0].qname, zones).kind.letter == "n"
    assert [r.rcode for r in responses] == [Rcode.NOERROR]


def test_closed_resolver_answers_internal_source(zones):
    auth, responses = simnet.simulate(topology(single(open=False)), pair_plan(RESOLVER))
    assert len(auth) == 1
    assert codec.decode(auth[0].qname, zones).kind.letter == "s"
    assert len(responses) == 1
    assert responses[0].rcode is Rcode.REFUSED and not responses[0].answered


def test_closed_resolver_with_empty_acl_is_silent_to_spoofing():
    auth, responses = simnet.simulate(topology(single(open=False, acl=[])), pair_plan(RESOLVER))
    assert auth == []
    assert [r.rcode for r in responses] == [Rcode.REFUSED]


def test_clean_forwarder_queries_from_upstream():
    topo = topology(single(behavior=ResolverBehavior.FORWARDER_CLEAN, upstream="9.9.9.9"))
    auth, responses = simnet.simulate(topo, pair_plan(RESOLVER))
    assert {r.src for r in auth} == {addr("9.9.9.9")}
    assert [r.responder for r in responses] == [addr(RESOLVER)]


def test_no_rewrite_forwarder_escapes_without_outbound_sav():
    topo = topology(single(behavior=ResolverBehavior.FORWARDER_NO_REWRITE, upstream="9.9.9.9"))
    auth, responses = simnet.simulate(topo, pair_plan(RESOLVER))
    assert len(auth) == 2
    assert len(responses) == 1
    assert responses[0].probed_dst == addr(RESOLVER)
    assert responses[0].responder == addr("9.9.9.9")


def test_outbound_sav_only_stops_the_no_rewrite_reply(zones):
    topo = topology(
        single(outbound_sav=True, behavior=ResolverBehavior.FORWARDER_NO_REWRITE, upstream="9.9.9.9")
    )
    auth, responses = simnet.simulate(topo, pair_plan(RESOLVER))
    assert [codec.decode(r.qname, zones).kind.letter for r in auth] == ["s", "n"]
    assert {r.src for r in auth} == {addr("9.9.9.9")}
    assert responses == []

    expected = simnet.ground_truth(topo, NetworkLevel.SLASH24).resolvers[addr(RESOLVER)]
    assert expected.outcome is Outcome.SPOOF_RESOLVED
    assert expected.role is ResolverRole.FORWARDER
    assert expected.openness is Openness.CLOSED


def traversal_plan(target: str, nf: bool) -> ScanPlan:
    p = planner.Planner()
    zone = TransportZone.traversal_for(addr(target).family)
    purpose = Purpose.TRAVERSAL_NF if nf else Purpose.TRAVERSAL_FWD
    return ScanPlan(probes=p.pair(addr(target), codec.NonceGenerator(0), purpose, zone, nf=nf))


def test_traversal_queries_come_from_the_sibling(zones):
    topo = topology(single(sibling="2a0e::1"))
    auth, responses = simnet.simulate(topo, traversal_plan(RESOLVER, nf=True))
    assert [r.src for r in auth] == [addr("2a0e::1"), addr("2a0e::1")]
    assert {codec.decode(r.qname, zones).transport_zone for r in auth} == {TransportZone.V4_TO_V6}
    assert [(r.responder, r.rcode) for r in responses] == [(addr(RESOLVER), Rcode.NOERROR)]


def test_single_stack_resolver_cannot_reach_traversal_zone():
    auth, responses = simnet.simulate(topology(single()), traversal_plan(RESOLVER, nf=True))
    assert auth == []
    assert [(r.rcode, r.answered) for r in responses] == [(Rcode.SERVFAIL, False)]


def test_probe_to_empty_address_is_silent():
    auth, responses = simnet.simulate(topology(single()), pair_plan("20.0.0.9"))
    assert auth == [] and responses == []


def test_ground_truth_single_network():
    assert simnet.ground_truth(topology(single()), NetworkLevel.SLASH24).verdicts == {
        NetworkUnit(NetworkLevel.SLASH24, net("20.0.0.0/24")): VerdictStatus.VULNERABLE
    }
    truth = simnet.ground_truth(topology(single(inbound_sav=True)), NetworkLevel.SLASH24)
    assert set(truth.verdicts.values()) == {VerdictStatus.NON_VULNERABLE}
    silent = simnet.ground_truth(topology(single(inbound_sav=True, open=False)), NetworkLevel.SLASH24)
    assert set(silent.verdicts.values()) == {VerdictStatus.NO_DATA}
    assert silent.observed() == {}


def test_ground_truth_resolver_expectations():
    truth = simnet.ground_truth(
        topology(single(behavior=ResolverBehavior.FORWARDER_CLEAN, upstream="9.9.9.9")), NetworkLevel.ASN
    )
    expected = truth.resolvers[addr(RESOLVER)]
    assert expected.outcome is Outcome.SPOOF_RESOLVED
    assert expected.role is ResolverRole.FORWARDER
    assert expected.openness is Openness.OPEN


def test_ground_truth_partial_as():
    filtered = SimNetwork(
        prefix=net("20.0.0.0/24"), asn=64512, inbound_sav=True, resolvers=(resolver("20.0.0.5"),)
    )
    unfiltered = SimNetwork(
        prefix=net("20.0.1.0/24"), asn=64512, resolvers=(resolver("20.0.1.5", open=False),)
    )
    topo = topology(filtered, unfiltered)
    asn = simnet.ground_truth(topo, NetworkLevel.ASN)
    assert asn.verdicts == {NetworkUnit(NetworkLevel.ASN, 64512): VerdictStatus.PARTIAL}
    slash24 = simnet.ground_truth(topo, NetworkLevel.SLASH24)
    assert sorted(slash24.verdicts.values()) == [VerdictStatus.NON_VULNERABLE, VerdictStatus.VULNERABLE]


def test_topology_invariants():
    with pytest.raises(ValueError):
        SimNetwork(prefix=net("20.0.0.0/24"), asn=1, resolvers=(resolver("20.0.1.5"),))
    with pytest.raises(ValueError):
        resolver("20.0.0.5", behavior=ResolverBehavior.FORWARDER_CLEAN)
    with pytest.raises(ValueError):
        resolver("20.0.0.5", sibling="20.0.0.6")
    with pytest.raises(ValueError):
        topology(single(), SimNetwork(prefix=net("20.0.0.0/25"), asn=2))
    with pytest.raises(ValueError):
        topology(single(), loss=1.5)


def test_random_topology_is_reproducible():
    a = simnet.random_topology(7, 30)
    b = simnet.random_topology(7, 30)
    assert a == b
    assert simnet.serialize_topology(a) == simnet.serialize_topology(b)
    assert a != simnet.random_topology(8, 30)


def test_random_topology_without_resolvers():
    topo = simnet.random_topology(3, 10, simnet.TopologyKnobs(max_resolvers=0))
    assert topo.resolvers() == []
    for level in NetworkLevel:
        assert simnet.ground_truth(topo, level).observed() == {}


@pytest.mark.parametrize("seed", range(10))
def test_random_topology_with_inbound_sav_has_no_vulnerable_unit(seed):
    topo = simnet.random_topology(seed, 25, simnet.TopologyKnobs(p_inbound_sav=1.0))
    for level in NetworkLevel:
        statuses = set(simnet.ground_truth(topo, level).verdicts.values())
        assert VerdictStatus.VULNERABLE not in statuses
        assert VerdictStatus.PARTIAL not in statuses


def test_random_topology_rejects_bad_knobs():
    with pytest.raises(TopologyError):
        simnet.random_topology(1, 5, simnet.TopologyKnobs(min_resolvers=5, max_resolvers=2))


@given(st.integers(0, 10_000), st.integers(1, 20))
@settings(max_examples=15, deadline=None)
def test_topology_serialization_round_trip(seed, n):
    knobs = simnet.TopologyKnobs(loss_probability=0.25, p_empty_acl=0.3)
    topo = simnet.random_topology(seed, n, knobs)
    assert simnet.parse_topology(io.StringIO(simnet.serialize_topology(topo))) == topo


def test_parse_topology_rejects_unknown_keys():
    with pytest.raises(FormatError):
        simnet.parse_topology(io.StringIO("seed = 1\n[network]\nprefix = 20.0.0.0/24\ncolour = red\n"))


def _plan_for(topo):
    targets = [r.addr for _, r in topo.resolvers()]
    return planner.Planner().plan_targets(targets, topo.seed)


@pytest.mark.parametrize("seed", range(5))
def test_simulation_is_deterministic_and_decodable(seed, zones):
    topo = simnet.random_topology(seed, 20)
    plan = _plan_for(topo)
    first = simnet.simulate(topo, plan)
    assert first == simnet.simulate(topo, plan)
    for record in first[0]:
        target = codec.decode(record.qname, zones).target
        assert any(n.prefix.contains(target) for n in topo.networks)


@pytest.mark.parametrize("seed", range(5))
def test_loss_only_removes_records(seed):
    topo = simnet.random_topology(seed, 20)
    plan = _plan_for(topo)
    auth, responses = simnet.simulate(topo, plan)
    lossy_auth, lossy_responses = simnet.simulate(topo.model_copy(update={"loss_probability": 0.4}), plan)
    assert set(lossy_auth) <= set(auth)
    assert set(lossy_responses) <= set(responses)
    assert len(lossy_auth) + len(lossy_responses) <= len(auth) + len(responses)
