import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from app.internal.errors import (
    EmptyTableError,
    FamilyMismatchError,
    MissingTableError,
    SavScanError,
    TopologyError,
    UnknownAsnError,
)
from app.internal.netaddr import (
    Address,
    AsGraph,
    AsRelationship,
    BgpTable,
    Family,
    NetworkLevel,
    NetworkUnit,
    Prefix,
    adjacent_address,
    aggregate_prefixes,
    as_size,
    as_stability,
    dealias_hitlist,
    is_stub,
    longest_prefix_match,
    parse_as_relationships,
    parse_bgp_table,
    peer_count,
    unit_of,
)
from conftest import addr, net


def test_parse_bgp_table_skips_malformed():
    text = "1.2.0.0/16\t100\n# comment\n\nnot-a-prefix 5\n1.2.3.0/24 200\n10.0.0.0/8\n2001:db8::/32\t64500\n"
    t = parse_bgp_table(io.StringIO(text))
    assert len(t) == 3
    assert t.malformed == 2
    assert t.asns() == [100, 200, 64500]


def test_parse_bgp_table_empty():
    with pytest.raises(EmptyTableError):
        parse_bgp_table(io.StringIO("# nothing\ngarbage\n"))


def test_longest_prefix_match(table):
    assert longest_prefix_match(table, addr("1.2.3.4")) == (net("1.2.3.0/24"), 200)
    assert longest_prefix_match(table, addr("1.2.4.4")) == (net("1.2.0.0/16"), 100)
    assert longest_prefix_match(table, addr("8.8.8.8")) is None
    assert longest_prefix_match(table, addr("2001:db8::1")) == (net("2001:db8::/32"), 100)


def test_moas_prefix_resolves_to_lowest_asn():
    t = BgpTable([(net("4.0.0.0/8"), 3356), (net("4.0.0.0/8"), 1)])
    assert longest_prefix_match(t, addr("4.1.1.1")) == (net("4.0.0.0/8"), 1)
    assert t.prefixes_of(3356) == {net("4.0.0.0/8")}


def _prefixes(family: Family, max_length: int):
    width = family.width
    return st.builds(
        lambda value, length: Prefix.of(Address(family, value), length),
        st.integers(0, (1 << width) - 1),
        st.integers(0, max_length),
    )


@given(
    st.lists(_prefixes(Family.V4, 32), min_size=1, max_size=40),
    st.lists(st.integers(0, (1 << 32) - 1), min_size=1, max_size=40),
)
def test_lpm_agrees_with_linear_scan_v4(prefixes, values):
    t = BgpTable([(p, i + 1) for i, p in enumerate(prefixes)])
    for value in values:
        a = Address(Family.V4, value)
        covering = [(p, asn) for p, asn in t if p.contains(a)]
        match = t.lookup(a)
        if not covering:
            assert match is None
            continue
        longest = max(p.length for p, _ in covering)
        assert match == min((e for e in covering if e[0].length == longest), key=lambda e: e[1])


@given(
    st.lists(_prefixes(Family.V6, 64), min_size=1, max_size=30),
    st.lists(st.integers(0, (1 << 128) - 1), min_size=1, max_size=30),
)
def test_lpm_agrees_with_linear_scan_v6(prefixes, values):
    t = BgpTable([(p, i + 1) for i, p in enumerate(prefixes)])
    # Also look up addresses inside the announced prefixes
    probes = [Address(Family.V6, v) for v in values] + [p.base for p in prefixes]
    for a in probes:
        covering = [p for p, _ in t if p.contains(a)]
        match = t.lookup(a)
        assert (match is None) == (not covering)
        if covering:
            assert match[0].length == max(p.length for p in covering)


@pytest.mark.slow
def test_lpm_agrees_with_linear_scan_at_scale():
    rng = np.random.default_rng(7)
    prefixes = [
        Prefix.of(Address(Family.V4, int(v)), int(length))
        for v, length in zip(rng.integers(0, 1 << 32, 1000, dtype=np.uint64), rng.integers(8, 33, 1000))
    ]
    t = BgpTable([(p, i + 1) for i, p in enumerate(prefixes)])
    # Most addresses fall inside some announced prefix
    picks = rng.integers(0, len(prefixes), 8000)
    inside = [prefixes[i].base.value + int(o) % prefixes[i].size for i, o in zip(picks, rng.integers(0, 1 << 32, 8000))]
    values = np.array(inside + [int(v) for v in rng.integers(0, 1 << 32, 2000, dtype=np.uint64)], dtype=np.uint64)

    ranked = sorted(t, key=lambda e: (-e[0].length, e[1]))
    shifts = np.array([32 - p.length for p, _ in ranked], dtype=np.uint64)[:, None]
    bases = np.array([p.base.value for p, _ in ranked], dtype=np.uint64)[:, None]
    covered = (values[None, :] >> shifts) == (bases >> shifts)
    first = covered.argmax(axis=0)
    hit = covered.any(axis=0)

    for j, value in enumerate(values):
        expected = ranked[first[j]] if hit[j] else None
        assert t.lookup(Address(Family.V4, int(value))) == expected


def test_aggregate_prefixes_collapses():
    prefixes = [net("10.0.0.0/25"), net("10.0.0.128/25"), net("10.0.0.0/24"), net("10.1.0.0/16"), net("10.1.2.0/24")]
    assert aggregate_prefixes(prefixes) == [net("10.0.0.0/24"), net("10.1.0.0/16")]


@given(st.lists(_prefixes(Family.V4, 32).filter(lambda p: p.length >= 16), min_size=1, max_size=20))
def test_aggregate_prefixes_is_exact_disjoint_cover(prefixes):
    result = aggregate_prefixes(prefixes)
    for a, b in zip(result, result[1:]):
        assert a.last.value < b.base.value
    for p in prefixes:
        assert any(r.covers(p) for r in result)
    for r in result:
        assert any(r.covers(p) for p in prefixes)


def test_unit_of_levels(table):
    a = addr("1.2.3.4")
    assert unit_of(a, NetworkLevel.ASN, table) == NetworkUnit(NetworkLevel.ASN, 200)
    assert unit_of(a, NetworkLevel.BGP_PREFIX, table) == NetworkUnit(NetworkLevel.BGP_PREFIX, net("1.2.3.0/24"))
    assert unit_of(a, NetworkLevel.SLASH24) == NetworkUnit(NetworkLevel.SLASH24, net("1.2.3.0/24"))
    assert unit_of(addr("2001:db8:1234:5600::1"), NetworkLevel.SLASH40) == NetworkUnit(
        NetworkLevel.SLASH40, net("2001:db8:1200::/40")
    )
    assert unit_of(addr("8.8.8.8"), NetworkLevel.ASN, table) is None


def test_unit_of_family_mismatch():
    with pytest.raises(FamilyMismatchError):
        unit_of(addr("1.2.3.4"), NetworkLevel.SLASH40)
    with pytest.raises(FamilyMismatchError):
        unit_of(addr("2001:db8::1"), NetworkLevel.SLASH24)


def test_unit_of_routing_level_needs_table():
    for level in (NetworkLevel.ASN, NetworkLevel.BGP_PREFIX):
        with pytest.raises(MissingTableError) as excinfo:
            unit_of(addr("1.2.3.4"), level)
        assert isinstance(excinfo.value, SavScanError)


def test_network_unit_parse():
    assert NetworkUnit.parse("asn", "64500") == NetworkUnit(NetworkLevel.ASN, 64500)
    assert str(NetworkUnit.parse("slash24", "1.2.3.0/24")) == "slash24:1.2.3.0/24"
    with pytest.raises(FamilyMismatchError):
        NetworkUnit.parse("slash24", "1.2.0.0/16")


def test_adjacent_address_wraps():
    assert adjacent_address(addr("1.2.3.4")) == addr("1.2.3.5")
    assert adjacent_address(addr("255.255.255.255")) == addr("0.0.0.0")
    assert adjacent_address(addr("ffff:ffff:ffff:ffff:ffff:ffff:ffff:ffff")) == addr("::")


def test_dealias_hitlist():
    hitlist = [addr("2001:db8::5"), addr("2001:db8::3"), addr("2001:db8:1::1"), addr("2001:db9::1")]
    aliased = [net("2001:db8::/48"), net("2001:db8::/64")]
    assert dealias_hitlist(hitlist, aliased) == [addr("2001:db8::3"), addr("2001:db8:1::1"), addr("2001:db9::1")]
    with pytest.raises(FamilyMismatchError):
        dealias_hitlist([addr("1.2.3.4")], aliased)


def test_as_size_removes_overlap():
    t = BgpTable([(net("10.0.0.0/16"), 1), (net("10.0.1.0/24"), 1), (net("10.1.0.0/24"), 1), (net("2001:db8::/32"), 1)])
    assert as_size(t, 1) == 65536 + 256


def test_as_stability():
    a = BgpTable([(net("10.0.0.0/24"), 1), (net("10.0.1.0/24"), 1)])
    b = BgpTable([(net("10.0.0.0/24"), 1), (net("10.0.2.0/24"), 1)])
    assert as_stability([a, b], 1) == pytest.approx(1 / 3)
    with pytest.raises(UnknownAsnError):
        as_stability([a, b], 2)
    with pytest.raises(ValueError):
        as_stability([a], 1)


def test_parse_as_relationships():
    text = "# source: serial-1\n1|2|-1\n1|3|-1\n2|3|0\n4|5|7\nbogus\n"
    g = parse_as_relationships(io.StringIO(text))
    assert g.customers(1) == {2, 3}
    assert is_stub(g, 2) and is_stub(g, 3)
    assert not is_stub(g, 1)
    assert peer_count(g, 3) == 2
    assert (2, 3, AsRelationship.PEER_TO_PEER) in g.edges


def test_as_graph_rejects_conflicts():
    g = AsGraph([(1, 2, AsRelationship.PROVIDER_TO_CUSTOMER)])
    g.add_edge(1, 2, AsRelationship.PROVIDER_TO_CUSTOMER)
    with pytest.raises(TopologyError):
        g.add_edge(2, 1, AsRelationship.PROVIDER_TO_CUSTOMER)
    with pytest.raises(TopologyError):
        g.add_edge(3, 3, AsRelationship.PEER_TO_PEER)
