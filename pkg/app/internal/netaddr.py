import ipaddress
import logging
import re
from collections import defaultdict
from enum import IntEnum, StrEnum
from typing import Iterable, Iterator, NamedTuple, Optional

import networkx as nx
import radix

from app.internal.errors import (
    EmptyTableError,
    FamilyMismatchError,
    FormatError,
    MissingTableError,
    TopologyError,
    UnknownAsnError,
)

logger = logging.getLogger(__name__)


class Family(IntEnum):
    V4 = 4
    V6 = 6

    @property
    def width(self) -> int:
        return 32 if self is Family.V4 else 128


class Address(NamedTuple):
    """Exact-width IP address"""

    family: Family
    value: int

    @classmethod
    def parse(cls, text: str) -> "Address":
        try:
            ip = ipaddress.ip_address(text.strip())
        except ValueError as e:
            raise FormatError(f"invalid address {text!r}") from e
        return cls(Family(ip.version), int(ip))

    @classmethod
    def of(cls, family: Family, value: int) -> "Address":
        family = Family(family)
        if not 0 <= value < (1 << family.width):
            raise FormatError(f"value {value} out of range for IPv{family.value}")
        return cls(family, value)

    def ip(self) -> ipaddress.IPv4Address | ipaddress.IPv6Address:
        if self.family is Family.V4:
            return ipaddress.IPv4Address(self.value)
        return ipaddress.IPv6Address(self.value)

    def __str__(self) -> str:
        return str(self.ip())


def _mask(value: int, length: int, width: int) -> int:
    host_bits = width - length
    return (value >> host_bits) << host_bits


class Prefix(NamedTuple):
    """CIDR prefix; base always has its host bits cleared"""

    base: Address
    length: int

    @classmethod
    def parse(cls, text: str, strict: bool = True) -> "Prefix":
        text = text.strip()
        if "/" not in text:
            addr = Address.parse(text)
            return cls(addr, addr.family.width)
        try:
            net = ipaddress.ip_network(text, strict=strict)
        except ValueError as e:
            raise FormatError(f"invalid prefix {text!r}") from e
        return cls(Address(Family(net.version), int(net.network_address)), net.prefixlen)

    @classmethod
    def of(cls, addr: Address, length: int) -> "Prefix":
        width = addr.family.width
        if not 0 <= length <= width:
            raise FormatError(f"invalid length /{length} for IPv{addr.family.value}")
        return cls(Address(addr.family, _mask(addr.value, length, width)), length)

    @property
    def family(self) -> Family:
        return self.base.family

    @property
    def size(self) -> int:
        return 1 << (self.family.width - self.length)

    @property
    def last(self) -> Address:
        return Address(self.family, self.base.value + self.size - 1)

    def contains(self, addr: Address) -> bool:
        if addr.family is not self.family:
            return False
        return _mask(addr.value, self.length, self.family.width) == self.base.value

    def covers(self, other: "Prefix") -> bool:
        return other.length >= self.length and self.contains(other.base)

    def network(self) -> ipaddress.IPv4Network | ipaddress.IPv6Network:
        return ipaddress.ip_network((self.base.ip(), self.length))

    def __str__(self) -> str:
        return f"{self.base}/{self.length}"


def adjacent_address(a: Address) -> Address:
    """Next address after a, wrapping at the end of the family space"""
    return Address(a.family, (a.value + 1) % (1 << a.family.width))


class BgpTable:
    """Routing table snapshot: (prefix, origin ASN) entries with longest-prefix match"""

    def __init__(self, entries: Iterable[tuple[Prefix, int]], malformed: int = 0):
        self._entries = frozenset(entries)
        self.malformed = malformed
        self._rtree = radix.Radix()
        by_asn: dict[int, set[Prefix]] = defaultdict(set)
        for prefix, asn in sorted(self._entries):
            # MOAS prefixes resolve to the lowest origin
            node = self._rtree.search_exact(str(prefix))
            if node is None:
                node = self._rtree.add(str(prefix))
                node.data["prefix"] = prefix
                node.data["asn"] = asn
            elif asn < node.data["asn"]:
                node.data["asn"] = asn
            by_asn[asn].add(prefix)
        self._by_asn = {asn: frozenset(p) for asn, p in by_asn.items()}

    @property
    def entries(self) -> frozenset[tuple[Prefix, int]]:
        return self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[tuple[Prefix, int]]:
        return iter(sorted(self._entries))

    def prefixes(self) -> list[Prefix]:
        return sorted({prefix for prefix, _ in self._entries})

    def asns(self) -> list[int]:
        return sorted(self._by_asn)

    def prefixes_of(self, asn: int) -> frozenset[Prefix]:
        return self._by_asn.get(asn, frozenset())

    def lookup(self, addr: Address) -> Optional[tuple[Prefix, int]]:
        node = self._rtree.search_best(str(addr))
        if node is None:
            return None
        return node.data["prefix"], node.data["asn"]


_BGP_LINE = re.compile(r"^\s*(\S+)\s+(\d+)\s*$")


def parse_bgp_table(stream: Iterable[str]) -> BgpTable:
    """Read "<prefix><TAB><asn>" lines; blank lines and '#' comments are skipped"""
    entries = []
    malformed = 0
    for line in stream:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        match = _BGP_LINE.match(line)
        if not match:
            malformed += 1
            continue
        try:
            prefix = Prefix.parse(match.group(1))
        except FormatError:
            malformed += 1
            continue
        asn = int(match.group(2))
        if asn <= 0:
            malformed += 1
            continue
        entries.append((prefix, asn))

    if not entries:
        raise EmptyTableError("routing table has no valid entries")
    if malformed:
        logger.info("Skipped %d malformed routing table lines", malformed)
    return BgpTable(entries, malformed=malformed)


def longest_prefix_match(t: BgpTable, a: Address) -> Optional[tuple[Prefix, int]]:
    return t.lookup(a)


def aggregate_prefixes(t: BgpTable | Iterable[Prefix]) -> list[Prefix]:
    """Minimal disjoint cover of the given prefixes, sorted by base address"""
    prefixes = t.prefixes() if isinstance(t, BgpTable) else list(t)
    result = []
    for family in (Family.V4, Family.V6):
        networks = [p.network() for p in prefixes if p.family is family]
        for net in ipaddress.collapse_addresses(networks):
            result.append(Prefix(Address(family, int(net.network_address)), net.prefixlen))
    return sorted(result)


class NetworkLevel(StrEnum):
    ASN = "asn"
    BGP_PREFIX = "bgp_prefix"
    SLASH24 = "slash24"
    SLASH40 = "slash40"


FIXED_LENGTHS = {
    NetworkLevel.SLASH24: (Family.V4, 24),
    NetworkLevel.SLASH40: (Family.V6, 40),
}


class NetworkUnit(NamedTuple):
    """Aggregation unit for verdicts: an ASN or a prefix"""

    level: NetworkLevel
    key: int | Prefix

    @classmethod
    def parse(cls, level: str, key: str) -> "NetworkUnit":
        level = NetworkLevel(level)
        if level is NetworkLevel.ASN:
            return cls(level, int(key))
        prefix = Prefix.parse(key)
        fixed = FIXED_LENGTHS.get(level)
        if fixed and (prefix.family, prefix.length) != fixed:
            raise FamilyMismatchError(f"{key} is not a valid {level} unit")
        return cls(level, prefix)

    def sort_key(self) -> tuple:
        if isinstance(self.key, int):
            return (self.level, 0, self.key)
        return (self.level, 1, self.key)

    def contains(self, addr: Address) -> bool:
        return isinstance(self.key, Prefix) and self.key.contains(addr)

    def __str__(self) -> str:
        return f"{self.level}:{self.key}"


def unit_of(a: Address, level: NetworkLevel, t: Optional[BgpTable] = None) -> Optional[NetworkUnit]:
    level = NetworkLevel(level)
    fixed = FIXED_LENGTHS.get(level)
    if fixed is not None:
        family, length = fixed
        if a.family is not family:
            raise FamilyMismatchError(f"{level} requires IPv{family.value}, got {a}")
        return NetworkUnit(level, Prefix.of(a, length))

    if t is None:
        raise MissingTableError(f"{level} level requires a routing table")
    match = t.lookup(a)
    if match is None:
        return None
    prefix, asn = match
    if level is NetworkLevel.ASN:
        return NetworkUnit(level, asn)
    return NetworkUnit(level, prefix)


def dealias_hitlist(addrs: Iterable[Address], aliased: Iterable[Prefix]) -> list[Address]:
    """Keep one address (the lowest) per aliased prefix; others pass through"""
    rtree = radix.Radix()
    for prefix in aggregate_prefixes(aliased):
        rtree.add(str(prefix)).data["prefix"] = prefix

    representative: dict[Prefix, Address] = {}
    kept: set[Address] = set()
    for addr in addrs:
        if addr.family is not Family.V6:
            raise FamilyMismatchError(f"hitlist entry {addr} is not IPv6")
        # Nested aliased prefixes collapse to the outermost one
        node = rtree.search_worst(str(addr))
        if node is None:
            kept.add(addr)
            continue
        prefix = node.data["prefix"]
        current = representative.get(prefix)
        if current is None or addr.value < current.value:
            representative[prefix] = addr

    kept.update(representative.values())
    return sorted(kept)


def as_size(t: BgpTable, asn: int) -> int:
    """Unique IPv4 addresses announced by asn, overlaps removed"""
    v4 = [p for p in t.prefixes_of(asn) if p.family is Family.V4]
    return sum(p.size for p in aggregate_prefixes(v4))


def as_stability(snapshots: list[BgpTable], asn: int) -> float:
    """Share of the asn's prefixes announced in every snapshot among those announced in any"""
    if len(snapshots) < 2:
        raise ValueError("stability needs at least two snapshots")
    sets = [t.prefixes_of(asn) for t in snapshots]
    union = frozenset().union(*sets)
    if not union:
        raise UnknownAsnError(asn)
    stable = frozenset.intersection(*sets)
    return len(stable) / len(union)


class AsRelationship(StrEnum):
    PROVIDER_TO_CUSTOMER = "provider_to_customer"
    PEER_TO_PEER = "peer_to_peer"


class AsGraph:
    """AS relationship graph; provider_to_customer edges keep their direction"""

    def __init__(self, edges: Iterable[tuple[int, int, AsRelationship]] = ()):
        self._graph = nx.Graph()
        for a, b, rel in edges:
            self.add_edge(a, b, rel)

    def add_edge(self, a: int, b: int, rel: AsRelationship) -> None:
        rel = AsRelationship(rel)
        if a == b:
            raise TopologyError(f"self relationship for AS{a}")
        provider = a if rel is AsRelationship.PROVIDER_TO_CUSTOMER else None
        if self._graph.has_edge(a, b):
            data = self._graph.edges[a, b]
            if data["rel"] is rel and data["provider"] == provider:
                return
            raise TopologyError(f"conflicting relationships for AS{a}-AS{b}")
        self._graph.add_edge(a, b, rel=rel, provider=provider)

    @property
    def edges(self) -> list[tuple[int, int, AsRelationship]]:
        result = []
        for a, b, data in self._graph.edges(data=True):
            if data["provider"] is not None:
                a, b = data["provider"], b if data["provider"] == a else a
            else:
                a, b = min(a, b), max(a, b)
            result.append((a, b, data["rel"]))
        return sorted(result)

    def neighbors(self, asn: int) -> set[int]:
        if asn not in self._graph:
            return set()
        return set(self._graph.neighbors(asn))

    def customers(self, asn: int) -> set[int]:
        if asn not in self._graph:
            return set()
        return {
            other
            for other in self._graph.neighbors(asn)
            if self._graph.edges[asn, other]["provider"] == asn
        }

    def __contains__(self, asn: int) -> bool:
        return asn in self._graph


_REL_LINE = re.compile(r"^(\d+)\|(\d+)\|(-?\d+)(\|.*)?$")
_REL_CODES = {-1: AsRelationship.PROVIDER_TO_CUSTOMER, 0: AsRelationship.PEER_TO_PEER}


def parse_as_relationships(stream: Iterable[str]) -> AsGraph:
    """Read CAIDA serial-1 "asn|asn|rel" lines (-1 provider→customer, 0 peer)"""
    graph = AsGraph()
    malformed = 0
    for line in stream:
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        match = _REL_LINE.match(line)
        if not match or int(match.group(3)) not in _REL_CODES:
            malformed += 1
            continue
        graph.add_edge(int(match.group(1)), int(match.group(2)), _REL_CODES[int(match.group(3))])
    if malformed:
        logger.info("Skipped %d malformed AS relationship lines", malformed)
    return graph


def is_stub(g: AsGraph, asn: int) -> bool:
    return not g.customers(asn)


def peer_count(g: AsGraph, asn: int) -> int:
    return len(g.neighbors(asn))


def read_prefix_list(stream: Iterable[str]) -> list[Prefix]:
    """One address or prefix per line; '#' comments skipped"""
    result = []
    for line in stream:
        line = line.split("#", 1)[0].strip()
        if line:
            result.append(Prefix.parse(line))
    return result


def read_address_list(stream: Iterable[str]) -> list[Address]:
    result = []
    for line in stream:
        line = line.split("#", 1)[0].strip()
        if line:
            result.append(Address.parse(line))
    return result
