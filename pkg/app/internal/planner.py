import heapq
import logging
import random
from collections import defaultdict
from typing import Iterable, Iterator, Optional

import radix

from app.config import settings
from app.internal import codec
from app.internal.errors import EmptyTargetSetError, FormatError
from app.internal.netaddr import (
    Address,
    BgpTable,
    Family,
    NetworkLevel,
    NetworkUnit,
    Prefix,
    adjacent_address,
    aggregate_prefixes,
    dealias_hitlist,
)
from app.models.observation import ResolverRole
from app.models.probe import (
    ProbeDomain,
    ProbeKind,
    ProbeSpec,
    Purpose,
    ScanPlan,
    TransportZone,
    ZoneConfig,
)

logger = logging.getLogger(__name__)

MAIN_SCAN_ID = 1
RESCAN_SCAN_ID = 2


class Planner:
    """Builds ordered probe streams: spoofed then unspoofed query for every target"""

    def __init__(
        self,
        zones: Optional[ZoneConfig] = None,
        scanner_v4: Optional[Address] = None,
        scanner_v6: Optional[Address] = None,
        skip_boundary_hosts: Optional[bool] = None,
        v6_spread_length: Optional[int] = None,
    ):
        self.zones = zones or codec.default_zones()
        self.scanner = {
            Family.V4: scanner_v4 or Address.parse(settings.scanner_v4),
            Family.V6: scanner_v6 or Address.parse(settings.scanner_v6),
        }
        self.skip_boundary_hosts = (
            settings.skip_boundary_hosts if skip_boundary_hosts is None else skip_boundary_hosts
        )
        self.spread_length = {
            Family.V4: 24,
            Family.V6: v6_spread_length or settings.v6_spread_length,
        }

    def hosts(self, prefix: Prefix) -> Iterator[Address]:
        """IPv4 host enumeration; .0 and .255 of each /24 skipped for /24 and shorter prefixes"""
        if prefix.family is Family.V6 or prefix.length > 24 or not self.skip_boundary_hosts:
            for value in range(prefix.base.value, prefix.base.value + prefix.size):
                yield Address(prefix.family, value)
            return
        for block in range(prefix.base.value, prefix.base.value + prefix.size, 256):
            for value in range(block + 1, block + 255):
                yield Address(Family.V4, value)

    def spread(self, targets: Iterable[Address], rng: random.Random) -> list[Address]:
        """Seeded order in which consecutive targets avoid sharing a network when possible"""
        groups: dict[Prefix, list[Address]] = defaultdict(list)
        for addr in targets:
            groups[Prefix.of(addr, self.spread_length[addr.family])].append(addr)

        keys = sorted(groups)
        rng.shuffle(keys)
        heap = []
        for rank, key in enumerate(keys):
            members = sorted(groups[key])
            rng.shuffle(members)
            groups[key] = members
            heap.append((-len(members), rank, key))
        heapq.heapify(heap)

        order: list[Address] = []
        held = None
        while heap:
            count, rank, key = heapq.heappop(heap)
            order.append(groups[key].pop())
            if held is not None:
                heapq.heappush(heap, held)
                held = None
            if count + 1 < 0:
                held = (count + 1, rank, key)
        if held is not None:
            # Only one network left: adjacency is unavoidable
            order.extend(groups[held[2]])
        return order

    def pair(
        self,
        dst: Address,
        nonces: codec.NonceGenerator,
        purpose: Purpose,
        zone: TransportZone,
        scan_id: int = MAIN_SCAN_ID,
        nf: bool = False,
    ) -> tuple[ProbeSpec, ProbeSpec]:
        probes = []
        for kind in (ProbeKind.SPOOFED, ProbeKind.UNSPOOFED):
            domain = ProbeDomain(
                nonce=codec.fresh_nonce(nonces),
                target=dst,
                kind=kind,
                scan_id=scan_id,
                nf=nf,
                transport_zone=zone,
            )
            src = adjacent_address(dst) if kind is ProbeKind.SPOOFED else self.scanner[dst.family]
            probes.append(
                ProbeSpec(dst=dst, src=src, qname=codec.encode(domain, self.zones), kind=kind, purpose=purpose)
            )
        return probes[0], probes[1]

    def _build(
        self,
        targets: list[Address],
        seed: int,
        purpose: Purpose,
        scan_id: int = MAIN_SCAN_ID,
        excluded: int = 0,
        nf_targets: frozenset[Address] = frozenset(),
        traversal: bool = False,
    ) -> ScanPlan:
        rng = random.Random(seed)
        nonces = codec.NonceGenerator(seed)
        probes: list[ProbeSpec] = []
        for dst in self.spread(targets, rng):
            if traversal:
                nf = dst in nf_targets
                pair_purpose = Purpose.TRAVERSAL_NF if nf else Purpose.TRAVERSAL_FWD
                zone = TransportZone.traversal_for(dst.family)
            else:
                nf = False
                pair_purpose = purpose
                zone = TransportZone.main_for(dst.family)
            probes.extend(self.pair(dst, nonces, pair_purpose, zone, scan_id=scan_id, nf=nf))
        return ScanPlan(probes=tuple(probes), seed=seed, excluded_count=excluded)

    def plan_ipv4(self, t: BgpTable, exclusions: Iterable[Prefix], seed: int) -> ScanPlan:
        excluder = _Excluder(exclusions)
        targets = []
        for prefix in aggregate_prefixes(t):
            if prefix.family is not Family.V4:
                continue
            targets.extend(a for a in self.hosts(prefix) if not excluder.drop(a))
        if not targets:
            raise EmptyTargetSetError("no IPv4 target left after exclusions")
        logger.info("IPv4 plan: %d targets, %d excluded", len(targets), excluder.count)
        return self._build(targets, seed, Purpose.MAIN_SCAN, excluded=excluder.count)

    def plan_targets(self, targets: Iterable[Address], seed: int, exclusions: Iterable[Prefix] = ()) -> ScanPlan:
        """Main-scan plan over an explicit target list"""
        excluder = _Excluder(exclusions)
        kept = sorted(a for a in set(targets) if not excluder.drop(a))
        return self._build(kept, seed, Purpose.MAIN_SCAN, excluded=excluder.count)

    def plan_ipv6(
        self,
        hitlist: Iterable[Address],
        aliased: Iterable[Prefix],
        exclusions: Iterable[Prefix],
        seed: int,
    ) -> ScanPlan:
        excluder = _Excluder(exclusions)
        targets = [a for a in dealias_hitlist(hitlist, aliased) if not excluder.drop(a)]
        if not targets:
            raise EmptyTargetSetError("no IPv6 target left after dealiasing and exclusions")
        logger.info("IPv6 plan: %d targets, %d excluded", len(targets), excluder.count)
        return self._build(targets, seed, Purpose.MAIN_SCAN, excluded=excluder.count)

    def plan_traversal(self, discovered: Iterable[tuple[Address, ResolverRole]], seed: int) -> ScanPlan:
        roles: dict[Address, ResolverRole] = {}
        for addr, role in discovered:
            # Non-forwarder wins when an address was seen in both roles
            if roles.get(addr) is not ResolverRole.NON_FORWARDER:
                roles[addr] = ResolverRole(role)
        nf_targets = frozenset(a for a, r in roles.items() if r is ResolverRole.NON_FORWARDER)
        return self._build(sorted(roles), seed, Purpose.TRAVERSAL_NF, nf_targets=nf_targets, traversal=True)

    def plan_rescan(
        self,
        units: Iterable[NetworkUnit],
        prior_targets: Iterable[Address],
        seed: int,
        exclusions: Iterable[Prefix] = (),
    ) -> ScanPlan:
        excluder = _Excluder(exclusions)
        prior = sorted(set(prior_targets))
        targets: set[Address] = set()
        for unit in units:
            if unit.level is NetworkLevel.SLASH24:
                targets.update(self.hosts(unit.key))
            elif unit.level is NetworkLevel.SLASH40:
                targets.update(a for a in prior if unit.key.contains(a))
            else:
                raise FormatError(f"rescan units must be /24 or /40, got {unit.level}")
        kept = sorted(a for a in targets if not excluder.drop(a))
        return self._build(kept, seed, Purpose.RESCAN, scan_id=RESCAN_SCAN_ID, excluded=excluder.count)


class _Excluder:
    def __init__(self, exclusions: Iterable[Prefix]):
        self._rtree = radix.Radix()
        for prefix in exclusions:
            self._rtree.add(str(prefix))
        self.count = 0

    def drop(self, addr: Address) -> bool:
        if self._rtree.search_best(str(addr)) is not None:
            self.count += 1
            return True
        return False


def plan_ipv4(t: BgpTable, exclusions: Iterable[Prefix], seed: int, **options) -> ScanPlan:
    return Planner(**options).plan_ipv4(t, exclusions, seed)


def plan_ipv6(
    hitlist: Iterable[Address], aliased: Iterable[Prefix], exclusions: Iterable[Prefix], seed: int, **options
) -> ScanPlan:
    return Planner(**options).plan_ipv6(hitlist, aliased, exclusions, seed)


def plan_traversal(discovered: Iterable[tuple[Address, ResolverRole]], seed: int, **options) -> ScanPlan:
    return Planner(**options).plan_traversal(discovered, seed)


def plan_rescan(
    units: Iterable[NetworkUnit], prior_targets: Iterable[Address], seed: int, **options
) -> ScanPlan:
    exclusions = options.pop("exclusions", ())
    return Planner(**options).plan_rescan(units, prior_targets, seed, exclusions)


def serialize_plan(plan: ScanPlan) -> str:
    lines = [f"# seed={plan.seed} excluded={plan.excluded_count}"]
    for p in plan.probes:
        lines.append(f"{p.dst}\t{p.src}\t{p.qname}\t{p.kind}\t{p.purpose}")
    return "\n".join(lines) + "\n"


def parse_plan(stream: Iterable[str]) -> ScanPlan:
    seed = 0
    excluded = 0
    probes = []
    for number, line in enumerate(stream, start=1):
        line = line.rstrip("\n")
        if line.startswith("#"):
            for field in line[1:].split():
                key, _, value = field.partition("=")
                if key == "seed":
                    seed = int(value)
                elif key == "excluded":
                    excluded = int(value)
            continue
        if not line.strip():
            continue
        parts = line.split("\t")
        if len(parts) != 5:
            raise FormatError(f"plan line {number}: expected 5 fields, got {len(parts)}")
        dst, src, qname, kind, purpose = parts
        probes.append(
            ProbeSpec(
                dst=Address.parse(dst),
                src=Address.parse(src),
                qname=qname,
                kind=ProbeKind(kind),
                purpose=Purpose(purpose),
            )
        )
    return ScanPlan(probes=tuple(probes), seed=seed, excluded_count=excluded)
