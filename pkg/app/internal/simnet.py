"""Deterministic simulated Internet for exercising the measurement pipeline.

Every network applies inbound/outbound source address validation at its edge.
Resolvers answer, forward or refuse queries; what reaches our authoritative
servers and the scanner is emitted as log records. ground_truth() derives the
expected verdicts from the topology alone.
"""

import logging
import random
import re
from collections import defaultdict
from typing import Iterable, Optional

from pydantic import BaseModel, Field

from app.config import settings
from app.internal.errors import FormatError, TopologyError
from app.internal.netaddr import (
    Address,
    Family,
    NetworkLevel,
    NetworkUnit,
    Prefix,
    adjacent_address,
    unit_of,
)
from app.models.observation import (
    AuthLogRecord,
    Openness,
    Rcode,
    ResolverRole,
    ScannerResponse,
)
from app.models.probe import ProbeKind, Purpose, ScanPlan
from app.models.topology import (
    GroundTruth,
    ResolverBehavior,
    ResolverTruth,
    SimNetwork,
    SimResolver,
    SimTopology,
)
from app.models.verdict import Outcome, VerdictStatus

logger = logging.getLogger(__name__)

BASE_TS = 1_583_020_800_000_000  # 2020-03-01T00:00:00Z in microseconds
PROBE_SPACING_US = 1_000

UPSTREAM_V4 = Prefix.parse("9.9.9.0/24")
UPSTREAM_V6 = Prefix.parse("2620:fe::/48")
UPSTREAM_ASN = 19281
SIBLING_V4 = Prefix.parse("30.0.0.0/16")
SIBLING_V6 = Prefix.parse("2a0e::/32")

TRAVERSAL_PURPOSES = frozenset({Purpose.TRAVERSAL_NF, Purpose.TRAVERSAL_FWD})


class Simulator:
    """Replays a scan plan against a topology"""

    def __init__(self, topo: SimTopology, scanner: Optional[dict[Family, Address]] = None):
        self.topo = topo
        self.scanner = scanner or _default_scanner()
        self._resolvers: dict[Address, tuple[SimNetwork, SimResolver]] = {
            r.addr: (n, r) for n, r in topo.resolvers()
        }

    @staticmethod
    def reply_escapes(network: SimNetwork, resolver: SimResolver, src: Address) -> bool:
        """Whether the answer to a query from src makes it out to src.

        A forwarder that keeps the client source has its upstream answer src
        directly, and outbound filtering stops that reply when src is foreign.
        """
        if resolver.behavior is ResolverBehavior.FORWARDER_NO_REWRITE:
            return network.leaves(src)
        return True

    def run(self, plan: ScanPlan) -> tuple[list[AuthLogRecord], list[ScannerResponse]]:
        loss = self.topo.loss_probability
        rng = random.Random(self.topo.seed)
        auth: list[AuthLogRecord] = []
        responses: list[ScannerResponse] = []

        for index, probe in enumerate(plan.probes):
            # Three independent legs: probe, upstream query, reply to scanner
            if loss > 0:
                lost = [rng.random() < loss for _ in range(3)]
            else:
                lost = [False, False, False]
            ts = BASE_TS + index * PROBE_SPACING_US

            hit = self._resolvers.get(probe.dst)
            if hit is None or lost[0]:
                continue
            network, resolver = hit
            spoofed = probe.kind is ProbeKind.SPOOFED
            if spoofed and network.inbound_sav:
                continue

            if not resolver.accepts(probe.src):
                # Refusals to spoofed probes go to the spoofed source, not to us
                if not spoofed and not lost[2]:
                    responses.append(self._reply(ts, probe.dst, resolver.addr, Rcode.REFUSED))
                continue

            src = resolver.egress(probe.purpose in TRAVERSAL_PURPOSES)
            if src is not None and not lost[1]:
                auth.append(AuthLogRecord(ts=ts + 1, src=src, qname=probe.qname, qtype="A"))

            if spoofed or lost[2]:
                continue
            if src is None:
                responses.append(self._reply(ts, probe.dst, resolver.addr, Rcode.SERVFAIL))
                continue
            if resolver.behavior is ResolverBehavior.FORWARDER_NO_REWRITE:
                # Upstream answers the original source directly
                if lost[1] or not self.reply_escapes(network, resolver, probe.src):
                    continue
                responder = resolver.upstream
            else:
                responder = resolver.addr
            responses.append(self._reply(ts, probe.dst, responder, Rcode.NOERROR))

        logger.info(
            "Simulated %d probes: %d auth records, %d scanner responses",
            len(plan.probes),
            len(auth),
            len(responses),
        )
        return auth, responses

    @staticmethod
    def _reply(ts: int, dst: Address, responder: Address, rcode: Rcode) -> ScannerResponse:
        return ScannerResponse(
            ts=ts + 2,
            probed_dst=dst,
            responder=responder,
            rcode=rcode,
            answered=rcode is Rcode.NOERROR,
        )


def simulate(
    topo: SimTopology, plan: ScanPlan, scanner: Optional[dict[Family, Address]] = None
) -> tuple[list[AuthLogRecord], list[ScannerResponse]]:
    return Simulator(topo, scanner).run(plan)


def _default_scanner() -> dict[Family, Address]:
    return {
        Family.V4: Address.parse(settings.scanner_v4),
        Family.V6: Address.parse(settings.scanner_v6),
    }


def resolver_truth(
    network: SimNetwork, resolver: SimResolver, scanner: dict[Family, Address]
) -> ResolverTruth:
    """Expected zero-loss observation of one resolver, from its configuration only"""
    spoof_src = adjacent_address(resolver.addr)
    spoof_resolved = not network.inbound_sav and resolver.accepts(spoof_src)
    genuine = scanner[resolver.addr.family]
    answered = resolver.accepts(genuine)
    open_seen = answered and Simulator.reply_escapes(network, resolver, genuine)

    if spoof_resolved:
        outcome = Outcome.SPOOF_RESOLVED
    elif open_seen:
        outcome = Outcome.OPEN_NO_SPOOF
    else:
        outcome = None

    role = None
    if spoof_resolved or answered:
        role = ResolverRole.FORWARDER if resolver.behavior.is_forwarder else ResolverRole.NON_FORWARDER
    return ResolverTruth(
        addr=resolver.addr,
        outcome=outcome,
        role=role,
        openness=Openness.OPEN if open_seen else Openness.CLOSED,
    )


def ground_truth(
    topo: SimTopology, level: NetworkLevel, scanner: Optional[dict[Family, Address]] = None
) -> GroundTruth:
    level = NetworkLevel(level)
    scanner = scanner or _default_scanner()
    table = topo.bgp_table()
    outcomes: dict[NetworkUnit, set[Outcome]] = defaultdict(set)
    resolvers: dict[Address, ResolverTruth] = {}

    for network, resolver in topo.resolvers():
        truth = resolver_truth(network, resolver, scanner)
        resolvers[resolver.addr] = truth
        if level is NetworkLevel.SLASH24 and resolver.addr.family is not Family.V4:
            continue
        if level is NetworkLevel.SLASH40 and resolver.addr.family is not Family.V6:
            continue
        unit = unit_of(resolver.addr, level, table)
        if unit is None:
            continue
        if truth.outcome is None:
            outcomes.setdefault(unit, set())
        else:
            outcomes[unit].add(truth.outcome)

    verdicts = {}
    for unit, seen in outcomes.items():
        if not seen:
            verdicts[unit] = VerdictStatus.NO_DATA
        elif seen == {Outcome.SPOOF_RESOLVED}:
            verdicts[unit] = VerdictStatus.VULNERABLE
        elif seen == {Outcome.OPEN_NO_SPOOF}:
            verdicts[unit] = VerdictStatus.NON_VULNERABLE
        else:
            verdicts[unit] = VerdictStatus.PARTIAL
    return GroundTruth(level=level, verdicts=verdicts, resolvers=resolvers)


def dual_stack_truth(
    topo: SimTopology, scanner: Optional[dict[Family, Address]] = None
) -> list[tuple[Address, Address]]:
    """(IPv4, IPv6) pairs a zero-loss main plus traversal scan reveals for non-forwarders"""
    scanner = scanner or _default_scanner()
    pairs = []
    for network, resolver in topo.resolvers():
        if resolver.sibling is None:
            continue
        if resolver_truth(network, resolver, scanner).role is not ResolverRole.NON_FORWARDER:
            continue
        if resolver.addr.family is Family.V4:
            pairs.append((resolver.addr, resolver.sibling))
        else:
            pairs.append((resolver.sibling, resolver.addr))
    return sorted(pairs)


class TopologyKnobs(BaseModel):
    """Bounds for random_topology"""

    min_resolvers: int = Field(default=0, ge=0)
    max_resolvers: int = Field(default=4, ge=0, le=14)
    p_open: float = Field(default=0.4, ge=0, le=1)
    p_inbound_sav: float = Field(default=0.3, ge=0, le=1)
    p_outbound_sav: float = Field(default=0.3, ge=0, le=1)
    p_forwarder: float = Field(default=0.4, ge=0, le=1)
    p_no_rewrite: float = Field(default=0.25, ge=0, le=1)
    p_empty_acl: float = Field(default=0.1, ge=0, le=1)
    p_dual_stack: float = Field(default=0.3, ge=0, le=1)
    v6_fraction: float = Field(default=0.3, ge=0, le=1)
    networks_per_slot: int = Field(default=4, ge=1, le=16)
    n_asns: Optional[int] = Field(default=None, ge=1)
    loss_probability: float = Field(default=0.0, ge=0, le=1)


class _Allocator:
    """Packs small networks into shared /24 (IPv4) or /40 (IPv6) blocks"""

    V4_BASE = Address.parse("20.0.0.0").value
    V6_BASE = Address.parse("2a0f::").value

    def __init__(self, rng: random.Random, per_slot: int):
        self.rng = rng
        self.per_slot = per_slot
        self.block = {Family.V4: 0, Family.V6: 0}
        self.used = {Family.V4: per_slot, Family.V6: per_slot}

    def next(self, family: Family) -> Prefix:
        if self.used[family] >= self.per_slot or self.rng.random() < 0.3:
            self.block[family] += 1
            self.used[family] = 0
        slot = self.used[family]
        self.used[family] += 1
        if family is Family.V4:
            value = self.V4_BASE + (self.block[family] << 8) + (slot << 4)
            return Prefix(Address(Family.V4, value), 28)
        value = self.V6_BASE + (self.block[family] << 88) + (slot << 80)
        return Prefix(Address(Family.V6, value), 48)


def _host_offsets(rng: random.Random, prefix: Prefix, count: int) -> list[Address]:
    # Never the first or last address of the network
    if prefix.family is Family.V4:
        offsets = rng.sample(range(1, prefix.size - 1), count)
    else:
        offsets = rng.sample(range(1, 1 << 20), count)
    return [Address(prefix.family, prefix.base.value + o) for o in sorted(offsets)]


def random_topology(seed: int, n_networks: int, knobs: Optional[TopologyKnobs] = None) -> SimTopology:
    knobs = knobs or TopologyKnobs()
    if knobs.min_resolvers > knobs.max_resolvers:
        raise TopologyError("min_resolvers exceeds max_resolvers")
    rng = random.Random(seed)
    allocator = _Allocator(rng, knobs.networks_per_slot)
    n_asns = knobs.n_asns or max(1, n_networks // 3)

    siblings = {Family.V4: SIBLING_V4.base.value, Family.V6: SIBLING_V6.base.value}
    networks = []
    for _ in range(n_networks):
        family = Family.V6 if rng.random() < knobs.v6_fraction else Family.V4
        prefix = allocator.next(family)
        upstream_space = UPSTREAM_V4 if family is Family.V4 else UPSTREAM_V6
        resolvers = []
        count = rng.randint(knobs.min_resolvers, knobs.max_resolvers)
        for addr in _host_offsets(rng, prefix, count):
            behavior = ResolverBehavior.RECURSIVE
            upstream = None
            if rng.random() < knobs.p_forwarder:
                if rng.random() < knobs.p_no_rewrite:
                    behavior = ResolverBehavior.FORWARDER_NO_REWRITE
                else:
                    behavior = ResolverBehavior.FORWARDER_CLEAN
                upstream = Address(family, upstream_space.base.value + rng.randrange(1, 255))
            acl = () if rng.random() < knobs.p_empty_acl else (prefix,)
            sibling = None
            if rng.random() < knobs.p_dual_stack:
                other = Family.V6 if family is Family.V4 else Family.V4
                siblings[other] += 1
                sibling = Address(other, siblings[other])
            resolvers.append(
                SimResolver(
                    addr=addr,
                    open=rng.random() < knobs.p_open,
                    acl=acl,
                    behavior=behavior,
                    upstream=upstream,
                    sibling=sibling,
                )
            )
        networks.append(
            SimNetwork(
                prefix=prefix,
                asn=64512 + rng.randrange(n_asns),
                inbound_sav=rng.random() < knobs.p_inbound_sav,
                outbound_sav=rng.random() < knobs.p_outbound_sav,
                resolvers=tuple(resolvers),
            )
        )

    return SimTopology(
        networks=tuple(networks),
        external_routes=((UPSTREAM_V4, UPSTREAM_ASN), (UPSTREAM_V6, UPSTREAM_ASN)),
        loss_probability=knobs.loss_probability,
        seed=seed,
    )


def serialize_topology(topo: SimTopology) -> str:
    lines = [
        "# savscan topology",
        f"seed = {topo.seed}",
        f"loss = {topo.loss_probability!r}",
    ]
    for prefix, asn in topo.external_routes:
        lines.append(f"route = {prefix} {asn}")
    for network in topo.networks:
        lines.extend(
            [
                "",
                "[network]",
                f"prefix = {network.prefix}",
                f"asn = {network.asn}",
                f"inbound_sav = {str(network.inbound_sav).lower()}",
                f"outbound_sav = {str(network.outbound_sav).lower()}",
            ]
        )
        for r in network.resolvers:
            fields = [str(r.addr), "open" if r.open else "closed", r.behavior.value]
            if r.upstream is not None:
                fields.append(f"upstream={r.upstream}")
            if r.sibling is not None:
                fields.append(f"sibling={r.sibling}")
            fields.append("acl=" + ",".join(str(p) for p in r.acl))
            lines.append("resolver = " + " ".join(fields))
    return "\n".join(lines) + "\n"


_KEY_VALUE = re.compile(r"^([a-z_]+)\s*=\s*(.*)$")


def _parse_bool(value: str) -> bool:
    if value not in ("true", "false"):
        raise FormatError(f"expected true/false, got {value!r}")
    return value == "true"


def _parse_resolver(value: str, prefix: Prefix) -> SimResolver:
    fields = value.split()
    if len(fields) < 3 or fields[1] not in ("open", "closed"):
        raise FormatError(f"bad resolver line {value!r}")
    upstream: Optional[Address] = None
    sibling: Optional[Address] = None
    acl: tuple[Prefix, ...] = (prefix,)
    for extra in fields[3:]:
        key, _, text = extra.partition("=")
        if key == "upstream":
            upstream = Address.parse(text)
        elif key == "sibling":
            sibling = Address.parse(text)
        elif key == "acl":
            acl = tuple(Prefix.parse(p) for p in text.split(",") if p)
        else:
            raise FormatError(f"unknown resolver field {key!r}")
    return SimResolver(
        addr=Address.parse(fields[0]),
        open=fields[1] == "open",
        acl=acl,
        behavior=ResolverBehavior(fields[2]),
        upstream=upstream,
        sibling=sibling,
    )


def parse_topology(stream: Iterable[str]) -> SimTopology:
    """Read the stanza format written by serialize_topology"""
    header: dict = {"seed": 0, "loss_probability": 0.0, "external_routes": []}
    networks = []
    current: Optional[dict] = None

    def close():
        if current is not None:
            try:
                networks.append(SimNetwork(**current))
            except ValueError as e:
                raise TopologyError(str(e)) from e

    for number, raw in enumerate(stream, start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        if line == "[network]":
            close()
            current = {"resolvers": []}
            continue
        match = _KEY_VALUE.match(line)
        if not match:
            raise FormatError(f"topology line {number}: {line!r}")
        key, value = match.group(1), match.group(2).strip()
        if current is None:
            if key == "seed":
                header["seed"] = int(value)
            elif key == "loss":
                header["loss_probability"] = float(value)
            elif key == "route":
                prefix, asn = value.split()
                header["external_routes"].append((Prefix.parse(prefix), int(asn)))
            else:
                raise FormatError(f"topology line {number}: unknown key {key!r}")
        elif key == "prefix":
            current["prefix"] = Prefix.parse(value)
        elif key == "asn":
            current["asn"] = int(value)
        elif key in ("inbound_sav", "outbound_sav"):
            current[key] = _parse_bool(value)
        elif key == "resolver":
            if "prefix" not in current:
                raise FormatError(f"topology line {number}: resolver before prefix")
            current["resolvers"].append(_parse_resolver(value, current["prefix"]))
        else:
            raise FormatError(f"topology line {number}: unknown key {key!r}")
    close()

    try:
        return SimTopology(
            networks=tuple(networks),
            external_routes=tuple(header["external_routes"]),
            loss_probability=header["loss_probability"],
            seed=header["seed"],
        )
    except ValueError as e:
        raise TopologyError(str(e)) from e
