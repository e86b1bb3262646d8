import logging
from collections import Counter, defaultdict
from typing import Iterable, Mapping, Optional

import dns.exception
import dns.name

from app.config import settings
from app.internal.errors import FormatError, MissingTableError, RescanError
from app.internal.netaddr import (
    FIXED_LENGTHS,
    Address,
    BgpTable,
    Family,
    NetworkLevel,
    NetworkUnit,
    Prefix,
    unit_of,
)
from app.models.observation import Openness, ResolverObservation
from app.models.probe import ProbeKind
from app.models.verdict import (
    AsFamilyComparison,
    DirectionMatrix,
    DualStackPair,
    DualStackPolicies,
    FingerprintEvidence,
    FingerprintProtocol,
    FingerprintRow,
    FingerprintTable,
    Measurement,
    Outcome,
    OutboundEvidence,
    OutboundSource,
    OutboundVerdict,
    RescanState,
    SpooferResult,
    UnitVerdict,
    VerdictStatus,
)

logger = logging.getLogger(__name__)


def measurements(
    obs: Iterable[ResolverObservation],
    open_map: Mapping[Address, Openness],
    scan_id: Optional[int] = None,
) -> list[Measurement]:
    """One measurement per probed resolver; traversal observations are not SAV measurements"""
    spoofed: dict[Address, int] = {}
    seen_scan: dict[Address, int] = {}
    for o in obs:
        if o.transport_zone.is_traversal:
            continue
        seen_scan[o.target] = max(seen_scan.get(o.target, 0), o.scan_id)
        if o.kind is ProbeKind.SPOOFED:
            spoofed[o.target] = max(spoofed.get(o.target, 0), o.scan_id)

    result = []
    for target, sid in spoofed.items():
        result.append(Measurement(target=target, outcome=Outcome.SPOOF_RESOLVED, scan_id=scan_id or sid))
    for target, state in open_map.items():
        if state is Openness.OPEN and target not in spoofed:
            sid = scan_id or seen_scan.get(target, 1)
            result.append(Measurement(target=target, outcome=Outcome.OPEN_NO_SPOOF, scan_id=sid))
    return sorted(result, key=lambda m: m.target)


def _status(outcomes: Counter) -> VerdictStatus:
    if len(outcomes) > 1:
        return VerdictStatus.PARTIAL
    if Outcome.SPOOF_RESOLVED in outcomes:
        return VerdictStatus.VULNERABLE
    return VerdictStatus.NON_VULNERABLE


def group_by_unit(
    ms: Iterable[Measurement], level: NetworkLevel, t: Optional[BgpTable]
) -> dict[NetworkUnit, Counter]:
    level = NetworkLevel(level)
    fixed = FIXED_LENGTHS.get(level)
    if fixed is None and t is None:
        raise MissingTableError(f"{level} level requires a routing table")
    groups: dict[NetworkUnit, Counter] = defaultdict(Counter)
    unrouted = 0
    for m in ms:
        if fixed is not None and m.target.family is not fixed[0]:
            continue
        unit = unit_of(m.target, level, t)
        if unit is None:
            unrouted += 1
            continue
        groups[unit][m.outcome] += 1
    if unrouted:
        logger.info("Skipped %d measurements with unrouted targets at %s level", unrouted, level)
    return groups


def infer(ms: Iterable[Measurement], level: NetworkLevel, t: Optional[BgpTable] = None) -> list[UnitVerdict]:
    """Per-unit verdicts; units without measurements are absent"""
    groups = group_by_unit(ms, level, t)
    verdicts = [
        UnitVerdict(unit=unit, status=_status(outcomes), n_measurements=sum(outcomes.values()))
        for unit, outcomes in groups.items()
    ]
    return sorted(verdicts, key=lambda v: v.unit.sort_key())


def merge_rescan(
    before: Iterable[UnitVerdict],
    rescan: Iterable[Measurement],
    level: NetworkLevel,
    t: Optional[BgpTable] = None,
    rescanned: Optional[Iterable[NetworkUnit]] = None,
) -> list[UnitVerdict]:
    """Replace the measurements of rescanned partial units and recompute their verdicts.

    Partial units that were rescanned but stayed silent keep their verdict and are
    marked unresponsive. When ``rescanned`` is omitted every partial unit counts as
    rescanned.
    """
    current = {v.unit: v for v in before}
    partial = {u for u, v in current.items() if v.status is VerdictStatus.PARTIAL}
    targeted = partial if rescanned is None else set(rescanned)
    if targeted - partial:
        unit = sorted(targeted - partial, key=NetworkUnit.sort_key)[0]
        raise RescanError(f"{unit} was not partial before the rescan")

    groups = group_by_unit(rescan, level, t)
    for unit, outcomes in groups.items():
        if unit not in partial:
            raise RescanError(f"rescan measurement for non-partial unit {unit}")
        current[unit] = UnitVerdict(
            unit=unit,
            status=_status(outcomes),
            n_measurements=sum(outcomes.values()),
            rescan=RescanState.UPDATED,
        )
    silent = targeted - set(groups)
    for unit in silent:
        current[unit] = current[unit].model_copy(update={"rescan": RescanState.UNRESPONSIVE})

    logger.info(
        "Rescan merged: %d units updated, %d unresponsive",
        len(groups),
        len(silent),
    )
    return sorted(current.values(), key=lambda v: v.unit.sort_key())


def verdict_histogram(verdicts: Iterable[UnitVerdict]) -> dict[VerdictStatus, int]:
    counts = Counter(v.status for v in verdicts)
    return {status: counts.get(status, 0) for status in VerdictStatus}


def dual_stack_candidates(obs: Iterable[ResolverObservation]) -> list[DualStackPair]:
    pairs: dict[tuple[Address, Address], DualStackPair] = {}
    for o in obs:
        if not o.transport_zone.is_traversal or not o.nf_flag:
            continue
        if o.observed_src.family is o.target.family:
            continue
        if o.target.family is Family.V4:
            v4, v6 = o.target, o.observed_src
        else:
            v4, v6 = o.observed_src, o.target
        pairs.setdefault((v4, v6), DualStackPair(v4=v4, v6=v6, discovered_via=o.transport_zone))
    return [pairs[k] for k in sorted(pairs)]


def traversal_addresses(obs: Iterable[ResolverObservation]) -> list[Address]:
    """Other-family addresses revealed through forwarders, for hitlist enrichment"""
    found = {
        o.observed_src
        for o in obs
        if o.transport_zone.is_traversal and not o.nf_flag and o.observed_src.family is not o.target.family
    }
    return sorted(found)


# Attributes that must all be present and equal for a protocol to match
FINGERPRINT_KEYS: dict[FingerprintProtocol, tuple[str, ...]] = {
    FingerprintProtocol.DNS_VERSION_BIND: ("version",),
    FingerprintProtocol.DNS_PTR: ("ptr",),
    FingerprintProtocol.NTP: ("version", "system"),
    FingerprintProtocol.HTTP: ("server",),
    FingerprintProtocol.HTTPS: ("cert_sha256", "cipher_suite", "tls_version"),
    FingerprintProtocol.SSH: ("software", "hostkey"),
    FingerprintProtocol.SMTP: ("cert_sha256",),
}


def _normalize(protocol: FingerprintProtocol, key: str, value: str) -> Optional[str]:
    value = value.strip()
    if not value:
        return None
    if protocol is FingerprintProtocol.DNS_PTR:
        try:
            return dns.name.from_text(value).canonicalize().to_text()
        except dns.exception.DNSException:
            return None
    if key in ("cert_sha256", "hostkey"):
        return value.lower().replace(":", "")
    return value


def fingerprint_matches(
    protocol: FingerprintProtocol,
    a: FingerprintEvidence,
    b: FingerprintEvidence,
    denylist: Optional[Iterable[str]] = None,
) -> bool:
    protocol = FingerprintProtocol(protocol)
    for key in FINGERPRINT_KEYS[protocol]:
        left = _normalize(protocol, key, a.attributes.get(key, ""))
        right = _normalize(protocol, key, b.attributes.get(key, ""))
        if left is None or right is None or left != right:
            return False
    if protocol is FingerprintProtocol.DNS_VERSION_BIND:
        banned = {s.strip().lower() for s in (settings.version_bind_denylist if denylist is None else denylist)}
        if a.attributes["version"].strip().lower() in banned:
            return False
    return True


def _index(ev: Iterable[FingerprintEvidence], addrs: set[Address]) -> dict[tuple[Address, FingerprintProtocol], FingerprintEvidence]:
    index = {}
    for e in ev:
        if e.addr in addrs:
            # Last record wins for a repeated (addr, protocol)
            index[(e.addr, e.protocol)] = e
    return index


def match_fingerprints(
    pair: DualStackPair, ev: Iterable[FingerprintEvidence], denylist: Optional[Iterable[str]] = None
) -> DualStackPair:
    index = _index(ev, {pair.v4, pair.v6})
    matched = set()
    for protocol in FingerprintProtocol:
        a = index.get((pair.v4, protocol))
        b = index.get((pair.v6, protocol))
        if a is not None and b is not None and fingerprint_matches(protocol, a, b, denylist):
            matched.add(protocol)
    return pair.model_copy(update={"confirmed": bool(matched), "matched_protocols": frozenset(matched)})


def fingerprint_table(
    pairs: Iterable[DualStackPair], ev: Iterable[FingerprintEvidence], denylist: Optional[Iterable[str]] = None
) -> FingerprintTable:
    pairs = list(pairs)
    addrs = {a for p in pairs for a in p.key}
    index = _index(ev, addrs)
    rows = {protocol: FingerprintRow() for protocol in FingerprintProtocol}
    confirmed = 0
    for pair in pairs:
        matched = False
        for protocol, row in rows.items():
            v4_open = (pair.v4, protocol) in index
            v6_open = (pair.v6, protocol) in index
            if v4_open and v6_open:
                row.both_open += 1
                if fingerprint_matches(protocol, index[(pair.v4, protocol)], index[(pair.v6, protocol)], denylist):
                    row.same_fingerprint += 1
                    matched = True
            elif v4_open:
                row.only_v4_open += 1
            elif v6_open:
                row.only_v6_open += 1
            else:
                row.both_closed += 1
        confirmed += matched
    return FingerprintTable(rows=rows, candidates=len(pairs), confirmed=confirmed)


def dual_stack_policies(pairs: Iterable[DualStackPair], ms: Iterable[Measurement]) -> DualStackPolicies:
    """Compare inbound outcomes of both addresses of each confirmed pair measured on both sides"""
    vulnerable: dict[Address, bool] = {}
    for m in ms:
        vulnerable[m.target] = m.outcome is Outcome.SPOOF_RESOLVED
    result = DualStackPolicies()
    for pair in pairs:
        if not pair.confirmed or pair.v4 not in vulnerable or pair.v6 not in vulnerable:
            continue
        result.pairs += 1
        v4, v6 = vulnerable[pair.v4], vulnerable[pair.v6]
        if v4 and v6:
            result.consistent_vulnerable += 1
        elif not v4 and not v6:
            result.consistent_non_vulnerable += 1
        elif v6:
            result.v6_only_vulnerable += 1
        else:
            result.v4_only_vulnerable += 1
    return result


def as_family_comparison(v4: Iterable[UnitVerdict], v6: Iterable[UnitVerdict]) -> AsFamilyComparison:
    def decided(verdicts: Iterable[UnitVerdict]) -> dict[int, bool]:
        return {
            v.unit.key: v.status is VerdictStatus.VULNERABLE
            for v in verdicts
            if v.unit.level is NetworkLevel.ASN
            and v.status in (VerdictStatus.VULNERABLE, VerdictStatus.NON_VULNERABLE)
        }

    left, right = decided(v4), decided(v6)
    result = AsFamilyComparison()
    for asn in left.keys() & right.keys():
        result.both += 1
        a, b = left[asn], right[asn]
        if a and b:
            result.consistent_vulnerable += 1
        elif not a and not b:
            result.consistent_non_vulnerable += 1
        elif b:
            result.v6_only_vulnerable += 1
        else:
            result.v4_only_vulnerable += 1
    return result


_SPOOFER_VERDICTS = {
    SpooferResult.RECEIVED: (OutboundSource.SPOOFER_RECEIVED, OutboundVerdict.VULNERABLE_OUT),
    SpooferResult.BLOCKED: (OutboundSource.SPOOFER_BLOCKED, OutboundVerdict.NON_VULNERABLE_OUT),
}
MAX_UNITS_PER_ROW = 256


def units_of_prefix(prefix: Prefix) -> list[NetworkUnit]:
    """The /24 (IPv4) or /40 (IPv6) units a spoofer row covers"""
    level = NetworkLevel.SLASH24 if prefix.family is Family.V4 else NetworkLevel.SLASH40
    length = FIXED_LENGTHS[level][1]
    if prefix.length >= length:
        return [unit_of(prefix.base, level)]
    count = 1 << (length - prefix.length)
    if count > MAX_UNITS_PER_ROW:
        raise FormatError(f"{prefix} covers more than {MAX_UNITS_PER_ROW} units")
    step = 1 << (prefix.family.width - length)
    return [
        NetworkUnit(level, Prefix(Address(prefix.family, prefix.base.value + i * step), length))
        for i in range(count)
    ]


def outbound_evidence(
    spoofer_rows: Iterable[tuple[str | Prefix, str | SpooferResult]],
    fwd_pairs: Iterable[tuple[Address, Address]],
    t: Optional[BgpTable] = None,
    attribute_to: str = "responder",
) -> list[OutboundEvidence]:
    """Outbound SAV evidence per /24 and /40.

    Spoofer rows with results other than received/blocked carry no evidence.
    Misconfigured-forwarder pairs mark the responder's unit by default. With
    ``attribute_to="probed"`` they mark the unit of the probed forwarder instead,
    which blames the network hosting the forwarder rather than the one the
    upstream reply escaped from. Private and unrouted responders carry no unit.
    """
    if attribute_to not in ("responder", "probed"):
        raise ValueError(f"attribute_to must be 'responder' or 'probed', got {attribute_to!r}")
    evidence: dict[tuple[NetworkUnit, OutboundSource], OutboundEvidence] = {}
    malformed = 0
    ignored = 0

    for raw_prefix, raw_result in spoofer_rows:
        try:
            prefix = raw_prefix if isinstance(raw_prefix, Prefix) else Prefix.parse(raw_prefix, strict=False)
            result = SpooferResult(str(raw_result).strip().lower())
            units = units_of_prefix(prefix)
        except (ValueError, FormatError):
            malformed += 1
            continue
        if result not in _SPOOFER_VERDICTS:
            ignored += 1
            continue
        source, verdict = _SPOOFER_VERDICTS[result]
        for unit in units:
            evidence[(unit, source)] = OutboundEvidence(unit=unit, source=source, verdict=verdict)

    skipped = 0
    for probed, responder in fwd_pairs:
        addr = responder if attribute_to == "responder" else probed
        if attribute_to == "responder":
            if addr.ip().is_private or (t is not None and t.lookup(addr) is None):
                skipped += 1
                continue
        level = NetworkLevel.SLASH24 if addr.family is Family.V4 else NetworkLevel.SLASH40
        unit = unit_of(addr, level)
        evidence[(unit, OutboundSource.FWD_MISCONFIG)] = OutboundEvidence(
            unit=unit, source=OutboundSource.FWD_MISCONFIG, verdict=OutboundVerdict.VULNERABLE_OUT
        )

    if malformed or ignored or skipped:
        logger.info(
            "Outbound evidence: %d malformed spoofer rows, %d rewritten/unknown, %d unmappable responders",
            malformed,
            ignored,
            skipped,
        )
    return sorted(evidence.values(), key=lambda e: (e.unit.sort_key(), e.source))


def outbound_by_unit(ev: Iterable[OutboundEvidence]) -> dict[NetworkUnit, OutboundVerdict]:
    """Any vulnerable evidence makes the unit vulnerable outbound"""
    result: dict[NetworkUnit, OutboundVerdict] = {}
    for e in ev:
        if result.get(e.unit) is not OutboundVerdict.VULNERABLE_OUT:
            result[e.unit] = e.verdict
    return result


def direction_matrix(inbound: Iterable[UnitVerdict], outbound: Iterable[OutboundEvidence]) -> DirectionMatrix:
    out = outbound_by_unit(outbound)
    matrix = DirectionMatrix()
    for v in inbound:
        if v.status not in (VerdictStatus.VULNERABLE, VerdictStatus.NON_VULNERABLE):
            continue
        if v.unit not in out:
            continue
        in_vuln = v.status is VerdictStatus.VULNERABLE
        out_vuln = out[v.unit] is OutboundVerdict.VULNERABLE_OUT
        if in_vuln and out_vuln:
            matrix.in_vuln_out_vuln += 1
        elif in_vuln:
            matrix.in_vuln_out_ok += 1
        elif out_vuln:
            matrix.in_ok_out_vuln += 1
        else:
            matrix.in_ok_out_ok += 1
    return matrix
