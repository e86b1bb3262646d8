import logging
from dataclasses import dataclass
from typing import Iterable, Optional

from app.internal import codec
from app.internal.errors import MalformedNameError, NotOursError
from app.internal.netaddr import Address, BgpTable
from app.models.observation import (
    AuthLogRecord,
    Openness,
    Rcode,
    ResolverObservation,
    ResolverRole,
    ScannerResponse,
)
from app.models.probe import ZoneConfig
from app.models.verdict import ForwarderCategory, ForwarderMismatch

logger = logging.getLogger(__name__)


@dataclass
class IngestStats:
    """Drop counters for one ingest batch"""

    records: int = 0
    duplicates: int = 0
    non_a: int = 0
    foreign: int = 0
    malformed: int = 0
    classified: int = 0
    responses: int = 0
    answered: int = 0
    open: int = 0

    @property
    def dropped(self) -> int:
        return self.non_a + self.foreign + self.malformed


def dedup(records: Iterable[AuthLogRecord], stats: Optional[IngestStats] = None) -> list[AuthLogRecord]:
    """First record per (src, lowercase qname), input order preserved"""
    seen: set[tuple[Address, str]] = set()
    kept = []
    total = 0
    for record in records:
        total += 1
        key = (record.src, record.qname.rstrip(".").lower())
        if key in seen:
            continue
        seen.add(key)
        kept.append(record)
    if stats is not None:
        stats.records += total
        stats.duplicates += total - len(kept)
    return kept


def dedup_ratio(before: int, after: int) -> float:
    """Percentage of records kept by dedup"""
    if before <= 0:
        return 0.0
    return 100.0 * after / before


def classify(
    records: Iterable[AuthLogRecord], z: ZoneConfig, stats: Optional[IngestStats] = None
) -> list[ResolverObservation]:
    stats = stats if stats is not None else IngestStats()
    observations = []
    for record in records:
        if record.qtype.upper() != "A":
            stats.non_a += 1
            continue
        try:
            domain = codec.decode(record.qname, z)
        except NotOursError:
            stats.foreign += 1
            logger.debug("Foreign query name %s from %s", record.qname, record.src)
            continue
        except MalformedNameError:
            stats.malformed += 1
            logger.debug("Undecodable query name %s from %s", record.qname, record.src)
            continue
        role = ResolverRole.NON_FORWARDER if record.src == domain.target else ResolverRole.FORWARDER
        observations.append(
            ResolverObservation(
                target=domain.target,
                observed_src=record.src,
                role=role,
                kind=domain.kind,
                scan_id=domain.scan_id,
                transport_zone=domain.transport_zone,
                nf_flag=domain.nf,
            )
        )
    stats.classified += len(observations)
    if stats.dropped:
        logger.info(
            "Dropped %d records (%d non-A, %d foreign, %d malformed)",
            stats.dropped,
            stats.non_a,
            stats.foreign,
            stats.malformed,
        )
    return observations


def openness(
    obs: Iterable[ResolverObservation],
    resp: Iterable[ScannerResponse],
    stats: Optional[IngestStats] = None,
) -> dict[Address, Openness]:
    """Open iff some NOERROR answered reply came back for the probed address"""
    result: dict[Address, Openness] = {}
    for o in obs:
        result.setdefault(o.target, Openness.CLOSED)
    for r in resp:
        if stats is not None:
            stats.responses += 1
        if r.rcode is Rcode.NOERROR and r.answered:
            result[r.probed_dst] = Openness.OPEN
            if stats is not None:
                stats.answered += 1
        else:
            result.setdefault(r.probed_dst, Openness.CLOSED)
    if stats is not None:
        stats.open = sum(state is Openness.OPEN for state in result.values())
    return result


def roles(obs: Iterable[ResolverObservation]) -> dict[Address, ResolverRole]:
    """Per-target role; a target seen answering itself at least once is a non-forwarder"""
    result: dict[Address, ResolverRole] = {}
    for o in obs:
        if result.get(o.target) is not ResolverRole.NON_FORWARDER:
            result[o.target] = o.role
    return result


def _categorize(r: ScannerResponse, t: BgpTable) -> ForwarderMismatch:
    probed = t.lookup(r.probed_dst)
    responder = t.lookup(r.responder)
    probed_asn = probed[1] if probed else None
    responder_asn = responder[1] if responder else None
    if r.responder.ip().is_private:
        category = ForwarderCategory.PRIVATE
    elif probed_asn is None or responder_asn is None:
        category = ForwarderCategory.UNROUTED
    elif probed_asn != responder_asn:
        category = ForwarderCategory.CROSS_AS
    else:
        category = ForwarderCategory.SAME_AS
    return ForwarderMismatch(
        probed_dst=r.probed_dst,
        responder=r.responder,
        category=category,
        probed_asn=probed_asn,
        responder_asn=responder_asn,
    )


def forwarder_mismatches(resp: Iterable[ScannerResponse], t: BgpTable) -> list[ForwarderMismatch]:
    """Every distinct (probed, responder) pair whose responder is not the probed address"""
    seen: set[tuple[Address, Address]] = set()
    result = []
    for r in resp:
        if r.responder == r.probed_dst or (r.probed_dst, r.responder) in seen:
            continue
        seen.add((r.probed_dst, r.responder))
        result.append(_categorize(r, t))
    return result


def misconfigured_forwarders(resp: Iterable[ScannerResponse], t: BgpTable) -> list[tuple[Address, Address]]:
    mismatches = forwarder_mismatches(resp, t)
    flagged = [(m.probed_dst, m.responder) for m in mismatches if m.flagged]
    logger.info(
        "%d responder mismatches, %d flagged as misconfigured forwarders",
        len(mismatches),
        len(flagged),
    )
    return flagged
