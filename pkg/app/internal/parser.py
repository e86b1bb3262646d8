import csv
import logging
import re
import shlex
from typing import Iterable, NamedTuple, Optional, TextIO

from pydantic import ValidationError

from app.internal.errors import FormatError
from app.internal.netaddr import Address, NetworkUnit, Prefix
from app.models.observation import (
    AuthLogRecord,
    Rcode,
    ResolverObservation,
    ResolverRole,
    ScannerResponse,
)
from app.models.probe import ProbeKind, TransportZone
from app.models.verdict import (
    FingerprintEvidence,
    FingerprintProtocol,
    Measurement,
    Outcome,
    RescanState,
    UnitVerdict,
    VerdictStatus,
)

logger = logging.getLogger(__name__)

AUTH_HEADER = ["ts_us", "src", "qname", "qtype"]
RESPONSE_HEADER = ["ts_us", "probed_dst", "responder", "rcode", "answered"]
OBSERVATION_HEADER = ["target", "observed_src", "role", "kind", "scan_id", "transport_zone", "nf"]
MEASUREMENT_HEADER = ["target", "outcome", "scan_id"]
VERDICT_HEADER = ["level", "key", "status", "n_measurements", "rescan"]


class ParseResult(NamedTuple):
    """Parsed rows plus the number of skipped malformed ones"""

    items: list
    malformed: int


class DatasetParser:
    """Reader for the measurement datasets: CSV logs, evidence lines and lookup tables"""

    # addr protocol key=value ...
    EVIDENCE_PATTERN = re.compile(r"^\s*(\S+)\s+([a-z_]+)\s+(.+)$")
    ASN_PATTERN = re.compile(r"^(?:AS)?(\d+)$", re.IGNORECASE)
    TRUE = {"1", "true", "yes"}
    FALSE = {"0", "false", "no"}

    def _rows(self, stream: Iterable[str], header: list[str]) -> Iterable[tuple[int, list[str]]]:
        for number, row in enumerate(csv.reader(stream), start=1):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if row[0].startswith("#"):
                continue
            if number == 1 and [c.strip().lower() for c in row[: len(header)]] == header:
                continue
            yield number, [c.strip() for c in row]

    def _bool(self, text: str) -> bool:
        text = text.lower()
        if text in self.TRUE:
            return True
        if text in self.FALSE:
            return False
        raise FormatError(f"expected a boolean, got {text!r}")

    def _collect(self, stream: Iterable[str], header: list[str], build, what: str) -> ParseResult:
        items = []
        malformed = 0
        for number, row in self._rows(stream, header):
            try:
                items.append(build(row))
            except (ValueError, IndexError, ValidationError) as e:
                malformed += 1
                logger.debug("Skipping %s line %d: %s", what, number, e)
        if malformed:
            logger.info("Skipped %d malformed %s rows", malformed, what)
        return ParseResult(items, malformed)

    def parse_auth_log(self, stream: Iterable[str]) -> ParseResult:
        def build(row):
            return AuthLogRecord(
                ts=int(row[0]), src=Address.parse(row[1]), qname=row[2], qtype=row[3] if len(row) > 3 else "A"
            )

        return self._collect(stream, AUTH_HEADER, build, "auth log")

    def parse_responses(self, stream: Iterable[str]) -> ParseResult:
        def build(row):
            return ScannerResponse(
                ts=int(row[0]),
                probed_dst=Address.parse(row[1]),
                responder=Address.parse(row[2]),
                rcode=Rcode.parse(row[3]),
                answered=self._bool(row[4]),
            )

        return self._collect(stream, RESPONSE_HEADER, build, "response log")

    def parse_observations(self, stream: Iterable[str]) -> ParseResult:
        def build(row):
            return ResolverObservation(
                target=Address.parse(row[0]),
                observed_src=Address.parse(row[1]),
                role=ResolverRole(row[2]),
                kind=ProbeKind(row[3]),
                scan_id=int(row[4]),
                transport_zone=TransportZone(row[5]),
                nf_flag=self._bool(row[6]),
            )

        return self._collect(stream, OBSERVATION_HEADER, build, "observation")

    def parse_measurements(self, stream: Iterable[str]) -> ParseResult:
        def build(row):
            return Measurement(target=Address.parse(row[0]), outcome=Outcome(row[1]), scan_id=int(row[2]))

        return self._collect(stream, MEASUREMENT_HEADER, build, "measurement")

    def parse_verdicts(self, stream: Iterable[str]) -> ParseResult:
        def build(row):
            return UnitVerdict(
                unit=NetworkUnit.parse(row[0], row[1]),
                status=VerdictStatus(row[2]),
                n_measurements=int(row[3]),
                rescan=RescanState(row[4]) if len(row) > 4 and row[4] else RescanState.NONE,
            )

        return self._collect(stream, VERDICT_HEADER, build, "verdict")

    def parse_spoofer(self, stream: Iterable[str]) -> list[tuple[str, str]]:
        """Raw (prefix, result) pairs; validation happens when the evidence is built"""
        return [(row[0], row[1] if len(row) > 1 else "") for _, row in self._rows(stream, ["prefix", "result"])]

    def parse_geo(self, stream: Iterable[str]) -> ParseResult:
        def build(row):
            iso2 = row[1].upper()
            if not re.fullmatch(r"[A-Z]{2}", iso2):
                raise FormatError(f"invalid country code {row[1]!r}")
            return Prefix.parse(row[0], strict=False), iso2

        return self._collect(stream, ["prefix", "iso2"], build, "geolocation")

    def parse_evidence(self, stream: Iterable[str]) -> ParseResult:
        """Fingerprint lines: ``addr protocol key=value ...``, values may be quoted"""
        items = []
        malformed = 0
        for line in stream:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                items.append(self._evidence(line))
            except (ValueError, ValidationError) as e:
                malformed += 1
                logger.debug("Skipping evidence line %r: %s", line, e)
        if malformed:
            logger.info("Skipped %d malformed evidence lines", malformed)
        return ParseResult(items, malformed)

    def _evidence(self, line: str) -> FingerprintEvidence:
        match = self.EVIDENCE_PATTERN.match(line)
        if not match:
            raise FormatError(f"bad evidence line {line!r}")
        attributes = {}
        for token in shlex.split(match.group(3)):
            key, sep, value = token.partition("=")
            if not sep or not key:
                raise FormatError(f"bad attribute {token!r}")
            attributes[key.lower()] = value
        return FingerprintEvidence(
            addr=Address.parse(match.group(1)),
            protocol=FingerprintProtocol(match.group(2)),
            attributes=attributes,
        )

    def parse_asn_list(self, stream: Iterable[str]) -> set[int]:
        asns = set()
        for line in stream:
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            match = self.ASN_PATTERN.match(line)
            if not match:
                raise FormatError(f"invalid ASN {line!r}")
            asns.add(int(match.group(1)))
        return asns


def _writer(stream: TextIO, header: Optional[list[str]]):
    writer = csv.writer(stream, lineterminator="\n")
    if header:
        writer.writerow(header)
    return writer


def write_auth_log(stream: TextIO, records: Iterable[AuthLogRecord]) -> None:
    writer = _writer(stream, AUTH_HEADER)
    for r in records:
        writer.writerow([r.ts, r.src, r.qname, r.qtype])


def write_responses(stream: TextIO, responses: Iterable[ScannerResponse]) -> None:
    writer = _writer(stream, RESPONSE_HEADER)
    for r in responses:
        writer.writerow([r.ts, r.probed_dst, r.responder, r.rcode, str(r.answered).lower()])


def write_observations(stream: TextIO, observations: Iterable[ResolverObservation]) -> None:
    writer = _writer(stream, OBSERVATION_HEADER)
    for o in observations:
        writer.writerow(
            [o.target, o.observed_src, o.role, o.kind, o.scan_id, o.transport_zone, str(o.nf_flag).lower()]
        )


def write_measurements(stream: TextIO, measurements: Iterable[Measurement]) -> None:
    writer = _writer(stream, MEASUREMENT_HEADER)
    for m in measurements:
        writer.writerow([m.target, m.outcome, m.scan_id])


def write_verdicts(stream: TextIO, verdicts: Iterable[UnitVerdict]) -> None:
    writer = _writer(stream, VERDICT_HEADER)
    for v in verdicts:
        writer.writerow([v.unit.level, v.unit.key, v.status, v.n_measurements, v.rescan])


def write_rows(stream: TextIO, header: list[str], rows: Iterable[Iterable]) -> None:
    writer = _writer(stream, header)
    writer.writerows(rows)


# Global parser instance
dataset_parser = DatasetParser()
