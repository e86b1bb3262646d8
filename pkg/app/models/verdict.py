from enum import StrEnum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.internal.netaddr import Address, NetworkUnit
from app.models.probe import TransportZone


class Outcome(StrEnum):
    SPOOF_RESOLVED = "spoof_resolved"
    OPEN_NO_SPOOF = "open_no_spoof"


class Measurement(BaseModel):
    """Inbound spoofing outcome for one probed resolver"""

    model_config = ConfigDict(frozen=True)

    target: Address
    outcome: Outcome
    scan_id: int = 1


class VerdictStatus(StrEnum):
    VULNERABLE = "vulnerable"
    NON_VULNERABLE = "non_vulnerable"
    PARTIAL = "partial"
    NO_DATA = "no_data"


class RescanState(StrEnum):
    NONE = "none"
    UPDATED = "updated"
    UNRESPONSIVE = "unresponsive"


class UnitVerdict(BaseModel):
    model_config = ConfigDict(frozen=True)

    unit: NetworkUnit
    status: VerdictStatus
    n_measurements: int = 0
    rescan: RescanState = RescanState.NONE

    @model_validator(mode="after")
    def check_counts(self) -> "UnitVerdict":
        if self.status is VerdictStatus.PARTIAL and self.n_measurements < 2:
            raise ValueError("partial verdict needs at least two measurements")
        if self.status in (VerdictStatus.VULNERABLE, VerdictStatus.NON_VULNERABLE) and self.n_measurements < 1:
            raise ValueError(f"{self.status} verdict needs a measurement")
        return self


class OutboundSource(StrEnum):
    SPOOFER_RECEIVED = "spoofer_received"
    SPOOFER_BLOCKED = "spoofer_blocked"
    FWD_MISCONFIG = "fwd_misconfig"


class OutboundVerdict(StrEnum):
    VULNERABLE_OUT = "vulnerable_out"
    NON_VULNERABLE_OUT = "non_vulnerable_out"


class OutboundEvidence(BaseModel):
    model_config = ConfigDict(frozen=True)

    unit: NetworkUnit
    source: OutboundSource
    verdict: OutboundVerdict

    @model_validator(mode="after")
    def check_verdict(self) -> "OutboundEvidence":
        expected = (
            OutboundVerdict.NON_VULNERABLE_OUT
            if self.source is OutboundSource.SPOOFER_BLOCKED
            else OutboundVerdict.VULNERABLE_OUT
        )
        if self.verdict is not expected:
            raise ValueError(f"{self.source} implies {expected}")
        return self


class FingerprintProtocol(StrEnum):
    DNS_VERSION_BIND = "dns_version_bind"
    DNS_PTR = "dns_ptr"
    NTP = "ntp"
    HTTP = "http"
    HTTPS = "https"
    SSH = "ssh"
    SMTP = "smtp"


class FingerprintEvidence(BaseModel):
    """Banner / certificate attributes collected for one address and protocol"""

    addr: Address
    protocol: FingerprintProtocol
    attributes: dict[str, str]

    @field_validator("attributes")
    @classmethod
    def check_attributes(cls, value: dict[str, str]) -> dict[str, str]:
        if not value:
            raise ValueError("fingerprint evidence needs at least one attribute")
        return value


class DualStackPair(BaseModel):
    model_config = ConfigDict(frozen=True)

    v4: Address
    v6: Address
    discovered_via: TransportZone
    confirmed: bool = False
    matched_protocols: frozenset[FingerprintProtocol] = Field(default_factory=frozenset)

    @model_validator(mode="after")
    def check_confirmed(self) -> "DualStackPair":
        if self.confirmed and not self.matched_protocols:
            raise ValueError("confirmed pair needs a matched protocol")
        return self

    @property
    def key(self) -> tuple[Address, Address]:
        return self.v4, self.v6


class DirectionMatrix(BaseModel):
    """Inbound vs. outbound policy counts over units present in both datasets"""

    in_vuln_out_vuln: int = 0
    in_vuln_out_ok: int = 0
    in_ok_out_vuln: int = 0
    in_ok_out_ok: int = 0

    @property
    def overlap(self) -> int:
        return self.in_vuln_out_vuln + self.in_vuln_out_ok + self.in_ok_out_vuln + self.in_ok_out_ok


class ForwarderCategory(StrEnum):
    CROSS_AS = "cross_as"
    SAME_AS = "same_as"
    PRIVATE = "private"
    UNROUTED = "unrouted"


class ForwarderMismatch(BaseModel):
    """Reply whose source differs from the probed address"""

    model_config = ConfigDict(frozen=True)

    probed_dst: Address
    responder: Address
    category: ForwarderCategory
    probed_asn: Optional[int] = None
    responder_asn: Optional[int] = None

    @property
    def flagged(self) -> bool:
        return self.category is not ForwarderCategory.SAME_AS


class SpooferResult(StrEnum):
    RECEIVED = "received"
    BLOCKED = "blocked"
    REWRITTEN = "rewritten"
    UNKNOWN = "unknown"


class FingerprintRow(BaseModel):
    """Per-protocol availability of fingerprints over dual-stack candidates"""

    both_closed: int = 0
    only_v4_open: int = 0
    only_v6_open: int = 0
    both_open: int = 0
    same_fingerprint: int = 0


class FingerprintTable(BaseModel):
    rows: dict[FingerprintProtocol, FingerprintRow] = Field(default_factory=dict)
    candidates: int = 0
    confirmed: int = 0


class DualStackPolicies(BaseModel):
    """Inbound SAV agreement between the two addresses of confirmed pairs"""

    pairs: int = 0
    consistent_vulnerable: int = 0
    consistent_non_vulnerable: int = 0
    v6_only_vulnerable: int = 0
    v4_only_vulnerable: int = 0


class AsFamilyComparison(BaseModel):
    """ASes with a non-partial verdict over both IPv4 and IPv6"""

    both: int = 0
    consistent_vulnerable: int = 0
    consistent_non_vulnerable: int = 0
    v6_only_vulnerable: int = 0
    v4_only_vulnerable: int = 0
