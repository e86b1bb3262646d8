from enum import StrEnum

from pydantic import BaseModel, ConfigDict, Field

from app.internal.netaddr import Address
from app.models.probe import ProbeKind, TransportZone


class AuthLogRecord(BaseModel):
    """A query seen by one of our authoritative nameservers"""

    model_config = ConfigDict(frozen=True)

    ts: int
    src: Address
    qname: str = Field(min_length=1)
    qtype: str = "A"


class Rcode(StrEnum):
    NOERROR = "NOERROR"
    REFUSED = "REFUSED"
    SERVFAIL = "SERVFAIL"
    NXDOMAIN = "NXDOMAIN"
    OTHER = "other"

    @classmethod
    def parse(cls, text: str) -> "Rcode":
        try:
            return cls(text.strip().upper())
        except ValueError:
            return cls.OTHER


class ScannerResponse(BaseModel):
    """A reply that reached the scanning host"""

    model_config = ConfigDict(frozen=True)

    ts: int
    probed_dst: Address
    responder: Address
    rcode: Rcode
    answered: bool


class ResolverRole(StrEnum):
    FORWARDER = "forwarder"
    NON_FORWARDER = "non_forwarder"


class Openness(StrEnum):
    OPEN = "open"
    CLOSED = "closed"


class ResolverObservation(BaseModel):
    model_config = ConfigDict(frozen=True)

    target: Address
    observed_src: Address
    role: ResolverRole
    kind: ProbeKind
    scan_id: int
    transport_zone: TransportZone
    nf_flag: bool = False
