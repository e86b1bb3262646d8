import re
from enum import StrEnum
from typing import Optional

import dns.name
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from app.internal.netaddr import Address, Family

LDH_LABEL = re.compile(r"^[a-z0-9]([a-z0-9-]{0,61}[a-z0-9])?$")
NONCE = re.compile(r"^[a-z0-9]{6}$")


class ProbeKind(StrEnum):
    SPOOFED = "spoofed"
    UNSPOOFED = "unspoofed"

    @property
    def letter(self) -> str:
        return "s" if self is ProbeKind.SPOOFED else "n"


class TransportZone(StrEnum):
    V4_ONLY = "v4_only"
    V6_ONLY = "v6_only"
    V4_TO_V6 = "v4_to_v6"
    V6_TO_V4 = "v6_to_v4"

    @property
    def target_family(self) -> Family:
        """Family of the probed resolver"""
        if self in (TransportZone.V4_ONLY, TransportZone.V4_TO_V6):
            return Family.V4
        return Family.V6

    @property
    def is_traversal(self) -> bool:
        return self in (TransportZone.V4_TO_V6, TransportZone.V6_TO_V4)

    @classmethod
    def main_for(cls, family: Family) -> "TransportZone":
        return cls.V4_ONLY if family is Family.V4 else cls.V6_ONLY

    @classmethod
    def traversal_for(cls, family: Family) -> "TransportZone":
        return cls.V4_TO_V6 if family is Family.V4 else cls.V6_TO_V4


class Purpose(StrEnum):
    MAIN_SCAN = "main_scan"
    TRAVERSAL_NF = "traversal_nf"
    TRAVERSAL_FWD = "traversal_fwd"
    RESCAN = "rescan"


class ZoneConfig(BaseModel):
    """The two measurement apexes and their IP version subdomain labels"""

    model_config = ConfigDict(frozen=True)

    apex_v4only: str = "drakkardnsv4.com"
    apex_v6only: str = "drakkardnsv6.com"
    sub_v4: str = "v4"
    sub_v6: str = "v6"

    @field_validator("apex_v4only", "apex_v6only")
    @classmethod
    def check_apex(cls, value: str) -> str:
        value = value.strip().rstrip(".").lower()
        try:
            name = dns.name.from_text(value)
        except dns.name.NameTooLong as e:
            raise ValueError(f"apex {value!r} too long") from e
        except dns.name.LabelTooLong as e:
            raise ValueError(f"apex {value!r} has a label over 63 chars") from e
        for label in name.labels[:-1]:
            if not LDH_LABEL.match(label.decode("ascii")):
                raise ValueError(f"apex {value!r} has an invalid label")
        return value

    @field_validator("sub_v4", "sub_v6")
    @classmethod
    def check_label(cls, value: str) -> str:
        value = value.strip().lower()
        if not LDH_LABEL.match(value):
            raise ValueError(f"invalid label {value!r}")
        return value

    @model_validator(mode="after")
    def check_distinct(self) -> "ZoneConfig":
        if self.apex_v4only == self.apex_v6only:
            raise ValueError("apexes must differ")
        if self.sub_v4 == self.sub_v6:
            raise ValueError("version labels must differ")
        return self

    def zone_of(self, zone: TransportZone) -> tuple[str, str]:
        """(version label, apex) for a transport zone"""
        if zone is TransportZone.V4_ONLY:
            return self.sub_v4, self.apex_v4only
        if zone is TransportZone.V6_ONLY:
            return self.sub_v6, self.apex_v6only
        if zone is TransportZone.V4_TO_V6:
            return self.sub_v6, self.apex_v4only
        return self.sub_v4, self.apex_v6only

    def transport_of(self, vlabel: str, apex: str) -> Optional[TransportZone]:
        for zone in TransportZone:
            if self.zone_of(zone) == (vlabel, apex):
                return zone
        return None


class ProbeDomain(BaseModel):
    """Fields carried by one measurement query name"""

    model_config = ConfigDict(frozen=True)

    nonce: str
    target: Address
    kind: ProbeKind
    scan_id: int = Field(default=1, ge=1)
    nf: bool = False
    transport_zone: TransportZone = TransportZone.V4_ONLY

    @field_validator("nonce")
    @classmethod
    def check_nonce(cls, value: str) -> str:
        value = value.lower()
        if not NONCE.match(value):
            raise ValueError(f"nonce must be 6 alphanumeric chars, got {value!r}")
        return value

    @model_validator(mode="after")
    def check_family(self) -> "ProbeDomain":
        if self.target.family is not self.transport_zone.target_family:
            raise ValueError(f"{self.transport_zone} needs an IPv{self.transport_zone.target_family.value} target")
        return self


class ProbeSpec(BaseModel):
    """One planned probe packet"""

    model_config = ConfigDict(frozen=True)

    dst: Address
    src: Address
    qname: str
    kind: ProbeKind
    purpose: Purpose = Purpose.MAIN_SCAN


class ScanPlan(BaseModel):
    model_config = ConfigDict(frozen=True)

    probes: tuple[ProbeSpec, ...] = ()
    seed: int = 0
    excluded_count: int = 0

    def __len__(self) -> int:
        return len(self.probes)

    def targets(self) -> list[Address]:
        seen: dict[Address, None] = {}
        for probe in self.probes:
            seen.setdefault(probe.dst)
        return list(seen)
