from enum import StrEnum
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

from app.internal.netaddr import Address, BgpTable, NetworkUnit, Prefix
from app.models.observation import Openness, ResolverRole
from app.models.verdict import Outcome, VerdictStatus


class ResolverBehavior(StrEnum):
    RECURSIVE = "recursive"
    FORWARDER_CLEAN = "forwarder_clean"
    FORWARDER_NO_REWRITE = "forwarder_noRewrite"

    @property
    def is_forwarder(self) -> bool:
        return self is not ResolverBehavior.RECURSIVE


class SimResolver(BaseModel):
    model_config = ConfigDict(frozen=True)

    addr: Address
    open: bool
    acl: tuple[Prefix, ...] = ()
    behavior: ResolverBehavior = ResolverBehavior.RECURSIVE
    upstream: Optional[Address] = None
    # Source seen by other-family nameservers; the upstream's when forwarding
    sibling: Optional[Address] = None

    @model_validator(mode="after")
    def check_upstream(self) -> "SimResolver":
        if self.behavior.is_forwarder and self.upstream is None:
            raise ValueError(f"forwarder {self.addr} needs an upstream")
        if not self.behavior.is_forwarder and self.upstream is not None:
            raise ValueError(f"recursive resolver {self.addr} has an upstream")
        if self.sibling is not None and self.sibling.family is self.addr.family:
            raise ValueError(f"sibling {self.sibling} of {self.addr} must be in the other family")
        return self

    def accepts(self, src: Address) -> bool:
        return self.open or any(p.contains(src) for p in self.acl)

    def egress(self, traversal: bool = False) -> Optional[Address]:
        """Source of the query reaching our nameservers; None when the other family is unreachable"""
        if traversal:
            return self.sibling
        return self.upstream if self.behavior.is_forwarder else self.addr


class SimNetwork(BaseModel):
    model_config = ConfigDict(frozen=True)

    prefix: Prefix
    asn: int = Field(ge=1)
    inbound_sav: bool = False
    outbound_sav: bool = False
    resolvers: tuple[SimResolver, ...] = ()

    @model_validator(mode="after")
    def check_resolvers(self) -> "SimNetwork":
        for resolver in self.resolvers:
            if not self.prefix.contains(resolver.addr):
                raise ValueError(f"resolver {resolver.addr} outside {self.prefix}")
        if len({r.addr for r in self.resolvers}) != len(self.resolvers):
            raise ValueError(f"duplicate resolver address in {self.prefix}")
        return self

    def leaves(self, src: Address) -> bool:
        """Whether a packet with this source may exit the network"""
        return not self.outbound_sav or self.prefix.contains(src)


class SimTopology(BaseModel):
    model_config = ConfigDict(frozen=True)

    networks: tuple[SimNetwork, ...] = ()
    # Routes outside the simulated networks, e.g. upstream resolver space
    external_routes: tuple[tuple[Prefix, int], ...] = ()
    loss_probability: float = Field(default=0.0, ge=0.0, le=1.0)
    seed: int = 0

    @model_validator(mode="after")
    def check_disjoint(self) -> "SimTopology":
        ordered = sorted(self.networks, key=lambda n: n.prefix)
        for a, b in zip(ordered, ordered[1:]):
            if a.prefix.covers(b.prefix) or b.prefix.covers(a.prefix):
                raise ValueError(f"networks {a.prefix} and {b.prefix} overlap")
        return self

    def bgp_table(self) -> BgpTable:
        return BgpTable([(n.prefix, n.asn) for n in self.networks] + list(self.external_routes))

    def resolvers(self) -> list[tuple[SimNetwork, SimResolver]]:
        return [(n, r) for n in self.networks for r in n.resolvers]


class ResolverTruth(BaseModel):
    """What a zero-loss scan should reveal about one resolver"""

    model_config = ConfigDict(frozen=True)

    addr: Address
    outcome: Optional[Outcome] = None
    role: Optional[ResolverRole] = None
    openness: Openness = Openness.CLOSED


class GroundTruth(BaseModel):
    model_config = ConfigDict(frozen=True)

    level: str
    verdicts: dict[NetworkUnit, VerdictStatus] = Field(default_factory=dict)
    resolvers: dict[Address, ResolverTruth] = Field(default_factory=dict)

    def observed(self) -> dict[NetworkUnit, VerdictStatus]:
        return {u: s for u, s in self.verdicts.items() if s is not VerdictStatus.NO_DATA}
