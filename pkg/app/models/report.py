from typing import Optional

from pydantic import BaseModel, Field, model_validator

from app.models.verdict import VerdictStatus


class CountryStats(BaseModel):
    iso2: str
    resolvers: int = 0
    vulnerable_units: int = 0
    partial_units: int = 0
    total_units: int = 0
    fraction: float = 0.0

    @model_validator(mode="after")
    def check_counts(self) -> "CountryStats":
        if self.vulnerable_units > self.total_units:
            raise ValueError("more vulnerable units than units")
        return self


class RoleCounts(BaseModel):
    """Resolvers of one address family by role and openness"""

    family: int
    forwarders_open: int = 0
    forwarders_closed: int = 0
    non_forwarders_open: int = 0
    non_forwarders_closed: int = 0

    @property
    def forwarders(self) -> int:
        return self.forwarders_open + self.forwarders_closed

    @property
    def non_forwarders(self) -> int:
        return self.non_forwarders_open + self.non_forwarders_closed

    @property
    def closed(self) -> int:
        return self.forwarders_closed + self.non_forwarders_closed

    @property
    def total(self) -> int:
        return self.forwarders + self.non_forwarders


class GranularityRow(BaseModel):
    """Verdict split for one level before or after the rescan"""

    level: str
    stage: str
    vulnerable: int = 0
    partial: int = 0
    non_vulnerable: int = 0
    pct_vulnerable: float = 0.0
    pct_partial: float = 0.0
    pct_non_vulnerable: float = 0.0

    @property
    def total(self) -> int:
        return self.vulnerable + self.partial + self.non_vulnerable


class SummaryReport(BaseModel):
    roles: list[RoleCounts] = Field(default_factory=list)
    granularity: list[GranularityRow] = Field(default_factory=list)


class ComplexityRow(BaseModel):
    status: VerdictStatus
    ases: int
    mean_peers: float
    stub_fraction: float
    mean_stability: Optional[float] = None
    # (quantile, unique IPv4 addresses) sample points
    size_points: list[tuple[float, float]] = Field(default_factory=list)


class PrefixSizeRow(BaseModel):
    status: VerdictStatus
    prefixes: int
    length_points: list[tuple[float, float]] = Field(default_factory=list)
