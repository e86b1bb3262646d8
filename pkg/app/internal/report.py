import logging
from collections import Counter, defaultdict
from pathlib import Path
from typing import Iterable, Mapping, Optional

import numpy as np
import radix
from jinja2 import Environment, FileSystemLoader, StrictUndefined

from app.internal.collector import roles as resolver_roles
from app.internal.netaddr import (
    Address,
    AsGraph,
    BgpTable,
    Family,
    NetworkLevel,
    NetworkUnit,
    Prefix,
    as_size,
    as_stability,
    is_stub,
    peer_count,
)
from app.models.observation import Openness, ResolverObservation, ResolverRole
from app.models.report import (
    ComplexityRow,
    CountryStats,
    GranularityRow,
    PrefixSizeRow,
    RoleCounts,
    SummaryReport,
)
from app.models.verdict import UnitVerdict, VerdictStatus

logger = logging.getLogger(__name__)

QUANTILES = (0.1, 0.25, 0.5, 0.75, 0.9)
VOTES_PER_UNIT = 256
DECIDED = (VerdictStatus.VULNERABLE, VerdictStatus.PARTIAL, VerdictStatus.NON_VULNERABLE)

TEMPLATES = Path(__file__).resolve().parent.parent / "templates"
templates = Environment(
    loader=FileSystemLoader(TEMPLATES),
    undefined=StrictUndefined,
    trim_blocks=True,
    lstrip_blocks=True,
    keep_trailing_newline=True,
)


class GeoDb:
    """Prefix to ISO country code map with longest-match lookup"""

    def __init__(self, entries: Iterable[tuple[Prefix, str]]):
        self._rtree = radix.Radix()
        for prefix, iso2 in sorted(entries):
            iso2 = iso2.strip().upper()
            # Duplicate prefixes keep the lexicographically first country
            node = self._rtree.search_exact(str(prefix))
            if node is None:
                self._rtree.add(str(prefix)).data["iso2"] = iso2
            elif iso2 < node.data["iso2"]:
                node.data["iso2"] = iso2

    def __len__(self) -> int:
        return len(self._rtree.nodes())

    def lookup(self, a: Address) -> Optional[str]:
        node = self._rtree.search_best(str(a))
        return node.data["iso2"] if node else None


def country_of(a: Address, g: GeoDb) -> Optional[str]:
    return g.lookup(a)


def unit_country(unit: NetworkUnit | Prefix, g: GeoDb) -> Optional[str]:
    """Majority country over the unit's addresses; ties go to the lexicographically first code.

    A /24 votes with all its 256 addresses, larger units with 256 evenly spaced ones.
    """
    prefix = unit.key if isinstance(unit, NetworkUnit) else unit
    if not isinstance(prefix, Prefix):
        raise TypeError(f"{unit} is not a prefix unit")
    votes = min(prefix.size, VOTES_PER_UNIT)
    step = prefix.size // votes
    counts = Counter()
    for i in range(votes):
        country = g.lookup(Address(prefix.family, prefix.base.value + i * step))
        if country is not None:
            counts[country] += 1
    if not counts:
        return None
    return min(counts.items(), key=lambda item: (-item[1], item[0]))[0]


def country_fractions(
    verdicts: Iterable[UnitVerdict],
    g: GeoDb,
    all_units: Optional[Iterable[NetworkUnit]] = None,
    resolvers: Iterable[Address] = (),
) -> list[CountryStats]:
    """Per-country share of fully vulnerable units among all units of that country.

    Without an explicit universe only /24 units are counted, since /40 units lack
    a denominator.
    """
    status = {v.unit: v.status for v in verdicts}
    if all_units is None:
        universe = {u for u in status if u.level is NetworkLevel.SLASH24}
    else:
        universe = set(all_units) | {u for u in status if u.level is NetworkLevel.SLASH24}

    stats: dict[str, CountryStats] = {}
    unmapped = 0
    for unit in universe:
        country = unit_country(unit, g)
        if country is None:
            unmapped += 1
            continue
        row = stats.setdefault(country, CountryStats(iso2=country))
        row.total_units += 1
        if status.get(unit) is VerdictStatus.VULNERABLE:
            row.vulnerable_units += 1
        elif status.get(unit) is VerdictStatus.PARTIAL:
            row.partial_units += 1

    for addr in set(resolvers):
        country = g.lookup(addr)
        if country is not None:
            stats.setdefault(country, CountryStats(iso2=country)).resolvers += 1

    for row in stats.values():
        if row.total_units:
            row.fraction = 100.0 * row.vulnerable_units / row.total_units
    if unmapped:
        logger.info("%d units without a country", unmapped)
    return sorted(stats.values(), key=lambda s: s.iso2)


def top_countries(stats: Iterable[CountryStats], key: str = "fraction", n: int = 10) -> list[CountryStats]:
    if key not in ("resolvers", "vulnerable_units", "fraction"):
        raise ValueError(f"cannot rank countries by {key!r}")
    return sorted(stats, key=lambda s: (-getattr(s, key), s.iso2))[:n]


def _role_counts(
    observations: Iterable[ResolverObservation], open_map: Mapping[Address, Openness]
) -> list[RoleCounts]:
    main = [o for o in observations if not o.transport_zone.is_traversal]
    rows = {family: RoleCounts(family=family.value) for family in Family}
    for target, role in resolver_roles(main).items():
        row = rows[target.family]
        is_open = open_map.get(target) is Openness.OPEN
        if role is ResolverRole.FORWARDER:
            if is_open:
                row.forwarders_open += 1
            else:
                row.forwarders_closed += 1
        elif is_open:
            row.non_forwarders_open += 1
        else:
            row.non_forwarders_closed += 1
    return [rows[Family.V4], rows[Family.V6]]


def _granularity(level: str, stage: str, verdicts: Iterable[UnitVerdict]) -> GranularityRow:
    counts = Counter(v.status for v in verdicts)
    row = GranularityRow(
        level=level,
        stage=stage,
        vulnerable=counts[VerdictStatus.VULNERABLE],
        partial=counts[VerdictStatus.PARTIAL],
        non_vulnerable=counts[VerdictStatus.NON_VULNERABLE],
    )
    if row.total:
        row.pct_vulnerable = round(100.0 * row.vulnerable / row.total, 2)
        row.pct_partial = round(100.0 * row.partial / row.total, 2)
        row.pct_non_vulnerable = round(100.0 * row.non_vulnerable / row.total, 2)
    return row


def summary_tables(
    before: Mapping[str, Iterable[UnitVerdict]],
    after: Optional[Mapping[str, Iterable[UnitVerdict]]] = None,
    observations: Iterable[ResolverObservation] = (),
    open_map: Optional[Mapping[Address, Openness]] = None,
) -> SummaryReport:
    """Resolver composition per family and verdict split per level, before and after rescan"""
    report = SummaryReport(roles=_role_counts(observations, open_map or {}))
    for level in NetworkLevel:
        if level in before:
            report.granularity.append(_granularity(level, "before", before[level]))
        if after and level in after:
            report.granularity.append(_granularity(level, "after", after[level]))
    return report


def cohort_breakdown(verdicts: Iterable[UnitVerdict], asn_set: Iterable[int]) -> dict[VerdictStatus, int]:
    status = {v.unit.key: v.status for v in verdicts if v.unit.level is NetworkLevel.ASN}
    counts = Counter(status.get(asn, VerdictStatus.NO_DATA) for asn in set(asn_set))
    return {s: counts.get(s, 0) for s in VerdictStatus}


def _points(values: list[float]) -> list[tuple[float, float]]:
    if not values:
        return []
    return [(q, float(v)) for q, v in zip(QUANTILES, np.quantile(np.asarray(values, dtype=float), QUANTILES))]


def complexity_summary(
    verdicts: Iterable[UnitVerdict], snapshots: list[BgpTable], g: AsGraph
) -> list[ComplexityRow]:
    """Peering, stub share, prefix stability and size of the ASes in each verdict class"""
    if not snapshots:
        raise ValueError("complexity summary needs at least one routing table")
    latest = snapshots[-1]
    by_status: dict[VerdictStatus, list[int]] = defaultdict(list)
    for v in verdicts:
        if v.unit.level is NetworkLevel.ASN and v.status in DECIDED:
            by_status[v.status].append(v.unit.key)

    rows = []
    for status in DECIDED:
        asns = sorted(by_status.get(status, ()))
        if not asns:
            continue
        stability = []
        if len(snapshots) >= 2:
            for asn in asns:
                if any(t.prefixes_of(asn) for t in snapshots):
                    stability.append(as_stability(snapshots, asn))
        rows.append(
            ComplexityRow(
                status=status,
                ases=len(asns),
                mean_peers=float(np.mean([peer_count(g, a) for a in asns])),
                stub_fraction=sum(is_stub(g, a) for a in asns) / len(asns),
                mean_stability=float(np.mean(stability)) if stability else None,
                size_points=_points([as_size(latest, a) for a in asns]),
            )
        )
    return rows


def prefix_size_summary(verdicts: Iterable[UnitVerdict]) -> list[PrefixSizeRow]:
    lengths: dict[VerdictStatus, list[int]] = defaultdict(list)
    for v in verdicts:
        if v.unit.level is NetworkLevel.BGP_PREFIX and v.status in DECIDED:
            lengths[v.status].append(v.unit.key.length)
    return [
        PrefixSizeRow(status=status, prefixes=len(lengths[status]), length_points=_points(lengths[status]))
        for status in DECIDED
        if lengths.get(status)
    ]


def render_text(template: str, **context) -> str:
    """Aligned plain-text rendering of a report"""
    return templates.get_template(f"{template}.txt.j2").render(**context)
