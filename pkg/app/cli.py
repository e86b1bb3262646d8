"""savscan command line: plan, simulate, ingest, infer and report"""

import argparse
import contextlib
import logging
import sys
from typing import Iterator, TextIO

from app.config import settings
from app.internal import codec, collector, inference, planner, report, simnet
from app.internal.errors import SavScanError
from app.internal.netaddr import (
    FIXED_LENGTHS,
    NetworkLevel,
    parse_as_relationships,
    parse_bgp_table,
    read_address_list,
    read_prefix_list,
)
from app.internal.parser import (
    dataset_parser,
    write_auth_log,
    write_measurements,
    write_observations,
    write_responses,
    write_rows,
    write_verdicts,
)
from app.models.verdict import VerdictStatus

logger = logging.getLogger(__name__)


@contextlib.contextmanager
def _open(path: str, mode: str = "r") -> Iterator[TextIO]:
    if path == "-":
        yield sys.stdin if "r" in mode else sys.stdout
        return
    with open(path, mode, newline="" if "w" in mode else None) as f:
        yield f


def _read(path: str, reader):
    with _open(path) as f:
        return reader(f)


def _zones(args):
    if getattr(args, "zones", None):
        return _read(args.zones, codec.load_zone_config)
    return codec.default_zones()


def _table(path):
    return _read(path, parse_bgp_table) if path else None


def _level_table(args):
    if NetworkLevel(args.level) not in FIXED_LENGTHS and not args.bgp:
        raise SavScanError(f"{args.command} --level {args.level} needs --bgp")
    return _table(args.bgp)


def _prefixes(path):
    return _read(path, read_prefix_list) if path else []


def _verdicts(path):
    return _read(path, dataset_parser.parse_verdicts).items


def _write_plan(args, plan):
    with _open(args.out, "w") as f:
        f.write(planner.serialize_plan(plan))
    logger.info("Wrote %d probes to %s", len(plan), args.out)


def cmd_plan(args):
    options = {"zones": _zones(args)}
    if args.mode == "v4":
        if not args.bgp:
            raise SavScanError("plan v4 needs --bgp")
        plan = planner.plan_ipv4(_table(args.bgp), _prefixes(args.exclude), args.seed, **options)
    elif args.mode == "v6":
        hitlist = _read(args.hitlist, read_address_list)
        plan = planner.plan_ipv6(hitlist, _prefixes(args.aliased), _prefixes(args.exclude), args.seed, **options)
    elif args.mode == "traversal":
        observations = _read(args.obs, dataset_parser.parse_observations).items
        main = [o for o in observations if not o.transport_zone.is_traversal]
        plan = planner.plan_traversal(collector.roles(main).items(), args.seed, **options)
    elif args.mode == "targets":
        targets = _read(args.targets, read_address_list)
        plan = planner.Planner(**options).plan_targets(targets, args.seed, _prefixes(args.exclude))
    else:
        partial = [v.unit for v in _verdicts(args.verdicts) if v.status is VerdictStatus.PARTIAL]
        prior = _read(args.prior, planner.parse_plan).targets() if args.prior else []
        plan = planner.plan_rescan(partial, prior, args.seed, exclusions=_prefixes(args.exclude), **options)
    _write_plan(args, plan)


def cmd_topology(args):
    knobs = simnet.TopologyKnobs(
        min_resolvers=args.min_resolvers,
        max_resolvers=args.max_resolvers,
        p_open=args.p_open,
        p_inbound_sav=args.p_inbound_sav,
        p_outbound_sav=args.p_outbound_sav,
        p_forwarder=args.p_forwarder,
        v6_fraction=args.v6_fraction,
        loss_probability=args.loss,
    )
    topo = simnet.random_topology(args.seed, args.networks, knobs)
    with _open(args.out, "w") as f:
        f.write(simnet.serialize_topology(topo))


def _load_topology(args):
    if args.topo:
        return _read(args.topo, simnet.parse_topology)
    return simnet.random_topology(args.random, args.networks)


def cmd_simulate(args):
    topo = _load_topology(args)
    plan = _read(args.plan, planner.parse_plan)
    auth, responses = simnet.simulate(topo, plan)
    with _open(args.out_auth, "w") as f:
        write_auth_log(f, auth)
    with _open(args.out_resp, "w") as f:
        write_responses(f, responses)


def cmd_truth(args):
    truth = simnet.ground_truth(_load_topology(args), args.level)
    rows = sorted(truth.verdicts.items(), key=lambda item: item[0].sort_key())
    with _open(args.out, "w") as f:
        write_rows(f, ["level", "key", "status"], ([u.level, u.key, s] for u, s in rows))


def cmd_ingest(args):
    stats = collector.IngestStats()
    auth = _read(args.auth, dataset_parser.parse_auth_log).items
    unique = collector.dedup(auth, stats)
    observations = collector.classify(unique, _zones(args), stats)
    with _open(args.out, "w") as f:
        write_observations(f, observations)
    summary = (
        f"records={stats.records} unique={len(unique)} "
        f"retained={collector.dedup_ratio(stats.records, len(unique)):.2f}% "
        f"observations={stats.classified} non_a={stats.non_a} foreign={stats.foreign} "
        f"malformed={stats.malformed}"
    )
    if args.resp or args.measurements:
        responses = _read(args.resp, dataset_parser.parse_responses).items if args.resp else []
        open_map = collector.openness(observations, responses, stats)
        summary += f" responses={stats.responses} answered={stats.answered} open={stats.open}"
        if args.measurements:
            with _open(args.measurements, "w") as f:
                write_measurements(f, inference.measurements(observations, open_map))
    print(summary)


def _measurements(obs_path, resp_path):
    observations = _read(obs_path, dataset_parser.parse_observations).items
    responses = _read(resp_path, dataset_parser.parse_responses).items if resp_path else []
    return inference.measurements(observations, collector.openness(observations, responses))


def cmd_infer(args):
    if args.measurements:
        ms = _read(args.measurements, dataset_parser.parse_measurements).items
    else:
        ms = _measurements(args.obs, args.resp)
    verdicts = inference.infer(ms, args.level, _level_table(args))
    with _open(args.out, "w") as f:
        write_verdicts(f, verdicts)
    if args.store:
        from sqlmodel import Session

        from app.database import create_db_and_tables, engine
        from app.internal.runs import run_service

        create_db_and_tables()
        with Session(engine) as session:
            run = run_service.store_verdicts(session, args.store, args.level, verdicts)
        print(f"stored run {run.id}")
    histogram = inference.verdict_histogram(verdicts)
    print(" ".join(f"{status}={count}" for status, count in histogram.items()))


def cmd_merge(args):
    before = _verdicts(args.verdicts)
    rescan = _measurements(args.rescan_obs, args.rescan_resp)
    merged = inference.merge_rescan(before, rescan, args.level, _level_table(args))
    with _open(args.out, "w") as f:
        write_verdicts(f, merged)


def cmd_outbound(args):
    table = _table(args.bgp)
    rows = _read(args.spoofer, dataset_parser.parse_spoofer) if args.spoofer else []
    pairs = []
    if args.resp:
        responses = _read(args.resp, dataset_parser.parse_responses).items
        pairs = collector.misconfigured_forwarders(responses, table)
    evidence = inference.outbound_evidence(rows, pairs, table, attribute_to=args.attribute_to)
    with _open(args.out, "w") as f:
        write_rows(f, ["level", "key", "source", "verdict"], ([e.unit.level, e.unit.key, e.source, e.verdict] for e in evidence))
    if args.verdicts:
        matrix = inference.direction_matrix(_verdicts(args.verdicts), evidence)
        print(
            f"overlap={matrix.overlap} in_vuln_out_vuln={matrix.in_vuln_out_vuln} "
            f"in_vuln_out_ok={matrix.in_vuln_out_ok} in_ok_out_vuln={matrix.in_ok_out_vuln} "
            f"in_ok_out_ok={matrix.in_ok_out_ok}"
        )


def cmd_pairs(args):
    observations = _read(args.obs, dataset_parser.parse_observations).items
    pairs = inference.dual_stack_candidates(observations)
    evidence = _read(args.evidence, dataset_parser.parse_evidence).items if args.evidence else []
    pairs = [inference.match_fingerprints(p, evidence) for p in pairs]
    with _open(args.out, "w") as f:
        write_rows(
            f,
            ["v4", "v6", "discovered_via", "confirmed", "matched_protocols"],
            (
                [p.v4, p.v6, p.discovered_via, str(p.confirmed).lower(), "|".join(sorted(p.matched_protocols))]
                for p in pairs
            ),
        )
    if args.hitlist_out:
        with _open(args.hitlist_out, "w") as f:
            f.writelines(f"{a}\n" for a in inference.traversal_addresses(observations))
    table = inference.fingerprint_table(pairs, evidence)
    print(f"candidates={table.candidates} confirmed={table.confirmed}")
    if args.main_obs:
        policies = inference.dual_stack_policies(pairs, _measurements(args.main_obs, args.resp))
        title = "Confirmed pairs measured on both sides"
        sys.stdout.write(report.render_text("agreement", title=title, total=policies.pairs, result=policies))


REPORT_NEEDS = {
    "fractions": ("geo",),
    "cohort": ("asns",),
    "complexity": ("bgp", "rel"),
    "families": ("v6",),
}


def cmd_report(args):
    missing = [f"--{name}" for name in REPORT_NEEDS.get(args.kind, ()) if not getattr(args, name)]
    if missing:
        raise SavScanError(f"report {args.kind} needs {' and '.join(missing)}")
    if args.kind == "fractions":
        geo = report.GeoDb(_read(args.geo, dataset_parser.parse_geo).items)
        universe = None
        if args.universe:
            universe = [u for p in _prefixes(args.universe) for u in inference.units_of_prefix(p)]
        resolvers = _read(args.resolvers, read_address_list) if args.resolvers else []
        stats = report.country_fractions(_verdicts(args.input), geo, universe, resolvers)
        if args.top:
            stats = report.top_countries(stats, args.rank, args.top)
        if args.csv:
            with _open(args.csv, "w") as f:
                write_rows(
                    f,
                    ["iso2", "resolvers", "vulnerable_units", "partial_units", "total_units", "fraction"],
                    ([s.iso2, s.resolvers, s.vulnerable_units, s.partial_units, s.total_units, f"{s.fraction:.2f}"] for s in stats),
                )
        sys.stdout.write(report.render_text("fractions", rows=stats))
    elif args.kind == "summary":
        before = {}
        for path in args.input:
            for v in _verdicts(path):
                before.setdefault(v.unit.level, []).append(v)
        after = {}
        for path in args.after or []:
            for v in _verdicts(path):
                after.setdefault(v.unit.level, []).append(v)
        observations = _read(args.obs, dataset_parser.parse_observations).items if args.obs else []
        responses = _read(args.resp, dataset_parser.parse_responses).items if args.resp else []
        summary = report.summary_tables(before, after, observations, collector.openness(observations, responses))
        sys.stdout.write(report.render_text("summary", report=summary))
    elif args.kind == "cohort":
        asns = _read(args.asns, dataset_parser.parse_asn_list)
        verdicts = [v for path in args.input for v in _verdicts(path)]
        counts = report.cohort_breakdown(verdicts, asns)
        sys.stdout.write(report.render_text("cohort", name=args.name, size=len(asns), counts=counts))
    elif args.kind == "prefixes":
        verdicts = [v for path in args.input for v in _verdicts(path)]
        sys.stdout.write(report.render_text("prefixes", rows=report.prefix_size_summary(verdicts)))
    elif args.kind == "families":
        v4 = [v for path in args.input for v in _verdicts(path)]
        v6 = [v for path in args.v6 for v in _verdicts(path)]
        result = inference.as_family_comparison(v4, v6)
        title = "ASes decided over both families"
        sys.stdout.write(report.render_text("agreement", title=title, total=result.both, result=result))
    else:
        verdicts = [v for path in args.input for v in _verdicts(path)]
        snapshots = [_read(path, parse_bgp_table) for path in args.bgp]
        graph = _read(args.rel, parse_as_relationships)
        rows = report.complexity_summary(verdicts, snapshots, graph)
        sys.stdout.write(report.render_text("complexity", rows=rows))


def cmd_serve(args):
    import uvicorn

    uvicorn.run("app.main:app", host=args.host, port=args.port)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="savscan", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")
    sub = parser.add_subparsers(dest="command", required=True)
    levels = [level.value for level in NetworkLevel]

    p = sub.add_parser("plan", help="Build a scan plan")
    p.add_argument("mode", choices=["v4", "v6", "traversal", "rescan", "targets"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--zones", help="key=value zone configuration")
    p.add_argument("--bgp", help="Routing table (v4)")
    p.add_argument("--hitlist", help="IPv6 hitlist (v6)")
    p.add_argument("--aliased", help="Aliased IPv6 prefixes (v6)")
    p.add_argument("--exclude", help="Prefixes never to probe")
    p.add_argument("--obs", help="Main scan observations (traversal)")
    p.add_argument("--verdicts", help="Verdicts with partial units (rescan)")
    p.add_argument("--prior", help="Prior plan, for /40 rescans")
    p.add_argument("--targets", help="Explicit target addresses (targets)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("topology", help="Write a random simulated topology")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--networks", type=int, default=20)
    p.add_argument("--min-resolvers", type=int, default=0)
    p.add_argument("--max-resolvers", type=int, default=4)
    p.add_argument("--p-open", type=float, default=0.4)
    p.add_argument("--p-inbound-sav", type=float, default=0.3)
    p.add_argument("--p-outbound-sav", type=float, default=0.3)
    p.add_argument("--p-forwarder", type=float, default=0.4)
    p.add_argument("--v6-fraction", type=float, default=0.3)
    p.add_argument("--loss", type=float, default=0.0)
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_topology)

    for name, func, help_text in (
        ("simulate", cmd_simulate, "Run a plan against a topology"),
        ("truth", cmd_truth, "Expected verdicts of a topology"),
    ):
        p = sub.add_parser(name, help=help_text)
        source = p.add_mutually_exclusive_group(required=True)
        source.add_argument("--topo", help="Topology file")
        source.add_argument("--random", type=int, metavar="SEED", help="Random topology seed")
        p.add_argument("--networks", type=int, default=20)
        p.set_defaults(func=func)
    simulate = sub.choices["simulate"]
    simulate.add_argument("--plan", required=True)
    simulate.add_argument("--out-auth", required=True)
    simulate.add_argument("--out-resp", required=True)
    truth = sub.choices["truth"]
    truth.add_argument("--level", choices=levels, required=True)
    truth.add_argument("--out", default="-")

    p = sub.add_parser("ingest", help="Deduplicate and classify authoritative logs")
    p.add_argument("--auth", required=True)
    p.add_argument("--resp", help="Scanner responses, joined for open/answered state")
    p.add_argument("--zones")
    p.add_argument("--measurements", help="Also write per-resolver measurements")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("infer", help="Per-unit inbound SAV verdicts")
    source = p.add_mutually_exclusive_group(required=True)
    source.add_argument("--obs")
    source.add_argument("--measurements", help="Measurements written by ingest")
    p.add_argument("--resp")
    p.add_argument("--level", choices=levels, required=True)
    p.add_argument("--bgp")
    p.add_argument("--store", metavar="NAME", help="Also store the run in the database")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("merge", help="Merge rescan results into verdicts")
    p.add_argument("--verdicts", required=True)
    p.add_argument("--rescan-obs", required=True)
    p.add_argument("--rescan-resp")
    p.add_argument("--level", choices=levels, required=True)
    p.add_argument("--bgp")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_merge)

    p = sub.add_parser("outbound", help="Outbound SAV evidence")
    p.add_argument("--spoofer")
    p.add_argument("--resp")
    p.add_argument("--bgp", required=True)
    p.add_argument("--attribute-to", choices=["responder", "probed"], default="responder")
    p.add_argument("--verdicts", help="Inbound verdicts for the direction matrix")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_outbound)

    p = sub.add_parser("pairs", help="Dual-stack candidates and fingerprint matching")
    p.add_argument("--obs", required=True)
    p.add_argument("--evidence")
    p.add_argument("--hitlist-out", help="Write addresses revealed through forwarders")
    p.add_argument("--main-obs", help="Main scan observations, to compare the inbound SAV of both addresses")
    p.add_argument("--resp", help="Main scan responses (with --main-obs)")
    p.add_argument("--out", default="-")
    p.set_defaults(func=cmd_pairs)

    p = sub.add_parser("report", help="Aggregate reports")
    p.add_argument("kind", choices=["fractions", "summary", "cohort", "complexity", "prefixes", "families"])
    p.add_argument("--in", dest="input", nargs="+", required=True, help="Verdict CSV files")
    p.add_argument("--after", nargs="+", help="Verdicts after rescan (summary)")
    p.add_argument("--v6", nargs="+", help="IPv6 ASN verdicts, compared with --in (families)")
    p.add_argument("--obs")
    p.add_argument("--resp")
    p.add_argument("--geo", help="prefix,iso2 CSV (fractions)")
    p.add_argument("--universe", help="All /24 or /40 units (fractions)")
    p.add_argument("--resolvers", help="Resolver addresses (fractions)")
    p.add_argument("--top", type=int, default=0)
    p.add_argument("--rank", choices=["resolvers", "vulnerable_units", "fraction"], default="fraction")
    p.add_argument("--csv", help="Also write CSV")
    p.add_argument("--asns", help="Cohort ASN list")
    p.add_argument("--name", default="cohort")
    p.add_argument("--bgp", nargs="+", help="Routing table snapshots, oldest first (complexity)")
    p.add_argument("--rel", help="AS relationships (complexity)")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("serve", help="Run the analysis API")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.DEBUG if args.verbose else getattr(logging, settings.log_level.upper(), logging.INFO)
    logging.basicConfig(format="%(asctime)s %(levelname)s %(message)s", level=level, datefmt="%Y-%m-%d %H:%M:%S")
    try:
        args.func(args)
    except SavScanError as e:
        print(f"savscan: {e}", file=sys.stderr)
        return 2
    except OSError as e:
        print(f"savscan: {e}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
