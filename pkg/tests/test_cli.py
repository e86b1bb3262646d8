import csv
import io

from app.cli import main
from app.internal import simnet
from app.internal.parser import write_observations
from app.models.observation import ResolverObservation, ResolverRole
from app.models.probe import ProbeKind, TransportZone
from conftest import addr


def rows(path):
    with open(path, newline="") as f:
        return list(csv.reader(f))[1:]


def test_cli_pipeline_matches_truth(tmp_path, capsys):
    topo = tmp_path / "topo.txt"
    assert main(["topology", "--seed", "3", "--networks", "8", "--min-resolvers", "1", "--v6-fraction", "0", "--out", str(topo)]) == 0

    table = simnet.parse_topology(io.StringIO(topo.read_text())).bgp_table()
    bgp = tmp_path / "bgp.txt"
    bgp.write_text("".join(f"{prefix}\t{asn}\n" for prefix, asn in table))
    exclude = tmp_path / "exclude.txt"
    exclude.write_text(f"{simnet.UPSTREAM_V4}\n")

    plan, auth, resp = tmp_path / "plan.tsv", tmp_path / "auth.csv", tmp_path / "resp.csv"
    obs, verdicts, truth = tmp_path / "obs.csv", tmp_path / "verdicts.csv", tmp_path / "truth.csv"
    assert main(["plan", "v4", "--bgp", str(bgp), "--exclude", str(exclude), "--seed", "3", "--out", str(plan)]) == 0
    assert main(["simulate", "--topo", str(topo), "--plan", str(plan), "--out-auth", str(auth), "--out-resp", str(resp)]) == 0
    ms = tmp_path / "measurements.csv"
    assert main(["ingest", "--auth", str(auth), "--resp", str(resp), "--measurements", str(ms), "--out", str(obs)]) == 0
    summary = capsys.readouterr().out
    assert summary.startswith("records=") and " answered=" in summary and " open=" in summary
    assert main(["infer", "--obs", str(obs), "--resp", str(resp), "--level", "slash24", "--out", str(verdicts)]) == 0
    assert main(["truth", "--topo", str(topo), "--level", "slash24", "--out", str(truth)]) == 0
    joined = tmp_path / "verdicts_from_measurements.csv"
    assert main(["infer", "--measurements", str(ms), "--level", "slash24", "--out", str(joined)]) == 0
    assert joined.read_text() == verdicts.read_text()

    inferred = {(level, key, status) for level, key, status, _, _ in rows(verdicts)}
    expected = {tuple(row) for row in rows(truth) if row[2] != "no_data"}
    assert inferred == expected


def test_cli_reports_errors(tmp_path, capsys):
    empty = tmp_path / "empty.txt"
    empty.write_text("# nothing here\n")
    assert main(["plan", "v4", "--bgp", str(empty)]) == 2
    assert "no valid entries" in capsys.readouterr().err
    assert main(["plan", "v4"]) == 2
    assert main(["infer", "--obs", str(tmp_path / "missing.csv"), "--level", "asn"]) == 1


def observation(target, src=None, kind=ProbeKind.SPOOFED, zone=TransportZone.V4_ONLY, nf=False):
    return ResolverObservation(
        target=addr(target),
        observed_src=addr(src or target),
        role=ResolverRole.NON_FORWARDER if src is None else ResolverRole.FORWARDER,
        kind=kind,
        scan_id=1,
        transport_zone=zone,
        nf_flag=nf,
    )


def write_obs(path, observations):
    with open(path, "w", newline="") as f:
        write_observations(f, observations)


def test_cli_routing_level_needs_bgp(tmp_path, capsys):
    obs = tmp_path / "obs.csv"
    write_obs(obs, [observation("1.2.3.4")])
    for level in ("asn", "bgp_prefix"):
        assert main(["infer", "--obs", str(obs), "--level", level]) == 2
        assert "needs --bgp" in capsys.readouterr().err

    verdicts = tmp_path / "verdicts.csv"
    assert main(["infer", "--obs", str(obs), "--level", "slash24", "--out", str(verdicts)]) == 0
    assert main(["merge", "--verdicts", str(verdicts), "--rescan-obs", str(obs), "--level", "asn"]) == 2

    bgp = tmp_path / "bgp.txt"
    bgp.write_text("1.2.0.0/16\t64500\n")
    assert main(["infer", "--obs", str(obs), "--level", "asn", "--bgp", str(bgp), "--out", str(verdicts)]) == 0
    assert rows(verdicts) == [["asn", "64500", "vulnerable", "1", "none"]]


def test_cli_prefix_and_family_reports(tmp_path, capsys):
    obs, resp, bgp = tmp_path / "obs.csv", tmp_path / "resp.csv", tmp_path / "bgp.txt"
    write_obs(obs, [observation("1.2.3.4"), observation("5.6.7.8", kind=ProbeKind.UNSPOOFED)])
    resp.write_text("1,5.6.7.8,5.6.7.8,NOERROR,true\n")
    bgp.write_text("1.2.0.0/16\t64500\n5.6.7.0/24\t64501\n")
    by_prefix, by_asn = tmp_path / "prefix.csv", tmp_path / "asn.csv"
    measured = ["infer", "--obs", str(obs), "--resp", str(resp), "--bgp", str(bgp)]
    assert main(measured + ["--level", "bgp_prefix", "--out", str(by_prefix)]) == 0
    assert main(measured + ["--level", "asn", "--out", str(by_asn)]) == 0
    assert rows(by_asn) == [["asn", "64500", "vulnerable", "1", "none"], ["asn", "64501", "non_vulnerable", "1", "none"]]
    capsys.readouterr()

    assert main(["report", "prefixes", "--in", str(by_prefix)]) == 0
    assert "p50=/16" in capsys.readouterr().out

    assert main(["report", "families", "--in", str(by_asn)]) == 2
    assert "needs --v6" in capsys.readouterr().err
    assert main(["report", "families", "--in", str(by_asn), "--v6", str(by_asn)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "ASes decided over both families: 2"
    assert [line.split()[-1] for line in lines[1:]] == ["1", "1", "0", "0"]


def test_cli_pairs_compare_both_addresses(tmp_path, capsys):
    traversal, main_obs, evidence = tmp_path / "traversal.csv", tmp_path / "main.csv", tmp_path / "evidence.txt"
    write_obs(traversal, [observation("1.2.3.4", src="2001:db8::4", zone=TransportZone.V4_TO_V6, nf=True)])
    write_obs(main_obs, [observation("1.2.3.4"), observation("2001:db8::4", zone=TransportZone.V6_ONLY)])
    evidence.write_text(
        "1.2.3.4 ssh software=OpenSSH_8.2 hostkey=AA:BB\n2001:db8::4 ssh software=OpenSSH_8.2 hostkey=AA:BB\n"
    )
    pairs = tmp_path / "pairs.csv"
    args = ["pairs", "--obs", str(traversal), "--evidence", str(evidence), "--main-obs", str(main_obs)]
    assert main(args + ["--out", str(pairs)]) == 0
    assert rows(pairs) == [["1.2.3.4", "2001:db8::4", "v4_to_v6", "true", "ssh"]]
    out = capsys.readouterr().out
    assert "candidates=1 confirmed=1" in out
    assert "Confirmed pairs measured on both sides: 1" in out
