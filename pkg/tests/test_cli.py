from __future__ import annotations

import json
from pathlib import Path

import pytest

from tracehound.cli import main

GOLDEN = Path(__file__).parent / "golden"


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


def test_evidence_matches_golden(corpus, capsys):
    code, out, _ = run(
        capsys, "evidence", "--config", str(corpus.config),
        "--slice", "378s--391s.pcap", "--victim", "10.0.0.7", "--l4", "udp",
    )
    assert code == 0
    assert out == (GOLDEN / "evidence_378s--391s.txt").read_text()


def test_run_matches_manifest(corpus, capsys, tmp_path):
    code, out, _ = run(capsys, "run", "--config", str(corpus.config), "--backend", "local",
                       "--out-dir", str(tmp_path / "o"))
    assert code == 0
    lines = out.splitlines()
    assert len(lines) == 1 + 9 + 1
    manifest = [json.loads(x)["label"] for x in corpus.manifest.read_text().splitlines()]
    for line, label in zip(lines[1:10], manifest):
        assert line.count(label) == 2, line  # GT and Pred columns
        assert "  Y  " in line
    assert lines[-1] == "9 incidents, 0 suppressed, 9 backend calls"


def test_triage_subcommand(corpus, capsys, tmp_path):
    code, out, _ = run(capsys, "triage", "--config", str(corpus.config), "--slice", "168s--181s.pcap")
    assert code == 0
    assert json.loads(out)["dominant_l4"] == "TCP"
    samples = tmp_path / "s.jsonl"
    samples.write_text(json.dumps(
        {"ts_s": 0, "src_ip": "1.1.1.1", "dst_ip": "10.0.0.7", "l4": "UDP", "src_port": 1, "dst_port": 2}) + "\n")
    code, out, _ = run(capsys, "triage", "--samples", str(samples))
    assert json.loads(out)["victim_ip"] == "10.0.0.7"


@pytest.fixture()
def pack_file(corpus, capsys, tmp_path):
    code, out, _ = run(capsys, "evidence", "--config", str(corpus.config), "--slice", "588s--601s.pcap", "--json")
    assert code == 0
    path = tmp_path / "pack.json"
    path.write_text(out)
    return path


def test_investigate_then_validate(pack_file, capsys, tmp_path):
    code, out, _ = run(capsys, "investigate", "--pack", str(pack_file))
    assert code == 0
    report = json.loads(out)
    assert report["attack_type"] == "SSDP/UPnP Reflection"
    good = tmp_path / "r.json"
    good.write_text(out)
    assert run(capsys, "validate", "--report", str(good), "--pack", str(pack_file))[0] == 0
    report["confidence"] = 1.2
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps(report))
    code, out, _ = run(capsys, "validate", "--report", str(bad), "--pack", str(pack_file))
    assert code == 2
    assert "BadRange confidence" in out


def test_investigate_failure_exit_code(pack_file, capsys):
    # nothing listens here, so the remote backend is unreachable
    code, _, err = run(capsys, "investigate", "--pack", str(pack_file), "--backend", "remote",
                       "--base-url", "http://127.0.0.1:9", "--timeout-s", "0.5")
    assert code == 1 and "unreachable" in err


def test_input_errors_exit_1(corpus, capsys, tmp_path):
    assert run(capsys, "triage", "--slice", "missing.pcap")[0] == 1
    with pytest.raises(SystemExit) as info:
        main(["bogus"])
    assert info.value.code == 1
    with pytest.raises(SystemExit) as info:
        main(["evidence"])
    assert info.value.code == 1
    bad_cfg = tmp_path / "c.toml"
    bad_cfg.write_text("nope = 1\n")
    code, _, err = run(capsys, "run", "--config", str(bad_cfg))
    assert code == 1 and "unknown config keys" in err
    junk = tmp_path / "p.json"
    junk.write_text("{}")
    assert run(capsys, "validate", "--report", str(junk), "--pack", str(junk))[0] == 1


def test_synth_subcommand(capsys, tmp_path):
    code, out, _ = run(capsys, "synth", "--out", str(tmp_path / "s"))
    assert code == 0 and "9 scenarios" in out
    assert len(list((tmp_path / "s" / "pcaps").iterdir())) == 9
