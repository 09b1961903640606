"""Acceptance criteria, one test (or a small group) per criterion.

Each test is marked with ``criterion(n, title)``; the terminal summary prints
one PASS/FAIL line per criterion.
"""

from __future__ import annotations

import io
import json
import math
import random
import struct
import time
import warnings
from dataclasses import replace

import pytest

from conftest import scenario_pack, tcp, udp
from tracehound.config import load_config
from tracehound.detective import (
    AttackType,
    ErrorKind,
    InvestigationFailed,
    LocalRulesBackend,
    PayloadStyle,
    collect_errors,
    investigate,
    local_backend_decide,
    verify_quote_rule,
)
from tracehound.detective.schema import accepted_quotes, quoted_spans
from tracehound.evidence import (
    TRUNCATION_MARKER,
    EvidenceBudget,
    EvidencePack,
    build_evidence_pack,
    printable_ratio,
    shannon_entropy,
)
from tracehound.orchestrator import read_audit, replay_validation, run_replay
from tracehound.pcap_codec import (
    DissectedPacket,
    PacketRecord,
    PcapError,
    Skip,
    TcpFlag,
    TruncatedCaptureWarning,
    dissect,
    read_pcap,
    to_record,
    write_pcap,
)
from tracehound.synth import VICTIM_FLOOD, Scenario, generate_corpus
from tracehound.triage import Dominance, TriageResult, compute_dominance, triage


# --- independent oracles -----------------------------------------------------


def histogram_entropy(data: bytes) -> float:
    hist = [0] * 256
    for b in data:
        hist[b] += 1
    n = len(data)
    return math.fsum(-(c / n) * math.log2(c / n) for c in hist if c)


def histogram_printable(data: bytes) -> float:
    hist = [0] * 256
    for b in data:
        hist[b] += 1
    return sum(hist[0x20:0x7F]) / len(data) if data else 0.0


# --- 1 -------------------------------------------------------------------------


@pytest.mark.criterion(1, "fingerprint oracle equivalence")
def test_c01_fingerprint_oracle(detail):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    worst = 0.0
    for _ in range(1000):
        n = rng.randint(0, 1500)
        mode = rng.random()
        if mode < 0.4:
            data = rng.randbytes(n)
        elif mode < 0.7:
            data = bytes(rng.choice(b"ABCDEFGH \x00\xff") for _ in range(n))
        else:
            data = bytes(rng.randint(0x20, 0x7E) if rng.random() < 0.8 else rng.randint(0, 255) for _ in range(n))
        worst = max(worst, abs(shannon_entropy(data) - histogram_entropy(data)))
        worst = max(worst, abs(printable_ratio(data) - histogram_printable(data)))
    elapsed = time.perf_counter() - t0
    detail(f"max deviation {worst:.2e}, {elapsed:.2f}s")
    assert worst <= 1e-9
    assert shannon_entropy(bytes(range(256))) == 8.0
    for b in (0, 0x41, 0xFF):
        for n in (1, 7, 1500):
            assert shannon_entropy(bytes([b]) * n) == 0.0
    assert elapsed < 5.0


# --- 2 and 9 share one corpus run ------------------------------------------------

TABLE1_ANCHORS = (
    "1.2.840.113556",
    "supportedLDAPVersion",
    "public",
    "View-based Access Control Model for SNMP",
    "ServerName;",
    "InstanceName;",
    "HTTP/1.1 200 OK",
    "LOCATION:",
    "gatedesc.xml",
    "__MSBROWSE__",
    "WORKGROUP",
)


@pytest.fixture(scope="module")
def table_run(tmp_path_factory):
    root = tmp_path_factory.mktemp("table")
    t0 = time.perf_counter()
    corpus = generate_corpus(root)
    summary = run_replay(load_config(corpus.config), LocalRulesBackend())
    return corpus, summary, time.perf_counter() - t0


@pytest.mark.criterion(2, "synthetic nine-scenario table, LocalRules 9/9")
def test_c02_table_analogue(table_run, detail):
    corpus, summary, elapsed = table_run
    blob = b"".join(p.read_bytes() for p in corpus.pcap_dir.iterdir())
    missing = [a for a in TABLE1_ANCHORS if a.encode() not in blob]
    assert missing == []
    labels = [json.loads(line)["label"] for line in corpus.manifest.read_text().splitlines()]
    assert sorted(labels) == sorted(
        ["UDP Flood", "SYN Flood", "ACK Flood", "DNS Reflection", "NetBIOS Reflection", "LDAP/CLDAP Reflection",
         "SNMP Reflection", "MSSQL Reflection", "SSDP/UPnP Reflection"]
    )
    assert len(summary.rows) == 9
    out = corpus.root / "out"
    for row in summary.rows:
        assert row.predicted == row.ground_truth, row
        pack_text = (out / row.incident_id / "evidence.txt").read_text()
        pack = EvidencePack.from_json((out / row.incident_id / "evidence.json").read_text())
        assert pack.canonical_text == pack_text
        raw = (out / row.incident_id / "report.json").read_text()
        report, errors = collect_errors(raw, pack, pack.triage)
        assert errors == [] and report.attack_type.value == row.ground_truth
    detail(f"{summary.correct}/9 correct, {elapsed:.2f}s")
    assert summary.correct == 9
    assert elapsed < 30.0


@pytest.mark.criterion(9, "audit replay reproduces logged validation outcome")
def test_c09_audit_replay(table_run, detail):
    corpus, summary, _ = table_run
    out = corpus.root / "out"
    checked = 0
    for row in summary.rows:
        audit = out / row.incident_id / "audit.jsonl"
        assert replay_validation(audit) == []
        events = read_audit(audit)
        pack = EvidencePack.from_dict(next(e for e in events if e["event"] == "evidence_built")["pack"])
        tri = TriageResult.from_dict(next(e for e in events if e["event"] == "triage")["triage"])
        final = next(e for e in events if e["event"] == "report_accepted")["report"]
        for e in events:
            if e["event"] != "backend_attempt":
                continue
            report, errors = collect_errors(e["attempt"]["raw_response"], pack, tri)
            assert json.dumps([x.to_dict() for x in errors]) == json.dumps(e["attempt"]["errors"])
            if report is not None:
                assert json.dumps(report.to_dict(), sort_keys=True) == json.dumps(final, sort_keys=True)
            checked += 1
    detail(f"{checked} logged attempts re-validated")
    assert checked >= 9


# --- 3 -------------------------------------------------------------------------


@pytest.mark.criterion(3, "ratio reconstruction")
def test_c03_ratio_reconstruction(detail):
    syn = [tcp(TcpFlag.SYN, ts=i) for i in range(995)] + [tcp(TcpFlag.SYN | TcpFlag.ACK, ts=995 + i) for i in range(5)]
    random.Random(5).shuffle(syn)
    pack = build_evidence_pack(syn, triage(syn))
    ratio = pack.tcp_flag_stats.syn_only_ratio
    assert abs(ratio - 0.995) <= 1e-9
    assert "syn_only_ratio=0.995" in pack.canonical_text
    assert pack.udp_length_modes == ()

    mix = [udp(b"x", ts=i) for i in range(981)] + [tcp(ts=981 + i) for i in range(19)]
    dom, score = compute_dominance(mix)
    assert dom is Dominance.UDP and abs(score - 0.981) <= 1e-9
    assert f"{dom.value} ({score:.3f})" == "UDP (0.981)"
    detail(f"syn_only_ratio={ratio:.3f}, UDP ({score:.3f})")


# --- 4 -------------------------------------------------------------------------

TCP_LABELS = {"SYN Flood", "ACK Flood", "HTTP/2 Rapid Reset", "Unknown"}
REFLECTION_LABELS = {
    "DNS Reflection", "NetBIOS Reflection", "LDAP/CLDAP Reflection", "SNMP Reflection", "MSSQL Reflection",
    "SSDP/UPnP Reflection", "NTP Reflection", "Other Reflection",
}


def gate_violations(report: dict, dominant: str, pack) -> list[str]:
    """Gate rules restated independently of the validator."""
    label = report["attack_type"]
    style = report["analysis_trace"]["payload_style"]
    quotes = [q for item in report["key_evidence"] for q in quoted_spans(item) if q in pack.canonical_text]
    anchors = {a.text for s in pack.primary_samples for a in s.fingerprint.anchors}
    out = []
    if dominant == "TCP" and label not in TCP_LABELS:
        out.append("tcp")
    if dominant == "UDP" and label in ("SYN Flood", "ACK Flood"):
        out.append("udp")
    if dominant != "TCP" and label in REFLECTION_LABELS:
        if not any((len(q) >= 4 and q in a) or a in q for q in quotes for a in anchors):
            out.append("unsupported reflection")
    # TCP flood labels rest on flag statistics, not payload structure, so the
    # unclear-structure rule only restricts payload-derived labels.
    if style == "mixed_or_unclear" and label not in TCP_LABELS:
        entropy_quoted = any("entropy" in q or "printable_ratio" in q for q in quotes)
        if not (label == "UDP Flood" and entropy_quoted):
            out.append("unclear structure")
    return out


def _quote_pool(pack) -> list[str]:
    pool = [f"`{a.text}`" for s in pack.samples for a in s.fingerprint.anchors]
    for line in pack.canonical_text.splitlines():
        if "=" in line or ": " in line:
            pool.append(f"`{line.strip()[:40]}`")
    pool += ["`1.2.840.113556`", "`public`", "`LOCATION:`", "`WORKGROUPS`", "`entropy_bits=7.999`", "no quote"]
    return pool


@pytest.mark.criterion(4, "gate soundness over random reports")
def test_c04_gate_soundness(detail):
    packs = [scenario_pack(label, n_packets=120, seed=3) for label in
             (AttackType.LDAP, AttackType.SYN_FLOOD, AttackType.UDP_FLOOD, AttackType.SSDP, AttackType.DNS)]
    pools = [_quote_pool(p) for p, _ in packs]
    rng = random.Random(404)
    labels = [t.value for t in AttackType]
    styles = [s.value for s in PayloadStyle]
    survived = violating_survivors = gate_rejections = 0
    for _ in range(10_000):
        i = rng.randrange(len(packs))
        pack, tri = packs[i]
        base = local_backend_decide(pack, tri).to_dict()
        report = json.loads(json.dumps(base))
        report["attack_type"] = rng.choice(labels)
        report["analysis_trace"]["payload_style"] = rng.choice(styles)
        if rng.random() < 0.7:
            report["key_evidence"] = [
                f"evidence {rng.choice(pools[i])}" for _ in range(rng.randint(2, 4))
            ]
        dominant = rng.choice(["UDP", "TCP", "MIXED"])
        rand_tri = replace(tri, dominant_l4=Dominance(dominant))
        accepted, errors = collect_errors(json.dumps(report), pack, rand_tri)
        if any(e.kind is ErrorKind.GATE_VIOLATION for e in errors):
            gate_rejections += 1
        if accepted is not None:
            survived += 1
            if gate_violations(report, dominant, pack):
                violating_survivors += 1
    detail(f"{survived} survived, {gate_rejections} gate rejections, {violating_survivors} violating survivors")
    assert violating_survivors == 0
    assert survived > 500 and gate_rejections > 1000  # both sides of the gate were exercised

    ldap_pack, ldap_tri = packs[0]
    good = local_backend_decide(ldap_pack, ldap_tri).to_dict()
    _, errors = collect_errors(json.dumps(good), ldap_pack, replace(ldap_tri, dominant_l4=Dominance.TCP))
    assert [e.kind for e in errors] == [ErrorKind.GATE_VIOLATION]
    syn_pack, syn_tri = packs[1]
    good = local_backend_decide(syn_pack, syn_tri).to_dict()
    _, errors = collect_errors(json.dumps(good), syn_pack, replace(syn_tri, dominant_l4=Dominance.UDP))
    assert [e.kind for e in errors] == [ErrorKind.GATE_VIOLATION]


# --- 5 -------------------------------------------------------------------------


@pytest.mark.criterion(5, "Quote Rule")
def test_c05_quote_rule(detail):
    pack, tri = scenario_pack(AttackType.NETBIOS, n_packets=120)
    base = local_backend_decide(pack, tri)
    assert verify_quote_rule(base, pack) == []

    def kinds_for(items):
        return [e.kind for e in verify_quote_rule(replace(base, key_evidence=tuple(items)), pack)]

    assert kinds_for(["`WORKGROUP` in PRIMARY payload", "`dominant_l4: UDP`"]) == []
    assert kinds_for(["WORKGROUP in payload", "`dominant_l4: UDP`"]) == [ErrorKind.QUOTE_MISSING]
    assert kinds_for(["`WORKGROUPS` in payload", "`dominant_l4: UDP`"]) == [ErrorKind.QUOTE_NOT_IN_PACK]

    rng = random.Random(55)
    text = pack.canonical_text
    accepted_reports = spans_checked = 0
    for _ in range(3000):
        items = []
        for _ in range(rng.randint(2, 4)):
            if rng.random() < 0.8:
                a = rng.randrange(len(text) - 1)
                span = text[a : a + rng.randint(1, 30)].split("\n")[0].replace("`", "")
            else:
                span = "".join(rng.choice("WORKGROUP_ bx;:.") for _ in range(rng.randint(1, 12)))
            items.append(f"note `{span}` seen" if span else "note")
        report = replace(base, key_evidence=tuple(items))
        if verify_quote_rule(report, pack):
            continue
        accepted_reports += 1
        for span in accepted_quotes(report.key_evidence, text):
            assert text.encode().find(span.encode()) >= 0
            spans_checked += 1
        for item in report.key_evidence:
            assert any(s in text for s in quoted_spans(item))
    detail(f"{accepted_reports} accepted random reports, {spans_checked} spans byte-checked")
    assert accepted_reports > 100


# --- 6 -------------------------------------------------------------------------


@pytest.mark.criterion(6, "budget safety on large windows")
def test_c06_budget_safety(detail):
    rng = random.Random(66)
    pool = []
    for i in range(3000):
        kind = i % 4
        payload = rng.randbytes(rng.randint(0, 1400)) if kind == 0 else bytes(
            rng.choice(b"HTTP/1.1 200 OK\r\nLOCATION: ServerName;1.2.840.113556 public\x00\x01") for _ in
            range(rng.randint(0, 900)))
        dst = rng.choice(["10.0.0.7", "10.0.0.8", "10.0.0.9"])
        if kind == 3:
            pool.append(tcp(TcpFlag(rng.randrange(64)), payload[:200], dst=dst, ts=i))
        else:
            pool.append(udp(payload, dst=dst, ts=i, length=8 + len(payload)))
    largest = 0
    for _ in range(100):
        n = rng.randint(1, 50_000)
        window = rng.choices(pool, k=n)
        largest = max(largest, n)
        budget = EvidenceBudget(
            max_scan_packets=rng.randint(1, 6000),
            max_samples=rng.randint(1, 12),
            max_hexdump_lines_per_sample=rng.randint(1, 12),
            max_ascii_excerpt_chars=rng.randint(1, 300),
            max_anchors_per_sample=rng.randint(1, 8),
        )
        tri = TriageResult(Dominance(rng.choice(["UDP", "TCP", "MIXED"])), 0.9, rng.choice(["10.0.0.7", "10.0.0.8"]),
                           0.5, n)
        pack = build_evidence_pack(window, tri, budget)
        assert pack.scan_packet_count == min(n, budget.max_scan_packets)
        assert len(pack.samples) <= budget.max_samples
        for s in pack.samples:
            fp = s.fingerprint
            lines = [ln for ln in fp.hexdump.splitlines() if ln != TRUNCATION_MARKER]
            assert len(lines) <= budget.max_hexdump_lines_per_sample
            assert len(fp.ascii_excerpt) <= budget.max_ascii_excerpt_chars
            assert len(fp.anchors) <= budget.max_anchors_per_sample
    detail(f"100 windows, largest {largest} packets")


# --- 7 -------------------------------------------------------------------------


class Scripted:
    name = "scripted"

    def __init__(self, replies):
        self.replies = replies
        self.calls = 0

    def complete(self, messages, pack, triage):
        self.calls += 1
        return self.replies[min(self.calls, len(self.replies)) - 1]


@pytest.mark.criterion(7, "self-correction loop")
def test_c07_self_correction(tmp_path, detail):
    pack, tri = scenario_pack(AttackType.LDAP, n_packets=120)
    good = local_backend_decide(pack, tri).to_dict()
    without = {k: v for k, v in good.items() if k != "confidence"}
    result = investigate(pack, tri, Scripted([json.dumps(without), json.dumps(good)]))
    assert result.attempts_used == 2
    assert [e.kind for e in result.attempts[0].errors] == [ErrorKind.MISSING_FIELD]

    prose = Scripted(["This looks like an LDAP reflection attack to me."])
    with pytest.raises(InvestigationFailed) as info:
        investigate(pack, tri, prose, max_retries=2)
    assert len(info.value.attempts) == 3 == prose.calls

    # fully audited when run through the pipeline
    corpus = generate_corpus(tmp_path / "c", [Scenario(AttackType.UDP_FLOOD, 30, VICTIM_FLOOD)])
    summary = run_replay(load_config(corpus.config), Scripted(["no json here"]))
    (row,) = summary.rows
    events = read_audit(corpus.root / "out" / row.incident_id / "audit.jsonl")
    attempts = [e["attempt"] for e in events if e["event"] == "backend_attempt"]
    assert len(attempts) == 3
    assert all(a["errors"] and a["raw_response"] == "no json here" and a["messages"] for a in attempts)
    assert any(e["event"] == "investigation_failed" for e in events)
    assert not (corpus.root / "out" / row.incident_id / "report.json").exists()
    detail("2 attempts to recover; 3 audited attempts on exhaustion")


# --- 8 -------------------------------------------------------------------------


class CountingLocal(LocalRulesBackend):
    calls = 0

    def complete(self, messages, pack, triage):
        self.calls += 1
        return super().complete(messages, pack, triage)


@pytest.mark.criterion(8, "cooldown dedup")
def test_c08_cooldown(tmp_path, detail):
    scenarios = [Scenario(AttackType.UDP_FLOOD, 30 + 10 * i, VICTIM_FLOOD, duration_s=4) for i in range(5)]
    corpus = generate_corpus(tmp_path / "c", scenarios)
    backend = CountingLocal()
    summary = run_replay(load_config(corpus.config), backend)
    triggers = len(summary.rows) + len(summary.suppressed)
    detail(f"{triggers} firings -> {len(summary.rows)} investigated, {len(summary.suppressed)} suppressed")
    assert triggers == 5
    assert len(summary.rows) == 1 and backend.calls == 1
    assert len(summary.suppressed) == 4
    for inc in summary.suppressed:
        events = read_audit(corpus.root / "out" / inc / "audit.jsonl")
        assert events[-1]["state"] == "Suppressed"
        assert not any(e["event"] == "backend_attempt" for e in events)


# --- 10 ------------------------------------------------------------------------


def _valid_capture(rng: random.Random) -> bytes:
    pkts = []
    for i in range(rng.randint(1, 4)):
        payload = rng.randbytes(rng.randint(0, 80))
        p = udp(payload, ts=i) if rng.random() < 0.5 else tcp(TcpFlag(rng.randrange(64)), payload, ts=i)
        pkts.append(to_record(p, vlan=rng.choice([None, 7])))
    buf = io.BytesIO()
    write_pcap(pkts, buf, big_endian=rng.random() < 0.5, nanosecond=rng.random() < 0.5)
    return buf.getvalue()


@pytest.mark.criterion(10, "dissector fuzz")
def test_c10_dissector_fuzz(detail):
    rng = random.Random(1010)
    typed_errors = skips = packets = 0
    header = b"\xd4\xc3\xb2\xa1" + struct.pack("<HHiIII", 2, 4, 0, 0, 65535, 1)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", TruncatedCaptureWarning)
        for i in range(10_000):
            mode = i % 4
            if mode == 0:
                blob = rng.randbytes(rng.randint(0, 200))
            elif mode == 1:
                blob = header + rng.randbytes(rng.randint(0, 200))
            else:
                blob = bytearray(_valid_capture(rng))
                for _ in range(rng.randint(1, 8)):
                    blob[rng.randrange(len(blob))] = rng.randrange(256)
                if mode == 3:
                    blob = blob[: rng.randint(0, len(blob))]
                blob = bytes(blob)
            try:
                for rec in read_pcap(blob):
                    out = dissect(rec)
                    assert isinstance(out, (DissectedPacket, Skip))
                    if isinstance(out, Skip):
                        skips += 1
                    else:
                        packets += 1
            except PcapError:
                typed_errors += 1
            frame = rng.randbytes(rng.randint(0, 100))
            out = dissect(PacketRecord(0, len(frame), len(frame), frame))
            assert isinstance(out, (DissectedPacket, Skip))
    detail(f"{typed_errors} typed errors, {skips} skips, {packets} packets decoded")
