from __future__ import annotations

import pytest

from tracehound.pcap_codec import L4, DissectedPacket, TcpFlag


def udp(payload: bytes = b"", *, src="198.51.100.1", dst="10.0.0.7", sport=389, dport=40000, ts=0, length=None):
    return DissectedPacket(
        ts_micros=ts,
        src_ip=src,
        dst_ip=dst,
        l4=L4.UDP,
        src_port=sport,
        dst_port=dport,
        udp_length=8 + len(payload) if length is None else length,
        payload=payload,
    )


def tcp(flags=TcpFlag.SYN, payload: bytes = b"", *, src="203.0.113.9", dst="10.0.0.8", sport=5555, dport=80, ts=0):
    return DissectedPacket(
        ts_micros=ts,
        src_ip=src,
        dst_ip=dst,
        l4=L4.TCP,
        src_port=sport,
        dst_port=dport,
        tcp_flags=TcpFlag(flags),
        payload=payload,
    )


# --- acceptance reporting -----------------------------------------------------
# Tests marked ``criterion(n, title)`` get one PASS/FAIL line in the terminal
# summary; ``detail(...)`` attaches the measured numbers to that line.

_OUTCOMES = pytest.StashKey[dict]()
_DETAILS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion covered by the test")
    config.stash[_OUTCOMES] = {}
    config.stash[_DETAILS] = {}


@pytest.fixture()
def detail(request):
    store = request.config.stash[_DETAILS]

    def add(text: str) -> None:
        store.setdefault(request.node.nodeid, []).append(text)

    return add


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (rep.when != "call" and rep.passed):
        return
    number, title = marker.args
    results = item.config.stash[_OUTCOMES].setdefault(number, {"title": title, "ok": True, "nodes": []})
    results["ok"] = results["ok"] and rep.passed
    if item.nodeid not in results["nodes"]:
        results["nodes"].append(item.nodeid)


def pytest_terminal_summary(terminalreporter, config):
    outcomes = config.stash.get(_OUTCOMES, {})
    if not outcomes:
        return
    details = config.stash[_DETAILS]
    terminalreporter.section("acceptance criteria")
    for number in sorted(outcomes):
        res = outcomes[number]
        notes = [d for node in res["nodes"] for d in details.get(node, [])]
        suffix = f" ({'; '.join(notes)})" if notes else ""
        verdict = "PASS" if res["ok"] else "FAIL"
        terminalreporter.write_line(f"criterion {number:>2} {verdict}: {res['title']}{suffix}")


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    from tracehound.synth import generate_corpus

    return generate_corpus(tmp_path_factory.mktemp("corpus"))


def scenario_pack(label, n_packets: int = 300, seed: int = 1):
    """Evidence pack plus triage for one synthetic attack burst."""
    import random

    from tracehound.evidence import build_evidence_pack
    from tracehound.synth import VICTIM_FLOOD, VICTIM_REFLECTION, Scenario, attack_packets
    from tracehound.triage import triage

    flood = label.value.endswith("Flood")
    sc = Scenario(label, 100, VICTIM_FLOOD if flood else VICTIM_REFLECTION, n_packets=n_packets)
    pkts = attack_packets(sc, random.Random(seed))
    tri = triage(pkts)
    return build_evidence_pack(pkts, tri, incident_id=f"t-{label.name.lower()}", window=(98, 111)), tri
