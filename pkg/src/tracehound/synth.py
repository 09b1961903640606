"""Synthetic replay corpus: pcap slices, counter stream and ground-truth manifest.

Each scenario is one attack burst toward a victim. The generator writes a
pcap slice around every burst (named ``<start>s--<end>s.pcap``), a 1 Hz
counter JSONL covering the whole run, a manifest mapping time ranges to the
expected attack type, and a flat TOML config pointing at all of it.
"""

from __future__ import annotations

import json
import random
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from .detective.schema import AttackType
from .pcap_codec import L4, DissectedPacket, TcpFlag, slice_name, write_packets

EPOCH_S = 1_700_000_000
VICTIM_FLOOD = "10.0.0.8"
VICTIM_REFLECTION = "10.0.0.7"


@dataclass(frozen=True)
class Scenario:
    label: AttackType
    start_s: int
    victim: str
    duration_s: int = 8
    n_packets: int = 1000
    peak_pps: float = 8000.0


# ---------------------------------------------------------------------------
# payload builders; each takes the rng and a variant index


def _ber_str(tag: int, value: bytes) -> bytes:
    return bytes([tag, len(value)]) + value


def udp_noise_payload(rng: random.Random, variant: int) -> bytes:
    return rng.randbytes((512, 768, 1024)[variant % 3])


def dns_payload(rng: random.Random, variant: int) -> bytes:
    txt = [
        b"v=spf1 include:_spf.aids.gov ip4:192.0.2.0/24 ~all",
        b"aids.gov federal HIV/AIDS information portal, updated weekly by the web team",
        b"site-verification=Zq4r2dXk9w7mLpT0 retained for the current rotation window",
    ]
    if variant % 2:
        txt.append(b"records above are published for the current rotation and reviewed quarterly")
    header = struct.pack("!HHHHHH", rng.getrandbits(16), 0x8180, 1, len(txt), 0, 0)
    qname = b"\x04aids\x03gov\x00"
    out = header + qname + struct.pack("!HH", 255, 1)
    for t in txt:
        rdata = bytes([len(t)]) + t
        out += b"\xc0\x0c" + struct.pack("!HHIH", 16, 1, 300, len(rdata)) + rdata
    return out


def _nb_name(name: bytes, suffix: int, flags: int) -> bytes:
    return name.ljust(15, b" ") + bytes([suffix]) + struct.pack("!H", flags)


def netbios_payload(rng: random.Random, variant: int) -> bytes:
    names = [
        _nb_name(b"FILESERVER01", 0x20, 0x0400),
        _nb_name(b"WORKGROUP", 0x20, 0x8400),
        _nb_name(b"PRINTSERVER", 0x20, 0x0400),
        _nb_name(b"BACKUP-NAS", 0x20, 0x0400),
        _nb_name(b"WORKGROUP", 0x1E, 0x8400),
        _nb_name(b"\x01\x02__MSBROWSE__\x02", 0x01, 0x8400),
        _nb_name(b"FILESERVER01", 0x00, 0x0400),
        _nb_name(b"DC01-CORP", 0x20, 0x0400),
        _nb_name(b"MEDIA-STATION", 0x20, 0x0400),
        _nb_name(b"SCANNER-3F", 0x20, 0x0400),
        _nb_name(b"HELPDESK-PC", 0x20, 0x0400),
        _nb_name(b"WORKGROUP", 0x1D, 0x0400),
    ]
    if variant % 2:
        names.insert(1, _nb_name(b"ADMINISTRATOR", 0x20, 0x0400))
    body = bytes([len(names)]) + b"".join(names)
    header = struct.pack("!HHHHHH", rng.getrandbits(16), 0x8400, 0, 1, 0, 0)
    rr = b"\x20" + b"CKAAAAAAAAAAAAAAAAAAAAAAAAAAAAAA" + b"\x00" + struct.pack("!HHIH", 0x21, 1, 0, len(body))
    return header + rr + body


def ldap_payload(rng: random.Random, variant: int) -> bytes:
    attrs = [
        (b"currentTime", [b"20231114221320.0Z"]),
        (b"supportedCapabilities", [b"1.2.840.113556.1.4.800", b"1.2.840.113556.1.4.1670", b"1.2.840.113556.1.4.1791"]),
        (b"supportedLDAPVersion", [b"3", b"2"]),
        (b"isGlobalCatalogReady", [b"TRUE"]),
        (b"domainFunctionality", [b"7"]),
    ]
    if variant % 2:
        attrs.append((b"supportedControl", [b"1.2.840.113556.1.4.319", b"1.2.840.113556.1.4.801"]))
    body = b""
    for name, values in attrs:
        vals = b"".join(_ber_str(0x04, v) for v in values)
        body += b"\x30" + bytes([len(name) + len(vals) + 4]) + _ber_str(0x04, name) + b"\x31" + bytes([len(vals)]) + vals
    entry = b"\x64\x84" + struct.pack("!I", len(body) + 2) + b"\x04\x00" + b"\x30\x84" + struct.pack("!I", len(body)) + body
    msg = b"\x02\x01" + bytes([rng.randrange(1, 100)]) + entry
    return b"\x30\x84" + struct.pack("!I", len(msg)) + msg


def snmp_payload(rng: random.Random, variant: int) -> bytes:
    descrs = [
        b"View-based Access Control Model for SNMP.",
        b"The SNMP Management Architecture MIB.",
        b"The MIB for Message Processing and Dispatching.",
        b"The management information definitions for the User-based Security Model.",
        b"The MIB module for managing TCP implementations",
        b"Linux edge-gw-02 5.15.0-91-generic #101-Ubuntu SMP Tue Nov 14 13:30:08 UTC 2023 x86_64",
        b"Net-SNMP agent 5.9.1 serving the community view for monitoring and inventory collection",
    ]
    if variant % 2:
        descrs.append(b"The MIB module for managing IP and ICMP implementations")
    binds = b""
    for i, d in enumerate(descrs):
        oid = b"\x06\x0a\x2b\x06\x01\x02\x01\x01\x09\x01\x03" + bytes([i + 1])
        binds += b"\x30" + bytes([len(oid) + len(d) + 2]) + oid + _ber_str(0x04, d)
    pdu = b"\xa2\x82" + struct.pack("!H", len(binds) + 11) + b"\x02\x04" + rng.randbytes(4) + b"\x02\x01\x00\x02\x01\x00"
    pdu += b"\x30\x82" + struct.pack("!H", len(binds)) + binds
    msg = b"\x02\x01\x01" + _ber_str(0x04, b"public") + pdu
    return b"\x30\x82" + struct.pack("!H", len(msg)) + msg


def mssql_payload(rng: random.Random, variant: int) -> bytes:
    instances = [b"MSSQLSERVER", b"SQLEXPRESS"] + ([b"REPORTING"] if variant % 2 else [])
    text = b"".join(
        b"ServerName;SQLHOST01;InstanceName;" + inst + b";IsClustered;No;Version;15.0.2000.5;tcp;"
        + str(1433 + i).encode() + b";;"
        for i, inst in enumerate(instances)
    )
    return b"\x05" + struct.pack("<H", len(text)) + text


def ssdp_payload(rng: random.Random, variant: int) -> bytes:
    usn = "uuid:%08x-0000-1000-8000-00e04c000001" % rng.getrandbits(32)
    st = "upnp:rootdevice" if variant % 2 == 0 else "urn:schemas-upnp-org:device:InternetGatewayDevice:1"
    lines = [
        "HTTP/1.1 200 OK",
        "CACHE-CONTROL: max-age=120",
        f"ST: {st}",
        f"USN: {usn}::{st}",
        "EXT:",
        "SERVER: Linux/2.6 UPnP/1.0 IGD/1.0",
        "LOCATION: http://192.168.0.1:1900/gatedesc.xml",
    ]
    return ("\r\n".join(lines) + "\r\n\r\n").encode()


_REFLECTION = {
    AttackType.DNS: (53, dns_payload),
    AttackType.NETBIOS: (137, netbios_payload),
    AttackType.LDAP: (389, ldap_payload),
    AttackType.SNMP: (161, snmp_payload),
    AttackType.MSSQL: (1434, mssql_payload),
    AttackType.SSDP: (1900, ssdp_payload),
}


def _rand_ip(rng: random.Random, prefix: str) -> str:
    return f"{prefix}.{rng.randrange(1, 255)}"


def attack_packets(sc: Scenario, rng: random.Random) -> list[DissectedPacket]:
    reflectors = [_rand_ip(rng, "203.0.113") for _ in range(24)] + [_rand_ip(rng, "198.51.100") for _ in range(8)]
    out = []
    for i in range(sc.n_packets):
        t = sc.start_s + sc.duration_s * i / sc.n_packets
        ts = int((EPOCH_S + t) * 1_000_000)
        if sc.label is AttackType.UDP_FLOOD:
            payload = udp_noise_payload(rng, rng.randrange(3))
            out.append(
                DissectedPacket(ts, _rand_ip(rng, f"172.{rng.randrange(16, 32)}.{rng.randrange(256)}"), sc.victim,
                                L4.UDP, rng.randrange(1024, 65535), rng.randrange(1, 65535),
                                udp_length=8 + len(payload), payload=payload)
            )
        elif sc.label in (AttackType.SYN_FLOOD, AttackType.ACK_FLOOD):
            flags = TcpFlag.SYN if sc.label is AttackType.SYN_FLOOD else TcpFlag.ACK
            if i % 200 == 199:
                flags = TcpFlag.RST
            out.append(
                DissectedPacket(ts, _rand_ip(rng, f"172.{rng.randrange(16, 32)}.{rng.randrange(256)}"), sc.victim,
                                L4.TCP, rng.randrange(1024, 65535), 80, tcp_flags=flags)
            )
        else:
            port, build = _REFLECTION[sc.label]
            payload = build(rng, i % 5 == 4)
            out.append(
                DissectedPacket(ts, rng.choice(reflectors), sc.victim, L4.UDP, port, rng.randrange(1024, 65535),
                                udp_length=8 + len(payload), payload=payload)
            )
    return out


def background_packets(start_s: float, end_s: float, rng: random.Random, n: int) -> list[DissectedPacket]:
    out = []
    for i in range(n):
        t = start_s + (end_s - start_s) * (i + 0.5) / n
        ts = int((EPOCH_S + t) * 1_000_000)
        src = _rand_ip(rng, "192.168.1")
        dst = f"10.0.0.{rng.randrange(20, 40)}"
        if i % 2:
            payload = rng.randbytes(rng.randrange(20, 120))
            out.append(DissectedPacket(ts, src, dst, L4.UDP, rng.randrange(1024, 65535), 443,
                                       udp_length=8 + len(payload), payload=payload))
        else:
            out.append(DissectedPacket(ts, src, dst, L4.TCP, rng.randrange(1024, 65535), 443,
                                       tcp_flags=TcpFlag.ACK | TcpFlag.PSH, payload=rng.randbytes(40)))
    return out


def default_scenarios(spacing_s: int = 70, first_s: int = 30) -> list[Scenario]:
    """The nine families of the reference incident table, one burst each."""
    labels = [
        (AttackType.UDP_FLOOD, VICTIM_FLOOD),
        (AttackType.ACK_FLOOD, VICTIM_FLOOD),
        (AttackType.SYN_FLOOD, VICTIM_FLOOD),
        (AttackType.DNS, VICTIM_REFLECTION),
        (AttackType.NETBIOS, VICTIM_REFLECTION),
        (AttackType.LDAP, VICTIM_REFLECTION),
        (AttackType.SNMP, VICTIM_REFLECTION),
        (AttackType.MSSQL, VICTIM_REFLECTION),
        (AttackType.SSDP, VICTIM_REFLECTION),
    ]
    return [Scenario(label, first_s + i * spacing_s, victim) for i, (label, victim) in enumerate(labels)]


@dataclass(frozen=True)
class Corpus:
    root: Path
    pcap_dir: Path
    counters: Path
    manifest: Path
    config: Path
    scenarios: tuple[Scenario, ...]


def counter_stream(
    scenarios: Sequence[Scenario], total_s: int, rng: random.Random, baseline_pps: float = 300.0
) -> list[dict]:
    rows = []
    for t in range(total_s):
        pps = max(0.0, rng.gauss(baseline_pps, baseline_pps * 0.03))
        drops = 0
        for sc in scenarios:
            if sc.start_s <= t < sc.start_s + sc.duration_s:
                pps = rng.gauss(sc.peak_pps, sc.peak_pps * 0.02)
                drops = rng.randrange(0, 50)
        rows.append(
            {"ts_s": float(t), "bytes_per_s": round(pps * 600, 1), "pkts_per_s": round(pps, 1), "queue_drops": drops}
        )
    return rows


def generate_corpus(
    out_dir: str | Path,
    scenarios: Sequence[Scenario] | None = None,
    *,
    seed: int = 7,
    total_s: int | None = None,
    slice_lead_s: int = 2,
    slice_tail_s: int = 3,
    background_per_slice: int = 20,
    extra_config: dict | None = None,
) -> Corpus:
    scenarios = list(default_scenarios() if scenarios is None else scenarios)
    rng = random.Random(seed)
    root = Path(out_dir)
    pcap_dir = root / "pcaps"
    pcap_dir.mkdir(parents=True, exist_ok=True)
    if total_s is None:
        total_s = max((s.start_s + s.duration_s for s in scenarios), default=60) + 30

    for sc in scenarios:
        lo, hi = sc.start_s - slice_lead_s, sc.start_s + sc.duration_s + slice_tail_s
        pkts = attack_packets(sc, rng) + background_packets(lo, hi, rng, background_per_slice)
        pkts.sort(key=lambda p: p.ts_micros)
        write_packets(pkts, pcap_dir / slice_name(lo, hi))

    counters = root / "counters.jsonl"
    with open(counters, "w", encoding="utf-8") as fh:
        for row in counter_stream(scenarios, total_s, rng):
            fh.write(json.dumps(row) + "\n")

    manifest = root / "manifest.jsonl"
    with open(manifest, "w", encoding="utf-8") as fh:
        for sc in scenarios:
            fh.write(json.dumps({"start_s": sc.start_s, "end_s": sc.start_s + sc.duration_s, "label": sc.label.value}) + "\n")

    cfg = {
        "pcap_dir": pcap_dir.name,
        "counters": counters.name,
        "manifest": manifest.name,
        "out_dir": "out",
        "backend": "local",
    }
    cfg.update(extra_config or {})
    config = root / "config.toml"
    config.write_text("".join(f"{k} = {json.dumps(v)}\n" for k, v in cfg.items()), encoding="utf-8")
    return Corpus(root, pcap_dir, counters, manifest, config, tuple(scenarios))


