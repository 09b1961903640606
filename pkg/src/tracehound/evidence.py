"""Budget-capped Evidence Pack construction and canonical serialization."""

from __future__ import annotations

import enum
import json
import math
import re
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from typing import Sequence

from .pcap_codec import L4, DissectedPacket, TcpFlag, format_flags
from .triage import Dominance, TriageResult, top_source_share

MAX_ANCHOR_CHARS = 64
MIN_ANCHOR_CHARS = 4
TRUNCATION_MARKER = "... truncated"


class EmptyWindow(ValueError):
    pass


class NoUdpPackets(ValueError):
    pass


NO_PRIMARY_CLUSTER = "NoPrimaryCluster"
NO_SAMPLES = "NoSamples"


@dataclass(frozen=True)
class EvidenceBudget:
    max_scan_packets: int = 5000
    max_samples: int = 8
    max_hexdump_lines_per_sample: int = 8
    max_ascii_excerpt_chars: int = 160
    max_anchors_per_sample: int = 6

    def __post_init__(self):
        for name, value in self.to_dict().items():
            if not (isinstance(value, int) and value > 0):
                raise ValueError(f"{name} must be a positive integer, got {value!r}")

    def to_dict(self) -> dict:
        return {
            "max_scan_packets": self.max_scan_packets,
            "max_samples": self.max_samples,
            "max_hexdump_lines_per_sample": self.max_hexdump_lines_per_sample,
            "max_ascii_excerpt_chars": self.max_ascii_excerpt_chars,
            "max_anchors_per_sample": self.max_anchors_per_sample,
        }


# ---------------------------------------------------------------------------
# payload fingerprints


def _is_printable(b: int) -> bool:
    return 0x20 <= b <= 0x7E


def printable_ratio(payload: bytes) -> float:
    if not payload:
        return 0.0
    return sum(1 for b in payload if 0x20 <= b <= 0x7E) / len(payload)


def shannon_entropy(payload: bytes) -> float:
    """Byte-level Shannon entropy in bits (0..8)."""
    n = len(payload)
    if n == 0:
        return 0.0
    h = 0.0
    for count in Counter(payload).values():
        p = count / n
        h -= p * math.log2(p)
    return h + 0.0


def printable_text(payload: bytes) -> str:
    """Payload with every non-printable byte removed."""
    return bytes(b for b in payload if _is_printable(b)).decode("ascii")


def ascii_excerpt(payload: bytes, max_chars: int) -> str:
    return "".join(chr(b) if _is_printable(b) else "." for b in payload[:max_chars])


def hexdump_excerpt(payload: bytes, max_lines: int) -> str:
    """16 bytes per line: offset, two 8-byte hex groups, ASCII gutter."""
    if max_lines < 1:
        raise ValueError("max_lines must be >= 1")
    total_lines = (len(payload) + 15) // 16
    lines = []
    for off in range(0, min(len(payload), max_lines * 16), 16):
        chunk = payload[off : off + 16]
        left = " ".join(f"{b:02x}" for b in chunk[:8])
        right = " ".join(f"{b:02x}" for b in chunk[8:])
        gutter = "".join(chr(b) if _is_printable(b) else "." for b in chunk)
        lines.append(f"{off:08x}  {left:<23}  {right:<23}  |{gutter}|")
    if total_lines > max_lines:
        lines.append(TRUNCATION_MARKER)
    return "\n".join(lines)


class AnchorKind(str, enum.Enum):
    OID = "oid"
    HTTP = "http"
    KV = "kv"
    DOMAIN = "domain"
    PLAIN = "plain"


_KIND_PRIORITY = {k: i for i, k in enumerate(AnchorKind)}


@dataclass(frozen=True)
class Anchor:
    text: str
    kind: AnchorKind


# Backticks delimit quotes downstream, so they split runs like a non-printable.
_RUN_RE = re.compile(rb"[\x20-\x5f\x61-\x7e]{4,}")
# ASN.1 OIDs start with arc 0, 1 or 2; this keeps version strings and most
# dotted quads out of the OID class.
_OID_RE = re.compile(r"(?<![\w.])[0-2](?:\.(?:0|[1-9]\d*)){3,}(?!\d)")
_HTTP_STATUS_RE = re.compile(r"HTTP/\d\.\d(?: \d{3}(?: [A-Za-z][A-Za-z -]*[A-Za-z])?)?")
_HEADER_RE = re.compile(r"^[A-Za-z][A-Za-z0-9-]*:")
_KV_RE = re.compile(r"(?<![A-Za-z0-9_])[A-Za-z_][A-Za-z0-9_]*;")
_DOMAIN_RE = re.compile(
    r"(?<![A-Za-z0-9-])(?:[A-Za-z0-9](?:[A-Za-z0-9-]*[A-Za-z0-9])?\.)+[A-Za-z]{2,}(?![A-Za-z0-9-])"
)


def extract_anchors(payload: bytes, max_anchors: int) -> list[Anchor]:
    """Quotable printable substrings of ``payload``, most structural first.

    Ranking: kind priority (oid, http, kv, domain, plain), then longer first,
    then earlier first. Plain runs are cut to ``MAX_ANCHOR_CHARS``.
    """
    found: list[tuple[int, int, int, Anchor]] = []
    for run in _RUN_RE.finditer(payload):
        text = run.group().decode("ascii")
        base = run.start()
        candidates: list[tuple[int, str, AnchorKind]] = []
        candidates += [(m.start(), m.group(), AnchorKind.OID) for m in _OID_RE.finditer(text)]
        candidates += [(m.start(), m.group(), AnchorKind.HTTP) for m in _HTTP_STATUS_RE.finditer(text)]
        header = _HEADER_RE.match(text)
        if header and not text[header.end() :].startswith("//"):
            candidates.append((0, header.group(), AnchorKind.HTTP))
        candidates += [(m.start(), m.group(), AnchorKind.KV) for m in _KV_RE.finditer(text)]
        candidates += [(m.start(), m.group(), AnchorKind.DOMAIN) for m in _DOMAIN_RE.finditer(text)]
        plain = text[:MAX_ANCHOR_CHARS].strip()
        candidates.append((text.find(plain), plain, AnchorKind.PLAIN))
        for start, s, kind in candidates:
            if len(s) >= MIN_ANCHOR_CHARS:
                found.append((_KIND_PRIORITY[kind], -len(s), base + start, Anchor(s, kind)))
    found.sort(key=lambda t: t[:3])
    seen: set[str] = set()
    out = []
    for *_, anchor in found:
        if anchor.text in seen:
            continue
        seen.add(anchor.text)
        out.append(anchor)
        if len(out) == max_anchors:
            break
    return out


@dataclass(frozen=True)
class PayloadFingerprint:
    payload_len: int
    printable_ratio: float
    shannon_entropy_bits: float
    ascii_excerpt: str
    anchors: tuple[Anchor, ...]
    hexdump: str

    def to_dict(self) -> dict:
        return {
            "payload_len": self.payload_len,
            "printable_ratio": self.printable_ratio,
            "shannon_entropy_bits": self.shannon_entropy_bits,
            "ascii_excerpt": self.ascii_excerpt,
            "anchors": [{"text": a.text, "kind": a.kind.value} for a in self.anchors],
            "hexdump": self.hexdump,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> PayloadFingerprint:
        return cls(
            payload_len=int(obj["payload_len"]),
            printable_ratio=float(obj["printable_ratio"]),
            shannon_entropy_bits=float(obj["shannon_entropy_bits"]),
            ascii_excerpt=str(obj["ascii_excerpt"]),
            anchors=tuple(Anchor(a["text"], AnchorKind(a["kind"])) for a in obj["anchors"]),
            hexdump=str(obj["hexdump"]),
        )


def fingerprint(payload: bytes, budget: EvidenceBudget) -> PayloadFingerprint:
    return PayloadFingerprint(
        payload_len=len(payload),
        printable_ratio=printable_ratio(payload),
        shannon_entropy_bits=shannon_entropy(payload),
        ascii_excerpt=ascii_excerpt(payload, budget.max_ascii_excerpt_chars),
        anchors=tuple(extract_anchors(payload, budget.max_anchors_per_sample)),
        hexdump=hexdump_excerpt(payload, budget.max_hexdump_lines_per_sample),
    )


# ---------------------------------------------------------------------------
# window statistics


@dataclass(frozen=True)
class UdpLengthMode:
    length: int
    count: int
    share: float


def udp_length_modes(packets: Sequence[DissectedPacket], top_k: int = 3) -> list[UdpLengthMode]:
    lengths = [p.udp_length for p in packets if p.l4 is L4.UDP]
    if not lengths:
        raise NoUdpPackets("no UDP packets in window")
    counts = Counter(lengths)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]
    return [UdpLengthMode(length, n, n / len(lengths)) for length, n in ranked]


_SYN, _ACK, _FIN, _RST = TcpFlag.SYN, TcpFlag.ACK, TcpFlag.FIN, TcpFlag.RST


@dataclass(frozen=True)
class TcpFlagStats:
    total: int
    syn_only_ratio: float
    ack_only_ratio: float
    synack_ratio: float
    rst_ratio: float
    other_ratio: float

    RATIO_FIELDS = ("syn_only_ratio", "ack_only_ratio", "synack_ratio", "rst_ratio", "other_ratio")

    def to_dict(self) -> dict:
        return {"total": self.total, **{f: getattr(self, f) for f in self.RATIO_FIELDS}}


def _flag_class(flags: TcpFlag) -> str:
    if flags & _RST:
        return "rst_ratio"
    if flags & _FIN:
        return "other_ratio"
    if flags & _SYN:
        return "synack_ratio" if flags & _ACK else "syn_only_ratio"
    if flags & _ACK:
        return "ack_only_ratio"
    return "other_ratio"


def tcp_flag_stats(packets: Sequence[DissectedPacket]) -> TcpFlagStats | None:
    """Partition TCP packets into exclusive flag classes.

    RST wins over everything; FIN without RST counts as other; SYN-only and
    ACK-only exclude FIN/RST and each other (PSH/URG are ignored).
    """
    classes = Counter(_flag_class(p.tcp_flags) for p in packets if p.l4 is L4.TCP)
    total = sum(classes.values())
    if total == 0:
        return None
    return TcpFlagStats(total=total, **{f: classes[f] / total for f in TcpFlagStats.RATIO_FIELDS})


# ---------------------------------------------------------------------------
# the pack


class SourceTag(str, enum.Enum):
    PRIMARY = "PRIMARY"
    SECONDARY = "SECONDARY"


@dataclass(frozen=True)
class PacketSample:
    source_tag: SourceTag
    l4: L4
    src_ip: str
    src_port: int
    dst_ip: str
    dst_port: int
    ts_micros: int
    fingerprint: PayloadFingerprint
    udp_length: int | None = None
    tcp_flags: str | None = None

    def to_dict(self) -> dict:
        return {
            "source_tag": self.source_tag.value,
            "l4": self.l4.value,
            "src_ip": self.src_ip,
            "src_port": self.src_port,
            "dst_ip": self.dst_ip,
            "dst_port": self.dst_port,
            "ts_micros": self.ts_micros,
            "udp_length": self.udp_length,
            "tcp_flags": self.tcp_flags,
            "fingerprint": self.fingerprint.to_dict(),
        }

    @classmethod
    def from_dict(cls, obj: dict) -> PacketSample:
        return cls(
            source_tag=SourceTag(obj["source_tag"]),
            l4=L4(obj["l4"]),
            src_ip=obj["src_ip"],
            src_port=int(obj["src_port"]),
            dst_ip=obj["dst_ip"],
            dst_port=int(obj["dst_port"]),
            ts_micros=int(obj["ts_micros"]),
            udp_length=obj.get("udp_length"),
            tcp_flags=obj.get("tcp_flags"),
            fingerprint=PayloadFingerprint.from_dict(obj["fingerprint"]),
        )


@dataclass(frozen=True)
class EvidencePack:
    incident_id: str
    window_start_s: float
    window_end_s: float
    triage: TriageResult
    top_src_share: float
    scan_packet_count: int
    primary_cluster_size: int
    udp_length_modes: tuple[UdpLengthMode, ...] = ()
    tcp_flag_stats: TcpFlagStats | None = None
    samples: tuple[PacketSample, ...] = ()
    warnings: tuple[str, ...] = ()
    canonical_text: str = field(default="", compare=False)

    @property
    def dominant_l4(self) -> Dominance:
        return self.triage.dominant_l4

    @property
    def victim_ip(self) -> str:
        return self.triage.victim_ip

    @property
    def primary_samples(self) -> list[PacketSample]:
        return [s for s in self.samples if s.source_tag is SourceTag.PRIMARY]

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "window_start_s": self.window_start_s,
            "window_end_s": self.window_end_s,
            "triage": self.triage.to_dict(),
            "top_src_share": self.top_src_share,
            "scan_packet_count": self.scan_packet_count,
            "primary_cluster_size": self.primary_cluster_size,
            "udp_length_modes": [
                {"length": m.length, "count": m.count, "share": m.share} for m in self.udp_length_modes
            ],
            "tcp_flag_stats": self.tcp_flag_stats.to_dict() if self.tcp_flag_stats else None,
            "samples": [s.to_dict() for s in self.samples],
            "warnings": list(self.warnings),
            "canonical_text": self.canonical_text,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, obj: dict) -> EvidencePack:
        """Rebuild a pack; the stored canonical text must match re-serialization."""
        stats = obj.get("tcp_flag_stats")
        pack = cls(
            incident_id=obj["incident_id"],
            window_start_s=float(obj["window_start_s"]),
            window_end_s=float(obj["window_end_s"]),
            triage=TriageResult.from_dict(obj["triage"]),
            top_src_share=float(obj["top_src_share"]),
            scan_packet_count=int(obj["scan_packet_count"]),
            primary_cluster_size=int(obj["primary_cluster_size"]),
            udp_length_modes=tuple(UdpLengthMode(**m) for m in obj.get("udp_length_modes", [])),
            tcp_flag_stats=TcpFlagStats(**stats) if stats else None,
            samples=tuple(PacketSample.from_dict(s) for s in obj.get("samples", [])),
            warnings=tuple(obj.get("warnings", [])),
        )
        text = serialize_pack(pack)
        stored = obj.get("canonical_text")
        if stored is not None and stored != text:
            raise ValueError("stored canonical_text does not match the pack contents")
        return _with_text(pack, text)

    @classmethod
    def from_json(cls, text: str) -> EvidencePack:
        return cls.from_dict(json.loads(text))


def _with_text(pack: EvidencePack, text: str) -> EvidencePack:
    object.__setattr__(pack, "canonical_text", text)
    return pack


def _round_robin(groups: list[list[DissectedPacket]], limit: int) -> list[DissectedPacket]:
    picked = []
    depth = 0
    while len(picked) < limit and any(depth < len(g) for g in groups):
        for g in groups:
            if depth < len(g) and len(picked) < limit:
                picked.append(g[depth])
        depth += 1
    return picked


def _make_sample(pkt: DissectedPacket, tag: SourceTag, budget: EvidenceBudget) -> PacketSample:
    return PacketSample(
        source_tag=tag,
        l4=pkt.l4,
        src_ip=pkt.src_ip,
        src_port=pkt.src_port,
        dst_ip=pkt.dst_ip,
        dst_port=pkt.dst_port,
        ts_micros=pkt.ts_micros,
        udp_length=pkt.udp_length,
        tcp_flags=format_flags(pkt.tcp_flags) if pkt.tcp_flags is not None else None,
        fingerprint=fingerprint(pkt.payload, budget),
    )


def build_evidence_pack(
    packets: Sequence[DissectedPacket],
    triage: TriageResult,
    budget: EvidenceBudget | None = None,
    *,
    incident_id: str = "incident",
    window: tuple[float, float] = (0.0, 0.0),
    top_k_modes: int = 3,
) -> EvidencePack:
    """Scan the first ``max_scan_packets`` packets and assemble the pack.

    When nothing matches the victim/dominant-protocol cluster, the whole scan
    set is used, samples are tagged SECONDARY and a warning is recorded.
    """
    budget = budget or EvidenceBudget()
    if not packets:
        raise EmptyWindow("no packets in incident window")
    scanned = packets[: budget.max_scan_packets]
    dominant = triage.dominant_l4
    wanted = {L4.UDP, L4.TCP} if dominant is Dominance.MIXED else {L4(dominant.value)}
    cluster = [p for p in scanned if p.dst_ip == triage.victim_ip and p.l4 in wanted]
    warnings: list[str] = []
    tag = SourceTag.PRIMARY
    if not cluster:
        cluster = list(scanned)
        tag = SourceTag.SECONDARY
        warnings.append(NO_PRIMARY_CLUSTER)

    udp_pkts = [p for p in cluster if p.l4 is L4.UDP]
    tcp_pkts = [p for p in cluster if p.l4 is L4.TCP]
    modes: list[UdpLengthMode] = []
    udp_picks: list[DissectedPacket] = []
    tcp_picks: list[DissectedPacket] = []
    stats = None

    if dominant in (Dominance.UDP, Dominance.MIXED) and udp_pkts:
        modes = udp_length_modes(udp_pkts, top_k_modes)
        by_len: dict[int, list[DissectedPacket]] = defaultdict(list)
        for p in udp_pkts:
            by_len[p.udp_length].append(p)
        udp_picks = _round_robin([by_len[m.length] for m in modes], budget.max_samples)
    if dominant in (Dominance.TCP, Dominance.MIXED):
        stats = tcp_flag_stats(tcp_pkts)
        tcp_picks = [p for p in tcp_pkts if p.payload][: budget.max_samples]

    if dominant is Dominance.MIXED:
        half = (budget.max_samples + 1) // 2
        n_udp = min(len(udp_picks), max(half, budget.max_samples - len(tcp_picks)))
        n_tcp = min(len(tcp_picks), budget.max_samples - n_udp)
        picks = udp_picks[:n_udp] + tcp_picks[:n_tcp]
    else:
        picks = udp_picks or tcp_picks

    samples = tuple(_make_sample(p, tag, budget) for p in picks)
    if not samples:
        warnings.append(NO_SAMPLES)
    pack = EvidencePack(
        incident_id=incident_id,
        window_start_s=float(window[0]),
        window_end_s=float(window[1]),
        triage=triage,
        top_src_share=top_source_share(scanned),
        scan_packet_count=len(scanned),
        primary_cluster_size=0 if tag is SourceTag.SECONDARY else len(cluster),
        udp_length_modes=tuple(modes),
        tcp_flag_stats=stats,
        samples=samples,
        warnings=tuple(warnings),
    )
    return _with_text(pack, serialize_pack(pack))


# ---------------------------------------------------------------------------
# canonical text. The line helpers are shared with the rule backend so that
# the strings it quotes are guaranteed to appear verbatim.


def fmt3(x: float) -> str:
    return f"{x:.3f}"


def triage_line(name: str, value: object) -> str:
    return f"{name}: {value}"


def flag_stat_line(name: str, value: float) -> str:
    return f"{name}={fmt3(value)}"


def fingerprint_line(fp: PayloadFingerprint) -> str:
    return f"printable_ratio={fmt3(fp.printable_ratio)} entropy_bits={fmt3(fp.shannon_entropy_bits)}"


def mode_line(m: UdpLengthMode) -> str:
    return f"udp.length={m.length} count={m.count} share={fmt3(m.share)}"


PACK_BEGIN = "===== EVIDENCE PACK BEGIN ====="
PACK_END = "===== EVIDENCE PACK END ====="


def serialize_pack(pack: EvidencePack) -> str:
    t = pack.triage
    out = [
        PACK_BEGIN,
        "[HEADER]",
        triage_line("incident_id", pack.incident_id),
        triage_line("window", f"{fmt3(pack.window_start_s)}s--{fmt3(pack.window_end_s)}s"),
        triage_line("scan_packet_count", pack.scan_packet_count),
        triage_line("primary_cluster_packets", pack.primary_cluster_size),
        triage_line("warnings", ", ".join(pack.warnings) if pack.warnings else "none"),
        "[TRIAGE]",
        triage_line("dominant_l4", t.dominant_l4.value),
        triage_line("dominance_score", fmt3(t.dominance_score)),
        triage_line("victim_ip", t.victim_ip),
        triage_line("top_dst_share", fmt3(t.top_dst_share)),
        triage_line("top_src_share", fmt3(pack.top_src_share)),
        triage_line("triage_sample_count", t.sample_count),
        "[UDP_LENGTH_MODES]",
    ]
    out += [mode_line(m) for m in pack.udp_length_modes] or ["(none)"]
    out.append("[TCP_FLAG_STATS]")
    if pack.tcp_flag_stats is None:
        out.append("(none)")
    else:
        s = pack.tcp_flag_stats
        out.append(f"total={s.total}")
        out += [flag_stat_line(f, getattr(s, f)) for f in TcpFlagStats.RATIO_FIELDS]
    out.append("[SAMPLES]")
    for i, smp in enumerate(pack.samples, 1):
        fp = smp.fingerprint
        out.append(f"--- sample {i} [{smp.source_tag.value}] ---")
        out.append(f"five_tuple: {smp.l4.value} {smp.src_ip}:{smp.src_port} -> {smp.dst_ip}:{smp.dst_port}")
        if smp.udp_length is not None:
            out.append(f"udp.length: {smp.udp_length}")
        if smp.tcp_flags is not None:
            out.append(f"tcp.flags: {smp.tcp_flags}")
        out.append(f"payload_len: {fp.payload_len}")
        out.append(fingerprint_line(fp))
        anchors = ", ".join(f"`{a.text}` ({a.kind.value})" for a in fp.anchors)
        out.append(f"anchors: {anchors or '(none)'}")
        out.append(f"ascii_excerpt: {fp.ascii_excerpt}")
        out.append("hexdump:")
        out += ["  " + line for line in fp.hexdump.splitlines()]
    out.append(PACK_END)
    return "\n".join(out) + "\n"
