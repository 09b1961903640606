"""Classic pcap reading/writing and Ethernet/IPv4/TCP/UDP dissection."""

from __future__ import annotations

import enum
import ipaddress
import re
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import BinaryIO, Iterable, Iterator, Sequence, Union

MAGIC_USEC = 0xA1B2C3D4
MAGIC_NSEC = 0xA1B23C4D
LINKTYPE_ETHERNET = 1

ETHERTYPE_IPV4 = 0x0800
ETHERTYPE_VLAN = 0x8100
ETHERTYPE_QINQ = 0x88A8

IPPROTO_TCP = 6
IPPROTO_UDP = 17

_GLOBAL_HEADER_LEN = 24
_RECORD_HEADER_LEN = 16


class PcapError(Exception):
    """Base class for capture-file decoding failures."""


class BadMagic(PcapError):
    pass


class TruncatedRecord(PcapError):
    pass


class TruncatedCaptureWarning(UserWarning):
    """The final record of a capture was cut short; earlier records were kept."""


@dataclass(frozen=True)
class PacketRecord:
    ts_micros: int
    captured_len: int
    original_len: int
    link_bytes: bytes
    link_type: int = LINKTYPE_ETHERNET


class L4(str, enum.Enum):
    UDP = "UDP"
    TCP = "TCP"


class TcpFlag(enum.IntFlag):
    FIN = 0x01
    SYN = 0x02
    RST = 0x04
    PSH = 0x08
    ACK = 0x10
    URG = 0x20


_FLAG_ORDER = (TcpFlag.SYN, TcpFlag.ACK, TcpFlag.FIN, TcpFlag.RST, TcpFlag.PSH, TcpFlag.URG)


def format_flags(flags: TcpFlag) -> str:
    """Render flags as e.g. ``SYN|ACK``; an empty set renders as ``NONE``."""
    names = [f.name for f in _FLAG_ORDER if flags & f]
    return "|".join(names) if names else "NONE"


def parse_flags(text: str) -> TcpFlag:
    flags = TcpFlag(0)
    if text and text != "NONE":
        for name in text.split("|"):
            flags |= TcpFlag[name]
    return flags


@dataclass(frozen=True)
class DissectedPacket:
    ts_micros: int
    src_ip: str
    dst_ip: str
    l4: L4
    src_port: int
    dst_port: int
    tcp_flags: TcpFlag | None = None
    udp_length: int | None = None
    payload: bytes = b""

    @property
    def ts_s(self) -> float:
        return self.ts_micros / 1_000_000


class SkipReason(str, enum.Enum):
    NON_ETHERNET = "NonEthernet"
    NON_IPV4 = "NonIPv4"
    NON_TCP_UDP = "NonTcpUdp"
    TRUNCATED = "Truncated"


@dataclass(frozen=True)
class Skip:
    reason: SkipReason
    detail: str = ""


# ---------------------------------------------------------------------------
# pcap container


def _header_layout(magic_bytes: bytes) -> tuple[str, bool]:
    """Return (struct byte-order prefix, nanosecond timestamps) for a magic."""
    for order in ("<", ">"):
        (magic,) = struct.unpack(order + "I", magic_bytes)
        if magic == MAGIC_USEC:
            return order, False
        if magic == MAGIC_NSEC:
            return order, True
    raise BadMagic(f"unrecognized pcap magic {magic_bytes.hex()}")


def read_pcap(source: Union[bytes, bytearray, BinaryIO]) -> Iterator[PacketRecord]:
    """Yield records from a classic pcap stream in file order.

    A record whose header or body is cut off by end-of-stream ends iteration
    with a :class:`TruncatedCaptureWarning`. A global header cut short raises
    :class:`TruncatedRecord`.
    """
    data = bytes(source) if isinstance(source, (bytes, bytearray)) else source.read()
    if len(data) < 4:
        raise BadMagic("stream too short for a pcap magic")
    order, nanos = _header_layout(data[:4])
    if len(data) < _GLOBAL_HEADER_LEN:
        raise TruncatedRecord("global header truncated")
    link_type = struct.unpack_from(order + "I", data, 20)[0] & 0x0FFFFFFF

    record_hdr = struct.Struct(order + "IIII")
    offset = _GLOBAL_HEADER_LEN
    index = 0
    while offset < len(data):
        if len(data) - offset < _RECORD_HEADER_LEN:
            warnings.warn(
                f"record {index}: header truncated at offset {offset}",
                TruncatedCaptureWarning,
                stacklevel=2,
            )
            return
        ts_sec, ts_frac, incl_len, orig_len = record_hdr.unpack_from(data, offset)
        offset += _RECORD_HEADER_LEN
        if incl_len > len(data) - offset:
            warnings.warn(
                f"record {index}: promises {incl_len} bytes, {len(data) - offset} remain",
                TruncatedCaptureWarning,
                stacklevel=2,
            )
            return
        body = data[offset : offset + incl_len]
        offset += incl_len
        micros = ts_sec * 1_000_000 + (ts_frac // 1000 if nanos else ts_frac)
        yield PacketRecord(
            ts_micros=micros,
            captured_len=incl_len,
            original_len=max(orig_len, incl_len),
            link_bytes=body,
            link_type=link_type,
        )
        index += 1


def read_pcap_strict(source: Union[bytes, bytearray, BinaryIO]) -> list[PacketRecord]:
    """Like :func:`read_pcap` but raise :class:`TruncatedRecord` instead of warning."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", TruncatedCaptureWarning)
        try:
            return list(read_pcap(source))
        except TruncatedCaptureWarning as exc:
            raise TruncatedRecord(str(exc)) from None


def write_pcap(
    records: Iterable[PacketRecord],
    stream: BinaryIO,
    *,
    big_endian: bool = False,
    nanosecond: bool = False,
    snaplen: int = 65535,
) -> None:
    order = ">" if big_endian else "<"
    magic = MAGIC_NSEC if nanosecond else MAGIC_USEC
    stream.write(struct.pack(order + "IHHiIII", magic, 2, 4, 0, 0, snaplen, LINKTYPE_ETHERNET))
    for rec in records:
        sec, micros = divmod(rec.ts_micros, 1_000_000)
        frac = micros * 1000 if nanosecond else micros
        stream.write(struct.pack(order + "IIII", sec, frac, rec.captured_len, rec.original_len))
        stream.write(rec.link_bytes)


def load_pcap(path: str | Path) -> list[PacketRecord]:
    with open(path, "rb") as fh:
        return list(read_pcap(fh))


# ---------------------------------------------------------------------------
# dissection


def dissect(record: PacketRecord) -> DissectedPacket | Skip:
    """Decode one Ethernet frame down to its L4 payload.

    Never raises: anything unsupported or malformed comes back as a Skip.
    """
    if record.link_type != LINKTYPE_ETHERNET:
        return Skip(SkipReason.NON_ETHERNET, f"link type {record.link_type}")
    frame = record.link_bytes
    if len(frame) < 14:
        return Skip(SkipReason.TRUNCATED, "ethernet header")
    ethertype = int.from_bytes(frame[12:14], "big")
    ip_off = 14
    if ethertype == ETHERTYPE_VLAN:
        if len(frame) < 18:
            return Skip(SkipReason.TRUNCATED, "vlan tag")
        ethertype = int.from_bytes(frame[16:18], "big")
        ip_off = 18
        if ethertype in (ETHERTYPE_VLAN, ETHERTYPE_QINQ):
            return Skip(SkipReason.NON_IPV4, "stacked vlan tags")
    if ethertype != ETHERTYPE_IPV4:
        return Skip(SkipReason.NON_IPV4, f"ethertype 0x{ethertype:04x}")

    ip = frame[ip_off:]
    if len(ip) < 20:
        return Skip(SkipReason.TRUNCATED, "ipv4 header")
    if ip[0] >> 4 != 4:
        return Skip(SkipReason.NON_IPV4, f"ip version {ip[0] >> 4}")
    ihl = (ip[0] & 0x0F) * 4
    total_len = int.from_bytes(ip[2:4], "big")
    if ihl < 20 or len(ip) < ihl or total_len < ihl:
        return Skip(SkipReason.TRUNCATED, "ipv4 header length")
    frag_offset = int.from_bytes(ip[6:8], "big") & 0x1FFF
    proto = ip[9]
    if proto not in (IPPROTO_TCP, IPPROTO_UDP):
        return Skip(SkipReason.NON_TCP_UDP, f"ip proto {proto}")
    if frag_offset:
        return Skip(SkipReason.NON_TCP_UDP, "non-initial fragment")
    src_ip = str(ipaddress.IPv4Address(ip[12:16]))
    dst_ip = str(ipaddress.IPv4Address(ip[16:20]))
    # Total length bounds the segment; anything past it is link padding.
    segment = ip[ihl : min(len(ip), total_len)]

    if proto == IPPROTO_UDP:
        if len(segment) < 8:
            return Skip(SkipReason.TRUNCATED, "udp header")
        src_port, dst_port, udp_len = struct.unpack_from("!HHH", segment)
        if udp_len < 8:
            return Skip(SkipReason.TRUNCATED, f"udp length {udp_len}")
        return DissectedPacket(
            ts_micros=record.ts_micros,
            src_ip=src_ip,
            dst_ip=dst_ip,
            l4=L4.UDP,
            src_port=src_port,
            dst_port=dst_port,
            udp_length=udp_len,
            payload=bytes(segment[8:udp_len]),
        )

    if len(segment) < 20:
        return Skip(SkipReason.TRUNCATED, "tcp header")
    src_port, dst_port = struct.unpack_from("!HH", segment)
    data_off = (segment[12] >> 4) * 4
    if data_off < 20 or data_off > len(segment):
        return Skip(SkipReason.TRUNCATED, "tcp data offset")
    return DissectedPacket(
        ts_micros=record.ts_micros,
        src_ip=src_ip,
        dst_ip=dst_ip,
        l4=L4.TCP,
        src_port=src_port,
        dst_port=dst_port,
        tcp_flags=TcpFlag(segment[13] & 0x3F),
        payload=bytes(segment[data_off:]),
    )


def dissect_all(records: Iterable[PacketRecord]) -> list[DissectedPacket]:
    return [p for p in map(dissect, records) if isinstance(p, DissectedPacket)]


def load_packets(path: str | Path) -> list[DissectedPacket]:
    return dissect_all(load_pcap(path))


def _checksum(data: bytes) -> int:
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def encode_frame(pkt: DissectedPacket, *, vlan: int | None = None, ttl: int = 64) -> bytes:
    """Build an Ethernet/IPv4 frame carrying ``pkt`` (inverse of :func:`dissect`).

    Frames shorter than the 60-byte Ethernet minimum are zero padded.
    """
    if pkt.l4 is L4.UDP:
        udp_len = pkt.udp_length if pkt.udp_length is not None else 8 + len(pkt.payload)
        l4 = struct.pack("!HHHH", pkt.src_port, pkt.dst_port, udp_len, 0) + pkt.payload
        proto = IPPROTO_UDP
    else:
        flags = int(pkt.tcp_flags or 0)
        l4 = struct.pack("!HHIIBBHHH", pkt.src_port, pkt.dst_port, 0, 0, 5 << 4, flags, 65535, 0, 0)
        l4 += pkt.payload
        proto = IPPROTO_TCP
    ip_hdr = struct.pack(
        "!BBHHHBBH4s4s",
        0x45,
        0,
        20 + len(l4),
        0,
        0,
        ttl,
        proto,
        0,
        ipaddress.IPv4Address(pkt.src_ip).packed,
        ipaddress.IPv4Address(pkt.dst_ip).packed,
    )
    ip_hdr = ip_hdr[:10] + struct.pack("!H", _checksum(ip_hdr)) + ip_hdr[12:]
    eth = b"\x02\x00\x00\x00\x00\x02" + b"\x02\x00\x00\x00\x00\x01"
    if vlan is not None:
        eth += struct.pack("!HH", ETHERTYPE_VLAN, vlan & 0x0FFF)
    eth += struct.pack("!H", ETHERTYPE_IPV4)
    frame = eth + ip_hdr + l4
    if len(frame) < 60:
        frame += b"\x00" * (60 - len(frame))
    return frame


def to_record(pkt: DissectedPacket, **kwargs) -> PacketRecord:
    frame = encode_frame(pkt, **kwargs)
    return PacketRecord(pkt.ts_micros, len(frame), len(frame), frame)


def write_packets(packets: Iterable[DissectedPacket], path: str | Path) -> None:
    with open(path, "wb") as fh:
        write_pcap((to_record(p) for p in packets), fh)


# ---------------------------------------------------------------------------
# time slicing


def slice_window(
    packets: Sequence[DissectedPacket],
    start_s: float,
    end_s: float,
    origin_micros: int | None = None,
) -> list[DissectedPacket]:
    """Packets with ``start_s <= ts - origin < end_s``, order preserved.

    The origin defaults to the first packet's timestamp.
    """
    if start_s > end_s:
        raise ValueError(f"window start {start_s} after end {end_s}")
    if not packets:
        return []
    origin = packets[0].ts_micros if origin_micros is None else origin_micros
    lo = round(start_s * 1_000_000)
    hi = round(end_s * 1_000_000)
    return [p for p in packets if lo <= p.ts_micros - origin < hi]


_SLICE_RE = re.compile(r"^(\d+(?:\.\d+)?)s--(\d+(?:\.\d+)?)s\.pcap$")


def parse_slice_name(name: str) -> tuple[float, float]:
    """``"577s--609s.pcap"`` -> ``(577.0, 609.0)``."""
    m = _SLICE_RE.match(Path(name).name)
    if not m:
        raise ValueError(f"not a slice file name: {name!r}")
    return float(m.group(1)), float(m.group(2))


def slice_name(start_s: float, end_s: float) -> str:
    def fmt(v: float) -> str:
        return str(int(v)) if float(v).is_integer() else f"{v:g}"

    return f"{fmt(start_s)}s--{fmt(end_s)}s.pcap"
