"""Sampled-packet triage: dominant L4 protocol and likely victim."""

from __future__ import annotations

import enum
import ipaddress
import json
from collections import Counter
from dataclasses import dataclass
from pathlib import Path
from typing import Protocol, Sequence, TypeVar

from .pcap_codec import L4

DEFAULT_MIXED_THRESHOLD = 0.7
DEFAULT_SAMPLING_RATE = 1


class EmptyInput(ValueError):
    """No packets in the window, so there is nothing to route."""


class Dominance(str, enum.Enum):
    UDP = "UDP"
    TCP = "TCP"
    MIXED = "MIXED"


class _Sampled(Protocol):
    dst_ip: str
    src_ip: str
    l4: L4


P = TypeVar("P", bound=_Sampled)


@dataclass(frozen=True)
class TriageResult:
    dominant_l4: Dominance
    dominance_score: float
    victim_ip: str
    top_dst_share: float
    sample_count: int

    def to_dict(self) -> dict:
        return {
            "dominant_l4": self.dominant_l4.value,
            "dominance_score": self.dominance_score,
            "victim_ip": self.victim_ip,
            "top_dst_share": self.top_dst_share,
            "sample_count": self.sample_count,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> TriageResult:
        return cls(
            dominant_l4=Dominance(obj["dominant_l4"]),
            dominance_score=float(obj["dominance_score"]),
            victim_ip=str(obj["victim_ip"]),
            top_dst_share=float(obj["top_dst_share"]),
            sample_count=int(obj["sample_count"]),
        )


@dataclass(frozen=True)
class SampledPacket:
    """Header-only packet from a pre-sampled export (no payload, no flags)."""

    ts_s: float
    src_ip: str
    dst_ip: str
    l4: L4
    src_port: int
    dst_port: int


def sample_packets(packets: Sequence[P], rate_n: int) -> list[P]:
    """Systematic 1-in-``rate_n`` sampling: indices 0, n, 2n, ..."""
    if rate_n < 1:
        raise ValueError(f"rate_n must be >= 1, got {rate_n}")
    if not packets:
        raise EmptyInput("no packets in window")
    return list(packets[::rate_n])


def compute_dominance(
    samples: Sequence[_Sampled], mixed_threshold: float = DEFAULT_MIXED_THRESHOLD
) -> tuple[Dominance, float]:
    if not samples:
        raise EmptyInput("no samples")
    n_udp = sum(1 for s in samples if s.l4 is L4.UDP)
    n_tcp = sum(1 for s in samples if s.l4 is L4.TCP)
    score = max(n_udp, n_tcp) / len(samples)
    if score < mixed_threshold:
        return Dominance.MIXED, score
    return (Dominance.UDP if n_udp >= n_tcp else Dominance.TCP), score


def _top_share(addresses: Sequence[str]) -> tuple[str, float]:
    counts = Counter(addresses)
    best = max(counts.items(), key=lambda kv: (kv[1], -int(ipaddress.IPv4Address(kv[0]))))
    return best[0], best[1] / len(addresses)


def guess_victim(samples: Sequence[_Sampled]) -> tuple[str, float]:
    """Most frequent destination and its share; ties go to the lowest address."""
    if not samples:
        raise EmptyInput("no samples")
    return _top_share([s.dst_ip for s in samples])


def top_source_share(packets: Sequence[_Sampled]) -> float:
    if not packets:
        return 0.0
    return _top_share([p.src_ip for p in packets])[1]


def triage(
    packets: Sequence[_Sampled],
    rate_n: int = DEFAULT_SAMPLING_RATE,
    mixed_threshold: float = DEFAULT_MIXED_THRESHOLD,
) -> TriageResult:
    samples = sample_packets(packets, rate_n)
    dominant, score = compute_dominance(samples, mixed_threshold)
    victim, share = guess_victim(samples)
    return TriageResult(dominant, score, victim, share, len(samples))


def read_sampled_jsonl(path: str | Path) -> list[SampledPacket]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(
                    SampledPacket(
                        ts_s=float(obj["ts_s"]),
                        src_ip=str(ipaddress.IPv4Address(obj["src_ip"])),
                        dst_ip=str(ipaddress.IPv4Address(obj["dst_ip"])),
                        l4=L4(str(obj["l4"]).upper()),
                        src_port=int(obj["src_port"]),
                        dst_port=int(obj["dst_port"]),
                    )
                )
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad sample: {exc}") from exc
    return out
