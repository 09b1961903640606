"""Payload-style classification and the deterministic LocalRules decision backend."""

from __future__ import annotations

import json
from collections import Counter
from typing import Iterable, Sequence

from ..evidence import (
    AnchorKind,
    EvidencePack,
    PacketSample,
    fingerprint_line,
    flag_stat_line,
    triage_line,
)
from ..triage import Dominance, TriageResult
from .schema import (
    AnalysisTrace,
    AttackFamily,
    AttackType,
    IncidentReport,
    PayloadStyle,
    Verdict,
)

TEXT_PRINTABLE_MIN = 0.8
NOISE_PRINTABLE_MAX = 0.6
NOISE_ENTROPY_MIN = 6.5
FLOOD_RATIO_MIN = 0.9

CONFIDENCE_REFLECTION = 0.9
CONFIDENCE_FLOOD = 0.8
CONFIDENCE_UNKNOWN = 0.4

_STRUCTURAL = {AnchorKind.OID, AnchorKind.HTTP, AnchorKind.KV, AnchorKind.DOMAIN}


def sample_style(sample: PacketSample) -> PayloadStyle:
    fp = sample.fingerprint
    kinds = Counter(a.kind for a in fp.anchors)
    if kinds[AnchorKind.OID]:
        return PayloadStyle.ASN1_OID_LIKE
    if any(a.text.startswith("HTTP/") for a in fp.anchors) or kinds[AnchorKind.HTTP] >= 2:
        return PayloadStyle.HTTP_LIKE
    if kinds[AnchorKind.KV] >= 2:
        return PayloadStyle.KV_SEMICOLON_LIST
    if fp.printable_ratio >= TEXT_PRINTABLE_MIN and kinds[AnchorKind.PLAIN]:
        return PayloadStyle.TEXT_BANNER_LIKE
    # Short printable runs turn up by chance in random bytes, so only
    # structural anchors disqualify noise.
    if (
        fp.printable_ratio < NOISE_PRINTABLE_MAX
        and fp.shannon_entropy_bits > NOISE_ENTROPY_MIN
        and not any(kinds[k] for k in _STRUCTURAL)
    ):
        return PayloadStyle.RANDOM_NOISE
    return PayloadStyle.MIXED_OR_UNCLEAR


def classify_payload_style(samples: Sequence[PacketSample]) -> PayloadStyle:
    """Plurality vote over per-sample styles; a tie or no samples gives mixed_or_unclear."""
    votes = Counter(sample_style(s) for s in samples).most_common()
    if not votes or (len(votes) > 1 and votes[0][1] == votes[1][1]):
        return PayloadStyle.MIXED_OR_UNCLEAR
    return votes[0][0]


# ---------------------------------------------------------------------------

_LDAP_ATTRS = (
    "supportedLDAPVersion",
    "isGlobalCatalogReady",
    "domainFunctionality",
    "namingContexts",
    "supportedCapabilities",
    "dnsHostName",
    "defaultNamingContext",
)
_LDAP_OID_PREFIX = "1.2.840.113556"
_SNMP_MARKERS = ("public", "SNMP")
_NETBIOS_MARKERS = ("__MSBROWSE__", "WORKGROUP")

_ACTIONS = {
    AttackFamily.REFLECTION: (
        "Rate-limit or drop inbound UDP responses from the reflecting sources toward the victim",
        "Notify upstream providers to filter spoofed requests aimed at the reflectors",
        "Keep the Evidence Pack and audit log for incident review",
    ),
    AttackFamily.DIRECT_FLOOD: (
        "Apply per-source rate limits and flood protection at the edge for the victim address",
        "Enable upstream scrubbing or blackholing if link capacity is at risk",
        "Keep the Evidence Pack and audit log for incident review",
    ),
    AttackFamily.UNKNOWN: (
        "Escalate to an analyst for manual review of the Evidence Pack",
        "Collect a longer capture of the window to gather more evidence",
        "Watch victim counters for recurrence before acting",
    ),
}
_ACTIONS[AttackFamily.MIXED] = _ACTIONS[AttackFamily.UNKNOWN]


def _primary_anchors(pack: EvidencePack) -> list[tuple[str, AnchorKind]]:
    out: list[tuple[str, AnchorKind]] = []
    for s in pack.primary_samples:
        for a in s.fingerprint.anchors:
            if (a.text, a.kind) not in out:
                out.append((a.text, a.kind))
    return out


def _find(anchors: Iterable[tuple[str, AnchorKind]], needles: Sequence[str]) -> list[str]:
    return [text for text, _ in anchors if any(n in text for n in needles)]


def _majority_domain(pack: EvidencePack) -> list[str]:
    prim = pack.primary_samples
    with_domain = [s for s in prim if any(a.kind is AnchorKind.DOMAIN for a in s.fingerprint.anchors)]
    if not prim or len(with_domain) * 2 <= len(prim):
        return []
    return [a.text for s in with_domain for a in s.fingerprint.anchors if a.kind is AnchorKind.DOMAIN]


def _evidence(quotes: Sequence[str], label: str, fallback: str) -> list[str]:
    items = [f"PRIMARY sample anchor `{q}` supports {label}" for q in dict.fromkeys(quotes)][:4]
    items.append(f"triage reports `{fallback}`")
    return items


def _decide_udp(pack: EvidencePack, style: PayloadStyle) -> tuple[AttackType, list[str]] | None:
    anchors = _primary_anchors(pack)
    if style is PayloadStyle.MIXED_OR_UNCLEAR:
        return None
    if style is PayloadStyle.ASN1_OID_LIKE:
        hits = _find(anchors, (_LDAP_OID_PREFIX,) + _LDAP_ATTRS)
        if hits:
            return AttackType.LDAP, hits
    hits = _find(anchors, _SNMP_MARKERS)
    if hits:
        return AttackType.SNMP, hits
    if style is PayloadStyle.KV_SEMICOLON_LIST:
        hits = _find(anchors, ("ServerName;",))
        if hits:
            return AttackType.MSSQL, hits + _find(anchors, ("InstanceName;",))
    if style is PayloadStyle.HTTP_LIKE:
        hits = _find(anchors, ("LOCATION:", "gatedesc.xml"))
        if hits:
            return AttackType.SSDP, _find(anchors, ("HTTP/",)) + hits
    hits = _majority_domain(pack)
    if hits:
        return AttackType.DNS, hits
    hits = _find(anchors, _NETBIOS_MARKERS)
    if hits:
        return AttackType.NETBIOS, hits
    if style is PayloadStyle.RANDOM_NOISE:
        return AttackType.UDP_FLOOD, []
    return None


def local_backend_decide(pack: EvidencePack, triage: TriageResult) -> IncidentReport:
    """Deterministic stand-in for a language model; its output always validates."""
    style = classify_payload_style(pack.primary_samples)
    dominant = triage.dominant_l4
    l4_line = triage_line("dominant_l4", dominant.value)
    victim_line = triage_line("victim_ip", triage.victim_ip)
    n_primary = len(pack.primary_samples)

    attack_type = AttackType.UNKNOWN
    evidence: list[str] = []
    stats = pack.tcp_flag_stats

    if dominant is Dominance.TCP and stats is not None:
        if stats.syn_only_ratio >= FLOOD_RATIO_MIN:
            attack_type = AttackType.SYN_FLOOD
            stat = flag_stat_line("syn_only_ratio", stats.syn_only_ratio)
        elif stats.ack_only_ratio >= FLOOD_RATIO_MIN:
            attack_type = AttackType.ACK_FLOOD
            stat = flag_stat_line("ack_only_ratio", stats.ack_only_ratio)
        if attack_type is not AttackType.UNKNOWN:
            evidence = [f"TCP flag statistics show `{stat}` over the PRIMARY cluster", f"triage reports `{l4_line}`"]
    elif dominant is not Dominance.TCP:
        decided = _decide_udp(pack, style)
        if decided is not None:
            attack_type, hits = decided
            if attack_type is AttackType.UDP_FLOOD:
                noise = [fingerprint_line(s.fingerprint) for s in pack.primary_samples][:2]
                evidence = [f"noise-like PRIMARY payload: `{line}`" for line in dict.fromkeys(noise)]
                evidence.append(f"triage reports `{l4_line}`")
            else:
                evidence = _evidence(hits, attack_type.value, l4_line)

    if attack_type is AttackType.UNKNOWN:
        family = AttackFamily.MIXED if dominant is Dominance.MIXED else AttackFamily.UNKNOWN
        verdict = Verdict.UNCERTAIN
        confidence = CONFIDENCE_UNKNOWN
        evidence = [f"triage reports `{l4_line}`", f"likely victim `{victim_line}`"]
        decision = "no decisive structural or flag evidence; left as Unknown"
    elif attack_type in (AttackType.UDP_FLOOD, AttackType.SYN_FLOOD, AttackType.ACK_FLOOD):
        family = AttackFamily.DIRECT_FLOOD
        verdict = Verdict.ATTACK
        confidence = CONFIDENCE_FLOOD
        decision = f"{dominant.value}-dominant direct flood: {attack_type.value}"
    else:
        family = AttackFamily.REFLECTION
        verdict = Verdict.ATTACK
        confidence = CONFIDENCE_REFLECTION
        decision = f"{style.value} payload structure points to {attack_type.value}"

    first_quote = evidence[0][evidence[0].index("`") :]
    first_quote = first_quote[: first_quote.index("`", 1) + 1]
    reasoning = (
        f"The Evidence Pack shows {first_quote} for victim {triage.victim_ip}, "
        f"so the incident is labelled {attack_type.value} ({family.value})."
    )
    return IncidentReport(
        verdict=verdict,
        attack_family=family,
        attack_type=attack_type,
        analysis_trace=AnalysisTrace(style, n_primary, decision),
        key_evidence=tuple(evidence[:6]),
        reasoning=reasoning,
        recommended_actions=_ACTIONS[family],
        confidence=confidence,
    )


class LocalRulesBackend:
    """Backend that ignores the prompt and answers from the pack with fixed rules."""

    name = "local"

    def complete(self, messages: list[dict], pack: EvidencePack, triage: TriageResult) -> str:
        return json.dumps(local_backend_decide(pack, triage).to_dict(), indent=2)
