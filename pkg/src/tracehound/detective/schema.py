"""Incident report schema plus the Quote Rule and protocol-gate validators."""

from __future__ import annotations

import enum
import json
import math
import re
from dataclasses import dataclass
from typing import Any

from ..evidence import EvidencePack
from ..triage import Dominance, TriageResult

MAX_REASONING_CHARS = 600


class Verdict(str, enum.Enum):
    ATTACK = "attack"
    BENIGN = "benign"
    UNCERTAIN = "uncertain"


class AttackFamily(str, enum.Enum):
    REFLECTION = "ReflectionAmplification"
    DIRECT_FLOOD = "DirectFlood"
    MIXED = "Mixed"
    UNKNOWN = "Unknown"


class AttackType(str, enum.Enum):
    UDP_FLOOD = "UDP Flood"
    SYN_FLOOD = "SYN Flood"
    ACK_FLOOD = "ACK Flood"
    HTTP2_RAPID_RESET = "HTTP/2 Rapid Reset"
    DNS = "DNS Reflection"
    NETBIOS = "NetBIOS Reflection"
    LDAP = "LDAP/CLDAP Reflection"
    SNMP = "SNMP Reflection"
    MSSQL = "MSSQL Reflection"
    SSDP = "SSDP/UPnP Reflection"
    NTP = "NTP Reflection"
    OTHER_REFLECTION = "Other Reflection"
    UNKNOWN = "Unknown"


REFLECTION_TYPES = frozenset(
    {
        AttackType.DNS,
        AttackType.NETBIOS,
        AttackType.LDAP,
        AttackType.SNMP,
        AttackType.MSSQL,
        AttackType.SSDP,
        AttackType.NTP,
        AttackType.OTHER_REFLECTION,
    }
)
TCP_ALLOWED = frozenset(
    {AttackType.SYN_FLOOD, AttackType.ACK_FLOOD, AttackType.HTTP2_RAPID_RESET, AttackType.UNKNOWN}
)
TCP_ONLY = frozenset({AttackType.SYN_FLOOD, AttackType.ACK_FLOOD})


class PayloadStyle(str, enum.Enum):
    RANDOM_NOISE = "random_noise"
    HTTP_LIKE = "http_like"
    ASN1_OID_LIKE = "asn1_oid_like"
    KV_SEMICOLON_LIST = "kv_semicolon_list"
    TEXT_BANNER_LIKE = "text_banner_like"
    MIXED_OR_UNCLEAR = "mixed_or_unclear"


@dataclass(frozen=True)
class AnalysisTrace:
    payload_style: PayloadStyle
    primary_samples_checked: int
    decision: str

    def to_dict(self) -> dict:
        return {
            "payload_style": self.payload_style.value,
            "primary_samples_checked": self.primary_samples_checked,
            "decision": self.decision,
        }


@dataclass(frozen=True)
class IncidentReport:
    verdict: Verdict
    attack_family: AttackFamily
    attack_type: AttackType
    analysis_trace: AnalysisTrace
    key_evidence: tuple[str, ...]
    reasoning: str
    recommended_actions: tuple[str, ...]
    confidence: float

    def to_dict(self) -> dict:
        return {
            "verdict": self.verdict.value,
            "attack_family": self.attack_family.value,
            "attack_type": self.attack_type.value,
            "analysis_trace": self.analysis_trace.to_dict(),
            "key_evidence": list(self.key_evidence),
            "reasoning": self.reasoning,
            "recommended_actions": list(self.recommended_actions),
            "confidence": self.confidence,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2) + "\n"


class ErrorKind(str, enum.Enum):
    PARSE_FAILURE = "ParseFailure"
    MISSING_FIELD = "MissingField"
    EXTRA_FIELD = "ExtraField"
    BAD_TYPE = "BadType"
    BAD_ENUM = "BadEnum"
    BAD_CARDINALITY = "BadCardinality"
    BAD_RANGE = "BadRange"
    QUOTE_MISSING = "QuoteMissing"
    QUOTE_NOT_IN_PACK = "QuoteNotInPack"
    GATE_VIOLATION = "GateViolation"


@dataclass(frozen=True)
class ValidationError:
    kind: ErrorKind
    path: str
    message: str

    def __str__(self) -> str:
        return f"[{self.kind.value}] {self.path}: {self.message}"

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "path": self.path, "message": self.message}


class ReportRejected(ValueError):
    """Raised by :func:`parse_and_validate`; ``errors`` lists every violation."""

    def __init__(self, errors: list[ValidationError]):
        self.errors = errors
        super().__init__("; ".join(map(str, errors)))


TOP_LEVEL_FIELDS = (
    "verdict",
    "attack_family",
    "attack_type",
    "analysis_trace",
    "key_evidence",
    "reasoning",
    "recommended_actions",
    "confidence",
)
TRACE_FIELDS = ("payload_style", "primary_samples_checked", "decision")

_FENCE_RE = re.compile(r"^```[A-Za-z0-9_-]*[ \t]*\n(.*?)\n?```$", re.DOTALL)
_QUOTE_RE = re.compile(r"`([^`\n]+)`")


def strip_fences(raw: str) -> str:
    text = raw.strip()
    m = _FENCE_RE.match(text)
    return m.group(1).strip() if m else text


def quoted_spans(text: str) -> list[str]:
    return _QUOTE_RE.findall(text)


# ---------------------------------------------------------------------------
# schema checks over the decoded JSON object


def _err(errors: list, kind: ErrorKind, path: str, message: str) -> None:
    errors.append(ValidationError(kind, path, message))


def _check_keys(obj: dict, allowed: tuple[str, ...], prefix: str, errors: list) -> None:
    for key in allowed:
        if key not in obj:
            _err(errors, ErrorKind.MISSING_FIELD, prefix + key, "required field is missing")
    for key in obj:
        if key not in allowed:
            _err(errors, ErrorKind.EXTRA_FIELD, prefix + key, "field is not part of the schema; remove it")


def _enum_value(obj: dict, key: str, enum_cls: type[enum.Enum], path: str, errors: list):
    if key not in obj:
        return None
    value = obj[key]
    allowed = [e.value for e in enum_cls]
    if not isinstance(value, str) or value not in allowed:
        _err(errors, ErrorKind.BAD_ENUM, path, f"got {value!r}; allowed values: {allowed}")
        return None
    return enum_cls(value)


def _string_list(obj: dict, key: str, lo: int, hi: int, errors: list) -> list[str] | None:
    if key not in obj:
        return None
    value = obj[key]
    if not isinstance(value, list):
        _err(errors, ErrorKind.BAD_TYPE, key, f"must be a list of {lo}-{hi} strings")
        return None
    ok = True
    if not lo <= len(value) <= hi:
        _err(errors, ErrorKind.BAD_CARDINALITY, key, f"has {len(value)} items; need {lo} to {hi}")
        ok = False
    for i, item in enumerate(value):
        if not isinstance(item, str) or not item.strip():
            _err(errors, ErrorKind.BAD_TYPE, f"{key}[{i}]", "must be a non-empty string")
            ok = False
    return value if ok else None


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_schema(obj: dict) -> tuple[dict[str, Any], list[ValidationError]]:
    """Validate structure; returns the fields that passed plus all errors."""
    errors: list[ValidationError] = []
    good: dict[str, Any] = {}
    _check_keys(obj, TOP_LEVEL_FIELDS, "", errors)

    good["verdict"] = _enum_value(obj, "verdict", Verdict, "verdict", errors)
    good["attack_family"] = _enum_value(obj, "attack_family", AttackFamily, "attack_family", errors)
    good["attack_type"] = _enum_value(obj, "attack_type", AttackType, "attack_type", errors)

    trace = obj.get("analysis_trace")
    if "analysis_trace" in obj:
        if not isinstance(trace, dict):
            _err(errors, ErrorKind.BAD_TYPE, "analysis_trace", "must be an object")
        else:
            n_before = len(errors)
            _check_keys(trace, TRACE_FIELDS, "analysis_trace.", errors)
            style = _enum_value(trace, "payload_style", PayloadStyle, "analysis_trace.payload_style", errors)
            good["payload_style"] = style
            checked = trace.get("primary_samples_checked")
            if "primary_samples_checked" in trace:
                if not isinstance(checked, int) or isinstance(checked, bool):
                    _err(errors, ErrorKind.BAD_TYPE, "analysis_trace.primary_samples_checked", "must be an integer")
                elif checked < 0:
                    _err(errors, ErrorKind.BAD_RANGE, "analysis_trace.primary_samples_checked", "must be >= 0")
            decision = trace.get("decision")
            if "decision" in trace and (not isinstance(decision, str) or not decision.strip()):
                _err(errors, ErrorKind.BAD_TYPE, "analysis_trace.decision", "must be a non-empty string")
            if len(errors) == n_before:
                good["analysis_trace"] = AnalysisTrace(style, checked, decision)

    good["key_evidence"] = _string_list(obj, "key_evidence", 2, 6, errors)
    good["recommended_actions"] = _string_list(obj, "recommended_actions", 3, 6, errors)

    if "reasoning" in obj:
        reasoning = obj["reasoning"]
        if not isinstance(reasoning, str) or not reasoning.strip():
            _err(errors, ErrorKind.BAD_TYPE, "reasoning", "must be a non-empty string")
        elif len(reasoning) > MAX_REASONING_CHARS:
            _err(errors, ErrorKind.BAD_CARDINALITY, "reasoning", f"longer than {MAX_REASONING_CHARS} characters")
        else:
            good["reasoning"] = reasoning

    if "confidence" in obj:
        conf = obj["confidence"]
        if not _is_number(conf):
            _err(errors, ErrorKind.BAD_TYPE, "confidence", "must be a number in [0, 1]")
        elif not (math.isfinite(conf) and 0.0 <= conf <= 1.0):
            _err(errors, ErrorKind.BAD_RANGE, "confidence", f"{conf!r} is outside [0, 1]")
        else:
            good["confidence"] = float(conf)
    return good, errors


# ---------------------------------------------------------------------------
# Quote Rule


def _quote_errors(path: str, text: str, canonical: str) -> list[ValidationError]:
    spans = quoted_spans(text)
    if not spans:
        return [ValidationError(ErrorKind.QUOTE_MISSING, path, "no backtick-wrapped quote from the Evidence Pack")]
    if not any(s in canonical for s in spans):
        shown = ", ".join(f"`{s}`" for s in spans)
        return [
            ValidationError(
                ErrorKind.QUOTE_NOT_IN_PACK,
                path,
                f"none of the quoted spans ({shown}) occurs verbatim in the Evidence Pack",
            )
        ]
    return []


def _quote_rule(key_evidence: list[str] | None, reasoning: str | None, canonical: str) -> list[ValidationError]:
    errors = []
    for i, item in enumerate(key_evidence or []):
        errors += _quote_errors(f"key_evidence[{i}]", item, canonical)
    if reasoning is not None:
        errors += _quote_errors("reasoning", reasoning, canonical)
    return errors


def verify_quote_rule(report: IncidentReport, pack: EvidencePack) -> list[ValidationError]:
    return _quote_rule(list(report.key_evidence), report.reasoning, pack.canonical_text)


def accepted_quotes(items: list[str] | tuple[str, ...], canonical: str) -> list[str]:
    return [s for item in items for s in quoted_spans(item) if s in canonical]


# ---------------------------------------------------------------------------
# protocol gates


def _anchor_supported(quotes: list[str], pack: EvidencePack) -> bool:
    """A quote counts as structural support when it overlaps a PRIMARY anchor."""
    anchors = [a.text for s in pack.primary_samples for a in s.fingerprint.anchors]
    for q in quotes:
        for a in anchors:
            if (len(q) >= 4 and q in a) or a in q:
                return True
    return False


_STYLE_QUOTE_MARKERS = ("entropy", "printable_ratio")


def _gates(
    attack_type: AttackType | None,
    style: PayloadStyle | None,
    key_evidence: list[str] | None,
    dominant: Dominance,
    pack: EvidencePack,
) -> list[ValidationError]:
    if attack_type is None:
        return []
    errors = []
    quotes = accepted_quotes(key_evidence or [], pack.canonical_text)

    def gate(msg: str) -> None:
        errors.append(ValidationError(ErrorKind.GATE_VIOLATION, "attack_type", msg))

    if dominant is Dominance.TCP and attack_type not in TCP_ALLOWED:
        gate(
            f"dominant_l4_used=TCP allows only SYN Flood, ACK Flood, HTTP/2 Rapid Reset or Unknown; "
            f"got {attack_type.value!r}"
        )
    if dominant is Dominance.UDP and attack_type in TCP_ONLY:
        gate(f"dominant_l4_used=UDP forbids {attack_type.value!r}")
    if dominant is not Dominance.TCP and attack_type in REFLECTION_TYPES and not _anchor_supported(quotes, pack):
        gate(
            f"{attack_type.value!r} needs at least one key_evidence quote taken from a PRIMARY sample anchor; "
            "otherwise use Unknown"
        )
    if style is PayloadStyle.MIXED_OR_UNCLEAR and attack_type not in TCP_ALLOWED:
        entropy_quoted = any(m in q for q in quotes for m in _STYLE_QUOTE_MARKERS)
        if not (attack_type is AttackType.UDP_FLOOD and entropy_quoted):
            gate(
                "payload_style mixed_or_unclear allows only Unknown (or UDP Flood backed by a quoted "
                f"entropy/printable_ratio line); got {attack_type.value!r}"
            )
    return errors


def enforce_route1_gates(report: IncidentReport, triage: TriageResult, pack: EvidencePack) -> list[ValidationError]:
    return _gates(
        report.attack_type,
        report.analysis_trace.payload_style,
        list(report.key_evidence),
        triage.dominant_l4,
        pack,
    )


# ---------------------------------------------------------------------------


def collect_errors(raw: str, pack: EvidencePack, triage: TriageResult) -> tuple[IncidentReport | None, list[ValidationError]]:
    """Run every check and return (report or None, all errors)."""
    text = strip_fences(raw)
    try:
        obj = json.loads(text)
    except (json.JSONDecodeError, RecursionError) as exc:
        return None, [ValidationError(ErrorKind.PARSE_FAILURE, "$", f"response is not valid JSON: {exc}")]
    if not isinstance(obj, dict):
        return None, [ValidationError(ErrorKind.PARSE_FAILURE, "$", "response must be a single JSON object")]

    good, errors = _check_schema(obj)
    errors += _quote_rule(good.get("key_evidence"), good.get("reasoning"), pack.canonical_text)
    errors += _gates(
        good.get("attack_type"), good.get("payload_style"), good.get("key_evidence"), triage.dominant_l4, pack
    )
    if errors:
        return None, errors
    report = IncidentReport(
        verdict=good["verdict"],
        attack_family=good["attack_family"],
        attack_type=good["attack_type"],
        analysis_trace=good["analysis_trace"],
        key_evidence=tuple(good["key_evidence"]),
        reasoning=good["reasoning"],
        recommended_actions=tuple(good["recommended_actions"]),
        confidence=good["confidence"],
    )
    return report, []


def parse_and_validate(raw: str, pack: EvidencePack, triage: TriageResult) -> IncidentReport:
    """Strictly parse a backend response; raise :class:`ReportRejected` listing every violation."""
    report, errors = collect_errors(raw, pack, triage)
    if errors:
        raise ReportRejected(errors)
    return report
