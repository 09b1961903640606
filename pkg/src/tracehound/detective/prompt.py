"""Prompt contract rendering and correction feedback."""

from __future__ import annotations

from typing import Sequence

from ..evidence import EvidencePack
from .schema import AttackFamily, AttackType, PayloadStyle, ValidationError, Verdict


def _choices(enum_cls) -> str:
    return " | ".join(e.value for e in enum_cls)


INVARIANTS = """\
## Invariants
- Single source: base every statement on the Evidence Pack in this message. Do not bring in outside facts.
- Ports are not identity: never infer a protocol from port numbers; ports may be randomized.
- Quote Rule: every key_evidence item must contain at least one verbatim substring of the Evidence Pack wrapped in backticks. The reasoning field must contain one as well."""

ROUTE1 = """\
## Investigation protocol (structure first)
1. Decide payload_style from the PRIMARY samples only: {styles}.
2. Decide attack_family: {families}.
3. Decide attack_type under these gates:
   - If dominant_l4_used=TCP: choose only SYN Flood, ACK Flood, HTTP/2 Rapid Reset, or Unknown.
   - If dominant_l4_used=UDP: never output SYN Flood or ACK Flood. A reflection label is allowed only when a key_evidence quote is taken from a PRIMARY sample anchor.
   - If payload_style is mixed_or_unclear, output Unknown (UDP Flood only with a quoted entropy/printable_ratio line). Do not force a protocol."""

SCHEMA = """\
## Output: strict JSON only
Reply with exactly one JSON object, no prose and no extra keys:
{{
  "verdict": {verdicts},
  "attack_family": {families},
  "attack_type": {types},
  "analysis_trace": {{"payload_style": <payload_style>, "primary_samples_checked": <integer >= 0>, "decision": <short text>}},
  "key_evidence": [2 to 6 strings, each with a backtick-wrapped quote],
  "reasoning": <1 to 3 sentences with a backtick-wrapped quote, at most 600 characters>,
  "recommended_actions": [3 to 6 strings],
  "confidence": <number in [0, 1]>
}}"""


def render_prompt(pack: EvidencePack) -> str:
    """Contract + protocol + schema, followed by the pack text exactly as serialized."""
    parts = [
        "You are a network incident investigator. Investigate the DDoS incident described by the Evidence Pack below.",
        INVARIANTS,
        ROUTE1.format(styles=_choices(PayloadStyle), families=_choices(AttackFamily)),
        SCHEMA.format(verdicts=_choices(Verdict), families=_choices(AttackFamily), types=_choices(AttackType)),
        f"## Context\ndominant_l4_used={pack.triage.dominant_l4.value}",
        "## Evidence Pack",
    ]
    return "\n\n".join(parts) + "\n" + pack.canonical_text


def render_feedback(errors: Sequence[ValidationError]) -> str:
    lines = [f"- {e}" for e in errors]
    return (
        "Your previous reply was rejected by the validator:\n"
        + "\n".join(lines)
        + "\nFix every listed problem and reply again with one corrected JSON object only, "
        "using the same Evidence Pack from the first message."
    )
