"""Evidence-grounded investigation: prompt contract, validators, backends."""

from .backends import BackendUnreachable, DetectiveBackend, RemoteChatBackend
from .loop import Attempt, Investigation, InvestigationFailed, investigate
from .prompt import render_feedback, render_prompt
from .rules import LocalRulesBackend, classify_payload_style, local_backend_decide, sample_style
from .schema import (
    AnalysisTrace,
    AttackFamily,
    AttackType,
    ErrorKind,
    IncidentReport,
    PayloadStyle,
    ReportRejected,
    ValidationError,
    Verdict,
    collect_errors,
    enforce_route1_gates,
    parse_and_validate,
    verify_quote_rule,
)

__all__ = [
    "AnalysisTrace",
    "Attempt",
    "AttackFamily",
    "AttackType",
    "BackendUnreachable",
    "DetectiveBackend",
    "ErrorKind",
    "IncidentReport",
    "Investigation",
    "InvestigationFailed",
    "LocalRulesBackend",
    "PayloadStyle",
    "RemoteChatBackend",
    "ReportRejected",
    "ValidationError",
    "Verdict",
    "classify_payload_style",
    "collect_errors",
    "enforce_route1_gates",
    "investigate",
    "local_backend_decide",
    "parse_and_validate",
    "render_feedback",
    "render_prompt",
    "sample_style",
    "verify_quote_rule",
]
