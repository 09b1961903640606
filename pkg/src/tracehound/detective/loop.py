"""Self-correcting investigation loop."""

from __future__ import annotations

from dataclasses import dataclass, field

from ..evidence import EvidencePack
from ..triage import TriageResult
from .backends import BackendUnreachable, DetectiveBackend
from .prompt import render_feedback, render_prompt
from .schema import IncidentReport, ValidationError, collect_errors

DEFAULT_MAX_RETRIES = 2


@dataclass(frozen=True)
class Attempt:
    number: int
    messages: tuple[dict, ...]
    raw_response: str
    errors: tuple[ValidationError, ...]
    exchange: dict | None = None

    @property
    def ok(self) -> bool:
        return not self.errors

    def to_dict(self) -> dict:
        out = {
            "number": self.number,
            "messages": list(self.messages),
            "raw_response": self.raw_response,
            "errors": [e.to_dict() for e in self.errors],
        }
        if self.exchange is not None:
            out["exchange"] = self.exchange
        return out


@dataclass(frozen=True)
class Investigation:
    report: IncidentReport
    attempts: tuple[Attempt, ...]

    @property
    def attempts_used(self) -> int:
        return len(self.attempts)


class InvestigationFailed(RuntimeError):
    def __init__(self, attempts: list[Attempt], cause: BaseException | None = None):
        self.attempts = attempts
        self.cause = cause
        last = attempts[-1].errors if attempts else ()
        detail = f"backend unreachable: {cause}" if cause else f"{len(last)} validation errors on last attempt"
        super().__init__(f"no valid report after {len(attempts)} attempts ({detail})")


@dataclass
class _Conversation:
    messages: list[dict] = field(default_factory=list)

    def add(self, role: str, content: str) -> None:
        self.messages.append({"role": role, "content": content})


def investigate(
    pack: EvidencePack,
    triage: TriageResult,
    backend: DetectiveBackend,
    max_retries: int = DEFAULT_MAX_RETRIES,
) -> Investigation:
    """Ask the backend for a report, feeding validation errors back until one passes.

    Raises :class:`InvestigationFailed` after ``max_retries + 1`` rejected
    replies. :class:`BackendUnreachable` propagates with the attempts made so
    far attached as ``exc.attempts``.
    """
    if max_retries < 0:
        raise ValueError("max_retries must be >= 0")
    convo = _Conversation()
    convo.add("user", render_prompt(pack))
    attempts: list[Attempt] = []
    for number in range(1, max_retries + 2):
        sent = tuple(dict(m) for m in convo.messages)
        try:
            raw = backend.complete(list(sent), pack, triage)
        except BackendUnreachable as exc:
            exc.attempts = attempts
            raise
        report, errors = collect_errors(raw, pack, triage)
        exchange = getattr(backend, "last_exchange", None)
        attempts.append(Attempt(number, sent, raw, tuple(errors), dict(exchange) if exchange else None))
        if report is not None:
            return Investigation(report, tuple(attempts))
        convo.add("assistant", raw)
        convo.add("user", render_feedback(errors))
    raise InvestigationFailed(attempts)
