"""Replay-mode pipeline: counters -> incident -> triage -> dedup -> evidence -> detective."""

from __future__ import annotations

import json
import logging
import threading
import time
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .config import PipelineConfig
from .detective import (
    BackendUnreachable,
    DetectiveBackend,
    IncidentReport,
    InvestigationFailed,
    LocalRulesBackend,
    RemoteChatBackend,
    collect_errors,
    investigate,
)
from .detective.schema import AttackType
from .evidence import EvidencePack, build_evidence_pack
from .pcap_codec import DissectedPacket, PcapError, load_packets
from .telemetry import (
    CooldownState,
    CounterMonitor,
    IncidentState,
    IncidentWindow,
    NoSliceAvailable,
    Trigger,
    open_incident,
    read_counters,
    scan_slices,
    should_suppress,
)
from .triage import EmptyInput, TriageResult, triage

log = logging.getLogger(__name__)


class IoFailure(OSError):
    pass


# ---------------------------------------------------------------------------
# ground truth

LABEL_ALIASES = {
    "UDP-F": AttackType.UDP_FLOOD,
    "SYN-F": AttackType.SYN_FLOOD,
    "ACK-F": AttackType.ACK_FLOOD,
    "DNS-R": AttackType.DNS,
    "NB-R": AttackType.NETBIOS,
    "NETBIOS-R": AttackType.NETBIOS,
    "LDAP-R": AttackType.LDAP,
    "SNMP-R": AttackType.SNMP,
    "MSSQL-R": AttackType.MSSQL,
    "SSDP-R": AttackType.SSDP,
    "NTP-R": AttackType.NTP,
    "OTHER-R": AttackType.OTHER_REFLECTION,
}


def normalize_label(label: str) -> AttackType:
    alias = LABEL_ALIASES.get(label.strip().upper())
    return alias if alias is not None else AttackType(label.strip())


@dataclass(frozen=True)
class ManifestEntry:
    start_s: float
    end_s: float
    label: AttackType


def read_manifest(path: str | Path) -> list[ManifestEntry]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                out.append(ManifestEntry(float(obj["start_s"]), float(obj["end_s"]), normalize_label(obj["label"])))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad manifest entry: {exc}") from exc
    return out


def label_for(manifest: Sequence[ManifestEntry], ts_s: float) -> AttackType | None:
    for entry in manifest:
        if entry.start_s <= ts_s < entry.end_s:
            return entry.label
    return None


# ---------------------------------------------------------------------------
# audit


@dataclass
class AuditRecord:
    """Append-only event log for one incident plus the artifacts it produced."""

    incident_id: str
    window: IncidentWindow
    events: list[dict] = field(default_factory=list)
    triage: TriageResult | None = None
    pack: EvidencePack | None = None
    report: IncidentReport | None = None
    failure: str | None = None
    close_reason: str | None = None
    timings_ms: dict[str, float] = field(default_factory=dict)
    top_anchors: tuple[str, ...] = ()

    def log(self, event: str, **data) -> None:
        self.events.append({"seq": len(self.events), "event": event, **data})

    @property
    def state(self) -> IncidentState:
        return self.window.state


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def emit_audit(record: AuditRecord, out_dir: str | Path) -> list[Path]:
    """Write ``<incident>/audit.jsonl`` and, when available, evidence and report files."""
    base = Path(out_dir) / record.incident_id
    written = []
    try:
        base.mkdir(parents=True, exist_ok=True)
        audit = base / "audit.jsonl"
        audit.write_text("".join(_dumps(e) + "\n" for e in record.events), encoding="utf-8")
        written.append(audit)
        if record.pack is not None:
            (base / "evidence.txt").write_text(record.pack.canonical_text, encoding="utf-8")
            (base / "evidence.json").write_text(record.pack.to_json(), encoding="utf-8")
            written += [base / "evidence.txt", base / "evidence.json"]
        report_path = base / "report.json"
        if record.report is not None:
            report_path.write_text(record.report.to_json(), encoding="utf-8")
            written.append(report_path)
        elif report_path.exists():
            report_path.unlink()
    except OSError as exc:
        raise IoFailure(f"cannot write audit for {record.incident_id}: {exc}") from exc
    return written


def read_audit(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def replay_validation(audit_path: str | Path) -> list[str]:
    """Re-validate every logged backend reply against the logged pack.

    Returns human-readable mismatches; an empty list means the logged
    outcomes were reproduced exactly.
    """
    events = read_audit(audit_path)
    by_name: dict[str, list[dict]] = {}
    for e in events:
        by_name.setdefault(e["event"], []).append(e)
    if "evidence_built" not in by_name:
        return []
    pack = EvidencePack.from_dict(by_name["evidence_built"][0]["pack"])
    tri = TriageResult.from_dict(by_name["triage"][0]["triage"])
    problems = []
    final = (by_name.get("report_accepted") or [{}])[0].get("report")
    for e in by_name.get("backend_attempt", []):
        attempt = e["attempt"]
        report, errors = collect_errors(attempt["raw_response"], pack, tri)
        if [err.to_dict() for err in errors] != attempt["errors"]:
            problems.append(f"attempt {attempt['number']}: validation errors differ from the log")
        if report is not None and report.to_dict() != final:
            problems.append(f"attempt {attempt['number']}: accepted report differs from the log")
    return problems


# ---------------------------------------------------------------------------
# summary


@dataclass(frozen=True)
class SummaryRow:
    incident_id: str
    trigger_ts_s: float
    pcap_slice: str
    state: str
    victim_ip: str | None = None
    dominant_l4: str | None = None
    dominance_score: float | None = None
    top_anchors: tuple[str, ...] = ()
    predicted: str | None = None
    confidence: float | None = None
    ground_truth: str | None = None
    match: bool | None = None

    def to_dict(self) -> dict:
        return {
            "incident_id": self.incident_id,
            "trigger_ts_s": self.trigger_ts_s,
            "pcap_slice": self.pcap_slice,
            "state": self.state,
            "victim_ip": self.victim_ip,
            "dominant_l4": self.dominant_l4,
            "dominance_score": self.dominance_score,
            "top_anchors": list(self.top_anchors),
            "predicted": self.predicted,
            "confidence": self.confidence,
            "ground_truth": self.ground_truth,
            "match": self.match,
        }


@dataclass
class RunSummary:
    rows: list[SummaryRow] = field(default_factory=list)
    suppressed: list[str] = field(default_factory=list)
    backend_calls: int = 0

    @property
    def correct(self) -> int:
        return sum(1 for r in self.rows if r.match)

    def to_dict(self) -> dict:
        return {
            "rows": [r.to_dict() for r in self.rows],
            "suppressed": self.suppressed,
            "backend_calls": self.backend_calls,
        }

    def to_table(self) -> str:
        header = ["Inc.(T)", "PCAP slice", "Victim", "Dom. L4 (score)", "Anchors", "GT", "Pred", "OK", "Conf."]
        lines = [header]
        for r in self.rows:
            dom = f"{r.dominant_l4} ({r.dominance_score:.3f})" if r.dominant_l4 else "-"
            ok = "-" if r.match is None else ("Y" if r.match else "N")
            lines.append(
                [
                    f"{r.trigger_ts_s:g}s",
                    r.pcap_slice,
                    r.victim_ip or "-",
                    dom,
                    ", ".join(_clip(a, 24) for a in r.top_anchors[:2]) or "-",
                    r.ground_truth or "-",
                    r.predicted or r.state,
                    ok,
                    "-" if r.confidence is None else f"{r.confidence:.2f}",
                ]
            )
        widths = [max(len(row[i]) for row in lines) for i in range(len(header))]
        out = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in lines]
        out.append(f"{len(self.rows)} incidents, {len(self.suppressed)} suppressed, {self.backend_calls} backend calls")
        return "\n".join(out) + "\n"


def _clip(text: str, n: int) -> str:
    return text if len(text) <= n else text[: n - 3] + "..."


# ---------------------------------------------------------------------------
# pipeline


def make_backend(config: PipelineConfig) -> DetectiveBackend:
    if config.backend == "remote":
        return RemoteChatBackend(config.base_url, config.model, config.timeout_s)
    return LocalRulesBackend()


class _Timer:
    def __init__(self, record: AuditRecord, stage: str):
        self.record, self.stage = record, stage

    def __enter__(self):
        self.t0 = time.perf_counter()

    def __exit__(self, *exc):
        self.record.timings_ms[self.stage] = round((time.perf_counter() - self.t0) * 1000, 3)


class _SliceCache:
    def __init__(self):
        self._packets: dict[str, list[DissectedPacket]] = {}
        self._lock = threading.Lock()

    def get(self, path: str) -> list[DissectedPacket]:
        with self._lock:
            if path not in self._packets:
                self._packets[path] = load_packets(path)
            return self._packets[path]


def investigate_incident(
    record: AuditRecord,
    packets: Sequence[DissectedPacket],
    config: PipelineConfig,
    backend: DetectiveBackend,
) -> AuditRecord:
    """L3 for one incident that already passed triage and dedup."""
    w = record.window
    with _Timer(record, "evidence"):
        pack = build_evidence_pack(
            packets,
            record.triage,
            config.budget,
            incident_id=record.incident_id,
            window=(w.window_start_s, w.window_end_s),
            top_k_modes=config.top_k_modes,
        )
    record.pack = pack
    record.top_anchors = tuple(dict.fromkeys(a.text for s in pack.primary_samples for a in s.fingerprint.anchors))
    record.log("evidence_built", pack=pack.to_dict())
    attempts = []
    with _Timer(record, "investigation"):
        try:
            result = investigate(pack, record.triage, backend, config.max_retries)
            attempts = list(result.attempts)
            record.report = result.report
        except InvestigationFailed as exc:
            attempts = exc.attempts
            record.failure = str(exc)
        except BackendUnreachable as exc:
            attempts = getattr(exc, "attempts", [])
            record.failure = f"BackendUnreachable: {exc}"
    for a in attempts:
        record.log("backend_attempt", attempt=a.to_dict())
    if record.report is not None:
        record.log("report_accepted", report=record.report.to_dict(), attempts_used=len(attempts))
    else:
        record.log("investigation_failed", reason=record.failure, attempts_used=len(attempts))
    record.window = _with_state(w, IncidentState.CLOSED)
    record.log("closed", state=IncidentState.CLOSED.value, timings_ms=dict(record.timings_ms))
    return record


def _with_state(window: IncidentWindow, state: IncidentState) -> IncidentWindow:
    from dataclasses import replace

    return replace(window, state=state)


def _row(record: AuditRecord, manifest: Sequence[ManifestEntry]) -> SummaryRow:
    gt = label_for(manifest, record.window.trigger_ts_s) if manifest else None
    pred = record.report.attack_type.value if record.report else None
    return SummaryRow(
        incident_id=record.incident_id,
        trigger_ts_s=record.window.trigger_ts_s,
        pcap_slice=Path(record.window.pcap_slice_path).name,
        state=record.state.value if record.report or not record.failure else "Failed",
        victim_ip=record.triage.victim_ip if record.triage else None,
        dominant_l4=record.triage.dominant_l4.value if record.triage else None,
        dominance_score=record.triage.dominance_score if record.triage else None,
        top_anchors=record.top_anchors[:4],
        predicted=pred,
        confidence=record.report.confidence if record.report else None,
        ground_truth=gt.value if gt else None,
        match=(pred == gt.value) if gt else None,
    )


def run_replay(
    config: PipelineConfig,
    backend: DetectiveBackend | None = None,
) -> RunSummary:
    """Stream the counter file and investigate every trigger that survives the funnel."""
    try:
        slices = scan_slices(config.pcap_dir)
        samples = list(read_counters(config.counters))
        manifest = read_manifest(config.manifest) if config.manifest else []
    except (OSError, ValueError) as exc:
        raise IoFailure(f"cannot read replay inputs: {exc}") from exc

    backend = backend or make_backend(config)
    out_dir = Path(config.out_dir)
    monitor = CounterMonitor(config.k, config.pps_floor, config.alpha, config.warmup)
    cooldown = CooldownState(config.cooldown_s)
    cache = _SliceCache()
    records: list[AuditRecord] = []
    futures: list[Future] = []
    summary = RunSummary()

    with ThreadPoolExecutor(max_workers=config.max_parallel) as pool:
        for sample in samples:
            trigger = monitor.feed(sample)
            if trigger is None:
                continue
            incident_id = f"inc{len(records) + 1:03d}_T{sample.ts_s:g}s"
            record = _open(incident_id, trigger, slices)
            records.append(record)
            if record.window.state is IncidentState.CLOSED:
                emit_audit(record, out_dir)
                continue
            packets = _triage(record, cache, config)
            if packets is None:
                emit_audit(record, out_dir)
                continue
            key = (record.triage.victim_ip, record.triage.dominant_l4.value)
            suppressed = should_suppress(cooldown, key, sample.ts_s)
            record.log("suppression_check", key=list(key), suppressed=suppressed, cooldown_s=config.cooldown_s)
            if suppressed:
                record.window = _with_state(record.window, IncidentState.SUPPRESSED)
                record.log("closed", state=IncidentState.SUPPRESSED.value, timings_ms=dict(record.timings_ms))
                summary.suppressed.append(incident_id)
                emit_audit(record, out_dir)
                continue
            record.window = _with_state(record.window, IncidentState.INVESTIGATING)
            record.log("investigating")
            futures.append(pool.submit(_investigate_and_emit, record, packets, config, backend, out_dir))
        for fut in futures:
            fut.result()

    for record in sorted(records, key=lambda r: r.window.trigger_ts_s):
        if record.state is IncidentState.SUPPRESSED:
            continue
        summary.backend_calls += sum(1 for e in record.events if e["event"] == "backend_attempt")
        summary.rows.append(_row(record, manifest))
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2) + "\n", encoding="utf-8")
        (out_dir / "summary.txt").write_text(summary.to_table(), encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write summary: {exc}") from exc
    return summary


def _open(incident_id: str, trigger: Trigger, slices) -> AuditRecord:
    ts = trigger.sample.ts_s
    try:
        window = open_incident(ts, slices)
    except NoSliceAvailable as exc:
        window = IncidentWindow(ts, ts, ts, "", IncidentState.CLOSED)
        record = AuditRecord(incident_id, window)
        record.log("anomaly_trigger", sample=trigger.sample.to_dict(), baseline=trigger.baseline.to_dict())
        record.close_reason = f"NoSliceAvailable: {exc}"
        record.log("closed", state=IncidentState.CLOSED.value, reason=record.close_reason)
        return record
    record = AuditRecord(incident_id, window)
    record.log("anomaly_trigger", sample=trigger.sample.to_dict(), baseline=trigger.baseline.to_dict())
    record.log("incident_opened", window=window.to_dict())
    return record


def _triage(record: AuditRecord, cache: _SliceCache, config: PipelineConfig) -> list[DissectedPacket] | None:
    with _Timer(record, "triage"):
        try:
            packets = cache.get(record.window.pcap_slice_path)
            record.triage = triage(packets, config.sampling_rate, config.mixed_threshold)
        except EmptyInput as exc:
            record.close_reason = f"EmptyInput: {exc}"
        except (PcapError, OSError) as exc:
            record.failure = f"{type(exc).__name__}: {exc}"
    if record.triage is None:
        reason = record.failure or record.close_reason
        record.log("triage_failed", reason=reason)
        record.window = _with_state(record.window, IncidentState.CLOSED)
        record.log("closed", state=IncidentState.CLOSED.value, reason=reason)
        return None
    record.log("triage", triage=record.triage.to_dict())
    return packets


def _investigate_and_emit(record, packets, config, backend, out_dir) -> None:
    try:
        investigate_incident(record, packets, config, backend)
    except Exception as exc:  # one bad incident must not abort the run
        log.exception("incident %s failed", record.incident_id)
        record.failure = f"{type(exc).__name__}: {exc}"
        record.window = _with_state(record.window, IncidentState.CLOSED)
        record.log("incident_error", reason=record.failure)
    emit_audit(record, out_dir)
