"""Command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from .config import ConfigError, PipelineConfig, load_config
from .detective import (
    BackendUnreachable,
    InvestigationFailed,
    collect_errors,
    investigate,
)
from .evidence import EmptyWindow, EvidencePack, NoUdpPackets, build_evidence_pack
from .orchestrator import IoFailure, make_backend, run_replay
from .pcap_codec import PcapError, load_packets, parse_slice_name
from .triage import Dominance, EmptyInput, read_sampled_jsonl, triage

EXIT_OK, EXIT_INPUT, EXIT_INVALID = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


class FatalInput(Exception):
    pass


_OVERRIDES = {
    "pcap_dir": str,
    "counters": str,
    "out_dir": str,
    "manifest": str,
    "sampling_rate": int,
    "k": float,
    "pps_floor": float,
    "alpha": float,
    "warmup": int,
    "mixed_threshold": float,
    "max_scan_packets": int,
    "max_samples": int,
    "cooldown_s": float,
    "backend": str,
    "base_url": str,
    "model": str,
    "timeout_s": float,
    "max_retries": int,
    "max_parallel": int,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", type=Path, help="flat TOML config file")
    common.add_argument("-v", "--verbose", action="store_true")
    for name, kind in _OVERRIDES.items():
        extra = {"choices": ["local", "remote"]} if name == "backend" else {}
        common.add_argument(f"--{name.replace('_', '-')}", dest=name, type=kind, default=None, **extra)

    p = _Parser(prog="tracehound", description="Replay DDoS incidents through a triage and evidence funnel.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sub.add_parser("run", parents=[common], help="full replay over counters and pcap slices")

    t = sub.add_parser("triage", parents=[common], help="dominance and victim for one slice")
    src = t.add_mutually_exclusive_group(required=True)
    src.add_argument("--slice", help="pcap slice (path, or name under pcap_dir)")
    src.add_argument("--samples", type=Path, help="pre-sampled packets as JSONL")

    e = sub.add_parser("evidence", parents=[common], help="build and print an evidence pack")
    e.add_argument("--slice", required=True)
    e.add_argument("--victim", help="override the triage victim guess")
    e.add_argument("--l4", type=str.upper, choices=["UDP", "TCP", "MIXED"], help="override dominant L4")
    e.add_argument("--json", action="store_true", help="print the machine form instead of the text")
    e.add_argument("--incident-id", default=None)

    i = sub.add_parser("investigate", parents=[common], help="pack file -> incident report")
    i.add_argument("--pack", type=Path, required=True, help="evidence pack JSON")

    v = sub.add_parser("validate", parents=[common], help="check a report against a pack")
    v.add_argument("--report", type=Path, required=True)
    v.add_argument("--pack", type=Path, required=True)

    s = sub.add_parser("synth", help="write the synthetic scenario corpus")
    s.add_argument("--out", type=Path, required=True)
    s.add_argument("--seed", type=int, default=7)
    s.add_argument("-v", "--verbose", action="store_true")
    return p


def _config(args) -> PipelineConfig:
    overrides = {k: getattr(args, k, None) for k in _OVERRIDES}
    return load_config(args.config, overrides)


def _resolve_slice(name: str, cfg: PipelineConfig) -> Path:
    path = Path(name)
    if path.exists():
        return path
    candidate = Path(cfg.pcap_dir) / name
    if candidate.exists():
        return candidate
    raise FatalInput(f"slice not found: {name}")


def _read_json(path: Path) -> dict:
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise FatalInput(f"cannot read {path}: {exc}") from exc


def _load_pack(path: Path) -> EvidencePack:
    try:
        return EvidencePack.from_dict(_read_json(path))
    except (KeyError, TypeError, ValueError) as exc:
        raise FatalInput(f"{path}: not a valid evidence pack: {exc}") from exc


def cmd_run(args) -> int:
    summary = run_replay(_config(args))
    sys.stdout.write(summary.to_table())
    return EXIT_OK


def cmd_triage(args) -> int:
    cfg = _config(args)
    if args.samples:
        packets = read_sampled_jsonl(args.samples)
    else:
        packets = load_packets(_resolve_slice(args.slice, cfg))
    result = triage(packets, cfg.sampling_rate, cfg.mixed_threshold)
    print(json.dumps(result.to_dict(), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_evidence(args) -> int:
    cfg = _config(args)
    path = _resolve_slice(args.slice, cfg)
    packets = load_packets(path)
    tri = triage(packets, cfg.sampling_rate, cfg.mixed_threshold)
    if args.victim:
        tri = replace(tri, victim_ip=args.victim)
    if args.l4:
        tri = replace(tri, dominant_l4=Dominance(args.l4))
    try:
        window = parse_slice_name(path.name)
    except ValueError:
        window = (packets[0].ts_s, packets[-1].ts_s)
    pack = build_evidence_pack(
        packets,
        tri,
        cfg.budget,
        incident_id=args.incident_id or path.stem,
        window=window,
        top_k_modes=cfg.top_k_modes,
    )
    sys.stdout.write(pack.to_json() + "\n" if args.json else pack.canonical_text)
    return EXIT_OK


def cmd_investigate(args) -> int:
    cfg = _config(args)
    pack = _load_pack(args.pack)
    try:
        result = investigate(pack, pack.triage, make_backend(cfg), cfg.max_retries)
    except InvestigationFailed as exc:
        print(f"investigation failed: {exc}", file=sys.stderr)
        for err in exc.attempts[-1].errors if exc.attempts else ():
            print(f"  {err.kind.value} {err.path}: {err.message}", file=sys.stderr)
        return EXIT_INVALID
    except BackendUnreachable as exc:
        raise FatalInput(f"backend unreachable: {exc}") from exc
    print(result.report.to_json())
    return EXIT_OK


def cmd_validate(args) -> int:
    pack = _load_pack(args.pack)
    try:
        raw = args.report.read_text(encoding="utf-8")
    except OSError as exc:
        raise FatalInput(f"cannot read {args.report}: {exc}") from exc
    report, errors = collect_errors(raw, pack, pack.triage)
    if errors:
        print(f"INVALID: {len(errors)} error(s)")
        for err in errors:
            print(f"  {err.kind.value} {err.path}: {err.message}")
        return EXIT_INVALID
    print(f"VALID: {report.attack_type.value} (confidence {report.confidence})")
    return EXIT_OK


def cmd_synth(args) -> int:
    from .synth import generate_corpus

    corpus = generate_corpus(args.out, seed=args.seed)
    print(f"wrote {len(corpus.scenarios)} scenarios to {corpus.root}")
    print(f"config: {corpus.config}")
    return EXIT_OK


COMMANDS = {
    "run": cmd_run,
    "triage": cmd_triage,
    "evidence": cmd_evidence,
    "investigate": cmd_investigate,
    "validate": cmd_validate,
    "synth": cmd_synth,
}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (
        FatalInput,
        ConfigError,
        IoFailure,
        PcapError,
        EmptyInput,
        EmptyWindow,
        NoUdpPackets,
        OSError,
        ValueError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
