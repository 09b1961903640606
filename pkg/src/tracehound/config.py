"""Flat TOML pipeline configuration with CLI overrides."""

from __future__ import annotations

import sys
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Any

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .detective.backends import DEFAULT_TIMEOUT_S
from .detective.loop import DEFAULT_MAX_RETRIES
from .evidence import EvidenceBudget
from .telemetry import DEFAULT_ALPHA, DEFAULT_COOLDOWN_S, DEFAULT_K, DEFAULT_PPS_FLOOR, DEFAULT_WARMUP
from .triage import DEFAULT_MIXED_THRESHOLD


class ConfigError(ValueError):
    pass


@dataclass
class PipelineConfig:
    pcap_dir: str = "pcaps"
    counters: str = "counters.jsonl"
    out_dir: str = "out"
    manifest: str | None = None
    sampling_rate: int = 1
    k: float = DEFAULT_K
    pps_floor: float = DEFAULT_PPS_FLOOR
    alpha: float = DEFAULT_ALPHA
    warmup: int = DEFAULT_WARMUP
    mixed_threshold: float = DEFAULT_MIXED_THRESHOLD
    max_scan_packets: int = 5000
    max_samples: int = 8
    max_hexdump_lines_per_sample: int = 8
    max_ascii_excerpt_chars: int = 160
    max_anchors_per_sample: int = 6
    top_k_modes: int = 3
    cooldown_s: float = DEFAULT_COOLDOWN_S
    backend: str = "local"
    base_url: str = "http://localhost:8000/v1"
    model: str = "detective"
    timeout_s: float = DEFAULT_TIMEOUT_S
    max_retries: int = DEFAULT_MAX_RETRIES
    max_parallel: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def budget(self) -> EvidenceBudget:
        return EvidenceBudget(
            max_scan_packets=self.max_scan_packets,
            max_samples=self.max_samples,
            max_hexdump_lines_per_sample=self.max_hexdump_lines_per_sample,
            max_ascii_excerpt_chars=self.max_ascii_excerpt_chars,
            max_anchors_per_sample=self.max_anchors_per_sample,
        )

    def validate(self) -> None:
        checks = [
            (self.sampling_rate >= 1, "sampling_rate must be >= 1"),
            (self.k >= 0, "k must be >= 0"),
            (self.pps_floor >= 0, "pps_floor must be >= 0"),
            (0 < self.alpha <= 1, "alpha must be in (0, 1]"),
            (self.warmup >= 0, "warmup must be >= 0"),
            (0 <= self.mixed_threshold <= 1, "mixed_threshold must be in [0, 1]"),
            (self.top_k_modes >= 1, "top_k_modes must be >= 1"),
            (self.cooldown_s > 0, "cooldown_s must be > 0"),
            (self.backend in ("local", "remote"), "backend must be 'local' or 'remote'"),
            (self.timeout_s > 0, "timeout_s must be > 0"),
            (self.max_retries >= 0, "max_retries must be >= 0"),
            (self.max_parallel >= 1, "max_parallel must be >= 1"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ConfigError(msg)
        try:
            self.budget
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    def to_dict(self) -> dict:
        return asdict(self)


_FIELD_TYPES = {f.name: f.type for f in fields(PipelineConfig)}


def _coerce(name: str, value: Any) -> Any:
    kind = _FIELD_TYPES[name]
    if value is None:
        return None
    try:
        if kind == "int":
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if kind == "float":
            return float(value)
    except (TypeError, ValueError):
        raise ConfigError(f"{name}: expected {kind}, got {value!r}") from None
    return str(value)


def build_config(values: dict[str, Any], base_dir: Path | None = None) -> PipelineConfig:
    unknown = sorted(set(values) - set(_FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {k: _coerce(k, v) for k, v in values.items()}
    if base_dir is not None:
        for key in ("pcap_dir", "counters", "out_dir", "manifest"):
            if kwargs.get(key) and not Path(kwargs[key]).is_absolute():
                kwargs[key] = str(base_dir / kwargs[key])
    return PipelineConfig(**kwargs)


def load_config(path: str | Path | None, overrides: dict[str, Any] | None = None) -> PipelineConfig:
    """Read a flat TOML document; relative paths resolve against its directory."""
    values: dict[str, Any] = {}
    base = None
    if path is not None:
        path = Path(path)
        try:
            with open(path, "rb") as fh:
                values = tomllib.load(fh)
        except (OSError, tomllib.TOMLDecodeError) as exc:
            raise ConfigError(f"cannot read config {path}: {exc}") from exc
        nested = [k for k, v in values.items() if isinstance(v, dict)]
        if nested:
            raise ConfigError(f"config must be flat; found tables: {', '.join(nested)}")
        base = path.parent
    cfg = build_config(values, base)
    if overrides:
        merged = cfg.to_dict()
        merged.update({k: v for k, v in overrides.items() if v is not None})
        cfg = build_config(merged)
    return cfg
