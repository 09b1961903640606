"""Counter monitoring: EWMA baseline, k-sigma trigger, slice lookup, cooldown."""

from __future__ import annotations

import enum
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Hashable, Iterator, NamedTuple, Sequence

from .pcap_codec import parse_slice_name

DEFAULT_K = 3.0
DEFAULT_PPS_FLOOR = 1000.0
DEFAULT_ALPHA = 0.1
DEFAULT_WARMUP = 10
DEFAULT_COOLDOWN_S = 60.0


class NoSliceAvailable(LookupError):
    pass


@dataclass(frozen=True)
class CounterSample:
    ts_s: float
    bytes_per_s: float
    pkts_per_s: float
    queue_drops: float = 0

    def __post_init__(self):
        for name in ("ts_s", "bytes_per_s", "pkts_per_s", "queue_drops"):
            value = getattr(self, name)
            if not value >= 0:
                raise ValueError(f"{name} must be >= 0, got {value!r}")

    @classmethod
    def from_dict(cls, obj: dict) -> CounterSample:
        return cls(
            ts_s=float(obj["ts_s"]),
            bytes_per_s=float(obj["bytes_per_s"]),
            pkts_per_s=float(obj["pkts_per_s"]),
            queue_drops=float(obj.get("queue_drops", 0)),
        )

    def to_dict(self) -> dict:
        return {
            "ts_s": self.ts_s,
            "bytes_per_s": self.bytes_per_s,
            "pkts_per_s": self.pkts_per_s,
            "queue_drops": self.queue_drops,
        }


@dataclass(frozen=True)
class AnomalyBaseline:
    mean_pps: float = 0.0
    var_pps: float = 0.0
    alpha: float = DEFAULT_ALPHA
    warmup_remaining: int = DEFAULT_WARMUP
    samples_seen: int = 0

    def __post_init__(self):
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.var_pps < 0:
            raise ValueError("var_pps must be >= 0")
        if self.warmup_remaining < 0:
            raise ValueError("warmup_remaining must be >= 0")

    def to_dict(self) -> dict:
        return {
            "mean_pps": self.mean_pps,
            "var_pps": self.var_pps,
            "alpha": self.alpha,
            "warmup_remaining": self.warmup_remaining,
            "samples_seen": self.samples_seen,
        }


def update_baseline(baseline: AnomalyBaseline, sample: CounterSample) -> AnomalyBaseline:
    """Fold one sample into the exponentially weighted mean and variance.

    The first sample seeds the mean directly.
    """
    x = sample.pkts_per_s
    warmup = max(0, baseline.warmup_remaining - 1)
    if baseline.samples_seen == 0:
        return replace(baseline, mean_pps=x, var_pps=0.0, warmup_remaining=warmup, samples_seen=1)
    a = baseline.alpha
    diff = x - baseline.mean_pps
    incr = a * diff
    return replace(
        baseline,
        mean_pps=baseline.mean_pps + incr,
        var_pps=max(0.0, (1 - a) * (baseline.var_pps + diff * incr)),
        warmup_remaining=warmup,
        samples_seen=baseline.samples_seen + 1,
    )


def check_anomaly(
    baseline: AnomalyBaseline,
    sample: CounterSample,
    k: float = DEFAULT_K,
    pps_floor: float = DEFAULT_PPS_FLOOR,
) -> bool:
    if baseline.warmup_remaining > 0:
        return False
    pps = sample.pkts_per_s
    if pps <= pps_floor:
        return False
    if sample.queue_drops > 0:
        return True
    return pps > baseline.mean_pps + k * math.sqrt(baseline.var_pps)


class IncidentState(str, enum.Enum):
    OPEN = "Open"
    INVESTIGATING = "Investigating"
    CLOSED = "Closed"
    SUPPRESSED = "Suppressed"


class SliceRef(NamedTuple):
    start_s: float
    end_s: float
    path: str


@dataclass(frozen=True)
class IncidentWindow:
    trigger_ts_s: float
    window_start_s: float
    window_end_s: float
    pcap_slice_path: str
    state: IncidentState = IncidentState.OPEN

    def __post_init__(self):
        # A fallback slice may end before the trigger; the window then ends at the trigger.
        if not self.window_start_s <= self.trigger_ts_s <= self.window_end_s:
            raise ValueError(
                f"trigger {self.trigger_ts_s} outside window "
                f"[{self.window_start_s}, {self.window_end_s}]"
            )

    def to_dict(self) -> dict:
        return {
            "trigger_ts_s": self.trigger_ts_s,
            "window_start_s": self.window_start_s,
            "window_end_s": self.window_end_s,
            "pcap_slice_path": self.pcap_slice_path,
            "state": self.state.value,
        }


def open_incident(trigger_ts_s: float, slice_index: Sequence[SliceRef | tuple]) -> IncidentWindow:
    """Map a trigger time to the slice covering it.

    Falls back to the latest slice starting at or before the trigger when no
    slice's half-open range contains it.
    """
    if not slice_index:
        raise NoSliceAvailable("slice index is empty")
    slices = sorted(SliceRef(*s) for s in slice_index)
    for s in slices:
        if s.start_s <= trigger_ts_s < s.end_s:
            return IncidentWindow(trigger_ts_s, s.start_s, s.end_s, s.path)
    earlier = [s for s in slices if s.start_s <= trigger_ts_s]
    if not earlier:
        raise NoSliceAvailable(f"trigger at {trigger_ts_s}s precedes every slice")
    s = max(earlier, key=lambda r: (r.start_s, r.end_s))
    return IncidentWindow(trigger_ts_s, s.start_s, max(s.end_s, trigger_ts_s), s.path)


@dataclass
class CooldownState:
    cooldown_s: float = DEFAULT_COOLDOWN_S
    last_fire: dict[Hashable, float] = field(default_factory=dict)

    def __post_init__(self):
        if not self.cooldown_s > 0:
            raise ValueError("cooldown_s must be > 0")


def should_suppress(cooldown: CooldownState, key: Hashable, now_s: float) -> bool:
    """True when ``key`` fired less than ``cooldown_s`` ago; otherwise record the firing."""
    last = cooldown.last_fire.get(key)
    if last is not None and now_s - last < cooldown.cooldown_s:
        return True
    cooldown.last_fire[key] = now_s
    return False


@dataclass(frozen=True)
class Trigger:
    sample: CounterSample
    baseline: AnomalyBaseline


class CounterMonitor:
    """Owns the baseline and fires once per anomalous episode (rising edge).

    Anomalous samples are kept out of the baseline so a sustained flood does
    not teach the monitor that the flood is normal.
    """

    def __init__(
        self,
        k: float = DEFAULT_K,
        pps_floor: float = DEFAULT_PPS_FLOOR,
        alpha: float = DEFAULT_ALPHA,
        warmup: int = DEFAULT_WARMUP,
    ):
        if k < 0 or pps_floor < 0 or warmup < 0:
            raise ValueError("k, pps_floor and warmup must be >= 0")
        self.k = k
        self.pps_floor = pps_floor
        self.baseline = AnomalyBaseline(alpha=alpha, warmup_remaining=warmup)
        self._in_episode = False

    def feed(self, sample: CounterSample) -> Trigger | None:
        if check_anomaly(self.baseline, sample, self.k, self.pps_floor):
            fired = not self._in_episode
            self._in_episode = True
            return Trigger(sample, self.baseline) if fired else None
        self._in_episode = False
        self.baseline = update_baseline(self.baseline, sample)
        return None


def read_counters(path: str | Path) -> Iterator[CounterSample]:
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            try:
                yield CounterSample.from_dict(json.loads(line))
            except (KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: bad counter sample: {exc}") from exc


def scan_slices(directory: str | Path) -> list[SliceRef]:
    refs = []
    for p in Path(directory).iterdir():
        try:
            start, end = parse_slice_name(p.name)
        except ValueError:
            continue
        refs.append(SliceRef(start, end, str(p)))
    return sorted(refs)
