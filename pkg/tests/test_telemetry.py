from __future__ import annotations

import json
import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tracehound.telemetry import (
    AnomalyBaseline,
    CooldownState,
    CounterMonitor,
    CounterSample,
    IncidentState,
    IncidentWindow,
    NoSliceAvailable,
    SliceRef,
    check_anomaly,
    open_incident,
    read_counters,
    scan_slices,
    should_suppress,
    update_baseline,
)


def s(pps, ts=0.0, drops=0):
    return CounterSample(ts, pps * 600, pps, drops)


def fold(xs, alpha):
    b = AnomalyBaseline(alpha=alpha, warmup_remaining=0)
    for x in xs:
        b = update_baseline(b, s(x))
    return b


def weighted_moments(xs, a):
    # Closed form of the seeded exponential weights: w_1 = (1-a)^(n-1), w_i = a(1-a)^(n-i)
    n = len(xs)
    w = [(1 - a) ** (n - 1)] + [a * (1 - a) ** (n - 1 - i) for i in range(1, n)]
    m = sum(wi * x for wi, x in zip(w, xs))
    return m, sum(wi * (x - m) ** 2 for wi, x in zip(w, xs))


def test_constant_stream_converges():
    b = fold([100.0] * 200, 0.1)
    assert b.mean_pps == pytest.approx(100.0)
    assert b.var_pps == pytest.approx(0.0, abs=1e-9)


def test_alpha_one_tracks_last_sample():
    assert fold([5.0, 900.0, 42.0], 1.0).mean_pps == 42.0


def test_three_sample_recurrence_by_hand():
    b = fold([100.0, 100.0, 200.0], 0.1)
    assert b.mean_pps == pytest.approx(0.1 * 200 + 0.9 * 100)
    assert b.var_pps == pytest.approx(0.9 * (100 * 10))


@settings(max_examples=200, deadline=None)
@given(
    xs=st.lists(st.floats(0, 1e6, allow_nan=False), min_size=1, max_size=40),
    a=st.floats(0.01, 1.0),
)
def test_recurrence_matches_weighted_moments(xs, a):
    b = fold(xs, a)
    m, v = weighted_moments(xs, a)
    assert b.mean_pps == pytest.approx(m, rel=1e-9, abs=1e-6)
    assert b.var_pps == pytest.approx(v, rel=1e-7, abs=1e-3)
    assert b.var_pps >= 0


def test_warmup_counts_down():
    b = AnomalyBaseline(warmup_remaining=2)
    b = update_baseline(b, s(1))
    assert b.warmup_remaining == 1 and b.samples_seen == 1
    b = update_baseline(update_baseline(b, s(1)), s(1))
    assert b.warmup_remaining == 0


def test_baseline_rejects_bad_alpha():
    with pytest.raises(ValueError):
        AnomalyBaseline(alpha=0)
    with pytest.raises(ValueError):
        CounterSample(0, 0, -1)


def test_check_anomaly_examples():
    calm = AnomalyBaseline(mean_pps=100, var_pps=0, warmup_remaining=0, samples_seen=10)
    assert not check_anomaly(calm, s(100), k=3, pps_floor=1000)
    noisy = AnomalyBaseline(mean_pps=100, var_pps=25, warmup_remaining=0, samples_seen=10)
    assert check_anomaly(noisy, s(200), k=3, pps_floor=50)
    assert not check_anomaly(noisy, s(115), k=3, pps_floor=50)  # equal to threshold is not above it
    warming = AnomalyBaseline(mean_pps=100, warmup_remaining=5)
    assert not check_anomaly(warming, s(1e9, drops=10), k=3, pps_floor=0)


def test_queue_drops_fire_above_floor_only():
    b = AnomalyBaseline(mean_pps=5000, var_pps=1e6, warmup_remaining=0, samples_seen=10)
    assert check_anomaly(b, s(2000, drops=1), k=3, pps_floor=1000)
    assert not check_anomaly(b, s(900, drops=1), k=3, pps_floor=1000)


SLICES = [SliceRef(27, 44, "p1"), SliceRef(44, 60, "p2")]


def test_open_incident_examples():
    w = open_incident(29, SLICES)
    assert (w.window_start_s, w.window_end_s, w.pcap_slice_path, w.state) == (27, 44, "p1", IncidentState.OPEN)
    assert open_incident(44, SLICES).pcap_slice_path == "p2"
    with pytest.raises(NoSliceAvailable):
        open_incident(10, SLICES)


def test_open_incident_past_last_slice_extends_window():
    w = open_incident(75, SLICES)
    assert (w.pcap_slice_path, w.window_start_s, w.window_end_s) == ("p2", 44, 75)


def test_incident_window_invariant():
    with pytest.raises(ValueError):
        IncidentWindow(10, 20, 30, "x")


def test_cooldown_examples():
    c = CooldownState(60)
    key = ("10.0.0.7", "UDP")
    assert should_suppress(c, key, 100) is False
    assert should_suppress(c, key, 110) is True
    assert should_suppress(c, key, 161) is False
    assert c.last_fire[key] == 161
    assert should_suppress(c, ("10.0.0.7", "TCP"), 162) is False


def test_monitor_fires_once_per_episode_and_shields_baseline():
    mon = CounterMonitor(k=3, pps_floor=1000, alpha=0.1, warmup=5)
    stream = [300.0] * 20 + [8000.0] * 5 + [300.0] * 5 + [8000.0] * 3
    fired = [i for i, x in enumerate(stream) if mon.feed(s(x, ts=i))]
    assert fired == [20, 30]
    assert mon.baseline.mean_pps == pytest.approx(300.0)


def test_read_counters_and_scan_slices(tmp_path):
    p = tmp_path / "c.jsonl"
    p.write_text(json.dumps({"ts_s": 1, "bytes_per_s": 2, "pkts_per_s": 3, "queue_drops": 0}) + "\n\n")
    assert list(read_counters(p)) == [CounterSample(1, 2, 3, 0)]
    p.write_text('{"ts_s": 1}\n')
    with pytest.raises(ValueError, match="c.jsonl:1"):
        list(read_counters(p))
    for name in ("44s--60s.pcap", "27s--44s.pcap", "notes.txt"):
        (tmp_path / name).write_bytes(b"")
    refs = scan_slices(tmp_path)
    assert [(r.start_s, r.end_s) for r in refs] == [(27, 44), (44, 60)]
    assert math.isclose(refs[0].start_s, 27.0)
