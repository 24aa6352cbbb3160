import io
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from cdcr_fatigue.detection import (
    InsufficientEventsError,
    LimitEvent,
    StreamingDetector,
    TelemetryFormatError,
    TelemetryTrace,
    detect_limit_event,
    detect_plateau,
    detect_torque_knee,
    explain_limit_event,
    iter_jsonl_samples,
    read_trace_csv,
    trace_to_csv_text,
    trigger_stats,
)
from cdcr_fatigue.synth import generate_limit_trace

FS = 30.0


def trace(torque, disp):
    t = np.arange(len(torque)) / FS
    return TelemetryTrace(t, np.asarray(torque, float), np.asarray(disp, float))


def ramp_hold(n=900, k=587, top=422.0):
    i = np.arange(n)
    return top * np.minimum(i / k, 1.0)


def knee_torque(n=900, k=587, s0=0.01, s1=0.2, base=0.1):
    t = np.arange(n) / FS
    tk = k / FS
    return base + np.where(t <= tk, s0 * t, s0 * tk + s1 * (t - tk))


# --- trace validation ----------------------------------------------------------------------


def test_trace_requires_uniform_sampling():
    with pytest.raises(TelemetryFormatError):
        TelemetryTrace(np.array([0.0, 0.1, 0.3]), np.zeros(3), np.zeros(3), 10.0)


def test_trace_requires_equal_lengths_and_two_samples():
    with pytest.raises(TelemetryFormatError):
        TelemetryTrace(np.array([0.0, 1 / FS]), np.zeros(3), np.zeros(2))
    with pytest.raises(TelemetryFormatError):
        TelemetryTrace(np.array([0.0]), np.zeros(1), np.zeros(1))


def test_trace_from_samples_infers_rate():
    tr = TelemetryTrace.from_samples([0, 0.5, 1.0], [0, 0, 0], [0, 0, 0])
    assert tr.sample_rate == pytest.approx(2.0)


# --- plateau -------------------------------------------------------------------------------


def test_plateau_on_ramp_then_hold():
    idx = detect_plateau(trace(np.zeros(900), ramp_hold()))
    assert abs(idx - 587) <= 2


def test_plateau_none_on_constant():
    assert detect_plateau(trace(np.zeros(300), np.full(300, 422.0))) is None


def test_plateau_none_on_pure_ramp():
    assert detect_plateau(trace(np.zeros(300), np.arange(300) * 0.7)) is None


def test_plateau_window_errors():
    tr = trace(np.zeros(20), np.zeros(20))
    with pytest.raises(ValueError):
        detect_plateau(tr, window=1)
    with pytest.raises(ValueError):
        detect_plateau(tr, window=21)


# --- knee ------------------------------------------------------------------------------------


def test_knee_on_piecewise_linear_torque():
    idx = detect_torque_knee(trace(knee_torque(), np.zeros(900)))
    assert abs(idx - 587) <= 2


def test_knee_none_on_constant_slope():
    t = np.arange(900) / FS
    assert detect_torque_knee(trace(0.1 + 0.05 * t, np.zeros(900))) is None


def test_knee_no_false_positive_on_noisy_flat_torque():
    hits = 0
    for seed in range(100):
        rng = np.random.default_rng(seed)
        tr = trace(1.0 + rng.normal(0, 0.005, 900), np.zeros(900))
        hits += detect_torque_knee(tr) is not None
    assert hits == 0


def test_knee_window_errors():
    tr = trace(np.zeros(20), np.zeros(20))
    with pytest.raises(ValueError):
        detect_torque_knee(tr, pre_window=1)
    with pytest.raises(ValueError):
        detect_torque_knee(tr, post_window=50)


# --- events ----------------------------------------------------------------------------------


def test_reference_shaped_event():
    ev = detect_limit_event(generate_limit_trace(seed=3))
    assert ev is not None
    assert ev.t_contact == pytest.approx(19.57, abs=2 / FS)
    assert ev.tau_lim == pytest.approx(1.4, abs=0.05)
    assert ev.plateau_displacement == pytest.approx(422.0, abs=0.5)
    assert ev.t_contact == pytest.approx(ev.index / FS)


def test_negative_torque_sign_preserved():
    ev = detect_limit_event(generate_limit_trace(tau_lim=-1.4, seed=3))
    assert ev is not None and ev.tau_lim == pytest.approx(-1.4, abs=0.05)


def test_free_motion_only_gives_no_event():
    t = np.arange(500) / FS
    tr = trace(0.1 + 0.01 * t, 10.0 * t)
    ev, reason = explain_limit_event(tr)
    assert ev is None and "no displacement plateau" in reason


def test_coincidence_violation():
    disp = ramp_hold(900, 300)
    torque = knee_torque(900, 100)
    ev, reason = explain_limit_event(trace(torque, disp))
    assert ev is None and "do not coincide" in reason


def test_short_trace_reason():
    ev, reason = explain_limit_event(trace(np.zeros(5), np.zeros(5)))
    assert ev is None and "shorter" in reason


def test_event_serializes():
    ev = detect_limit_event(generate_limit_trace(seed=1))
    d = ev.to_dict()
    assert set(d) == {"t_contact", "index", "tau_lim", "plateau_displacement"}
    json.dumps(d)


@settings(max_examples=25)
@given(st.integers(0, 200))
def test_shift_equivariance(k):
    base = generate_limit_trace(seed=5)
    ev0 = detect_limit_event(base)
    tq = np.concatenate([np.full(k, base.torque[0]), base.torque])
    d = np.concatenate([np.full(k, base.displacement[0]), base.displacement])
    ev = detect_limit_event(trace(tq, d))
    assert ev.index == ev0.index + k
    assert detect_torque_knee(trace(tq, d)) == detect_torque_knee(base) + k
    assert detect_plateau(trace(tq, d)) == detect_plateau(base) + k


@settings(max_examples=25)
@given(st.floats(0.01, 100.0))
def test_scale_robustness(c):
    base = generate_limit_trace(seed=7)
    scaled = TelemetryTrace(base.t, c * base.torque, base.displacement)
    assert detect_torque_knee(scaled) == detect_torque_knee(base)
    a, b = detect_limit_event(base), detect_limit_event(scaled)
    assert a.index == b.index and b.tau_lim == pytest.approx(c * a.tau_lim, rel=1e-9)


# --- statistics -------------------------------------------------------------------------------


def test_trigger_stats_examples():
    s = trigger_stats([1.3, 1.5])
    assert s.mean == pytest.approx(1.4) and s.std == pytest.approx(0.1414, abs=1e-4) and s.count == 2
    assert trigger_stats([1.4] * 5).std == 0.0


def test_trigger_stats_accepts_events():
    evs = [LimitEvent(1.0, 30, 1.3, 422.0), LimitEvent(1.0, 30, 1.5, 422.0)]
    assert trigger_stats(evs).mean == pytest.approx(1.4)


def test_trigger_stats_needs_two():
    with pytest.raises(InsufficientEventsError):
        trigger_stats([1.4])
    with pytest.raises(ValueError):
        trigger_stats([])


# --- CSV and streaming ------------------------------------------------------------------------


def test_csv_round_trip():
    tr = generate_limit_trace(seed=2)
    back = read_trace_csv(io.StringIO(trace_to_csv_text(tr)))
    assert np.array_equal(back.t, tr.t) and np.array_equal(back.torque, tr.torque)
    assert np.array_equal(back.displacement, tr.displacement)


@pytest.mark.parametrize("text,line", [
    ("", 1),
    ("a,b,c\n0,0,0\n", 1),
    ("t_s,torque_Nm,displacement_mm\n0,0,0\n0.0333,x,0\n", 3),
    ("t_s,torque_Nm,displacement_mm\n0,0,0\n0.0333,0\n", 3),
])
def test_csv_errors_carry_line_numbers(text, line):
    with pytest.raises(TelemetryFormatError) as exc:
        read_trace_csv(io.StringIO(text))
    assert exc.value.line == line


def test_csv_non_uniform_rejected():
    text = "t_s,torque_Nm,displacement_mm\n0,0,0\n0.1,0,0\n0.3,0,0\n"
    with pytest.raises(TelemetryFormatError):
        read_trace_csv(io.StringIO(text))


def test_streaming_matches_batch_and_rearms():
    a = generate_limit_trace(seed=4)
    b = generate_limit_trace(tau_lim=1.2, seed=8)
    samples = list(zip(a.t, a.torque, a.displacement))
    samples += [(a.t[-1] + (i + 1) / FS, tq, d) for i, (tq, d) in enumerate(zip(b.torque, b.displacement))]
    events = list(StreamingDetector().feed(samples))
    assert len(events) == 2
    batch = detect_limit_event(a)
    assert events[0].index == batch.index and events[0].tau_lim == batch.tau_lim
    assert events[1].tau_lim == pytest.approx(1.2, abs=0.05)


def test_jsonl_parsing():
    lines = ['{"t_s": 0, "torque_Nm": 0.1, "displacement_mm": 1}', "", '{"t_s": 0.03}']
    it = iter_jsonl_samples(lines)
    assert next(it) == (0.0, 0.1, 1.0)
    with pytest.raises(TelemetryFormatError) as exc:
        next(it)
    assert exc.value.line == 3
