"""Limit-event detection on joint telemetry (motor torque + linear displacement).

A limit event is declared when two independent signatures coincide:

* the displacement stops moving after having moved (plateau), and
* the torque departs sharply from its free-motion trend (knee).

The trigger torque is read as the median torque over a short settle window
that starts once the knee confirmation window has elapsed, so the readout
does not depend on the exact shape of the post-contact transient.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from dataclasses import asdict, dataclass
from typing import IO, Iterable, Iterator, Sequence

import numpy as np

log = logging.getLogger(__name__)

SAMPLE_RATE_HZ = 30.0


class TelemetryFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class InsufficientEventsError(ValueError):
    pass


@dataclass(frozen=True)
class TelemetryTrace:
    """Uniformly sampled telemetry: time (s), torque (N m), displacement (mm)."""

    t: np.ndarray
    torque: np.ndarray
    displacement: np.ndarray
    sample_rate: float = SAMPLE_RATE_HZ

    def __post_init__(self) -> None:
        t = np.asarray(self.t, dtype=float)
        tq = np.asarray(self.torque, dtype=float)
        d = np.asarray(self.displacement, dtype=float)
        if not (t.ndim == tq.ndim == d.ndim == 1 and len(t) == len(tq) == len(d)):
            raise TelemetryFormatError("t, torque and displacement must be 1-D and equally long")
        if len(t) < 2:
            raise TelemetryFormatError("trace needs at least 2 samples")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(tq)) and np.all(np.isfinite(d))):
            raise TelemetryFormatError("trace contains non-finite samples")
        dt = np.diff(t)
        if np.any(np.abs(dt - 1.0 / self.sample_rate) > 1e-6):
            raise TelemetryFormatError(f"samples are not uniformly spaced at {self.sample_rate} Hz")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "torque", tq)
        object.__setattr__(self, "displacement", d)

    def __len__(self) -> int:
        return len(self.t)

    @classmethod
    def from_samples(cls, t: Sequence[float], torque: Sequence[float], displacement: Sequence[float],
                     sample_rate: float | None = None) -> "TelemetryTrace":
        t = np.asarray(t, dtype=float)
        if sample_rate is None:
            if len(t) < 2:
                raise TelemetryFormatError("trace needs at least 2 samples")
            sample_rate = 1.0 / float(np.median(np.diff(t)))
        return cls(t, np.asarray(torque, dtype=float), np.asarray(displacement, dtype=float), sample_rate)


@dataclass(frozen=True)
class LimitEvent:
    t_contact: float
    index: int
    tau_lim: float
    plateau_displacement: float

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class DetectionOptions:
    plateau_window: int = 10
    plateau_eps: float = 0.5  # mm, max displacement range inside the plateau window
    min_motion_rate: float = 1.0  # mm/s, displacement rate required just before the plateau
    pre_window: int = 15
    post_window: int = 15
    slope_ratio: float = 5.0
    noise_floor_sigmas: float = 2.0  # pre-slope floor, in standard errors
    departure_sigmas: float = 4.0
    coincidence: int = 5
    settle_window: int = 10


@dataclass(frozen=True)
class TriggerStats:
    mean: float
    std: float
    count: int


# --- helpers ----------------------------------------------------------------------


def _window_sums(y: np.ndarray, m: int) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Sliding sums over windows [i, i+m) of y, x*y, y^2 with x = 0..m-1."""
    k = np.arange(len(y), dtype=float)
    c = lambda a: np.concatenate([[0.0], np.cumsum(a)])  # noqa: E731
    cy, cky, cyy = c(y), c(k * y), c(y * y)
    n_win = len(y) - m + 1
    i = np.arange(n_win)
    sy = cy[i + m] - cy[i]
    sky = cky[i + m] - cky[i]
    syy = cyy[i + m] - cyy[i]
    sxy = sky - i * sy  # sum over local x = k - i
    return sy, sxy, syy, i


def _sliding_slopes(y: np.ndarray, m: int, dt: float) -> tuple[np.ndarray, np.ndarray]:
    """Least-squares slope (per second) and its standard error over every window of length m."""
    sy, sxy, syy, _ = _window_sums(y, m)
    xbar = (m - 1) / 2.0
    sxx = m * (m * m - 1) / 12.0
    slope = (sxy - xbar * sy) / sxx
    rss = syy - sy * sy / m - slope * slope * sxx
    se = np.sqrt(np.maximum(rss, 0.0) / max(m - 2, 1) / sxx)
    return slope / dt, se / dt


def _loading_sign(torque: np.ndarray) -> float:
    s = np.sign(torque[int(np.argmax(np.abs(torque)))])
    return float(s) if s != 0 else 1.0


def _check_window(window: int, n: int) -> None:
    if window < 2:
        raise ValueError(f"window must be at least 2 samples, got {window}")
    if window > n:
        raise ValueError(f"window of {window} samples is longer than the trace ({n})")


# --- detectors --------------------------------------------------------------------


def detect_plateau(trace: TelemetryTrace, window: int = 10, eps: float = 0.5,
                   min_rate: float = 1.0) -> int | None:
    """First sample where displacement stays within ``eps`` for ``window`` samples after moving."""
    d = trace.displacement
    n = len(d)
    dt = 1.0 / trace.sample_rate
    _check_window(window, n)
    if n < 2 * window:
        return None
    lo = np.minimum.reduce([d[j:n - window + 1 + j] for j in range(window)])
    hi = np.maximum.reduce([d[j:n - window + 1 + j] for j in range(window)])
    flat = (hi - lo) < eps  # flat[i]: window [i, i+window)
    rate, _ = _sliding_slopes(d, window, dt)  # rate[i]: window [i, i+window)
    for i in range(window, n - window + 1):
        if flat[i] and abs(rate[i - window]) >= min_rate:
            return i
    return None


def detect_torque_knee(trace: TelemetryTrace, pre_window: int = 15, post_window: int = 15,
                       slope_ratio: float = 5.0, noise_floor_sigmas: float = 2.0,
                       departure_sigmas: float = 4.0) -> int | None:
    """Sample at which |torque| departs from its free-motion trend.

    Screening: the post-window slope must exceed ``slope_ratio`` times the
    pre-window slope (floored at ``noise_floor_sigmas`` standard errors,
    taken as the larger of the local and the trace-wide estimate).
    Localisation: extrapolate the pre-window trend and return the last sample
    before the residual exceeds ``departure_sigmas`` residual deviations for
    three consecutive samples.
    """
    y = _loading_sign(trace.torque) * trace.torque
    n = len(y)
    dt = 1.0 / trace.sample_rate
    _check_window(pre_window, n)
    _check_window(post_window, n)
    if n < pre_window + post_window:
        return None
    s_pre, se_pre = _sliding_slopes(y, pre_window, dt)
    s_post, _ = _sliding_slopes(y, post_window, dt)
    i = np.arange(pre_window, n - post_window + 1)
    pre, post = s_pre[i - pre_window], s_post[i]
    # a noise-free stretch (e.g. padding) has zero local standard error, so the floor also uses
    # the trace-wide noise level, estimated from first differences (robust to trends and steps)
    diffs = np.diff(y)
    sigma_y = 1.4826 * float(np.median(np.abs(diffs - np.median(diffs)))) / np.sqrt(2.0)
    sxx = dt**2 * pre_window * (pre_window**2 - 1) / 12.0
    floor = noise_floor_sigmas * np.maximum(se_pre[i - pre_window], sigma_y / np.sqrt(sxx))
    scale = max(float(np.max(np.abs(y))), 1e-300)
    ok = (post > np.maximum(floor, 1e-9 * scale)) & (post >= slope_ratio * np.maximum(pre, floor))
    hits = np.flatnonzero(ok)
    if len(hits) == 0:
        return None
    i0 = int(i[hits[0]])
    xs = np.arange(i0 - pre_window, i0, dtype=float)
    coef = np.polyfit(xs, y[i0 - pre_window:i0], 1)
    resid = y[i0 - pre_window:i0] - np.polyval(coef, xs)
    sigma = float(np.sqrt(resid @ resid / max(pre_window - 2, 1)))
    thr = departure_sigmas * sigma + 1e-12 * scale
    start = i0 - pre_window // 2
    js = np.arange(start, min(n, i0 + post_window + 3))
    above = (y[js] - np.polyval(coef, js)) > thr
    for a in range(len(js) - 2):
        if above[a] and above[a + 1] and above[a + 2]:
            return int(max(js[a] - 1, 0))
    return i0


def explain_limit_event(trace: TelemetryTrace, opts: DetectionOptions | None = None
                        ) -> tuple[LimitEvent | None, str]:
    """Detect a limit event; also return a short human-readable reason."""
    o = opts or DetectionOptions()
    if len(trace) < max(o.plateau_window, o.pre_window, o.post_window):
        return None, f"trace of {len(trace)} samples is shorter than the detection windows"
    p = detect_plateau(trace, o.plateau_window, o.plateau_eps, o.min_motion_rate)
    k = detect_torque_knee(trace, o.pre_window, o.post_window, o.slope_ratio,
                           o.noise_floor_sigmas, o.departure_sigmas)
    if p is None and k is None:
        return None, "no displacement plateau and no torque knee"
    if p is None:
        return None, f"torque knee at sample {k} but displacement never plateaus"
    if k is None:
        return None, f"displacement plateau at sample {p} but no torque knee"
    if abs(p - k) > o.coincidence:
        return None, f"plateau (sample {p}) and knee (sample {k}) do not coincide within {o.coincidence} samples"
    a = p + o.post_window
    b = min(a + o.settle_window, len(trace))
    if b - a < 1:
        return None, "trace ends before the settle window"
    tau = float(np.median(trace.torque[a:b]))
    disp = float(np.median(trace.displacement[p:min(p + o.plateau_window, len(trace))]))
    return LimitEvent(float(trace.t[p]), int(p), tau, disp), f"contact at sample {p} (knee {k})"


def detect_limit_event(trace: TelemetryTrace, opts: DetectionOptions | None = None) -> LimitEvent | None:
    event, reason = explain_limit_event(trace, opts)
    if event is None:
        log.info("no limit event: %s", reason)
    return event


def trigger_stats(events: Iterable[LimitEvent | float]) -> TriggerStats:
    """Mean and sample (n-1) standard deviation of the trigger torques."""
    taus = np.array([e.tau_lim if isinstance(e, LimitEvent) else float(e) for e in events])
    if len(taus) < 2:
        raise InsufficientEventsError(f"need at least 2 events, got {len(taus)}")
    return TriggerStats(float(taus.mean()), float(taus.std(ddof=1)), len(taus))


# --- I/O --------------------------------------------------------------------------

CSV_HEADER = ("t_s", "torque_Nm", "displacement_mm")


def _parse_rows(rows: Iterable[tuple[int, Sequence[str]]]) -> tuple[list[float], list[float], list[float]]:
    t: list[float] = []
    tq: list[float] = []
    d: list[float] = []
    for line, row in rows:
        if len(row) != 3:
            raise TelemetryFormatError(f"expected 3 columns, got {len(row)}", line)
        try:
            a, b, c = (float(v) for v in row)
        except ValueError as exc:
            raise TelemetryFormatError(str(exc), line) from None
        t.append(a)
        tq.append(b)
        d.append(c)
    return t, tq, d


def read_trace_csv(src: str | IO[str], sample_rate: float | None = None) -> TelemetryTrace:
    """Read ``t_s,torque_Nm,displacement_mm`` CSV from a path or an open text stream."""
    fh = open(src, newline="") if isinstance(src, str) else src
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise TelemetryFormatError("empty telemetry file", 1)
        if tuple(h.strip() for h in header) != CSV_HEADER:
            raise TelemetryFormatError(f"expected header {','.join(CSV_HEADER)}", 1)
        t, tq, d = _parse_rows((i + 2, r) for i, r in enumerate(reader) if r)
    finally:
        if isinstance(src, str):
            fh.close()
    if len(t) < 2:
        raise TelemetryFormatError("trace needs at least 2 samples")
    try:
        return TelemetryTrace.from_samples(t, tq, d, sample_rate)
    except TelemetryFormatError:
        raise
    except ValueError as exc:
        raise TelemetryFormatError(str(exc)) from None


def write_trace_csv(trace: TelemetryTrace, dst: str | IO[str]) -> None:
    fh = open(dst, "w", newline="") if isinstance(dst, str) else dst
    try:
        w = csv.writer(fh)
        w.writerow(CSV_HEADER)
        for row in zip(trace.t, trace.torque, trace.displacement):
            w.writerow([repr(float(v)) for v in row])
    finally:
        if isinstance(dst, str):
            fh.close()


def trace_to_csv_text(trace: TelemetryTrace) -> str:
    buf = io.StringIO()
    write_trace_csv(trace, buf)
    return buf.getvalue()


class StreamingDetector:
    """Incremental detector fed one sample at a time (e.g. a JSON-lines telemetry stream).

    Each event is emitted once, as soon as its settle window is complete;
    the buffer is then cleared so a later cycle can trigger again.
    """

    def __init__(self, sample_rate: float = SAMPLE_RATE_HZ, opts: DetectionOptions | None = None,
                 max_buffer: int = 10_000):
        self.sample_rate = sample_rate
        self.opts = opts or DetectionOptions()
        self.max_buffer = max_buffer
        self._buf: list[tuple[float, float, float]] = []
        self._last_checked = 0

    def push(self, t: float, torque: float, displacement: float) -> LimitEvent | None:
        self._buf.append((float(t), float(torque), float(displacement)))
        if len(self._buf) > self.max_buffer:
            del self._buf[: len(self._buf) - self.max_buffer]
        o = self.opts
        need = o.plateau_window + o.post_window + o.settle_window
        if len(self._buf) < max(need, o.pre_window + o.post_window) + 1:
            return None
        arr = np.array(self._buf)
        trace = TelemetryTrace(arr[:, 0], arr[:, 1], arr[:, 2], self.sample_rate)
        event, _ = explain_limit_event(trace, o)
        if event is None or event.index + o.post_window + o.settle_window > len(self._buf):
            return None
        self._buf.clear()
        return event

    def feed(self, samples: Iterable[tuple[float, float, float]]) -> Iterator[LimitEvent]:
        for s in samples:
            ev = self.push(*s)
            if ev is not None:
                yield ev


def iter_jsonl_samples(lines: Iterable[str]) -> Iterator[tuple[float, float, float]]:
    """Parse ``{"t_s":..,"torque_Nm":..,"displacement_mm":..}`` lines."""
    for i, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        try:
            rec = json.loads(line)
            yield float(rec["t_s"]), float(rec["torque_Nm"]), float(rec["displacement_mm"])
        except (ValueError, KeyError, TypeError) as exc:
            raise TelemetryFormatError(f"bad telemetry record: {exc}", i) from None
