"""Fatigue tracking over cycle histories of trigger torque.

The trigger torque tau_lim is measured every cycle; its magnitude is
classified into a fatigue phase, and the onset of accelerated decline is
located from the smoothed second derivative of tau_lim(n) over sparse
feature points.
"""

from __future__ import annotations

import csv
import enum
import math
import threading
from dataclasses import dataclass
from typing import IO, Iterable, Sequence

import numpy as np

from cdcr_fatigue.ident import SurrogateFit, predict_stiffness

NOMINAL_ABOVE = 1.4
DEGRADATION_FLOOR = 0.9
CRITICAL_FLOOR = 0.7


class HistoryFormatError(ValueError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(f"line {line}: {message}" if line is not None else message)
        self.line = line


class FatiguePhase(enum.IntEnum):
    """Ordered from worst to healthiest, so ``min`` picks the worse phase."""

    FAILURE = 0
    CRITICAL = 1
    DEGRADATION = 2
    NOMINAL = 3

    def __str__(self) -> str:
        return self.name.capitalize()


@dataclass(frozen=True)
class CycleRecord:
    n: int
    tau_lim: float
    k_hat: float | None = None


def classify_phase(tau: float) -> FatiguePhase:
    """Phase from |tau_lim| (N m): >1.4 Nominal, [0.9, 1.4] Degradation, [0.7, 0.9) Critical, <0.7 Failure."""
    t = abs(float(tau))
    if math.isnan(t):
        raise ValueError("trigger torque is NaN")
    if t > NOMINAL_ABOVE:
        return FatiguePhase.NOMINAL
    if t >= DEGRADATION_FLOOR:
        return FatiguePhase.DEGRADATION
    if t >= CRITICAL_FLOOR:
        return FatiguePhase.CRITICAL
    return FatiguePhase.FAILURE


def smooth(series: Sequence[float], window: int = 5) -> np.ndarray:
    """Centered moving average; near the ends the window is truncated to the available samples."""
    if window < 3 or window % 2 == 0:
        raise ValueError(f"window must be odd and >= 3, got {window}")
    y = np.asarray(series, dtype=float)
    if window > len(y):
        raise ValueError(f"window {window} is longer than the series ({len(y)})")
    h = window // 2
    c = np.concatenate([[0.0], np.cumsum(y)])
    i = np.arange(len(y))
    lo = np.maximum(i - h, 0)
    hi = np.minimum(i + h + 1, len(y))
    return (c[hi] - c[lo]) / (hi - lo)


def second_derivative(series: Sequence[float], spacing: float | Sequence[float] = 1.0) -> np.ndarray:
    """Central second difference; ``spacing`` may be the sample positions. Endpoints are NaN."""
    y = np.asarray(series, dtype=float)
    if len(y) < 3:
        raise ValueError(f"need at least 3 samples, got {len(y)}")
    out = np.full(len(y), np.nan)
    if np.ndim(spacing) == 0:
        h = float(spacing)
        if not h > 0:
            raise ValueError(f"spacing must be positive, got {spacing}")
        out[1:-1] = (y[2:] - 2 * y[1:-1] + y[:-2]) / h**2
        return out
    x = np.asarray(spacing, dtype=float)
    if len(x) != len(y):
        raise ValueError("positions and series must have equal length")
    h0, h1 = x[1:-1] - x[:-2], x[2:] - x[1:-1]
    out[1:-1] = 2.0 * ((y[2:] - y[1:-1]) / h1 - (y[1:-1] - y[:-2]) / h0) / (h0 + h1)
    return out


@dataclass(frozen=True)
class TrendOptions:
    window: int = 5
    significance: float = 4.0  # multiples of the IQR-based noise scale
    curvature: str = "onset"  # "onset": concave knees of |tau| only; "any": largest |d2|


def detect_trend_change(records: Sequence[CycleRecord], opts: TrendOptions | None = None) -> int | None:
    """Cycle count of the sharpest onset of accelerated decline of |tau_lim|, or None.

    The series is smoothed, differentiated twice, and the extreme curvature
    is accepted only if it exceeds ``significance`` times a robust noise
    scale (IQR / 1.349) of the curvature series. Points within half a
    smoothing window of either end are not candidates. When the peak is
    flat, the middle of the plateau is returned.
    """
    o = opts or TrendOptions()
    if o.curvature not in ("onset", "any"):
        raise ValueError(f"unknown curvature mode {o.curvature!r}")
    if len(records) < 3:
        raise ValueError("need at least 3 feature points")
    n = np.array([r.n for r in records], dtype=float)
    if np.any(np.diff(n) <= 0):
        raise ValueError("records must have strictly increasing cycle counts")
    if len(records) < o.window + 2:
        return None
    tau = np.abs([r.tau_lim for r in records])
    d2 = second_derivative(smooth(tau, o.window), n)
    # truncated edge windows shift the averaged position, which shows up as spurious
    # curvature; only points whose whole stencil was smoothed with a full window count
    h = o.window // 2
    d2[: h + 1] = np.nan
    d2[len(d2) - h - 1:] = np.nan
    score = -d2 if o.curvature == "onset" else np.abs(d2)
    valid = np.isfinite(score)
    if not valid.any():
        return None
    q75, q25 = np.percentile(d2[valid], [75, 25])
    noise = (q75 - q25) / 1.349
    span = n[-1] - n[0]
    floor = 1e-9 * (np.ptp(tau) + 1e-12) / span**2
    score = np.where(valid, score, -np.inf)
    j = int(np.argmax(score))
    if score[j] <= max(o.significance * noise, floor):
        return None
    # a kink smoothed by a moving average gives a flat-topped peak; report the middle of it
    top = score >= score[j] - 1e-6 * abs(score[j])
    a = b = j
    while a > 0 and top[a - 1]:
        a -= 1
    while b < len(top) - 1 and top[b + 1]:
        b += 1
    return int(round((n[a] + n[b]) / 2))


def feature_points(records: Sequence[CycleRecord], spacing: int = 500, half_width: int = 25,
                   refine_spacing: int | None = 50, refine_factor: float = 3.0) -> list[CycleRecord]:
    """Sparse feature points: the median tau (and k_hat) over +-``half_width`` cycles every ``spacing`` cycles.

    Where the torque change between neighbouring feature points exceeds
    ``refine_factor`` times the median change, extra points are inserted
    every ``refine_spacing`` cycles inside that interval.
    """
    if not records:
        return []
    n = np.array([r.n for r in records])
    tau = np.array([r.tau_lim for r in records], dtype=float)
    kh = np.array([np.nan if r.k_hat is None else r.k_hat for r in records], dtype=float)

    def point(c: int) -> CycleRecord | None:
        m = (n >= c - half_width) & (n <= c + half_width)
        if not m.any():
            return None
        k = kh[m]
        k_med = float(np.median(k[np.isfinite(k)])) if np.isfinite(k).any() else None
        return CycleRecord(int(c), float(np.median(tau[m])), k_med)

    centers = list(range(int(n[0]), int(n[-1]) + 1, spacing))
    pts = [p for p in (point(c) for c in centers) if p is not None]
    if refine_spacing and len(pts) >= 3:
        jumps = np.abs(np.diff([p.tau_lim for p in pts]))
        ref = float(np.median(jumps))
        extra = []
        for a, b, jmp in zip(pts[:-1], pts[1:], jumps):
            if jmp > refine_factor * ref:
                extra += [point(c) for c in range(a.n + refine_spacing, b.n, refine_spacing)]
        pts = sorted(pts + [p for p in extra if p is not None], key=lambda r: r.n)
    return pts


@dataclass(frozen=True)
class FatigueReport:
    phase: FatiguePhase
    k_hat: float | None
    k_hat_extrapolated: bool
    trend: str
    change_point: int | None
    n_latest: int
    tau_latest: float

    def to_dict(self) -> dict:
        return {
            "phase": str(self.phase),
            "k_hat_N_per_m": self.k_hat,
            "k_hat_extrapolated": self.k_hat_extrapolated,
            "trend": self.trend,
            "change_point_n": self.change_point,
            "n_latest": self.n_latest,
            "tau_latest_Nm": self.tau_latest,
        }


def assess(records: Sequence[CycleRecord], fit: SurrogateFit | None = None,
           opts: TrendOptions | None = None, feature_spacing: int | None = 500) -> FatigueReport:
    """Phase of the latest record, stiffness estimate, recent trend and change point."""
    if not records:
        raise ValueError("no cycle records")
    recs = sorted(records, key=lambda r: r.n)
    last = recs[-1]
    phase = classify_phase(last.tau_lim)
    k_hat, extrap = last.k_hat, False
    if fit is not None:
        pred = predict_stiffness(fit, last.tau_lim)
        k_hat, extrap = pred.k_hat, pred.extrapolated
    pts = feature_points(recs, feature_spacing) if feature_spacing else recs
    if len(pts) < 3:
        pts = recs
    change = detect_trend_change(pts, opts) if len(pts) >= 3 else None
    trend = "unknown"
    if len(pts) >= 2:
        tail = pts[-min(len(pts), (opts or TrendOptions()).window):]
        slope = np.polyfit([p.n for p in tail], np.abs([p.tau_lim for p in tail]), 1)[0]
        scale = max(abs(last.tau_lim), 1e-12) / max(tail[-1].n - tail[0].n, 1)
        trend = "declining" if slope < -1e-3 * scale else ("rising" if slope > 1e-3 * scale else "flat")
    return FatigueReport(phase, k_hat, extrap, trend, change, int(last.n), float(last.tau_lim))


# --- storage ----------------------------------------------------------------------

HISTORY_HEADER = ("n", "tau_lim_Nm", "k_hat_N_per_m")


def read_history_csv(src: str | IO[str]) -> list[CycleRecord]:
    """Read ``n,tau_lim_Nm[,k_hat_N_per_m]`` CSV."""
    fh = open(src, newline="") if isinstance(src, str) else src
    try:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise HistoryFormatError("empty history file", 1)
        header = tuple(h.strip() for h in header)
        if header not in (HISTORY_HEADER[:2], HISTORY_HEADER):
            raise HistoryFormatError("expected header n,tau_lim_Nm[,k_hat_N_per_m]", 1)
        out = []
        for line, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise HistoryFormatError(f"expected {len(header)} columns, got {len(row)}", line)
            try:
                n = int(row[0])
                tau = float(row[1])
                k = float(row[2]) if len(row) == 3 and row[2].strip() else None
            except ValueError as exc:
                raise HistoryFormatError(str(exc), line) from None
            if math.isnan(tau):
                raise HistoryFormatError("trigger torque is NaN", line)
            out.append(CycleRecord(n, tau, k))
    finally:
        if isinstance(src, str):
            fh.close()
    return out


def write_history_csv(records: Iterable[CycleRecord], dst: str | IO[str]) -> None:
    records = list(records)
    with_k = any(r.k_hat is not None for r in records)
    fh = open(dst, "w", newline="") if isinstance(dst, str) else dst
    try:
        w = csv.writer(fh)
        w.writerow(HISTORY_HEADER if with_k else HISTORY_HEADER[:2])
        for r in records:
            row = [r.n, repr(float(r.tau_lim))]
            if with_k:
                row.append("" if r.k_hat is None else repr(float(r.k_hat)))
            w.writerow(row)
    finally:
        if isinstance(dst, str):
            fh.close()


class CycleHistory:
    """Append-only, thread-safe cycle store; readers get immutable snapshots."""

    def __init__(self, records: Iterable[CycleRecord] = ()):
        self._lock = threading.Lock()
        self._records: list[CycleRecord] = []
        for r in records:
            self.append(r)

    def append(self, record: CycleRecord) -> None:
        if math.isnan(record.tau_lim):
            raise ValueError("trigger torque is NaN")
        with self._lock:
            if self._records and record.n <= self._records[-1].n:
                raise ValueError(f"cycle {record.n} is not after cycle {self._records[-1].n}")
            self._records.append(record)

    def snapshot(self) -> tuple[CycleRecord, ...]:
        with self._lock:
            return tuple(self._records)

    def __len__(self) -> int:
        with self._lock:
            return len(self._records)
