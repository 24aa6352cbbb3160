"""Stopper sizing, limit-compression safety and tip-drift metrics.

Lengths here are millimetres, matching design drawings. Differences are
taken in decimal arithmetic so that e.g. 75.9 - 45.2 - 4.8 is exactly 25.9.
"""

from __future__ import annotations

from dataclasses import dataclass
from decimal import Decimal

SAFE_COMPRESSION_MM = 25.0


class DesignInfeasibleError(ValueError):
    pass


def _dec(x: float) -> Decimal:
    return Decimal(repr(float(x)))


@dataclass(frozen=True)
class StopperGeometry:
    L_t: float
    L_f: float
    c: float

    @property
    def L_s(self) -> float:
        return stopper_length(self.L_t, self.L_f, self.c)


def stopper_length(L_t: float, L_f: float, c: float) -> float:
    """Stopper length L_s = L_t - L_f - c (mm)."""
    if L_t <= 0 or L_f < 0 or c < 0:
        raise DesignInfeasibleError("stopper dimensions must be positive")
    L_s = _dec(L_t) - _dec(L_f) - _dec(c)
    if L_s <= 0:
        raise DesignInfeasibleError(
            f"L_t = {L_t} mm cannot hold the flexible arc ({L_f} mm) plus clearance ({c} mm)"
        )
    return float(L_s)


@dataclass(frozen=True)
class CompressionCheck:
    delta: float
    safe: bool


def limit_compression_check(d0: float, d_limit: float, safe_bound: float = SAFE_COMPRESSION_MM) -> CompressionCheck:
    """Shaft-spacing reduction at the limit and whether it stays strictly below ``safe_bound``."""
    if not d0 > d_limit > 0:
        raise ValueError(f"need d0 > d_limit > 0, got {d0}, {d_limit}")
    delta = float(_dec(d0) - _dec(d_limit))
    return CompressionCheck(delta, delta < safe_bound)


def ntdr(delta_y: float, L: float) -> float:
    """Normalized tip deflection ratio |delta_y| / L."""
    if not L > 0:
        raise ValueError(f"robot length must be positive, got {L}")
    return abs(delta_y) / L


def drift_reduction(ntdr_a: float, ntdr_b: float) -> float:
    """Percent drift reduction of design b relative to design a."""
    if not ntdr_a > 0:
        raise ValueError("reference NTDR must be positive")
    return 100.0 * (1.0 - ntdr_b / ntdr_a)
