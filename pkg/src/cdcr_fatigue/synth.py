"""Seeded synthetic data: telemetry traces, degradation histories, and a
brute-force equilibrium used as an independent check on the solver."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from cdcr_fatigue import prbm
from cdcr_fatigue.config import ChainConfig, StiffnessParams
from cdcr_fatigue.detection import SAMPLE_RATE_HZ, TelemetryTrace
from cdcr_fatigue.fatigue import CycleRecord
from cdcr_fatigue.statics import Loads

MIN_GRID = 50


@dataclass(frozen=True)
class DegradationProfile:
    """Piecewise-linear tau_lim(n): slow wear, then accelerated decline, then a fracture floor.

    The slow-wear slope takes the torque from ``tau_start`` to ``tau_at_change``
    at ``change_point_n``.
    """

    tau_start: float = 1.4
    change_point_n: int = 9230
    fracture_tau: float = 0.6
    seed: int = 0
    tau_at_change: float = 0.95
    post_slope: float = -5e-4  # N m per cycle
    noise_sigma: float = 0.01
    k_hat_start: float | None = None  # if set, k_hat is generated proportional to tau

    def __post_init__(self) -> None:
        if not self.tau_start > self.fracture_tau:
            raise ValueError("tau_start must exceed fracture_tau")
        if not self.tau_start >= self.tau_at_change:
            raise ValueError("tau_at_change must not exceed tau_start")
        if self.change_point_n <= 0:
            raise ValueError("change_point_n must be positive")
        if self.post_slope >= 0:
            raise ValueError("post_slope must be negative")
        if self.noise_sigma < 0:
            raise ValueError("noise_sigma must be non-negative")

    @property
    def pre_slope(self) -> float:
        return (self.tau_at_change - self.tau_start) / self.change_point_n


def degradation_curve(profile: DegradationProfile, n: np.ndarray) -> np.ndarray:
    """Noise-free tau_lim at cycle counts ``n``."""
    n = np.asarray(n, dtype=float)
    cp = profile.change_point_n
    tau = np.where(
        n <= cp,
        profile.tau_start + profile.pre_slope * n,
        profile.tau_start + profile.pre_slope * cp + profile.post_slope * (n - cp),
    )
    return np.maximum(tau, profile.fracture_tau)


def generate_degradation_series(profile: DegradationProfile, n_cycles: int) -> list[CycleRecord]:
    """One record per cycle 0..n_cycles-1. Once fractured, tau_lim sits exactly on the floor."""
    if n_cycles <= profile.change_point_n:
        raise ValueError("n_cycles must exceed the change point")
    rng = np.random.default_rng(profile.seed)
    n = np.arange(n_cycles)
    clean = degradation_curve(profile, n)
    tau = clean + rng.normal(0.0, profile.noise_sigma, n_cycles)
    fractured = clean <= profile.fracture_tau
    tau[fractured] = profile.fracture_tau
    tau[~fractured] = np.maximum(tau[~fractured], profile.fracture_tau)
    if profile.k_hat_start is None:
        return [CycleRecord(int(i), float(t)) for i, t in zip(n, tau)]
    k = profile.k_hat_start * clean / profile.tau_start
    return [CycleRecord(int(i), float(t), float(kk)) for i, t, kk in zip(n, tau, k)]


def generate_limit_trace(tau_lim: float = 1.4, plateau_disp: float = 422.0, contact_t: float = 19.57,
                         noise: float = 0.01, seed: int = 0, *, duration: float = 30.0,
                         sample_rate: float = SAMPLE_RATE_HZ, free_torque: tuple[float, float] = (0.1, 0.4),
                         rise_time: float = 0.15, repeatability: float | None = None,
                         displacement_noise: float = 0.05) -> TelemetryTrace:
    """Telemetry of one actuation to the stopper.

    Displacement ramps linearly to ``plateau_disp`` (mm) at ``contact_t`` and
    holds. Torque climbs gently during free motion, then rises over
    ``rise_time`` to the trial's trigger torque and holds. The trial's
    trigger torque is ``tau_lim`` plus a per-trial Gaussian offset of
    ``repeatability`` (defaults to ``noise``); every sample also carries
    independent Gaussian noise of ``noise``. A negative ``tau_lim`` gives a
    mirrored (negative) torque trace. With ``contact_t`` beyond ``duration``
    the trace is free motion only.
    """
    if not contact_t > 0:
        raise ValueError("contact time must be positive")
    rng = np.random.default_rng(seed)
    rep = noise if repeatability is None else repeatability
    sign = -1.0 if tau_lim < 0 else 1.0
    tau_trial = abs(tau_lim) + rng.normal(0.0, rep) if rep > 0 else abs(tau_lim)
    n = int(round(duration * sample_rate))
    t = np.arange(n) / sample_rate
    disp = plateau_disp * np.minimum(t / contact_t, 1.0)
    f0, f1 = free_torque
    free = f0 + (f1 - f0) * t / contact_t
    rise = f1 + (tau_trial - f1) * np.clip((t - contact_t) / rise_time, 0.0, 1.0)
    torque = np.where(t <= contact_t, free, rise)
    torque = sign * (torque + rng.normal(0.0, noise, n) if noise > 0 else torque)
    if displacement_noise > 0:
        disp = disp + rng.normal(0.0, displacement_noise, n)
    return TelemetryTrace(t, torque, disp, sample_rate)


@dataclass(frozen=True)
class BruteForceResult:
    q_eq: np.ndarray
    phi: np.ndarray
    sigma: np.ndarray
    energy: float
    phi_step: float
    sigma_step: float


@dataclass(frozen=True)
class _EnergyGrid:
    phis: np.ndarray
    sigmas: np.ndarray
    base: np.ndarray  # elastic + gravity, J
    lengths: np.ndarray  # (2, grid, grid) cable lengths, m
    tips: np.ndarray  # (grid, grid, 2) tip position, m


def _energy_grid(cfg: ChainConfig, params: StiffnessParams, grid: int,
                 sigma_range: tuple[float, float] | None) -> _EnergyGrid:
    if cfg.n_modules != 1:
        raise ValueError("brute force is only tractable for a single module")
    if grid < MIN_GRID:
        warnings.warn(f"grid of {grid} points per axis is coarse; results are unreliable below {MIN_GRID}",
                      stacklevel=3)
    lo, hi = sigma_range or (-cfg.max_compression, cfg.max_compression)
    phis = np.linspace(-cfg.limit_angle, cfg.limit_angle, grid)
    sigmas = np.linspace(lo, hi, grid)
    m = prbm.point_masses(cfg)
    g2 = np.array([cfg.gravity[0], cfg.gravity[2]])
    base = np.empty((grid, grid))
    lengths = np.empty((2, grid, grid))
    tips = np.empty((grid, grid, 2))
    for a, p in enumerate(phis):
        for b, s in enumerate(sigmas):
            q = prbm.closure_map(cfg, np.array([p]), np.array([s]))
            kin = prbm.forward_kinematics(cfg, q)
            base[a, b] = prbm.elastic_energy(params, q) - m @ (kin.points @ g2)
            for cable in (prbm.INNER, prbm.OUTER):
                lengths[cable, a, b] = np.sum(np.linalg.norm(np.diff(kin.cable_route(cable), axis=0), axis=1))
            tips[a, b] = kin.tip
    return _EnergyGrid(phis, sigmas, base, lengths, tips)


def _argmin(cfg: ChainConfig, g: _EnergyGrid, u_c, tip_force) -> BruteForceResult:
    loads = Loads.make(u_c, tip_force)
    e = g.base + np.tensordot(loads.tension, g.lengths, axes=1) - g.tips @ loads.tip_force
    a, b = np.unravel_index(int(np.argmin(e)), e.shape)
    phi, sigma = np.array([g.phis[a]]), np.array([g.sigmas[b]])
    return BruteForceResult(prbm.closure_map(cfg, phi, sigma), phi, sigma, float(e[a, b]),
                            float(g.phis[1] - g.phis[0]), float(g.sigmas[1] - g.sigmas[0]))


def brute_force_equilibrium(cfg: ChainConfig, params: StiffnessParams, u_c=None, grid: int = 200,
                            sigma_range: tuple[float, float] | None = None, tip_force=None) -> BruteForceResult:
    """Minimum-energy pose of a one-module chain by exhaustive (phi, sigma) grid scan.

    The bend angle is scanned over the stopper-limited range only; the
    TwistBeam shortening over ``sigma_range`` (default +-max_compression).
    """
    return _argmin(cfg, _energy_grid(cfg, params, grid, sigma_range), u_c, tip_force)


def brute_force_sweep(cfg: ChainConfig, params: StiffnessParams, tensions, grid: int = 200,
                      sigma_range: tuple[float, float] | None = None, tip_force=None) -> list[BruteForceResult]:
    """``brute_force_equilibrium`` for many tension pairs, sharing one energy grid
    (cable tension enters the potential linearly)."""
    g = _energy_grid(cfg, params, grid, sigma_range)
    return [_argmin(cfg, g, u, tip_force) for u in tensions]


def straight_cable_length_gradient(cfg: ChainConfig, cable: int) -> np.ndarray:
    """Hand-derived d(cable length)/dq of a one-module chain at q = 0.

    The route is base shaft P0 -> BendBeam site S -> top-plate shaft P2. At
    q = 0 every joint moves at most one of S and P2 by a rigid translation or
    a rotation about a known pivot, so dL/dq_j = u1 . (dS - dP0) + u2 . (dP2 - dS)
    with u1, u2 the unit directions of the two straight segments.
    """
    if cfg.n_modules != 1:
        raise ValueError("oracle is for a single module")
    h, w = cfg.shaft_spacing, cfg.beam_offset
    s = prbm.SIDE_SIGN[cable]
    frac, lat = cfg.cable_site_offsets[0]
    P0 = np.array([s * w, 0.0])
    S = np.array([s * (w + lat), frac * h])
    P2 = np.array([s * w, h])
    u1 = (S - P0) / np.linalg.norm(S - P0)
    u2 = (P2 - S) / np.linalg.norm(P2 - S)

    def rot(p, pivot):  # velocity of p for a unit positive rotation about pivot
        r = p - pivot
        return np.array([-r[1], r[0]])

    dS: dict[int, np.ndarray] = {
        prbm.theta_index(1, 0, 2 * cable): rot(S, P0),
        prbm.ell_index(1, 0, 2 * cable): np.array([0.0, 1.0]),
    }
    dP2: dict[int, np.ndarray] = {
        prbm.theta_index(1, 0, 4): rot(P2, np.zeros(2)),
        prbm.ell_index(1, 0, 4): np.array([0.0, 1.0]),
        prbm.theta_index(1, 0, 5): rot(P2, np.array([0.0, h])),
    }
    grad = np.zeros(cfg.n_dof)
    zero = np.zeros(2)
    for j in range(cfg.n_dof):
        ds, dp = dS.get(j, zero), dP2.get(j, zero)
        grad[j] = u1 @ ds + u2 @ (dp - ds)
    return grad
