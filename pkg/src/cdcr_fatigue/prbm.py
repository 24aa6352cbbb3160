"""Pseudo-rigid-body model of the hinge-beam chain.

Joint layout (``q = [theta; ell]``, module-major inside each block)::

    theta[6i + 0, 1]   inner BendBeam hinges (passive, zero stiffness)
    theta[6i + 2, 3]   outer BendBeam hinges (passive, zero stiffness)
    theta[6i + 4, 5]   lumped TwistBeam revolute joints (K_r2)
    ell[5i + 0, 1]     inner BendBeam prismatic joints (K_p1)
    ell[5i + 2, 3]     outer BendBeam prismatic joints (K_p1)
    ell[5i + 4]        lumped TwistBeam prismatic joint (K_p2)

Planar coordinates are (x, z): the straight chain points along +z and a
positive bend rotates the chain toward -x, the side of cable 0 and of the
inner BendBeams.

The BendBeams close a loop between neighbouring plates, so only two
coordinates per module are independent: the bend angle ``phi`` (split
evenly between the two TwistBeam hinges) and the TwistBeam shortening
``sigma``. :func:`closure_map` lifts those to the full joint vector.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from cdcr_fatigue.config import ChainConfig, ParameterDomainError, StiffnessParams

INNER, OUTER = 0, 1
SIDE_SIGN = (-1.0, 1.0)

# per-module point slots produced by forward_kinematics
P_TWIST, P_BEAM_IN, P_BEAM_OUT, P_PLATE, P_SITE_IN, P_SITE_OUT, P_SHAFT_IN, P_SHAFT_OUT, P_TOP_IN, P_TOP_OUT = range(10)
POINTS_PER_MODULE = 10
MASS_SLOTS = (P_TWIST, P_BEAM_IN, P_BEAM_OUT, P_PLATE)


@dataclass
class JointState:
    """Generalized coordinates: 6 angles (rad) and 5 extensions (m) per module."""

    theta: np.ndarray
    ell: np.ndarray

    def __post_init__(self) -> None:
        self.theta = np.asarray(self.theta, dtype=float).reshape(-1)
        self.ell = np.asarray(self.ell, dtype=float).reshape(-1)
        if self.theta.size % 6 or self.ell.size % 5 or self.theta.size // 6 != self.ell.size // 5:
            raise ValueError(f"inconsistent JointState sizes {self.theta.size}, {self.ell.size}")

    @property
    def n_modules(self) -> int:
        return self.theta.size // 6

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.theta, self.ell])

    @classmethod
    def from_vector(cls, q: np.ndarray) -> "JointState":
        q = np.asarray(q, dtype=float)
        if q.size % 11:
            raise ValueError(f"joint vector length {q.size} is not a multiple of 11")
        n = q.size // 11
        return cls(q[: 6 * n], q[6 * n :])

    @classmethod
    def zeros(cls, n_modules: int) -> "JointState":
        return cls(np.zeros(6 * n_modules), np.zeros(5 * n_modules))

    def bend_angles(self) -> np.ndarray:
        th = self.theta.reshape(-1, 6)
        return th[:, 4] + th[:, 5]

    def check(self, cfg: ChainConfig, tol: float = 1e-9) -> None:
        """Raise ValueError unless the state is admissible for ``cfg``."""
        if self.n_modules != cfg.n_modules:
            raise ValueError(f"state has {self.n_modules} modules, config {cfg.n_modules}")
        if np.any(np.abs(self.ell) > cfg.max_compression + tol):
            raise ValueError("extension beyond the safe compression bound")
        if np.any(np.abs(self.bend_angles()) > cfg.limit_angle + tol):
            raise ValueError("module bend beyond the limit angle")


def _as_q(q: JointState | np.ndarray) -> np.ndarray:
    return q.vector if isinstance(q, JointState) else np.asarray(q, dtype=float)


# --- index bookkeeping -------------------------------------------------------


def theta_index(n: int, module: int, slot: int) -> int:
    return 6 * module + slot


def ell_index(n: int, module: int, slot: int) -> int:
    return 6 * n + 5 * module + slot


@dataclass(frozen=True)
class Topology:
    n: int
    is_rev: np.ndarray  # (11n,)
    ancestors: np.ndarray  # (P, 11n) bool, P = 10 n
    bend_rev: np.ndarray
    twist_rev: np.ndarray
    bend_pris: np.ndarray
    twist_pris: np.ndarray


@lru_cache(maxsize=32)
def topology(n: int) -> Topology:
    dof = 11 * n
    is_rev = np.zeros(dof, dtype=bool)
    is_rev[: 6 * n] = True
    anc = np.zeros((POINTS_PER_MODULE * n, dof), dtype=bool)
    backbone: list[int] = []
    for i in range(n):
        b1, b2 = theta_index(n, i, 4), theta_index(n, i, 5)
        lt = ell_index(n, i, 4)
        row = POINTS_PER_MODULE * i
        anc[row + P_TWIST, backbone + [b1]] = True
        for side, (p_beam, p_site, p_top) in enumerate(
            ((P_BEAM_IN, P_SITE_IN, P_TOP_IN), (P_BEAM_OUT, P_SITE_OUT, P_TOP_OUT))
        ):
            a1 = theta_index(n, i, 2 * side)
            l1, l2 = ell_index(n, i, 2 * side), ell_index(n, i, 2 * side + 1)
            anc[row + p_beam, backbone + [a1, l1]] = True
            anc[row + p_site, backbone + [a1, l1]] = True
            anc[row + p_top, backbone + [a1, l1, l2]] = True
        backbone = backbone + [b1, lt, b2]
        for p in (P_PLATE, P_SHAFT_IN, P_SHAFT_OUT):
            anc[row + p, backbone] = True
    mods = np.arange(n)
    return Topology(
        n=n,
        is_rev=is_rev,
        ancestors=anc,
        bend_rev=np.concatenate([6 * mods + s for s in range(4)]),
        twist_rev=np.concatenate([6 * mods + 4, 6 * mods + 5]),
        bend_pris=np.concatenate([6 * n + 5 * mods + s for s in range(4)]),
        twist_pris=6 * n + 5 * mods + 4,
    )


# --- stiffness -----------------------------------------------------------------


def _poly(coeffs: tuple[float, ...], x: np.ndarray) -> np.ndarray:
    return np.polynomial.polynomial.polyval(x, coeffs)


def _poly_energy(coeffs: tuple[float, ...], x: np.ndarray) -> np.ndarray:
    # secant force k(x) x has potential sum c_i x^(i+2) / (i+2)
    return sum(c * x ** (i + 2) / (i + 2) for i, c in enumerate(coeffs))


def eval_stiffness_scalars(params: StiffnessParams, q: JointState | np.ndarray) -> np.ndarray:
    """Per-joint stiffness values, aligned with the joint vector.

    Passive BendBeam hinges get exactly zero.
    """
    qv = _as_q(q)
    topo = topology(qv.size // 11)
    k = np.zeros(qv.size)
    k[topo.bend_pris] = _poly(params.a, qv[topo.bend_pris])
    k[topo.twist_pris] = _poly(params.b, qv[topo.twist_pris])
    k[topo.twist_rev] = _poly(params.c, qv[topo.twist_rev])
    if np.any(k < 0):
        raise ParameterDomainError("negative stiffness at the given state")
    return k


def stiffness_matrix(params: StiffnessParams, q: JointState | np.ndarray) -> np.ndarray:
    return np.diag(eval_stiffness_scalars(params, q))


def elastic_force(params: StiffnessParams, q: JointState | np.ndarray) -> np.ndarray:
    qv = _as_q(q)
    return eval_stiffness_scalars(params, qv) * qv


def elastic_energy(params: StiffnessParams, q: JointState | np.ndarray) -> float:
    qv = _as_q(q)
    topo = topology(qv.size // 11)
    return float(
        np.sum(_poly_energy(params.a, qv[topo.bend_pris]))
        + np.sum(_poly_energy(params.b, qv[topo.twist_pris]))
        + np.sum(_poly_energy(params.c, qv[topo.twist_rev]))
    )


# --- kinematics ----------------------------------------------------------------


def _axis(a: float) -> np.ndarray:
    return np.array([-np.sin(a), np.cos(a)])


def _lateral(a: float) -> np.ndarray:
    return np.array([np.cos(a), np.sin(a)])


@dataclass
class Kinematics:
    """World-frame (x, z) positions from :func:`forward_kinematics`."""

    points: np.ndarray  # (10 n, 2), slots P_*
    pivots: np.ndarray  # (11 n, 2) revolute pivots (rows of prismatic joints unused)
    dirs: np.ndarray  # (11 n, 2) prismatic axes (rows of revolute joints unused)
    plate_origins: np.ndarray  # (n + 1, 2)
    plate_angles: np.ndarray  # (n + 1,)
    shafts: np.ndarray  # (n + 1, 2, 2): plate, side, xy

    @property
    def n(self) -> int:
        return self.plate_angles.size - 1

    def slot(self, p: int) -> np.ndarray:
        return self.points[p::POINTS_PER_MODULE]

    @property
    def tip(self) -> np.ndarray:
        return self.plate_origins[-1]

    def cable_sites(self, cable: int) -> np.ndarray:
        return self.slot(P_SITE_IN if cable == INNER else P_SITE_OUT)

    def shaft_spacings(self, side: int = INNER) -> np.ndarray:
        return np.linalg.norm(np.diff(self.shafts[:, side], axis=0), axis=1)

    def cable_route(self, cable: int) -> np.ndarray:
        return np.vstack([self.shafts[0, cable], self.cable_sites(cable), self.shafts[-1, cable]])

    def point_jacobians(self) -> np.ndarray:
        """(P, 2, 11 n) derivative of every point with respect to q."""
        topo = topology(self.n)
        rel = self.points[:, None, :] - self.pivots[None, :, :]
        rot = np.stack([-rel[..., 1], rel[..., 0]], axis=-1)
        cols = np.where(topo.is_rev[None, :, None], rot, self.dirs[None, :, :])
        cols = cols * topo.ancestors[:, :, None]
        return np.transpose(cols, (0, 2, 1))


def forward_kinematics(cfg: ChainConfig, q: JointState | np.ndarray) -> Kinematics:
    """Compose the chain plate by plate; BendBeams hang off each plate as branches."""
    qv = _as_q(q)
    n = cfg.n_modules
    if qv.size != cfg.n_dof:
        raise ValueError(f"q has {qv.size} entries, expected {cfg.n_dof}")
    h, w = cfg.shaft_spacing, cfg.beam_offset
    th = qv[: 6 * n].reshape(n, 6)
    el = qv[6 * n :].reshape(n, 5)
    pts = np.zeros((POINTS_PER_MODULE * n, 2))
    pivots = np.zeros((11 * n, 2))
    dirs = np.zeros((11 * n, 2))
    origins = np.zeros((n + 1, 2))
    angles = np.zeros(n + 1)
    shafts = np.zeros((n + 1, 2, 2))
    o, a = np.zeros(2), 0.0
    shafts[0, INNER] = o - w * _lateral(a)
    shafts[0, OUTER] = o + w * _lateral(a)
    for i in range(n):
        row = POINTS_PER_MODULE * i
        a1 = a + th[i, 4]
        e1 = _axis(a1)
        pivots[theta_index(n, i, 4)] = o
        dirs[ell_index(n, i, 4)] = e1
        pts[row + P_TWIST] = o + 0.5 * h * e1
        o_next = o + (h + el[i, 4]) * e1
        pivots[theta_index(n, i, 5)] = o_next
        for side in (INNER, OUTER):
            s = SIDE_SIGN[side]
            frac, lat = cfg.cable_site_offsets[i]
            base = o + s * w * _lateral(a)
            ab = a + th[i, 2 * side]
            eb = _axis(ab)
            mid = base + (0.5 * h + el[i, 2 * side]) * eb
            top = mid + (0.5 * h + el[i, 2 * side + 1]) * eb
            pivots[theta_index(n, i, 2 * side)] = base
            pivots[theta_index(n, i, 2 * side + 1)] = top
            dirs[ell_index(n, i, 2 * side)] = eb
            dirs[ell_index(n, i, 2 * side + 1)] = eb
            pts[row + (P_BEAM_IN if side == INNER else P_BEAM_OUT)] = mid
            pts[row + (P_SITE_IN if side == INNER else P_SITE_OUT)] = (
                mid + (frac - 0.5) * h * eb + s * lat * _lateral(ab)
            )
            pts[row + (P_TOP_IN if side == INNER else P_TOP_OUT)] = top
        o, a = o_next, a1 + th[i, 5]
        origins[i + 1], angles[i + 1] = o, a
        pts[row + P_PLATE] = o
        shafts[i + 1, INNER] = o - w * _lateral(a)
        shafts[i + 1, OUTER] = o + w * _lateral(a)
        pts[row + P_SHAFT_IN] = shafts[i + 1, INNER]
        pts[row + P_SHAFT_OUT] = shafts[i + 1, OUTER]
    return Kinematics(pts, pivots, dirs, origins, angles, shafts)


# --- reduced coordinates -------------------------------------------------------


def closure_map(cfg: ChainConfig, phi: np.ndarray, sigma: np.ndarray) -> np.ndarray:
    """Full joint vector for module bend angles ``phi`` and TwistBeam shortenings ``sigma``."""
    n = cfg.n_modules
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n,))
    sigma = np.broadcast_to(np.asarray(sigma, dtype=float), (n,))
    h, w = cfg.shaft_spacing, cfg.beam_offset
    th = np.repeat(0.5 * phi[:, None], 6, axis=1)
    sin_half = np.sin(0.5 * phi)
    d_in = h - sigma - 2 * w * sin_half
    d_out = h - sigma + 2 * w * sin_half
    el = np.empty((n, 5))
    el[:, 0] = el[:, 1] = 0.5 * (d_in - h)
    el[:, 2] = el[:, 3] = 0.5 * (d_out - h)
    el[:, 4] = -sigma
    return np.concatenate([th.ravel(), el.ravel()])


def closure_jacobian(cfg: ChainConfig, phi: np.ndarray) -> np.ndarray:
    """(11 n, 2 n) derivative of :func:`closure_map`; columns ordered [phi..., sigma...]."""
    n = cfg.n_modules
    phi = np.broadcast_to(np.asarray(phi, dtype=float), (n,))
    w = cfg.beam_offset
    J = np.zeros((11 * n, 2 * n))
    half_cos = 0.5 * w * np.cos(0.5 * phi)
    for i in range(n):
        J[6 * i : 6 * i + 6, i] = 0.5
        J[ell_index(n, i, 0), i] = J[ell_index(n, i, 1), i] = -half_cos[i]
        J[ell_index(n, i, 2), i] = J[ell_index(n, i, 3), i] = half_cos[i]
        for s in range(4):
            J[ell_index(n, i, s), n + i] = -0.5
        J[ell_index(n, i, 4), n + i] = -1.0
    return J


def reduced_coordinates(cfg: ChainConfig, q: JointState | np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    qv = _as_q(q)
    n = cfg.n_modules
    th = qv[: 6 * n].reshape(n, 6)
    return th[:, 4] + th[:, 5], -qv[6 * n :].reshape(n, 5)[:, 4]


# --- cable and gravity -----------------------------------------------------------


def cable_length(cfg: ChainConfig, q: JointState | np.ndarray, cable: int) -> float:
    route = forward_kinematics(cfg, q).cable_route(cable)
    return float(np.sum(np.linalg.norm(np.diff(route, axis=0), axis=1)))


def cable_site_gap(cfg: ChainConfig, q: JointState | np.ndarray, cable: int = INNER) -> float:
    """Sum of distances between consecutive BendBeam cable sites (n - 1 terms)."""
    sites = forward_kinematics(cfg, q).cable_sites(cable)
    return float(np.sum(np.linalg.norm(np.diff(sites, axis=0), axis=1)))


class StepError(ValueError):
    pass


def cable_jacobian(cfg: ChainConfig, q: JointState | np.ndarray, step: float = 1e-6) -> np.ndarray:
    """H_c (2 x 11 n) by central differences of the cable path lengths.

    Rows hold the rate of cable *shortening*, so ``H_c.T @ u`` is the
    generalized force produced by cable tensions ``u``.
    """
    if not step > 1e-12:
        raise StepError(f"finite-difference step {step!r} underflows")
    qv = _as_q(q).copy()
    H = np.zeros((2, qv.size))
    for j in range(qv.size):
        orig = qv[j]
        qv[j] = orig + step
        plus = [cable_length(cfg, qv, c) for c in (INNER, OUTER)]
        qv[j] = orig - step
        minus = [cable_length(cfg, qv, c) for c in (INNER, OUTER)]
        qv[j] = orig
        H[:, j] = -(np.array(plus) - np.array(minus)) / (2 * step)
    return H


def cable_jacobian_analytic(cfg: ChainConfig, kin: Kinematics, J_pts: np.ndarray | None = None) -> np.ndarray:
    if J_pts is None:
        J_pts = kin.point_jacobians()
    n = kin.n
    H = np.zeros((2, 11 * n))
    for cable in (INNER, OUTER):
        route = kin.cable_route(cable)
        site_slot = P_SITE_IN if cable == INNER else P_SITE_OUT
        shaft_slot = P_SHAFT_IN if cable == INNER else P_SHAFT_OUT
        Js = [np.zeros((2, 11 * n))]
        Js += [J_pts[POINTS_PER_MODULE * i + site_slot] for i in range(n)]
        Js.append(J_pts[POINTS_PER_MODULE * (n - 1) + shaft_slot])
        seg = np.diff(route, axis=0)
        unit = seg / np.linalg.norm(seg, axis=1, keepdims=True)
        for k in range(len(seg)):
            H[cable] -= unit[k] @ (Js[k + 1] - Js[k])
    return H


def _gravity_2d(cfg: ChainConfig) -> np.ndarray:
    gx, _, gz = cfg.gravity
    return np.array([gx, gz])


def point_masses(cfg: ChainConfig) -> np.ndarray:
    """Mass attached to every FK point slot (payload sits on the tip plate)."""
    n = cfg.n_modules
    m = np.zeros(POINTS_PER_MODULE * n)
    lm = np.asarray(cfg.link_masses).reshape(n, 4)
    for i in range(n):
        for k, slot in enumerate(MASS_SLOTS):
            m[POINTS_PER_MODULE * i + slot] = lm[i, k]
    m[POINTS_PER_MODULE * (n - 1) + P_PLATE] += cfg.tip_payload
    return m


def potential_energy(cfg: ChainConfig, q: JointState | np.ndarray) -> float:
    kin = forward_kinematics(cfg, q)
    return float(-point_masses(cfg) @ (kin.points @ _gravity_2d(cfg)))


def gravity_vector(cfg: ChainConfig, q: JointState | np.ndarray, kin: Kinematics | None = None,
                   J_pts: np.ndarray | None = None) -> np.ndarray:
    """G(q): gradient of the gravitational potential, from point Jacobians."""
    g = _gravity_2d(cfg)
    if not np.any(g):
        return np.zeros(cfg.n_dof)
    if kin is None:
        kin = forward_kinematics(cfg, q)
    if J_pts is None:
        J_pts = kin.point_jacobians()
    m = point_masses(cfg)
    return -np.einsum("p,pkj,k->j", m, J_pts, g)
