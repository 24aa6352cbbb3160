"""Quasi-static equilibrium with unilateral stopper contact.

The equilibrium is the minimizer of the total potential energy

    Pi = elastic + gravity + sum_k u_k * cable_length_k - external work

over the independent module coordinates (bend angle, TwistBeam shortening),
with each module's bend angle boxed by the stoppers. Cable tensions ``u``
are in newtons throughout; motor torques are tension times pulley radius.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from cdcr_fatigue import prbm
from cdcr_fatigue.config import ChainConfig, StiffnessParams
from cdcr_fatigue.prbm import INNER, OUTER, JointState

log = logging.getLogger(__name__)

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 500


class SolverError(RuntimeError):
    pass


class LineSearchError(SolverError):
    pass


class ModelInconsistencyError(SolverError):
    """No non-negative tension holds the chain at its limit pose."""


@dataclass
class Loads:
    """Everything except stiffness that enters the energy."""

    tension: np.ndarray = field(default_factory=lambda: np.zeros(2))
    tip_force: np.ndarray = field(default_factory=lambda: np.zeros(2))  # (x, z) N
    generalized_force: np.ndarray | None = None  # constant, conjugate to q

    @classmethod
    def make(cls, u_c: Any = None, tip_force: Any = None, generalized_force: Any = None) -> "Loads":
        u = np.zeros(2) if u_c is None else np.asarray(u_c, dtype=float).reshape(2)
        f = np.zeros(2) if tip_force is None else np.asarray(tip_force, dtype=float)
        if f.size == 3:
            f = f[[0, 2]]
        gf = None if generalized_force is None else np.asarray(generalized_force, dtype=float)
        return cls(u, f, gf)


@dataclass
class EquilibriumResult:
    q_eq: JointState
    residual_norm: float
    contact_forces: np.ndarray  # stopper moments, N m, >= 0
    converged: bool
    iterations: int
    energy: float = float("nan")
    phi: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sigma: np.ndarray = field(default_factory=lambda: np.zeros(0))
    u_e: np.ndarray = field(default_factory=lambda: np.zeros(0))  # signed, + pushes bend negative
    message: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "converged": self.converged,
            "iterations": self.iterations,
            "residual_norm": self.residual_norm,
            "energy_J": self.energy,
            "bend_angles_deg": np.degrees(self.phi).tolist(),
            "twist_shortening_mm": (self.sigma * 1e3).tolist(),
            "contact_forces_Nm": self.contact_forces.tolist(),
            "theta_rad": self.q_eq.theta.tolist(),
            "ell_m": self.q_eq.ell.tolist(),
            "message": self.message,
        }


# --- energy -------------------------------------------------------------------


def _energy_terms(cfg: ChainConfig, params: StiffnessParams, q: np.ndarray, loads: Loads, need_grad: bool = True):
    kin = prbm.forward_kinematics(cfg, q)
    g2 = np.array([cfg.gravity[0], cfg.gravity[2]])
    m = prbm.point_masses(cfg)
    energy = prbm.elastic_energy(params, q) - m @ (kin.points @ g2)
    for cable in (INNER, OUTER):
        if loads.tension[cable]:
            route = kin.cable_route(cable)
            energy += loads.tension[cable] * np.sum(np.linalg.norm(np.diff(route, axis=0), axis=1))
    energy -= loads.tip_force @ kin.tip
    if loads.generalized_force is not None:
        energy -= loads.generalized_force @ q
    if not need_grad:
        return energy, None, kin
    Jp = kin.point_jacobians()
    grad = prbm.elastic_force(params, q) + prbm.gravity_vector(cfg, q, kin, Jp)
    if np.any(loads.tension):
        grad -= prbm.cable_jacobian_analytic(cfg, kin, Jp).T @ loads.tension
    if np.any(loads.tip_force):
        tip_row = prbm.POINTS_PER_MODULE * (cfg.n_modules - 1) + prbm.P_PLATE
        grad -= Jp[tip_row].T @ loads.tip_force
    if loads.generalized_force is not None:
        grad -= loads.generalized_force
    return energy, grad, kin


def _split(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    return x[:n], x[n:]


def reduced_energy(cfg: ChainConfig, params: StiffnessParams, x: np.ndarray, loads: Loads) -> tuple[float, np.ndarray]:
    """Total potential and its gradient in reduced coordinates x = [phi; sigma]."""
    n = cfg.n_modules
    phi, sigma = _split(x, n)
    q = prbm.closure_map(cfg, phi, sigma)
    energy, grad_q, _ = _energy_terms(cfg, params, q, loads)
    return energy, prbm.closure_jacobian(cfg, phi).T @ grad_q


def bend_jacobian(n: int) -> np.ndarray:
    """d(bend_m)/dq for each module: rows of -H_e."""
    B = np.zeros((n, 11 * n))
    for i in range(n):
        B[i, 6 * i + 4] = B[i, 6 * i + 5] = 1.0
    return B


def static_residual(
    cfg: ChainConfig,
    params: StiffnessParams,
    q: JointState | np.ndarray,
    u_c: Any,
    u_e: Any = None,
    tip_force: Any = None,
    generalized_force: Any = None,
) -> np.ndarray:
    """G + K q - H_c^T u_c - H_e^T u_e - f_ext, less the BendBeam loop-closure reactions.

    ``u_e`` holds one signed stopper moment per module (positive acts on the
    positive-bend stopper). The hinge-beam loop carries internal reactions
    orthogonal to the admissible motions; they are projected out so the
    returned vector vanishes exactly at a constrained equilibrium.
    ``q`` must lie on the loop-closure manifold.
    """
    qv = q.vector if isinstance(q, JointState) else np.asarray(q, dtype=float)
    n = cfg.n_modules
    loads = Loads.make(u_c, tip_force, generalized_force)
    _, grad_q, _ = _energy_terms(cfg, params, qv, loads)
    if u_e is not None:
        grad_q = grad_q + bend_jacobian(n).T @ np.asarray(u_e, dtype=float)
    phi, _ = prbm.reduced_coordinates(cfg, qv)
    J = prbm.closure_jacobian(cfg, phi)
    coef, *_ = np.linalg.lstsq(J, grad_q, rcond=None)
    return J @ coef


# --- solver ---------------------------------------------------------------------


def _projected_gradient(x: np.ndarray, g: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float) -> np.ndarray:
    pg = g.copy()
    at_lo = (x <= lo + tol) & (g > 0)
    at_hi = (x >= hi - tol) & (g < 0)
    pg[at_lo | at_hi] = 0.0
    return pg


def _diag_preconditioner(fun, x: np.ndarray, g: np.ndarray) -> np.ndarray:
    d = np.empty_like(x)
    for i in range(x.size):
        h = 1e-6 if i < x.size // 2 else 1e-7
        xp = x.copy()
        xp[i] += h
        d[i] = (fun(xp)[1][i] - g[i]) / h
    d = np.where(d > 1e-12, d, np.max(np.abs(d)) if np.any(d > 1e-12) else 1.0)
    return d


def minimize_box(fun, x0: np.ndarray, lo: np.ndarray, hi: np.ndarray, tol: float = DEFAULT_TOL,
                 max_iter: int = DEFAULT_MAX_ITER) -> tuple[np.ndarray, float, np.ndarray, int, bool]:
    """Projected BFGS on a box; ``fun`` returns (value, gradient).

    Variables pinned at a bound with the gradient pointing outward form the
    active set; the quasi-Newton step acts on the free variables only.
    """
    x = np.clip(np.asarray(x0, dtype=float), lo, hi)
    f, g = fun(x)
    scale = _diag_preconditioner(fun, x, g)
    H0 = np.diag(1.0 / scale)
    Hinv = H0.copy()
    stalls = 0
    bound_tol = 1e-12
    for it in range(1, max_iter + 1):
        pg = _projected_gradient(x, g, lo, hi, bound_tol)
        if np.max(np.abs(pg)) <= tol:
            return x, f, g, it - 1, True
        free = pg != 0
        d = np.zeros_like(x)
        d[free] = -Hinv[np.ix_(free, free)] @ g[free]
        if g @ d >= 0:
            Hinv = H0.copy()
            d[free] = -Hinv[np.ix_(free, free)] @ g[free]
        # do not let the step wrap past a bound it is already sitting on
        alpha = 1.0
        accepted = False
        pg_norm = np.linalg.norm(pg)
        while alpha > 1e-14:
            x_new = np.clip(x + alpha * d, lo, hi)
            f_new, g_new = fun(x_new)
            s = x_new - x
            if f_new <= f + 1e-4 * (g @ s):
                accepted = True
                break
            # near convergence the energy change drops below rounding
            if abs(f_new - f) <= 1e-13 * max(1.0, abs(f)) and np.linalg.norm(
                _projected_gradient(x_new, g_new, lo, hi, bound_tol)
            ) < pg_norm:
                accepted = True
                break
            alpha *= 0.5
        if not accepted:
            stalls += 1
            if stalls >= 3:
                raise LineSearchError(f"no energy decrease for 3 successive steps (iteration {it})")
            Hinv = H0.copy()
            continue
        stalls = 0
        s = x_new - x
        y = g_new - g
        sy = s @ y
        if sy > 1e-14 * np.linalg.norm(s) * np.linalg.norm(y):
            rho = 1.0 / sy
            V = np.eye(x.size) - rho * np.outer(s, y)
            Hinv = V @ Hinv @ V.T + rho * np.outer(s, s)
        x, f, g = x_new, f_new, g_new
    pg = _projected_gradient(x, g, lo, hi, bound_tol)
    return x, f, g, max_iter, bool(np.max(np.abs(pg)) <= tol)


def _result_from_x(cfg: ChainConfig, x: np.ndarray, f: float, g: np.ndarray, it: int, ok: bool,
                   tol: float) -> EquilibriumResult:
    n = cfg.n_modules
    phi, sigma = _split(x, n)
    lim = cfg.limit_angle
    gphi = g[:n]
    u_e = np.zeros(n)
    at_hi = phi >= lim - 1e-12
    at_lo = phi <= -lim + 1e-12
    # KKT: grad_phi Pi = -lambda for the upper stopper, +lambda for the lower
    u_e[at_hi] = np.maximum(-gphi[at_hi], 0.0)
    u_e[at_lo & ~at_hi] = -np.maximum(gphi[at_lo & ~at_hi], 0.0)
    pg = _projected_gradient(x, g, np.r_[np.full(n, -lim), np.full(n, -np.inf)],
                             np.r_[np.full(n, lim), np.full(n, np.inf)], 1e-12)
    q = JointState.from_vector(prbm.closure_map(cfg, phi, sigma))
    msg = "converged" if ok else f"projected gradient {np.max(np.abs(pg)):.3e} above tolerance {tol:g}"
    return EquilibriumResult(
        q_eq=q,
        residual_norm=float(np.max(np.abs(pg))),
        contact_forces=np.abs(u_e),
        converged=ok,
        iterations=it,
        energy=float(f),
        phi=phi.copy(),
        sigma=sigma.copy(),
        u_e=u_e,
        message=msg,
    )


def solve_equilibrium(
    cfg: ChainConfig,
    params: StiffnessParams,
    u_c: Any,
    *,
    tip_force: Any = None,
    generalized_force: Any = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
    warm_start: EquilibriumResult | None = None,
) -> EquilibriumResult:
    """Stable equilibrium under cable tensions ``u_c`` (N, both >= 0).

    Starts from the straight pose unless ``warm_start`` is given. A run that
    exhausts ``max_iter`` returns its best iterate with ``converged=False``.
    """
    u = np.asarray(u_c, dtype=float).reshape(2)
    if not np.all(np.isfinite(u)) or np.any(u < 0):
        raise ValueError(f"cable tensions must be finite and >= 0, got {u}")
    n = cfg.n_modules
    loads = Loads.make(u, tip_force, generalized_force)
    lim = cfg.limit_angle
    lo = np.r_[np.full(n, -lim), np.full(n, -np.inf)]
    hi = np.r_[np.full(n, lim), np.full(n, np.inf)]
    x0 = np.zeros(2 * n) if warm_start is None else np.r_[warm_start.phi, warm_start.sigma]

    def fun(x: np.ndarray) -> tuple[float, np.ndarray]:
        return reduced_energy(cfg, params, x, loads)

    x, f, g, it, ok = minimize_box(fun, x0, lo, hi, tol=tol, max_iter=max_iter)
    res = _result_from_x(cfg, x, f, g, it, ok, tol)
    if not ok:
        log.warning("equilibrium not converged: %s", res.message)
    return res


# --- limit pose and end-stop torque --------------------------------------------


def limit_pose(cfg: ChainConfig, side: int = 1) -> JointState:
    """Design limit pose: every module at the stopper angle, shafts at ``limit_spacing``."""
    n = cfg.n_modules
    phi = np.full(n, side * cfg.limit_angle)
    sigma = np.full(n, cfg.limit_twist_shortening)
    return JointState.from_vector(prbm.closure_map(cfg, phi, sigma))


@dataclass
class LimitState:
    tension: float
    sigma: np.ndarray
    contact: np.ndarray  # stopper moments at that tension, >= 0
    critical_module: int

    def q(self, cfg: ChainConfig, side: int = 1) -> JointState:
        return JointState.from_vector(
            prbm.closure_map(cfg, np.full(cfg.n_modules, side * cfg.limit_angle), self.sigma)
        )


def _limit_residual(cfg, params, sigma, u, cable, side):
    n = cfg.n_modules
    x = np.r_[np.full(n, side * cfg.limit_angle), sigma]
    tension = np.zeros(2)
    tension[cable] = u
    _, g = reduced_energy(cfg, params, x, Loads(tension))
    # stopper moment needed at each module, positive when the stopper pushes back
    return g[n:], -side * g[:n]


def limit_state(cfg: ChainConfig, params: StiffnessParams, cable: int = INNER, tol: float = 1e-10,
                max_iter: int = 60) -> LimitState:
    """Smallest tension on ``cable`` holding every module on its stopper with non-negative contact.

    The free directions (TwistBeam shortenings) are solved exactly together
    with the tension, taking the module with the least contact as the one that
    just touches; the critical module is switched until all contacts are >= 0.
    """
    n = cfg.n_modules
    side = 1 if cable == INNER else -1
    sigma = np.zeros(n)
    u = 0.0
    # with no pull, the stoppers may already be loaded (gravity)
    sigma0 = _solve_free(cfg, params, sigma, 0.0, cable, side, tol, max_iter)
    _, lam0 = _limit_residual(cfg, params, sigma0, 0.0, cable, side)
    if np.all(lam0 >= -tol):
        return LimitState(0.0, sigma0, np.maximum(lam0, 0.0), int(np.argmin(lam0)))
    crit = int(np.argmin(lam0))
    sigma = sigma0
    for _ in range(n + 1):
        sigma, u = _solve_critical(cfg, params, sigma, u, crit, cable, side, tol, max_iter)
        _, lam = _limit_residual(cfg, params, sigma, u, cable, side)
        if u < -tol:
            raise ModelInconsistencyError(f"limit pose needs a pushing cable (u = {u:.4g} N)")
        if np.all(lam >= -1e-9 * max(1.0, np.max(np.abs(lam)))):
            return LimitState(max(u, 0.0), sigma, np.maximum(lam, 0.0), crit)
        crit = int(np.argmin(lam))
    raise ModelInconsistencyError("could not find a tension with non-negative contact on every stopper")


def _solve_free(cfg, params, sigma, u, cable, side, tol, max_iter):
    n = cfg.n_modules
    sigma = sigma.copy()
    for _ in range(max_iter):
        r, _ = _limit_residual(cfg, params, sigma, u, cable, side)
        if np.max(np.abs(r)) <= tol:
            return sigma
        J = np.empty((n, n))
        for j in range(n):
            h = 1e-7
            sp = sigma.copy()
            sp[j] += h
            J[:, j] = (_limit_residual(cfg, params, sp, u, cable, side)[0] - r) / h
        sigma = sigma - np.linalg.solve(J, r)
    raise SolverError("TwistBeam shortening did not converge at the limit pose")


def _solve_critical(cfg, params, sigma, u, crit, cable, side, tol, max_iter):
    n = cfg.n_modules

    def F(z):
        r, lam = _limit_residual(cfg, params, z[:n], z[n], cable, side)
        return np.r_[r, lam[crit]]

    z = np.r_[sigma, u]
    scale = np.r_[np.full(n, 1e-7), 1e-4]
    for _ in range(max_iter):
        Fz = F(z)
        if np.max(np.abs(Fz)) <= tol:
            return z[:n], z[n]
        J = np.empty((n + 1, n + 1))
        for j in range(n + 1):
            zp = z.copy()
            zp[j] += scale[j]
            J[:, j] = (F(zp) - Fz) / scale[j]
        try:
            z = z - np.linalg.solve(J, Fz)
        except np.linalg.LinAlgError as exc:
            raise ModelInconsistencyError("tension has no leverage on the critical stopper") from exc
    raise SolverError("end-stop tension did not converge")


def end_stop_torque(cfg: ChainConfig, params: StiffnessParams, cable: int = INNER) -> np.ndarray:
    """Motor torques (N m) at which the stoppers just engage, pulling ``cable``."""
    st = limit_state(cfg, params, cable)
    tau = np.zeros(2)
    tau[cable] = st.tension * cfg.pulley_radius
    return tau


def torque_to_tension(cfg: ChainConfig, tau: Any) -> np.ndarray:
    return np.abs(np.asarray(tau, dtype=float).reshape(2)) / cfg.pulley_radius


def complementarity_residual(cfg: ChainConfig, res: EquilibriumResult) -> float:
    """max_i |contact_i * stopper_gap_i|; zero when every contact force sits on a closed stopper."""
    gap = cfg.limit_angle - np.abs(res.phi)
    return float(np.max(np.abs(res.contact_forces * gap), initial=0.0))
