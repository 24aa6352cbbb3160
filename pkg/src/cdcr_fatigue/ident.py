"""Stiffness identification from the end-stop torque, and the runtime surrogate.

The outer loop searches the three joint stiffnesses with a bounded
Nelder-Mead simplex in log space. For each candidate the inner loop solves
the static equilibrium under the recorded tension and scores how well that
equilibrium sits "just on" the stoppers:

* gap term: the cable-site gap of the equilibrium against the same pose
  pushed fully onto the stoppers (non-zero while any module falls short);
* contact term: the smallest stopper moment (non-zero when every module is
  pressed, i.e. the candidate is softer than the recorded torque implies).

Both vanish exactly when the candidate's end-stop tension equals the
recorded one. That is one scalar condition on three unknowns, so a weak
prior on the stiffness *proportions* (scale-free) picks the solution; the
overall scale is fixed by the data.
"""

from __future__ import annotations

import bisect
import json
import logging
import math
from dataclasses import asdict, dataclass
from typing import Any, Iterable, Sequence

import numpy as np
from scipy.optimize import minimize

from cdcr_fatigue import prbm, statics
from cdcr_fatigue.calibration import healthy_params
from cdcr_fatigue.config import ChainConfig, StiffnessParams

log = logging.getLogger(__name__)

PENALTY = 1e6


class FitError(ValueError):
    pass


def _value_at(coeffs: Sequence[float], x: float) -> float:
    return float(np.polynomial.polynomial.polyval(x, coeffs))


def nominal_scalars(cfg: ChainConfig, params: StiffnessParams | None = None) -> np.ndarray:
    """(k_p1, k_p2, k_r2) of ``params`` evaluated at the design limit pose."""
    params = params or healthy_params()
    q = statics.limit_pose(cfg).vector
    n = cfg.n_modules
    ell_bend = q[prbm.ell_index(n, 0, 0)]
    ell_twist = q[prbm.ell_index(n, 0, 4)]
    beta = q[prbm.theta_index(n, 0, 4)]
    return np.array([_value_at(params.a, ell_bend), _value_at(params.b, ell_twist), _value_at(params.c, beta)])


@dataclass
class IdentOptions:
    bounds: tuple[float, float] = (1.0, 1e6)  # N/m, on (k_p1, k_p2, k_r2 / r^2)
    initial: tuple[float, float, float] | None = None  # defaults to the healthy scalars
    prior: tuple[float, float, float] | None = None  # stiffness proportions; defaults to initial
    prior_weight: float = 1e-2
    simplex_scale: float = 0.3  # in log space
    max_evals: int = 400
    xatol: float = 1e-5
    fatol: float = 1e-12
    misfit_tol: float = 1e-6


@dataclass
class IdentResult:
    k_p1: float
    k_p2: float
    k_r2: float
    objective_value: float  # g(q_hat)^2, m^2
    k_hat: float
    converged: bool
    misfit: float = float("nan")
    evaluations: int = 0
    message: str = ""

    @property
    def scalars(self) -> np.ndarray:
        return np.array([self.k_p1, self.k_p2, self.k_r2])

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def equivalent_stiffness(k_p1: float, k_p2: float, k_r2: float, r: float) -> float:
    """RMS of the three stiffnesses, the hinge one divided by r^2 to give N/m."""
    if not r > 0:
        raise ValueError(f"characteristic radius must be positive, got {r!r}")
    k_r2n = k_r2 / r**2
    return math.sqrt((k_p1**2 + k_p2**2 + k_r2n**2) / 3.0)


def _misfit_terms(cfg: ChainConfig, res: statics.EquilibriumResult, tension: float, side: int,
                  gap_scale: float) -> tuple[float, float]:
    n = cfg.n_modules
    q_stop = prbm.closure_map(cfg, np.full(n, side * cfg.limit_angle), res.sigma)
    gap = (prbm.cable_site_gap(cfg, res.q_eq) - prbm.cable_site_gap(cfg, q_stop)) / gap_scale
    contact = float(np.min(res.contact_forces)) / max(tension * cfg.beam_offset, 1e-300)
    return gap, contact


def identify(cfg: ChainConfig, u_c_star: Any, opts: IdentOptions | None = None) -> IdentResult:
    """Recover (k_p1, k_p2, k_r2) from end-stop motor torques ``u_c_star`` (N m)."""
    opts = opts or IdentOptions()
    tau = np.asarray(u_c_star, dtype=float).reshape(2)
    tension = statics.torque_to_tension(cfg, tau)
    cable = int(np.argmax(tension))
    side = 1 if cable == prbm.INNER else -1
    n = cfg.n_modules
    # search in log of (k_p1, k_p2, k_r2 / r^2) so all three share N/m units
    to_nm = np.array([1.0, 1.0, 1.0 / cfg.char_radius**2])
    init = np.asarray(opts.initial if opts.initial is not None else nominal_scalars(cfg), dtype=float) * to_nm
    prior = np.log(np.asarray(opts.prior, dtype=float) * to_nm if opts.prior is not None else init)
    prior -= prior.mean()
    lo, hi = np.log(opts.bounds[0]), np.log(opts.bounds[1])
    q_star = statics.limit_pose(cfg, side)
    gap_scale = (prbm.cable_site_gap(cfg, np.zeros(cfg.n_dof)) - prbm.cable_site_gap(cfg, q_star)) / max(n - 1, 1)
    gap_scale = abs(gap_scale) or 1.0
    cache: dict[bytes, tuple[float, float, statics.EquilibriumResult | None]] = {}
    state: dict[str, Any] = {"warm": None, "best": math.inf}

    def evaluate(z: np.ndarray) -> tuple[float, float, statics.EquilibriumResult | None]:
        key = np.round(z, 12).tobytes()
        if key in cache:
            return cache[key]
        k = np.exp(z) / to_nm
        params = StiffnessParams.constant(*k)
        u = np.zeros(2)
        u[cable] = tension[cable]
        try:
            res = statics.solve_equilibrium(cfg, params, u, warm_start=state["warm"])
            if not res.converged:
                raise statics.SolverError(res.message)
        except statics.SolverError as exc:
            log.debug("candidate %s rejected: %s", k, exc)
            out = (PENALTY, math.inf, None)
            cache[key] = out
            return out
        gap, contact = _misfit_terms(cfg, res, tension[cable], side, gap_scale)
        misfit = gap**2 + contact**2
        out = (misfit, prbm.cable_site_gap(cfg, res.q_eq) ** 2, res)
        cache[key] = out
        if misfit < state["best"]:
            state["best"], state["warm"] = misfit, res
        return out

    def objective(z: np.ndarray) -> float:
        misfit, _, _ = evaluate(z)
        dev = z - z.mean() - prior
        return misfit + opts.prior_weight * float(dev @ dev)

    z0 = np.clip(np.log(init), lo, hi)
    simplex = np.vstack([z0] + [z0 + opts.simplex_scale * e for e in np.eye(3)])
    simplex = np.clip(simplex, lo, hi)
    if tension[cable] == 0.0:
        misfit, obj, _ = evaluate(z0)
        k = np.exp(z0) / to_nm
        return IdentResult(*k, objective_value=obj, k_hat=equivalent_stiffness(*k, cfg.char_radius),
                           converged=False, misfit=misfit, evaluations=1,
                           message="zero end-stop torque: stiffness is not observable")
    sol = minimize(
        objective,
        z0,
        method="Nelder-Mead",
        bounds=[(lo, hi)] * 3,
        options={
            "initial_simplex": simplex,
            "maxfev": opts.max_evals,
            "xatol": opts.xatol,
            "fatol": opts.fatol,
        },
    )
    z = sol.x
    misfit, obj, _ = evaluate(z)
    k = np.exp(z) / to_nm
    at_bound = bool(np.any(z <= lo + 1e-6) or np.any(z >= hi - 1e-6))
    ok = bool(sol.success and misfit <= opts.misfit_tol and not at_bound)
    msg = "converged" if ok else (
        f"optimizer: {sol.message}; misfit {misfit:.3e}" + ("; stiffness at bound" if at_bound else "")
    )
    return IdentResult(
        k_p1=float(k[0]),
        k_p2=float(k[1]),
        k_r2=float(k[2]),
        objective_value=float(obj),
        k_hat=equivalent_stiffness(*k, cfg.char_radius),
        converged=ok,
        misfit=float(misfit),
        evaluations=int(sol.nfev),
        message=msg,
    )


# --- surrogate ------------------------------------------------------------------


def pava(y: Sequence[float], w: Sequence[float] | None = None) -> np.ndarray:
    """Pool-adjacent-violators: the non-decreasing least-squares fit to ``y``."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    vals: list[float] = []
    wts: list[float] = []
    counts: list[int] = []
    for yi, wi in zip(y, w):
        vals.append(yi)
        wts.append(wi)
        counts.append(1)
        while len(vals) > 1 and vals[-2] > vals[-1]:
            wsum = wts[-2] + wts[-1]
            merged = (vals[-2] * wts[-2] + vals[-1] * wts[-1]) / wsum
            c = counts[-2] + counts[-1]
            del vals[-1], wts[-1], counts[-1]
            vals[-1], wts[-1], counts[-1] = merged, wsum, c
    return np.repeat(vals, counts)


@dataclass
class SurrogateFit:
    """Monotone piecewise-linear k_hat(tau_lim); knots sorted by torque magnitude."""

    knots: list[tuple[float, float]]
    kind: str = "monotone piecewise-linear"

    def __post_init__(self) -> None:
        if len(self.knots) < 2:
            raise FitError("surrogate needs at least 2 knots")
        self._tau = [t for t, _ in self.knots]
        self._k = [k for _, k in self.knots]

    def to_dict(self) -> dict[str, Any]:
        return {"kind": self.kind, "knots": [{"tau_lim_Nm": t, "k_hat_N_per_m": k} for t, k in self.knots]}

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> "SurrogateFit":
        return cls([(float(k["tau_lim_Nm"]), float(k["k_hat_N_per_m"])) for k in d["knots"]], d.get("kind", cls.kind))

    def save(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path) -> "SurrogateFit":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def fit_surrogate(points: Iterable[Sequence[float]]) -> SurrogateFit:
    """Fit from (n, tau_lim, k_hat) feature points.

    Points are ordered by |tau|; k_hat is projected onto non-decreasing
    values; points sharing a torque are merged.
    """
    pts = [(abs(float(p[1])), float(p[2])) for p in points]
    if len(pts) < 2 or len({t for t, _ in pts}) < 2:
        raise FitError("need at least 2 distinct tau values")
    pts.sort()
    taus = np.array([t for t, _ in pts])
    ks = pava([k for _, k in pts])
    knots: list[tuple[float, float]] = []
    for t, k in zip(taus, ks):
        if knots and knots[-1][0] == t:
            continue
        knots.append((float(t), float(k)))
    return SurrogateFit(knots)


@dataclass
class Prediction:
    k_hat: float
    extrapolated: bool = False


def predict_stiffness(fit: SurrogateFit, tau: float) -> Prediction:
    """Interpolate k_hat at |tau|; outside the fitted range the end value is returned and flagged."""
    t = abs(float(tau))
    taus, ks = fit._tau, fit._k
    if t <= taus[0]:
        return Prediction(ks[0], t < taus[0])
    if t >= taus[-1]:
        return Prediction(ks[-1], t > taus[-1])
    j = bisect.bisect_right(taus, t)
    t0, t1 = taus[j - 1], taus[j]
    k0, k1 = ks[j - 1], ks[j]
    return Prediction(k0 + (k1 - k0) * (t - t0) / (t1 - t0))
