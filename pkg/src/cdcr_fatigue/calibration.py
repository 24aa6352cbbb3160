"""Healthy-robot stiffness defaults.

No stiffness coefficients are published for the physical robot, so the
defaults are a fixed stiffness *shape* scaled until the default chain's
end-stop torque equals the healthy trigger torque of 1.40 N m.
``demos/calibrate_defaults.py`` reruns the calibration; the frozen scale
below is its output.
"""

from __future__ import annotations

from scipy.optimize import brentq

from cdcr_fatigue.config import ChainConfig, StiffnessParams
from cdcr_fatigue.statics import end_stop_torque

HEALTHY_TAU_LIM = 1.40  # N m

# shape: BendBeam 15 kN/m, TwistBeam 20 kN/m, hinge 0.9 N m/rad, mild quadratic stiffening
BASE_SHAPE = StiffnessParams(
    a=(15000.0, 0.0, 15000.0 * 500.0),
    b=(20000.0, 0.0, 20000.0 * 500.0),
    c=(0.9, 0.0, 0.3),
)

CALIBRATED_SCALE = 1.5051017711


def calibrate_scale(cfg: ChainConfig, shape: StiffnessParams = BASE_SHAPE,
                    target: float = HEALTHY_TAU_LIM) -> float:
    """Scale factor on ``shape`` giving an end-stop torque of ``target``."""

    def miss(s: float) -> float:
        return end_stop_torque(cfg, shape.scaled(s))[0] - target

    return brentq(miss, 0.1, 10.0, xtol=1e-12)


def healthy_params() -> StiffnessParams:
    return BASE_SHAPE.scaled(CALIBRATED_SCALE)
