"""Re-derive the healthy stiffness scale used by ``healthy_params``.

The physical robot's stiffness coefficients are not published, so the
package ships a fixed stiffness shape and scales it until the default
7-module chain needs 1.40 N m of motor torque to press every module onto
its stopper. Run this after changing ``BASE_SHAPE`` or the default chain
and paste the printed scale into ``calibration.CALIBRATED_SCALE``.
"""

from cdcr_fatigue.calibration import BASE_SHAPE, CALIBRATED_SCALE, HEALTHY_TAU_LIM, calibrate_scale
from cdcr_fatigue.config import ChainConfig
from cdcr_fatigue.ident import equivalent_stiffness, nominal_scalars
from cdcr_fatigue.statics import end_stop_torque


def main() -> None:
    cfg = ChainConfig()
    scale = calibrate_scale(cfg, BASE_SHAPE, HEALTHY_TAU_LIM)
    params = BASE_SHAPE.scaled(scale)
    tau = end_stop_torque(cfg, params)[0]
    k = nominal_scalars(cfg, params)
    print(f"target end-stop torque  : {HEALTHY_TAU_LIM:.2f} N m")
    print(f"calibrated scale        : {scale:.10f} (frozen value {CALIBRATED_SCALE:.10f})")
    print(f"end-stop torque achieved: {tau:.6f} N m")
    print(f"limit-pose stiffnesses  : k_p1 {k[0]:.0f} N/m, k_p2 {k[1]:.0f} N/m, k_r2 {k[2]:.4f} N m/rad")
    print(f"equivalent stiffness    : {equivalent_stiffness(*k, cfg.char_radius):.0f} N/m")


if __name__ == "__main__":
    main()
