import numpy as np
import pytest

from cdcr_fatigue import prbm, statics
from cdcr_fatigue.config import GRAVITY_HORIZONTAL, G0, MM, ChainConfig, StiffnessParams
from cdcr_fatigue.statics import (
    complementarity_residual,
    end_stop_torque,
    limit_pose,
    limit_state,
    solve_equilibrium,
    static_residual,
)


def test_unloaded_rest_has_zero_residual(cfg_nograv, params):
    assert np.all(static_residual(cfg_nograv, params, np.zeros(77), [0, 0]) == 0)


def test_horizontal_gravity_residual_is_gravity_load(cfg, params):
    c = cfg.replace(gravity=GRAVITY_HORIZONTAL)
    r = static_residual(c, params, np.zeros(77), [0, 0])
    assert np.linalg.norm(r) > 0
    # the projection keeps the part of G(0) that does work on admissible motions
    J = prbm.closure_jacobian(c, np.zeros(7))
    G = prbm.gravity_vector(c, np.zeros(77))
    assert np.allclose(J.T @ r, J.T @ G, atol=1e-12)


def test_unloaded_solution_is_straight(cfg_nograv, params):
    res = solve_equilibrium(cfg_nograv, params, [0, 0])
    assert res.converged
    assert np.allclose(res.q_eq.vector, 0, atol=1e-12)
    assert np.all(res.contact_forces == 0)


@pytest.mark.parametrize("u", [20.0, 80.0, 139.0])
def test_equilibrium_residual_is_small(cfg, params, u):
    res = solve_equilibrium(cfg, params, [u, 0])
    assert res.converged and res.residual_norm <= statics.DEFAULT_TOL
    r = static_residual(cfg, params, res.q_eq, [u, 0], u_e=res.u_e)
    assert np.linalg.norm(r) < 1e-7
    res.q_eq.check(cfg)


def test_large_tension_drives_every_module_to_the_stopper(cfg, params):
    res = solve_equilibrium(cfg, params, [400.0, 0])
    assert res.converged
    assert np.allclose(res.phi, cfg.limit_angle)
    assert np.all(res.contact_forces > 0)
    assert complementarity_residual(cfg, res) <= 1e-6
    r = static_residual(cfg, params, res.q_eq, [400.0, 0], u_e=res.u_e)
    assert np.linalg.norm(r) < 1e-7


def test_outer_cable_bends_the_other_way(cfg_nograv, params):
    res = solve_equilibrium(cfg_nograv, params, [0, 400.0])
    assert np.allclose(res.phi, -cfg_nograv.limit_angle)
    assert np.all(res.u_e < 0) and np.all(res.contact_forces > 0)


def test_contact_only_on_closed_stoppers(cfg, params):
    for u in np.linspace(0, 300, 7):
        res = solve_equilibrium(cfg, params, [u, 0])
        open_ = np.abs(res.phi) < cfg.limit_angle - 1e-9
        assert np.all(res.contact_forces[open_] == 0)
        assert np.all(res.contact_forces >= 0)
        assert complementarity_residual(cfg, res) <= 1e-6


def test_monotone_in_tension(cfg, params):
    prev = None
    for u in np.linspace(0, 250, 11):
        res = solve_equilibrium(cfg, params, [u, 0])
        if prev is not None:
            assert np.all(res.phi >= prev - 1e-9)
        prev = res.phi


def test_payload_equals_tip_force(cfg, params):
    m = 0.1
    with_mass = solve_equilibrium(cfg.replace(gravity=GRAVITY_HORIZONTAL, tip_payload=m), params, [30.0, 0])
    with_force = solve_equilibrium(cfg.replace(gravity=GRAVITY_HORIZONTAL), params, [30.0, 0],
                                   tip_force=(-m * G0, 0.0, 0.0))
    assert np.allclose(with_mass.q_eq.vector, with_force.q_eq.vector, atol=1e-8)


def test_generalized_force_equivalent(cfg_nograv, params):
    # a constant generalized force on the TwistBeam hinges acts like an applied bending moment
    f = np.zeros(77)
    f[prbm.topology(7).twist_rev] = 0.05
    res = solve_equilibrium(cfg_nograv, params, [0, 0], generalized_force=f)
    assert res.converged and np.all(res.phi > 0)
    assert np.linalg.norm(static_residual(cfg_nograv, params, res.q_eq, [0, 0], u_e=res.u_e,
                                          generalized_force=f)) < 1e-7


def test_negative_tension_rejected(cfg, params):
    with pytest.raises(ValueError):
        solve_equilibrium(cfg, params, [-1.0, 0])


def test_iteration_cap_reports_best_iterate(cfg, params):
    res = solve_equilibrium(cfg, params, [80.0, 0], max_iter=2)
    assert not res.converged and res.iterations == 2 and "tolerance" in res.message


def test_warm_start(cfg, params):
    a = solve_equilibrium(cfg, params, [80.0, 0])
    b = solve_equilibrium(cfg, params, [80.0, 0], warm_start=a)
    assert b.iterations <= 2 and np.allclose(a.q_eq.vector, b.q_eq.vector, atol=1e-9)


def test_deterministic(cfg, params):
    a = solve_equilibrium(cfg, params, [60.0, 0])
    b = solve_equilibrium(cfg, params, [60.0, 0])
    assert np.array_equal(a.q_eq.vector, b.q_eq.vector)


# --- limit pose and end-stop torque ------------------------------------------------------


def test_limit_pose_compression(cfg):
    kin = prbm.forward_kinematics(cfg, limit_pose(cfg))
    assert np.allclose(cfg.shaft_spacing - kin.shaft_spacings(prbm.INNER), 10.2 * MM, atol=1e-12)


def test_limit_pose_zero_angle():
    c = ChainConfig(limit_angle=0.0, limit_spacing=54.3 * MM)
    assert np.allclose(limit_pose(c).vector, 0, atol=1e-15)


def test_healthy_end_stop_torque(cfg, params):
    tau = end_stop_torque(cfg, params)
    assert tau[0] == pytest.approx(1.40, abs=0.01) and tau[1] == 0.0


def test_end_stop_torque_scales_with_stiffness(cfg_nograv, params):
    t1 = end_stop_torque(cfg_nograv, params)[0]
    t2 = end_stop_torque(cfg_nograv, params.scaled(2.0))[0]
    assert t2 == pytest.approx(2 * t1, rel=1e-8)


def test_zero_stiffness_needs_no_torque(cfg_nograv):
    zero = StiffnessParams((0, 0, 0), (0, 0, 0), (0, 0, 0))
    assert np.all(end_stop_torque(cfg_nograv, zero) == 0)


def test_end_stop_tension_is_the_engagement_threshold(cfg, params):
    st = limit_state(cfg, params)
    below = solve_equilibrium(cfg, params, [0.97 * st.tension, 0])
    above = solve_equilibrium(cfg, params, [1.03 * st.tension, 0])
    assert np.any(below.phi < cfg.limit_angle - 1e-6)
    assert np.allclose(above.phi, cfg.limit_angle) and np.all(above.contact_forces > 0)
    at = solve_equilibrium(cfg, params, [st.tension, 0])
    assert np.allclose(at.phi, cfg.limit_angle, atol=1e-4)
    assert np.allclose(at.sigma, st.sigma, atol=1e-6)


def test_limit_state_contacts_nonnegative(cfg, params):
    st = limit_state(cfg, params)
    assert np.all(st.contact >= 0)
    assert st.contact[st.critical_module] == pytest.approx(0.0, abs=1e-9)


def test_end_stop_torque_is_mirror_symmetric(cfg_nograv, params):
    a = end_stop_torque(cfg_nograv, params, cable=prbm.INNER)
    b = end_stop_torque(cfg_nograv, params, cable=prbm.OUTER)
    assert a[0] == pytest.approx(b[1], rel=1e-9)


@pytest.mark.parametrize("gx", [-5.0, 5.0])
def test_limit_state_under_strong_lateral_gravity(cfg, gx):
    soft = StiffnessParams.constant(2000.0, 3000.0, 1e-3)
    st = limit_state(cfg.replace(gravity=(gx * G0, 0.0, 0.0)), soft)
    assert st.tension > 0 and np.all(st.contact >= -1e-12)
    assert st.contact[st.critical_module] == pytest.approx(0.0, abs=1e-9)
    if gx < 0:
        # with +x weight the base modules can rest on the opposite stoppers instead, so the
        # all-at-limit pose is one of several equilibria and a cold start need not find it
        above = solve_equilibrium(cfg.replace(gravity=(gx * G0, 0.0, 0.0)), soft, [1.05 * st.tension, 0])
        assert np.allclose(above.phi, cfg.limit_angle)
