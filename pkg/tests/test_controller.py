"""Controller pipelines: nominal laws, objectives, filter behavior."""

import numpy as np
import pytest

from oscbf.barriers import BarrierSpec, SceneSnapshot, TORQUE
from oscbf.controller import (
    Gains,
    SafetyFilterController,
    TaskTarget,
    VELOCITY,
    assemble_dynamic_qp,
    assemble_kinematic_qp,
    dynamic_nominal,
    kinematic_nominal,
    orientation_error,
)
from oscbf.qp import solve
from oscbf.robot import (
    RobotState,
    axis_angle_rotation,
    kinematic_quantities,
    op_space_quantities,
)


def _hold_target(model):
    kq = kinematic_quantities(model, model.home_configuration())
    return TaskTarget(pos=kq.ee_pos, rot=kq.ee_rot, q_des=model.home_configuration()), kq


def test_orientation_error_identity():
    R = axis_angle_rotation((0, 0, 1), 0.7)
    np.testing.assert_allclose(orientation_error(R, R), np.zeros(3), atol=1e-15)


def test_orientation_error_z_rotation():
    th = 0.4
    err = orientation_error(np.eye(3), axis_angle_rotation((0, 0, 1), th))
    np.testing.assert_allclose(err, [0, 0, -np.sin(th)], atol=1e-12)


def test_orientation_error_antisymmetric():
    A = axis_angle_rotation((0, 1, 0), 0.5)
    B = axis_angle_rotation((1, 0, 0), -0.3)
    np.testing.assert_allclose(
        orientation_error(A, B), -orientation_error(B, A), atol=1e-14
    )


def test_kinematic_nominal_zero_error(panda):
    target, kq = _hold_target(panda)
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    _, _, qd_nom = kinematic_nominal(panda, kq, st, target, Gains.default(panda.n_q))
    np.testing.assert_allclose(qd_nom, np.zeros(panda.n_q), atol=1e-12)


def test_kinematic_posture_invisible_at_ee(panda):
    target, kq = _hold_target(panda)
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    shifted = TaskTarget(pos=target.pos, rot=target.rot, q_des=panda.home_configuration() + 0.4)
    _, qd_null, _ = kinematic_nominal(panda, kq, st, shifted, Gains.default(panda.n_q))
    assert np.linalg.norm(qd_null) > 1e-3  # posture actually acts
    assert np.max(np.abs(kq.J[list(kq.task_rows)] @ qd_null)) < 1e-9


def test_kinematic_nonredundant_posture_has_no_effect(planar2):
    q = np.array([0.4, 0.9])
    kq = kinematic_quantities(planar2, q)
    st = RobotState(q, np.zeros(2))
    t1 = TaskTarget(pos=kq.ee_pos, q_des=q)
    t2 = TaskTarget(pos=kq.ee_pos, q_des=q + 0.5)
    _, null1, nom1 = kinematic_nominal(planar2, kq, st, t1, Gains.default(2))
    _, null2, nom2 = kinematic_nominal(planar2, kq, st, t2, Gains.default(2))
    np.testing.assert_allclose(null1, null2, atol=1e-10)  # N = 0 kills both
    np.testing.assert_allclose(nom1, nom2, atol=1e-10)


def test_dynamic_nominal_rest_equals_gravity(panda):
    target, _ = _hold_target(panda)
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    oq = op_space_quantities(panda, st.q, st.qd)
    _, _, gamma = dynamic_nominal(panda, oq, st, target, Gains.default(panda.n_q))
    np.testing.assert_allclose(gamma, oq.g, atol=1e-10)


def test_dynamic_nominal_pure_position_error(panda):
    # zero gravity, zero velocity, position error along x only
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    oq = op_space_quantities(panda, st.q, st.qd, gravity=(0, 0, 0))
    e = np.array([0.05, 0, 0])
    gains = Gains.default(panda.n_q)
    target = TaskTarget(pos=oq.ee_pos + e, rot=oq.ee_rot, q_des=st.q)
    _, _, gamma = dynamic_nominal(panda, oq, st, target, gains)
    rows = list(oq.task_rows)
    err6 = np.concatenate([-e, np.zeros(3)])
    expected = oq.J[rows].T @ (oq.lam @ (-(gains.kp_task * err6)[rows]))
    np.testing.assert_allclose(gamma, expected, atol=1e-9)


def test_nullspace_torque_invisible_at_ee(panda, rng):
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    oq = op_space_quantities(panda, st.q, st.qd)
    g0 = rng.standard_normal(panda.n_q)
    acc = oq.J[list(oq.task_rows)] @ oq.M_inv @ (oq.NT @ g0)
    assert np.max(np.abs(acc)) < 1e-8


def test_kinematic_objective_square_full_rank(planar2):
    # W = I, square full-rank task: N = 0 so P reduces to J'J
    q = np.array([0.4, 0.9])
    kq = kinematic_quantities(planar2, q)
    st = RobotState(q, np.zeros(2))
    prob = assemble_kinematic_qp(
        planar2, kq, st, np.zeros(2), (np.zeros((0, 2)), np.zeros(0), []),
        Gains.default(2),
    )
    Jt = kq.J[list(kq.task_rows)]
    np.testing.assert_allclose(prob.P, Jt.T @ Jt, atol=1e-12)


def test_kinematic_filter_identity_nontrivial_P(planar3):
    # inactive rows: the solution equals the nominal even though P != I
    q = np.array([0.2, 0.5, 0.4])
    kq = kinematic_quantities(planar3, q)
    st = RobotState(q, np.zeros(3))
    qd_nom = np.array([0.3, -0.2, 0.1])
    prob = assemble_kinematic_qp(
        planar3, kq, st, qd_nom, (np.zeros((0, 3)), np.zeros(0), []), Gains.default(3)
    )
    sol = solve(prob)
    assert np.max(np.abs(sol.x - qd_nom)) < 1e-8


def test_kinematic_objective_expansion(planar3, rng):
    # objective value must equal ||Wj N (x - nom)||^2 + ||Wo J (x - nom)||^2 + const
    q = np.array([0.2, 0.5, 0.4])
    kq = kinematic_quantities(planar3, q)
    st = RobotState(q, np.zeros(3))
    qd_nom = rng.standard_normal(3)
    gains = Gains.default(3)
    prob = assemble_kinematic_qp(
        planar3, kq, st, qd_nom, (np.zeros((0, 3)), np.zeros(0), []), gains
    )
    Jt = kq.J[list(kq.task_rows)]
    N = kq.N_kin
    const = 0.5 * qd_nom @ prob.P @ qd_nom
    for _ in range(10):
        x = rng.standard_normal(3)
        quad = 0.5 * x @ prob.P @ x + prob.q @ x + const
        direct = 0.5 * (
            np.sum((N @ (x - qd_nom)) ** 2) + np.sum((Jt @ (x - qd_nom)) ** 2)
        )
        assert abs(quad - direct) < 1e-10


def test_dynamic_filter_identity(panda):
    target, _ = _hold_target(panda)
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    oq = op_space_quantities(panda, st.q, st.qd)
    gains = Gains.default(panda.n_q)
    _, _, gamma_nom = dynamic_nominal(panda, oq, st, target, gains)
    prob = assemble_dynamic_qp(
        panda, oq, st, gamma_nom, (np.zeros((0, panda.n_q)), np.zeros(0), []), gains
    )
    sol = solve(prob)
    assert np.max(np.abs(sol.x - gamma_nom)) < 1e-6


def test_wrench_rows_with_bias_compensation_inside_bounds(panda):
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    oq = op_space_quantities(panda, st.q, st.qd)
    gains = Gains.default(panda.n_q)
    lim = 50.0 * np.ones(6)
    prob = assemble_dynamic_qp(
        panda, oq, st, oq.c + oq.g, (np.zeros((0, panda.n_q)), np.zeros(0), []),
        gains, wrench_min=-lim, wrench_max=lim,
    )
    # at Gamma = c + g the wrench rows read a zero wrench: inside any symmetric bound
    margins = prob.G @ (oq.c + oq.g) - prob.h
    assert np.min(margins[-12:]) >= -1e-9


def _suite(panda):
    return [
        BarrierSpec(kind="singularity"),
        BarrierSpec(kind="op_position_box", box_min=(0.0, -0.6, 0.05), box_max=(0.8, 0.6, 0.95)),
        BarrierSpec(kind="joint_position_limit"),
        BarrierSpec(kind="collision_pair"),
        BarrierSpec(kind="whole_body_box", box_min=(-0.5, -0.8, -0.05), box_max=(0.9, 0.8, 1.2)),
    ]


def _scene():
    return SceneSnapshot(
        static_centers=[[0.5, 0.4, 0.5]], static_radii=[0.1],
        moving_centers=np.zeros((0, 3)), moving_velocities=np.zeros((0, 3)), moving_radii=[],
    )


@pytest.mark.parametrize("mode", [VELOCITY, TORQUE])
def test_step_filter_inactive_far_from_boundaries(panda, mode):
    ctrl = SafetyFilterController(panda, _suite(panda), mode=mode, scene_shape=(1, 0))
    target, kq = _hold_target(panda)
    near = TaskTarget(pos=kq.ee_pos + [0.02, 0.01, -0.02], rot=kq.ee_rot,
                      q_des=panda.home_configuration())
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    cmd = ctrl.step(st, near, _scene())
    assert cmd.diagnostics.status == "optimal"
    assert cmd.diagnostics.deviation_joint < 1e-6
    assert cmd.diagnostics.slack_max < 1e-9
    assert cmd.diagnostics.active_ids == ()


def test_step_command_within_limits(panda):
    ctrl = SafetyFilterController(panda, _suite(panda), mode=TORQUE, scene_shape=(1, 0))
    target = TaskTarget(pos=[0.9, 0.5, 0.2], rot=np.eye(3), q_des=panda.home_configuration())
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    cmd = ctrl.step(st, target, _scene())
    assert np.all(cmd.value >= panda.tau_min - 1e-8)
    assert np.all(cmd.value <= panda.tau_max + 1e-8)


def test_nullspace_transparency(panda):
    # changing the posture target only moves the command inside the null space
    ctrl = SafetyFilterController(panda, _suite(panda), mode=VELOCITY, scene_shape=(1, 0))
    target, kq = _hold_target(panda)
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    t1 = TaskTarget(pos=kq.ee_pos + [0.03, 0, 0], rot=kq.ee_rot, q_des=panda.home_configuration())
    t2 = TaskTarget(pos=kq.ee_pos + [0.03, 0, 0], rot=kq.ee_rot,
                    q_des=panda.home_configuration() + 0.3)
    u1 = ctrl.step(st, t1, _scene()).value
    ctrl2 = SafetyFilterController(panda, _suite(panda), mode=VELOCITY, scene_shape=(1, 0))
    u2 = ctrl2.step(st, t2, _scene()).value
    assert np.linalg.norm(u1 - u2) > 1e-4  # commands differ
    Jt = kq.J[list(kq.task_rows)]
    assert np.linalg.norm(Jt @ (u1 - u2)) < 1e-6  # but not at the EE


def test_emergency_clamp_on_conflicting_hard_rows(planar2):
    # op velocity bounds excluding zero conflict with the velocity box: no
    # feasible command exists, so the controller clamps and flags
    specs = [BarrierSpec(kind="op_velocity_limit",
                         lower=(5.0,) * 6, upper=(9.0,) * 6)]
    ctrl = SafetyFilterController(planar2, specs, mode=VELOCITY)
    st = RobotState([0.4, 0.9], [0.0, 0.0])
    kq = kinematic_quantities(planar2, st.q)
    cmd = ctrl.step(st, TaskTarget(pos=kq.ee_pos, q_des=st.q), SceneSnapshot.empty())
    assert cmd.diagnostics.emergency_clamp
    assert np.all(cmd.value >= planar2.qd_min - 1e-12)
    assert np.all(cmd.value <= planar2.qd_max + 1e-12)


def test_bad_mode_and_objective_rejected(panda):
    with pytest.raises(ValueError):
        SafetyFilterController(panda, [], mode="hybrid")
    with pytest.raises(ValueError):
        SafetyFilterController(panda, [], objective="fancy")


def test_gains_validation():
    with pytest.raises(ValueError):
        Gains(kp_task=np.zeros(6), kd_task=np.ones(6), kp_joint=np.ones(7),
              kd_joint=np.ones(7), w_op=np.ones(6), w_joint=np.ones(7))


def test_prune_k_limits_qp_rows(panda, rng):
    # closest-K pruning: every h is still evaluated/logged, but only the K
    # nearest obstacles per robot sphere reach the QP
    from oscbf.barriers import PlantModel, SceneSnapshot, _EvalCache, build_constraint_rows

    centers = rng.uniform([0.3, -0.5, 0.2], [0.7, 0.5, 0.8], size=(6, 3))
    scene = SceneSnapshot(
        static_centers=centers, static_radii=[0.05] * 6,
        moving_centers=np.zeros((0, 3)), moving_velocities=np.zeros((0, 3)), moving_radii=[],
    )
    ctrl = SafetyFilterController(
        panda, [BarrierSpec(kind="collision_pair")], mode=VELOCITY,
        scene_shape=(6, 0), prune_k=2,
    )
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    cmd = ctrl.step(st, TaskTarget(pos=[0.4, 0, 0.5], rot=np.eye(3)), scene)
    assert len(cmd.diagnostics.h) == 126  # all rows logged
    cache = _EvalCache(panda, st.q, st.qd)
    batch = ctrl.barriers.evaluate(st, scene, "kinematic", cache)
    pruned = build_constraint_rows(
        batch, PlantModel.kinematic(), st, row_mask=ctrl._prune_mask(batch)
    )
    assert pruned[0].shape[0] == 21 * 2
