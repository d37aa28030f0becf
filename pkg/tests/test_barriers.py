"""Barrier family values, gradients, relative degrees, and QP rows."""

import numpy as np
import pytest

from oscbf.barriers import (
    KINEMATIC,
    TORQUE,
    BarrierSpec,
    PlantModel,
    SceneSnapshot,
    build_rd1_constraint,
    build_rd2_constraint,
    eval_barrier,
    manipulability,
    manipulability_gradient,
)
from oscbf.errors import DegenerateGeometry, WrongRelativeDegree
from oscbf.robot import (
    CollisionSphere,
    JointSpec,
    LinkInertial,
    RobotModel,
    RobotState,
    jacobian,
    op_space_quantities,
)


@pytest.fixture(scope="module")
def toy():
    return RobotModel(
        name="toy",
        joints=(JointSpec("revolute", (0, 0, 1), np.eye(3), (0, 0, 0)),),
        link_inertials=(LinkInertial(1.0, (0, 0, 0), np.eye(3) * 1e-3),),
        collision_spheres=(CollisionSphere(0, (0, 0, 0), 0.1),),
        self_collision_pairs=(),
        q_min=[-3], q_max=[3], qd_min=[-1], qd_max=[1], tau_min=[-1], tau_max=[1],
        ee_rotation=np.eye(3), ee_translation=(0, 0, 0), task_rows=(0, 1),
    )


def _scene_static(center, radius):
    return SceneSnapshot(
        static_centers=[center], static_radii=[radius],
        moving_centers=np.zeros((0, 3)), moving_velocities=np.zeros((0, 3)),
        moving_radii=[],
    )


def test_collision_h_value(toy):
    scene = _scene_static([1.0, 0.0, 0.0], 0.2)
    ev = eval_barrier(BarrierSpec(kind="collision_pair"), toy, RobotState([0.0], [0.0]), scene)
    assert abs(ev[0].h - 0.7) < 1e-12


def test_joint_limit_boundary(toy):
    ev = eval_barrier(BarrierSpec(kind="joint_position_limit"), toy,
                      RobotState([-3.0], [0.0]), SceneSnapshot.empty())
    assert abs(ev[0].h) < 1e-12  # lower row exactly at the boundary


def test_singularity_2r_quarter(planar2):
    assert abs(manipulability(planar2, [0.3, np.pi / 2]) - 1.0) < 1e-9
    assert manipulability(planar2, [0.3, 0.0]) < 1e-7
    ev = eval_barrier(
        BarrierSpec(kind="singularity", epsilon=1e-9),
        planar2, RobotState([0.3, np.pi / 2], [0, 0]), SceneSnapshot.empty(),
    )
    assert abs(ev[0].h - (1.0 - 1e-9)) < 1e-9


def test_singularity_rotation_invariance(panda, rng):
    # rotating the world frame cannot change singular values of J
    q = rng.uniform(panda.q_min, panda.q_max)
    J = jacobian(panda, q)
    from oscbf.robot import axis_angle_rotation

    R = axis_angle_rotation((0.3, 0.5, 0.81), 0.7)
    R = R / np.linalg.det(R) ** (1 / 3)
    Jr = np.vstack([R @ J[:3], R @ J[3:]])
    mu1 = float(np.prod(np.linalg.svd(J, compute_uv=False)))
    mu2 = float(np.prod(np.linalg.svd(Jr, compute_uv=False)))
    assert abs(mu1 - mu2) < 1e-9


def test_mu_vs_svd(panda, rng):
    for _ in range(20):
        q = rng.uniform(panda.q_min, panda.q_max)
        J = jacobian(panda, q)
        mu_svd = float(np.prod(np.linalg.svd(J, compute_uv=False)))
        assert abs(manipulability(panda, q) - mu_svd) < 1e-9


def test_manipulability_gradient_fd(panda, rng):
    eps = 1e-6
    for _ in range(5):
        q = rng.uniform(panda.q_min * 0.9, panda.q_max * 0.9)
        mu, grad = manipulability_gradient(panda, q)
        for k in range(panda.n_q):
            dq = np.zeros(panda.n_q)
            dq[k] = eps
            fd = (manipulability(panda, q + dq) - manipulability(panda, q - dq)) / (2 * eps)
            assert abs(grad[k] - fd) < 1e-5 * max(1.0, abs(fd))


def test_dynamic_obstacle_reduces_to_collision_at_rest(toy):
    scene = SceneSnapshot(
        static_centers=np.zeros((0, 3)), static_radii=[],
        moving_centers=[[1.0, 0, 0]], moving_velocities=[[0, 0, 0]], moving_radii=[0.2],
    )
    ev = eval_barrier(BarrierSpec(kind="dynamic_obstacle"), toy, RobotState([0.0], [0.0]),
                      scene, TORQUE)
    assert abs(ev[0].h - 0.7) < 1e-12
    assert ev[0].relative_degree == 1


def test_dynamic_obstacle_gamma_zero_equals_collision(toy):
    st = RobotState([0.7], [0.9])
    scene_m = SceneSnapshot(
        static_centers=np.zeros((0, 3)), static_radii=[],
        moving_centers=[[1.0, 0, 0]], moving_velocities=[[0.5, 0, 0]], moving_radii=[0.2],
    )
    scene_s = _scene_static([1.0, 0, 0], 0.2)
    dyn = eval_barrier(BarrierSpec(kind="dynamic_obstacle", gamma=0.0), toy, st, scene_m, TORQUE)
    col = eval_barrier(BarrierSpec(kind="collision_pair"), toy, st, scene_s, TORQUE)
    assert abs(dyn[0].h - col[0].h) < 1e-14
    np.testing.assert_allclose(dyn[0].dh_dq, col[0].dh_dq, atol=1e-14)
    assert dyn[0].relative_degree == 2


def test_degenerate_geometry_raises(toy):
    scene = _scene_static([0.0, 0.0, 0.0], 0.2)  # coincident with the robot sphere
    with pytest.raises(DegenerateGeometry):
        eval_barrier(BarrierSpec(kind="collision_pair"), toy, RobotState([0.0], [0.0]), scene)


def test_table_relative_degrees(panda):
    from oscbf.checks import check_table_relative_degrees

    assert check_table_relative_degrees().passed


def test_gradients_fd_sample(panda, rng):
    # a fast sample here; the acceptance suite runs the full 100-state audit
    from oscbf.checks import check_barrier_gradients

    assert check_barrier_gradients(states_per_kind=10, seed=99).passed


def test_gradient_mutation_detected():
    from oscbf.checks import check_barrier_gradients

    assert not check_barrier_gradients(states_per_kind=2, perturb=1e-3).passed


def test_rd1_kinematic_joint_limit_row(panda):
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    evs = eval_barrier(BarrierSpec(kind="joint_position_limit"), panda, st,
                       SceneSnapshot.empty(), KINEMATIC)
    i = 2
    row = build_rd1_constraint(evs[i], PlantModel.kinematic(), st)
    expected_a = np.zeros(panda.n_q)
    expected_a[i] = 1.0
    np.testing.assert_allclose(row.a, expected_a)
    assert abs(row.b - (-10.0 * (st.q[i] - panda.q_min[i]))) < 1e-12
    assert row.slackable


def test_rd1_boundary_reduces_to_nonnegative_rate(toy):
    st = RobotState([-3.0], [0.0])
    ev = eval_barrier(BarrierSpec(kind="joint_position_limit"), toy, st,
                      SceneSnapshot.empty(), KINEMATIC)[0]
    row = build_rd1_constraint(ev, PlantModel.kinematic(), st)
    assert abs(row.b) < 1e-12  # a.u >= 0: exactly hdot >= 0


def test_rd1_torque_velocity_row(panda):
    q = panda.home_configuration()
    qd = 0.3 * np.ones(panda.n_q)
    st = RobotState(q, qd)
    oq = op_space_quantities(panda, q, qd)
    plant = PlantModel.torque(oq.M_inv, oq.c + oq.g)
    evs = eval_barrier(BarrierSpec(kind="joint_velocity_limit"), panda, st,
                       SceneSnapshot.empty(), TORQUE)
    i = 4
    upper = evs[panda.n_q + i]
    row = build_rd1_constraint(upper, plant, st)
    np.testing.assert_allclose(row.a, -oq.M_inv[i], atol=1e-12)
    expected_b = -10.0 * upper.h + (-oq.M_inv[i]) @ (oq.c + oq.g)
    assert abs(row.b - expected_b) < 1e-9


def test_rd2_at_rest_reduces_to_static_form(panda):
    q = panda.home_configuration()
    st = RobotState(q, np.zeros(panda.n_q))
    oq = op_space_quantities(panda, q, st.qd)
    plant = PlantModel.torque(oq.M_inv, oq.c + oq.g)
    ev = eval_barrier(BarrierSpec(kind="joint_position_limit"), panda, st,
                      SceneSnapshot.empty(), TORQUE)[1]
    row = build_rd2_constraint(ev, plant, st, curvature=0.0)
    # at rest with a linear barrier: a = M^-T e_i and b = -a2*(a*h) + a.(c+g)
    np.testing.assert_allclose(row.a, oq.M_inv[1], atol=1e-12)
    expected_b = -10.0 * (10.0 * ev.h) + oq.M_inv[1] @ (oq.c + oq.g)
    assert abs(row.b - expected_b) < 1e-9


def test_wrong_relative_degree_raises(panda):
    st = RobotState(panda.home_configuration(), np.zeros(panda.n_q))
    ev = eval_barrier(BarrierSpec(kind="joint_position_limit"), panda, st,
                      SceneSnapshot.empty(), TORQUE)[0]
    with pytest.raises(WrongRelativeDegree):
        build_rd1_constraint(ev, PlantModel.kinematic(), st)
    ev_k = eval_barrier(BarrierSpec(kind="joint_position_limit"), panda, st,
                        SceneSnapshot.empty(), KINEMATIC)[0]
    with pytest.raises(WrongRelativeDegree):
        build_rd2_constraint(ev_k, PlantModel.kinematic(), st, 0.0)


def test_curvature_two_routes():
    from oscbf.checks import check_curvature_paths

    assert check_curvature_paths().passed


def test_default_gains_applied():
    spec = BarrierSpec(kind="joint_position_limit")
    assert spec.alpha_gain == 10.0 and spec.alpha2_gain == 10.0


def test_spec_validation():
    with pytest.raises(ValueError):
        BarrierSpec(kind="nope")
    with pytest.raises(ValueError):
        BarrierSpec(kind="op_position_box", box_min=(1, 0, 0), box_max=(0, 1, 1))
    with pytest.raises(ValueError):
        BarrierSpec(kind="joint_position_limit", alpha_gain=-1.0)
    with pytest.raises(ValueError):
        BarrierSpec(kind="singularity", epsilon=0.0)


def test_rd2_rollout_consistency():
    from oscbf.checks import check_rd2_rollout_consistency

    assert check_rd2_rollout_consistency().passed
