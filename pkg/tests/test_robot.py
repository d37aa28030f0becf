"""Kinematics/dynamics unit tests against independent oracles."""

import numpy as np
import pytest

from oscbf.checks import fk_transform_chain_oracle, mass_matrix_jacobian_oracle
from oscbf.errors import SingularOpSpaceInertia
from oscbf.robot import (
    CollisionSphere,
    JointSpec,
    LinkInertial,
    RobotModel,
    RobotState,
    bias_forces,
    forward_kinematics,
    jacobian,
    jacobian_partials,
    jdot_qd,
    kinematic_quantities,
    mass_matrix,
    op_space_quantities,
    point_jacobian,
    rnea,
    sphere_jacobians,
    sphere_velocity_config_gradients,
    state_bundle,
)


def test_fk_straight_2r(planar2):
    fk = forward_kinematics(planar2, [0.0, 0.0])
    np.testing.assert_allclose(fk.ee_pos, [2.0, 0.0, 0.0], atol=1e-14)


def test_fk_quarter_turn_2r(planar2):
    fk = forward_kinematics(planar2, [np.pi / 2, 0.0])
    np.testing.assert_allclose(fk.ee_pos, [0.0, 2.0, 0.0], atol=1e-14)


def test_fk_vs_transform_chain(planar3, rng):
    for _ in range(10):
        q = rng.uniform(planar3.q_min, planar3.q_max)
        fk = forward_kinematics(planar3, q)
        frames, Tee = fk_transform_chain_oracle(planar3, q)
        assert np.max(np.abs(fk.ee_pos - Tee[:3, 3])) < 1e-12
        for i, T in enumerate(frames):
            assert np.max(np.abs(fk.pos[i] - T[:3, 3])) < 1e-12


def test_fk_dimension_mismatch(planar2):
    with pytest.raises(ValueError):
        forward_kinematics(planar2, [0.0, 0.0, 0.0])


def test_jacobian_2r_columns(planar2):
    J = jacobian(planar2, [0.0, 0.0])
    np.testing.assert_allclose(J[:3, 0], [0.0, 2.0, 0.0], atol=1e-14)
    np.testing.assert_allclose(J[:3, 1], [0.0, 1.0, 0.0], atol=1e-14)


def test_jacobian_zero_velocity_maps_to_zero(panda):
    J = jacobian(panda, panda.home_configuration())
    np.testing.assert_allclose(J @ np.zeros(panda.n_q), np.zeros(6))


def test_prismatic_column_is_axis():
    model = RobotModel(
        name="p1",
        joints=(JointSpec("prismatic", (0, 0, 1), np.eye(3), (0, 0, 0)),),
        link_inertials=(LinkInertial(1.0, (0, 0, 0), np.eye(3) * 1e-3),),
        collision_spheres=(),
        self_collision_pairs=(),
        q_min=[-1], q_max=[1], qd_min=[-1], qd_max=[1], tau_min=[-1], tau_max=[1],
        ee_rotation=np.eye(3), ee_translation=(0, 0, 0),
    )
    J = jacobian(model, [0.3])
    np.testing.assert_allclose(J[:, 0], [0, 0, 1, 0, 0, 0], atol=1e-15)


def test_jacobian_matches_fd(panda, rng):
    eps = 1e-6
    for _ in range(5):
        q = rng.uniform(panda.q_min, panda.q_max)
        J = jacobian(panda, q)
        for k in range(panda.n_q):
            dq = np.zeros(panda.n_q)
            dq[k] = eps
            fd = (forward_kinematics(panda, q + dq).ee_pos
                  - forward_kinematics(panda, q - dq).ee_pos) / (2 * eps)
            assert np.max(np.abs(J[:3, k] - fd)) < 1e-6


def test_point_jacobian_at_ee_matches_jacobian(panda):
    q = panda.home_configuration()
    J = jacobian(panda, q)
    Jp = point_jacobian(panda, q, panda.n_q - 1, panda.ee_translation)
    np.testing.assert_allclose(Jp, J[:3], atol=1e-12)


def test_point_jacobian_base_is_zero(panda):
    Jp = point_jacobian(panda, panda.home_configuration(), -1, (0.1, 0.2, 0.3))
    np.testing.assert_allclose(Jp, np.zeros((3, panda.n_q)))


def test_point_jacobian_invalid_link(panda):
    with pytest.raises(ValueError):
        point_jacobian(panda, panda.home_configuration(), 99, (0, 0, 0))


def test_point_jacobian_fd(panda, rng):
    eps = 1e-6
    q = rng.uniform(panda.q_min, panda.q_max)
    link, pt = 3, np.array([0.05, -0.02, 0.08])
    Jp = point_jacobian(panda, q, link, pt)

    def pos(qq):
        fk = forward_kinematics(panda, qq)
        return fk.pos[link] + fk.rot[link] @ pt

    for k in range(panda.n_q):
        dq = np.zeros(panda.n_q)
        dq[k] = eps
        fd = (pos(q + dq) - pos(q - dq)) / (2 * eps)
        assert np.max(np.abs(Jp[:, k] - fd)) < 1e-6


def test_mass_matrix_single_pendulum():
    m, l = 1.2, 0.8
    pend = RobotModel(
        name="pend",
        joints=(JointSpec("revolute", (0, 1, 0), np.eye(3), (0, 0, 0)),),
        link_inertials=(LinkInertial(m, (0, 0, -l), np.eye(3) * 1e-12),),
        collision_spheres=(), self_collision_pairs=(),
        q_min=[-4], q_max=[4], qd_min=[-9, ], qd_max=[9], tau_min=[-99], tau_max=[99],
        ee_rotation=np.eye(3), ee_translation=(0, 0, -l),
    )
    M = mass_matrix(pend, [0.4])
    assert abs(M[0, 0] - m * l * l) < 1e-9


def test_mass_matrix_2r_closed_form(planar2):
    q = np.array([0.4, 0.9])
    c2 = np.cos(q[1])
    expected = np.array([[3 + 2 * c2, 1 + c2], [1 + c2, 1.0]])
    np.testing.assert_allclose(mass_matrix(planar2, q), expected, atol=1e-6)


def test_mass_matrix_symmetric_pd(panda, rng):
    for _ in range(10):
        q = rng.uniform(panda.q_min, panda.q_max)
        M = mass_matrix(panda, q)
        assert np.max(np.abs(M - M.T)) < 1e-10
        assert np.linalg.eigvalsh(M)[0] > 0


def test_mass_matrix_vs_jacobian_sum(panda, rng):
    for _ in range(5):
        q = rng.uniform(panda.q_min, panda.q_max)
        assert np.max(np.abs(mass_matrix(panda, q) - mass_matrix_jacobian_oracle(panda, q))) < 1e-10


def test_bias_zero_velocity_coriolis(panda, rng):
    q = rng.uniform(panda.q_min, panda.q_max)
    c, g = bias_forces(panda, q, np.zeros(panda.n_q))
    np.testing.assert_allclose(c, np.zeros(panda.n_q), atol=1e-12)


def test_bias_zero_gravity(panda, rng):
    q = rng.uniform(panda.q_min, panda.q_max)
    qd = rng.standard_normal(panda.n_q)
    _, g = bias_forces(panda, q, qd, gravity=(0, 0, 0))
    np.testing.assert_allclose(g, np.zeros(panda.n_q), atol=1e-12)


def test_rnea_equals_mass_plus_bias(panda, rng):
    for _ in range(5):
        q = rng.uniform(panda.q_min, panda.q_max)
        qd = rng.standard_normal(panda.n_q)
        qdd = rng.standard_normal(panda.n_q)
        M = mass_matrix(panda, q)
        c, g = bias_forces(panda, q, qd)
        np.testing.assert_allclose(rnea(panda, q, qd, qdd), M @ qdd + c + g, atol=1e-9)


def test_jdot_qd_two_routes(panda, rng):
    q = rng.uniform(panda.q_min, panda.q_max)
    qd = rng.standard_normal(panda.n_q)
    jq = jdot_qd(panda, q, qd)
    dJ = jacobian_partials(panda, q)
    np.testing.assert_allclose(jq, np.einsum("kij,k->ij", dJ, qd) @ qd, atol=1e-10)


def test_sphere_velocity_gradients_fd(panda, rng):
    eps = 1e-6
    q = rng.uniform(panda.q_min, panda.q_max)
    qd = rng.standard_normal(panda.n_q)
    fk = forward_kinematics(panda, q)
    Dv = sphere_velocity_config_gradients(panda, fk, qd)
    s = 11

    def vs(qq):
        fkk = forward_kinematics(panda, qq)
        return sphere_jacobians(panda, fkk)[s] @ qd

    for k in range(panda.n_q):
        dq = np.zeros(panda.n_q)
        dq[k] = eps
        fd = (vs(q + dq) - vs(q - dq)) / (2 * eps)
        assert np.max(np.abs(Dv[s][:, k] - fd)) < 1e-5


def test_opspace_nonredundant_planar(planar2):
    oq = op_space_quantities(planar2, [0.4, 0.9], [0.0, 0.0])
    Jt = oq.J[list(oq.task_rows)]
    np.testing.assert_allclose(oq.Jbar.T, np.linalg.inv(Jt).T, atol=1e-9)
    np.testing.assert_allclose(oq.N, np.zeros((2, 2)), atol=1e-9)


def test_opspace_redundant_projector(planar3):
    oq = op_space_quantities(planar3, [0.2, 0.5, 0.4], [0.1, -0.2, 0.3])
    Jt = oq.J[list(oq.task_rows)]
    assert Jt.shape == (2, 3)
    assert np.max(np.abs(Jt @ oq.N)) < 1e-9
    assert np.max(np.abs(Jt @ oq.N_kin)) < 1e-9
    assert np.max(np.abs(oq.N @ oq.N - oq.N)) < 1e-9


def test_opspace_lambda_identity(panda, rng):
    q = rng.uniform(panda.q_min * 0.9, panda.q_max * 0.9)
    qd = rng.standard_normal(panda.n_q)
    oq = op_space_quantities(panda, q, qd)
    Jt = oq.J[list(oq.task_rows)]
    explicit = np.linalg.inv(Jt @ np.linalg.inv(oq.M) @ Jt.T)
    assert np.max(np.abs(oq.lam - explicit)) < 1e-8
    assert np.max(np.abs(oq.lam - oq.lam.T)) < 1e-8


def test_opspace_singular_raises(planar2):
    # fully stretched planar arm: 2x2 task Jacobian loses rank
    with pytest.raises(SingularOpSpaceInertia):
        op_space_quantities(planar2, [0.3, 0.0], [0.0, 0.0])


def test_state_bundle_matches_reference(panda, rng):
    q = rng.uniform(panda.q_min, panda.q_max)
    qd = rng.standard_normal(panda.n_q)
    sb = state_bundle(panda, q, qd)
    fk = forward_kinematics(panda, q)
    np.testing.assert_allclose(sb.M, mass_matrix(panda, q, fk), atol=1e-10)
    c, g = bias_forces(panda, q, qd, fk=fk)
    np.testing.assert_allclose(sb.c, c, atol=1e-10)
    np.testing.assert_allclose(sb.g, g, atol=1e-10)
    np.testing.assert_allclose(sb.jdot_qd, jdot_qd(panda, q, qd, fk), atol=1e-10)


def test_model_validation_rejects_bad_axis():
    with pytest.raises(ValueError):
        JointSpec("revolute", (0, 0, 2.0), np.eye(3), (0, 0, 0))


def test_model_validation_rejects_adjacent_self_pairs():
    with pytest.raises(ValueError):
        RobotModel(
            name="bad",
            joints=(JointSpec("revolute", (0, 0, 1), np.eye(3), (0, 0, 0)),
                    JointSpec("revolute", (0, 0, 1), np.eye(3), (1, 0, 0))),
            link_inertials=(LinkInertial(1, (0, 0, 0), np.eye(3) * 1e-3),) * 2,
            collision_spheres=(CollisionSphere(0, (0, 0, 0), 0.1),
                               CollisionSphere(1, (0, 0, 0), 0.1)),
            self_collision_pairs=((0, 1),),
            q_min=[-1] * 2, q_max=[1] * 2, qd_min=[-1] * 2, qd_max=[1] * 2,
            tau_min=[-1] * 2, tau_max=[1] * 2,
            ee_rotation=np.eye(3), ee_translation=(0, 0, 0),
        )


def test_model_validation_limit_intervals(planar2):
    with pytest.raises(ValueError):
        RobotModel(
            name="bad",
            joints=planar2.joints,
            link_inertials=planar2.link_inertials,
            collision_spheres=(), self_collision_pairs=(),
            q_min=[1, -1], q_max=[-1, 1],  # inverted
            qd_min=[-1] * 2, qd_max=[1] * 2, tau_min=[-1] * 2, tau_max=[1] * 2,
            ee_rotation=np.eye(3), ee_translation=(0, 0, 0),
        )


def test_state_validation():
    with pytest.raises(ValueError):
        RobotState([0.0, np.nan], [0.0, 0.0])
    with pytest.raises(ValueError):
        RobotState([0.0], [0.0, 0.0])


def test_kinematic_quantities_projector(panda):
    kq = kinematic_quantities(panda, panda.home_configuration())
    Jt = kq.J[list(kq.task_rows)]
    assert np.max(np.abs(Jt @ kq.N_kin)) < 1e-9
    assert np.max(np.abs(kq.N_kin @ kq.N_kin - kq.N_kin)) < 1e-9
