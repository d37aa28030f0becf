"""Numerical ground-truth checks: oracles, gradient audits, invariants.

Each check returns a CheckResult; ``run_all`` executes the release-gate
suite the CLI exposes as ``validate``. The oracles here are written
independently of the production algorithms they certify (dense transform
chains, active-set enumeration, closed-form mechanics, finite differences).
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .barriers import (
    KINEMATIC,
    TORQUE,
    BarrierSet,
    BarrierSpec,
    SceneSnapshot,
    _EvalCache,
    manipulability,
)
from .models import load_robot
from .robot import (
    RobotModel,
    RobotState,
    axis_angle_rotation,
    bias_forces,
    forward_kinematics,
    jacobian,
    jacobian_partials,
    jdot_qd,
    kinetic_energy,
    mass_matrix,
    op_space_quantities,
    rnea,
    state_bundle,
)
from .qp import OPTIMAL, QpProblem, solve


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.name}: {self.detail}"


def _rng(seed=0):
    return np.random.default_rng(seed)


def fk_transform_chain_oracle(model: RobotModel, q):
    """Independent forward kinematics: dense homogeneous matrix products."""
    T = np.eye(4)
    frames = []
    for i, j in enumerate(model.joints):
        Toff = np.eye(4)
        Toff[:3, :3] = j.rotation
        Toff[:3, 3] = j.translation
        Tm = np.eye(4)
        if j.kind == "revolute":
            Tm[:3, :3] = axis_angle_rotation(j.axis, q[i])
        else:
            Tm[:3, 3] = np.asarray(j.axis) * q[i]
        T = T @ Toff @ Tm
        frames.append(T.copy())
    Tee = np.eye(4)
    Tee[:3, :3] = model.ee_rotation
    Tee[:3, 3] = model.ee_translation
    return frames, T @ Tee


def check_fk_oracle(seed=0) -> CheckResult:
    worst = 0.0
    for name in ("panda", "planar_3r"):
        model = load_robot(name)
        rng = _rng(seed)
        for _ in range(20):
            q = rng.uniform(model.q_min, model.q_max)
            fk = forward_kinematics(model, q)
            frames, Tee = fk_transform_chain_oracle(model, q)
            for i, T in enumerate(frames):
                worst = max(worst, float(np.max(np.abs(fk.pos[i] - T[:3, 3]))))
                worst = max(worst, float(np.max(np.abs(fk.rot[i] - T[:3, :3]))))
            worst = max(worst, float(np.max(np.abs(fk.ee_pos - Tee[:3, 3]))))
    return CheckResult("fk_vs_transform_chain", worst < 1e-12, f"max err {worst:.2e} (< 1e-12)")


def check_jacobian_fd(seed=1) -> CheckResult:
    worst = 0.0
    eps = 1e-6
    for name in ("panda", "planar_2r"):
        model = load_robot(name)
        rng = _rng(seed)
        for _ in range(10):
            q = rng.uniform(model.q_min, model.q_max)
            J = jacobian(model, q)
            for k in range(model.n_q):
                dq = np.zeros(model.n_q)
                dq[k] = eps
                fp = forward_kinematics(model, q + dq)
                fm = forward_kinematics(model, q - dq)
                fd = (fp.ee_pos - fm.ee_pos) / (2 * eps)
                worst = max(worst, float(np.max(np.abs(J[:3, k] - fd))))
    return CheckResult("jacobian_vs_fd", worst < 1e-6, f"max err {worst:.2e} (< 1e-6)")


def check_jacobian_partials_fd(seed=2) -> CheckResult:
    worst = 0.0
    eps = 1e-6
    model = load_robot("panda")
    rng = _rng(seed)
    for _ in range(10):
        q = rng.uniform(model.q_min, model.q_max)
        dJ = jacobian_partials(model, q)
        k = int(rng.integers(model.n_q))
        dq = np.zeros(model.n_q)
        dq[k] = eps
        fd = (jacobian(model, q + dq) - jacobian(model, q - dq)) / (2 * eps)
        worst = max(worst, float(np.max(np.abs(dJ[k] - fd))))
    return CheckResult("jacobian_partials_vs_fd", worst < 1e-6, f"max err {worst:.2e} (< 1e-6)")


def mass_matrix_jacobian_oracle(model: RobotModel, q):
    """Independent mass matrix: sum of per-link COM-Jacobian contributions."""
    fk = forward_kinematics(model, q)
    n = model.n_q
    coms_w = fk.pos + np.einsum("nij,nj->ni", fk.rot, model._coms)
    Iw = fk.rot @ model._inertias @ fk.rot.transpose(0, 2, 1)
    M = np.zeros((n, n))
    for i in range(n):
        Jv = np.zeros((3, n))
        Jw = np.zeros((3, n))
        for j in range(i + 1):
            z = fk.axis_world[j]
            if model._prismatic[j]:
                Jv[:, j] = z
            else:
                Jv[:, j] = np.cross(z, coms_w[i] - fk.pos[j])
                Jw[:, j] = z
        M += model._masses[i] * Jv.T @ Jv + Jw.T @ Iw[i] @ Jw
    return M


def check_mass_matrix(seed=3) -> CheckResult:
    worst = 0.0
    spd_ok = True
    for name in ("panda", "planar_2r", "planar_3r"):
        model = load_robot(name)
        rng = _rng(seed)
        for _ in range(10):
            q = rng.uniform(model.q_min, model.q_max)
            M = mass_matrix(model, q)
            worst = max(worst, float(np.max(np.abs(M - mass_matrix_jacobian_oracle(model, q)))))
            worst = max(worst, float(np.max(np.abs(M - M.T))))
            spd_ok &= bool(np.linalg.eigvalsh(M)[0] > 0)
    # closed forms: 2R with unit point masses at the link tips
    m2 = load_robot("planar_2r")
    q = np.array([0.4, 0.9])
    c2 = np.cos(q[1])
    M2 = np.array([[3 + 2 * c2, 1 + c2], [1 + c2, 1.0]])
    closed = float(np.max(np.abs(mass_matrix(m2, q) - M2)))
    ok = worst < 1e-10 and spd_ok and closed < 1e-6
    return CheckResult(
        "mass_matrix_oracles", ok,
        f"vs jacobian-sum {worst:.2e} (< 1e-10); 2R closed form {closed:.2e} (< 1e-6); SPD {spd_ok}",
    )


def check_rnea_consistency(seed=4) -> CheckResult:
    worst = 0.0
    model = load_robot("panda")
    rng = _rng(seed)
    for _ in range(20):
        q = rng.uniform(model.q_min, model.q_max)
        qd = rng.standard_normal(model.n_q)
        qdd = rng.standard_normal(model.n_q)
        M = mass_matrix(model, q)
        c, g = bias_forces(model, q, qd)
        tau = rnea(model, q, qd, qdd)
        worst = max(worst, float(np.max(np.abs(tau - (M @ qdd + c + g)))))
        c0, _ = bias_forces(model, q, np.zeros(model.n_q))
        worst = max(worst, float(np.max(np.abs(c0))))
        _, g0 = bias_forces(model, q, qd, gravity=(0, 0, 0))
        worst = max(worst, float(np.max(np.abs(g0))))
    return CheckResult("newton_euler_consistency", worst < 1e-9, f"max err {worst:.2e} (< 1e-9)")


def check_jdot_qd(seed=5) -> CheckResult:
    worst = 0.0
    model = load_robot("panda")
    rng = _rng(seed)
    eps = 1e-6
    for _ in range(10):
        q = rng.uniform(model.q_min, model.q_max)
        qd = rng.standard_normal(model.n_q)
        jq = jdot_qd(model, q, qd)
        dJ = jacobian_partials(model, q)
        jq2 = np.einsum("kij,k->ij", dJ, qd) @ qd
        worst = max(worst, float(np.max(np.abs(jq - jq2))))
        fd = ((jacobian(model, q + eps * qd) - jacobian(model, q - eps * qd)) / (2 * eps)) @ qd
        worst = max(worst, float(np.max(np.abs(jq - fd))))
    return CheckResult("jdot_qd_two_routes", worst < 1e-5, f"max err {worst:.2e} (< 1e-5)")


def check_opspace_identities(seed=6) -> CheckResult:
    model = load_robot("panda")
    rng = _rng(seed)
    worst = 0.0
    for _ in range(10):
        q = rng.uniform(model.q_min * 0.9, model.q_max * 0.9)
        qd = rng.standard_normal(model.n_q)
        oq = op_space_quantities(model, q, qd)
        Jt = oq.J[list(oq.task_rows)]
        worst = max(worst, float(np.max(np.abs(oq.lam @ (Jt @ oq.M_inv @ Jt.T) - np.eye(len(oq.task_rows))))))
        worst = max(worst, float(np.max(np.abs(Jt @ oq.N))))
        worst = max(worst, float(np.max(np.abs(oq.N @ oq.N - oq.N))))
        worst = max(worst, float(np.max(np.abs(oq.NT - oq.N.T))))
        worst = max(worst, float(np.max(np.abs(oq.Jbar - oq.M_inv @ Jt.T @ oq.lam))))
    # non-redundant case: planar 2R with a 2-row task
    m2 = load_robot("planar_2r")
    oq = op_space_quantities(m2, [0.4, 0.9], [0.0, 0.0])
    Jt = oq.J[list(oq.task_rows)]
    worst = max(worst, float(np.max(np.abs(oq.Jbar.T - np.linalg.inv(Jt).T))))
    worst = max(worst, float(np.max(np.abs(oq.N))))
    return CheckResult("opspace_identities", worst < 1e-8, f"max err {worst:.2e} (< 1e-8)")


def check_kernel_matches_reference(seed=12) -> CheckResult:
    """The compiled per-state kernel must agree with the numpy reference."""
    worst = 0.0
    for name in ("panda", "planar_3r"):
        model = load_robot(name)
        rng = _rng(seed)
        for _ in range(5):
            q = rng.uniform(model.q_min, model.q_max)
            qd = rng.standard_normal(model.n_q)
            sb = state_bundle(model, q, qd)
            fk = forward_kinematics(model, q)
            M = mass_matrix(model, q, fk)
            c, g = bias_forces(model, q, qd, fk=fk)
            jq = jdot_qd(model, q, qd, fk)
            worst = max(worst, float(np.max(np.abs(sb.M - M))))
            worst = max(worst, float(np.max(np.abs(sb.c - c))))
            worst = max(worst, float(np.max(np.abs(sb.g - g))))
            worst = max(worst, float(np.max(np.abs(sb.jdot_qd - jq))))
            worst = max(worst, float(np.max(np.abs(sb.J - jacobian(model, fk=fk)))))
    return CheckResult("kernel_vs_numpy_reference", worst < 1e-9, f"max err {worst:.2e} (< 1e-9)")


def _barrier_test_scene():
    return SceneSnapshot(
        static_centers=[[0.5, 0.1, 0.5], [0.25, -0.4, 0.35]],
        static_radii=[0.12, 0.18],
        moving_centers=[[0.4, 0.3, 0.6]],
        moving_velocities=[[0.1, -0.2, 0.05]],
        moving_radii=[0.1],
    )


def _barrier_specs_all():
    return [
        BarrierSpec(kind="joint_position_limit"),
        BarrierSpec(kind="joint_velocity_limit"),
        BarrierSpec(kind="op_position_box", box_min=(0.0, -0.5, 0.0), box_max=(0.8, 0.5, 1.0)),
        BarrierSpec(kind="op_velocity_limit", lower=(-2,) * 6, upper=(2,) * 6),
        BarrierSpec(kind="singularity"),
        BarrierSpec(kind="collision_pair"),
        BarrierSpec(kind="whole_body_box", box_min=(-0.5, -0.8, -0.1), box_max=(0.9, 0.8, 1.2)),
        BarrierSpec(kind="self_collision_pair"),
        BarrierSpec(kind="dynamic_obstacle"),
    ]


def check_barrier_gradients(states_per_kind=100, seed=7, perturb=None) -> CheckResult:
    """Every barrier gradient vs central finite differences, 100 random states.

    ``perturb`` optionally injects an error into the returned gradients (the
    mutation smoke test: the check must then fail).
    """
    model = load_robot("panda")
    scene = _barrier_test_scene()
    bset = BarrierSet(model, _barrier_specs_all(), scene_shape=(2, 1))
    rng = _rng(seed)
    eps = 1e-6
    worst = 0.0
    for _ in range(states_per_kind):
        q = rng.uniform(model.q_min * 0.9, model.q_max * 0.9)
        qd = rng.uniform(-1.5, 1.5, model.n_q)
        st = RobotState(q, qd)
        batch = bset.evaluate(st, scene, TORQUE)
        dq = batch.dh_dq if perturb is None else batch.dh_dq + perturb
        for k in range(model.n_q):
            step = np.zeros(model.n_q)
            step[k] = eps
            hp = bset.evaluate(RobotState(q + step, qd), scene, TORQUE).h
            hm = bset.evaluate(RobotState(q - step, qd), scene, TORQUE).h
            fd = (hp - hm) / (2 * eps)
            scale = np.maximum(np.abs(fd), 1.0)
            worst = max(worst, float(np.max(np.abs(dq[:, k] - fd) / scale)))
            hp = bset.evaluate(RobotState(q, qd + step), scene, TORQUE).h
            hm = bset.evaluate(RobotState(q, qd - step), scene, TORQUE).h
            fd = (hp - hm) / (2 * eps)
            scale = np.maximum(np.abs(fd), 1.0)
            worst = max(worst, float(np.max(np.abs(batch.dh_dqd[:, k] - fd) / scale)))
    return CheckResult(
        "barrier_gradients_vs_fd", worst < 1e-5, f"max rel err {worst:.2e} (< 1e-5)"
    )


def check_manipulability(seed=8) -> CheckResult:
    model = load_robot("panda")
    rng = _rng(seed)
    worst = 0.0
    for _ in range(50):
        q = rng.uniform(model.q_min, model.q_max)
        J = jacobian(model, q)
        mu_svd = float(np.prod(np.linalg.svd(J, compute_uv=False)))
        worst = max(worst, abs(manipulability(model, q) - mu_svd))
    m2 = load_robot("planar_2r")
    worst = max(worst, abs(manipulability(m2, [0.3, np.pi / 2]) - 1.0))
    return CheckResult("manipulability_vs_svd", worst < 1e-9, f"max err {worst:.2e} (< 1e-9)")


def active_set_oracle(P, q, G, h):
    """Exact QP solve by enumerating active sets and solving KKT systems."""
    m, d = G.shape
    best = None
    for size in range(0, min(m, d) + 1):
        for S in combinations(range(m), size):
            A = G[list(S)]
            dim = d + size
            KKT = np.zeros((dim, dim))
            KKT[:d, :d] = P
            KKT[:d, d:] = -A.T
            KKT[d:, :d] = A
            rhs = np.concatenate([-q, h[list(S)]])
            try:
                sol = np.linalg.solve(KKT, rhs)
            except np.linalg.LinAlgError:
                continue
            x, nu = sol[:d], sol[d:]
            if np.any(nu < -1e-9):
                continue
            if np.min(G @ x - h, initial=0.0) < -1e-9:
                continue
            obj = 0.5 * x @ P @ x + q @ x
            if best is None or obj < best[1] - 1e-12:
                best = (x, obj)
    return best[0] if best else None


def check_qp_oracle(n_problems=100, seed=9) -> CheckResult:
    rng = _rng(seed)
    worst_dx = 0.0
    worst_kkt = 0.0
    fails = 0
    for _ in range(n_problems):
        d = int(rng.integers(2, 11))
        m = int(rng.integers(1, 31))
        while sum(math.comb(m, k) for k in range(0, min(m, d) + 1)) > 20000:
            m -= 1
        L = rng.standard_normal((d, d))
        P = L @ L.T + 0.1 * np.eye(d)
        q = rng.standard_normal(d)
        x0 = rng.standard_normal(d)
        G = rng.standard_normal((m, d))
        h = G @ x0 - rng.uniform(0, 1, m)
        prob = QpProblem(P=P, q=q, G=G, h=h, slackable=np.zeros(m, bool), rho=np.ones(m))
        sol = solve(prob)
        xo = active_set_oracle(P, q, G, h)
        dx = float(np.max(np.abs(sol.x - xo)))
        worst_dx = max(worst_dx, dx)
        worst_kkt = max(worst_kkt, sol.kkt_residual)
        if dx > 1e-5 or sol.kkt_residual > 1e-6 or sol.status != OPTIMAL:
            fails += 1
    return CheckResult(
        "qp_vs_active_set_oracle", fails == 0,
        f"{n_problems - fails}/{n_problems} ok; max dx {worst_dx:.2e} (< 1e-5), max kkt {worst_kkt:.2e} (< 1e-6)",
    )


def check_qp_determinism(seed=10) -> CheckResult:
    rng = _rng(seed)
    d, m = 6, 20
    L = rng.standard_normal((d, d))
    P = L @ L.T + 0.2 * np.eye(d)
    q = rng.standard_normal(d)
    G = rng.standard_normal((m, d))
    h = G @ rng.standard_normal(d) - rng.uniform(0, 1, m)
    sl = np.array([True] * 14 + [False] * 6)
    prob = QpProblem(P=P, q=q, G=G, h=h, slackable=sl, rho=1e6)
    a = solve(prob)
    b = solve(prob)
    bitwise = bool(np.array_equal(a.x, b.x) and np.array_equal(a.t, b.t) and a.iterations == b.iterations)
    warm = solve(prob, warm_start=a)
    dw = float(np.max(np.abs(warm.x - a.x)))
    ok = bitwise and dw < 1e-6
    return CheckResult("qp_determinism_warmstart", ok, f"bitwise={bitwise}; warm dx {dw:.2e} (< 1e-6)")


def check_pendulum_period() -> CheckResult:
    """RK4 on a 1-DOF pendulum vs the small-oscillation closed form."""
    from .robot import JointSpec, LinkInertial
    from .sim import integrate_step

    m, l = 1.3, 0.7
    pend = RobotModel(
        name="pendulum",
        joints=(JointSpec("revolute", (0, 1, 0), np.eye(3), (0, 0, 0)),),
        link_inertials=(LinkInertial(m, (0, 0, -l), np.eye(3) * 1e-10),),
        collision_spheres=(),
        self_collision_pairs=(),
        q_min=[-4], q_max=[4], qd_min=[-50], qd_max=[50], tau_min=[-100], tau_max=[100],
        ee_rotation=np.eye(3), ee_translation=(0, 0, -l),
    )
    amp = np.deg2rad(5.0)
    state = RobotState([amp], [0.0])
    dt = 1e-3
    crossings = []  # downward zero crossings: one per full period
    prev = state.q[0]
    for i in range(int(4.0 / dt)):
        state = integrate_step(pend, state, np.zeros(1), "torque", dt)
        if prev > 0 >= state.q[0]:
            frac = prev / (prev - state.q[0])
            crossings.append((i + frac) * dt)
        prev = state.q[0]
    period = (crossings[-1] - crossings[0]) / (len(crossings) - 1)
    expected = 2 * np.pi * np.sqrt(l / 9.81)
    rel = abs(period - expected) / expected
    return CheckResult("pendulum_period", rel < 1e-3, f"rel err {rel:.2e} (< 1e-3)")


def check_energy_conservation() -> CheckResult:
    """Gravity-compensated passive swing must conserve kinetic energy.

    Compensation is state feedback (tau = g(q) at every integrator stage),
    so the Coriolis term is the only remaining force and does no work.
    """
    from .robot import gravity_torques

    m2 = load_robot("planar_2r")
    grav = (0.0, -9.81, 0.0)
    q = np.array([0.4, 0.8])
    qd = np.array([1.0, -0.5])
    e0 = kinetic_energy(m2, q, qd)
    dt = 1e-3

    def f(q, qd):
        fk = forward_kinematics(m2, q)
        M = mass_matrix(m2, q, fk)
        cg = rnea(m2, q, qd, np.zeros(2), grav, fk)
        gv = gravity_torques(m2, fk, grav)
        return np.linalg.solve(M, gv - cg)

    worst = 0.0
    for _ in range(1000):
        k1v = f(q, qd); k1x = qd
        k2v = f(q + 0.5 * dt * k1x, qd + 0.5 * dt * k1v); k2x = qd + 0.5 * dt * k1v
        k3v = f(q + 0.5 * dt * k2x, qd + 0.5 * dt * k2v); k3x = qd + 0.5 * dt * k2v
        k4v = f(q + dt * k3x, qd + dt * k3v); k4x = qd + dt * k3v
        q = q + dt / 6 * (k1x + 2 * k2x + 2 * k3x + k4x)
        qd = qd + dt / 6 * (k1v + 2 * k2v + 2 * k3v + k4v)
        worst = max(worst, abs(kinetic_energy(m2, q, qd) - e0))
    return CheckResult("energy_conservation", worst < 1e-6, f"drift {worst:.2e} J (< 1e-6 J/s)")


def check_rd2_rollout_consistency(seed=11) -> CheckResult:
    """Measured second derivative of h along a torque rollout must match the
    affine HOCBF row terms."""
    from .barriers import PlantModel, eval_barrier
    from .sim import integrate_step

    model = load_robot("panda")
    scene = SceneSnapshot.empty()
    spec = BarrierSpec(kind="joint_position_limit")
    rng = _rng(seed)
    state = RobotState(model.home_configuration(), 0.2 * rng.standard_normal(model.n_q))
    dt = 1e-3
    tau = rnea(model, state.q, state.qd, np.zeros(model.n_q)) + 2.0 * rng.standard_normal(model.n_q)
    hs = []
    preds = []
    for i in range(200):
        oq = op_space_quantities(model, state.q, state.qd)
        plant = PlantModel.torque(oq.M_inv, oq.c + oq.g)
        ev = eval_barrier(spec, model, state, scene, TORQUE)[3]
        # affine form: hddot = curvature + dh.M^-1 (u - c - g); linear h has zero curvature
        pred = float(ev.dh_dq @ (oq.M_inv @ (tau - oq.c - oq.g)))
        hs.append(ev.h)
        preds.append(pred)
        state = integrate_step(model, state, tau, "torque", dt)
    hs = np.array(hs)
    measured = (hs[2:] - 2 * hs[1:-1] + hs[:-2]) / dt**2
    worst = float(np.max(np.abs(measured - np.array(preds[1:-1]))))
    return CheckResult("rd2_rollout_consistency", worst < 1e-3, f"max |hddot err| {worst:.2e} (< 1e-3)")


def check_curvature_paths(seed=13) -> CheckResult:
    """Analytic curvature terms vs the gradient finite-difference reference."""
    model = load_robot("panda")
    scene = _barrier_test_scene()
    specs = [
        BarrierSpec(kind="singularity"),
        BarrierSpec(kind="op_position_box", box_min=(0.0, -0.5, 0.0), box_max=(0.8, 0.5, 1.0)),
        BarrierSpec(kind="joint_position_limit"),
        BarrierSpec(kind="collision_pair"),
        BarrierSpec(kind="whole_body_box", box_min=(-0.5, -0.8, -0.1), box_max=(0.9, 0.8, 1.2)),
        BarrierSpec(kind="self_collision_pair"),
        BarrierSpec(kind="dynamic_obstacle", gamma=0.0),
    ]
    bset = BarrierSet(model, specs, scene_shape=(2, 1))
    rng = _rng(seed)
    worst = 0.0
    for _ in range(20):
        q = rng.uniform(model.q_min * 0.85, model.q_max * 0.85)
        qd = rng.uniform(-1.5, 1.5, model.n_q)
        st = RobotState(q, qd)
        cache = _EvalCache(model, q, qd)
        batch = bset.evaluate(st, scene, TORQUE, cache)
        fast = bset.curvature_fast(st, scene, cache, batch.dh_dq)
        ref = bset.curvature_along(st, scene)
        scale = np.maximum(np.abs(ref), 1.0)
        worst = max(worst, float(np.max(np.abs(fast - ref) / scale)))
    return CheckResult("curvature_two_routes", worst < 1e-4, f"max rel err {worst:.2e} (< 1e-4)")


def check_table_relative_degrees() -> CheckResult:
    model = load_robot("panda")
    scene = _barrier_test_scene()
    bset = BarrierSet(model, _barrier_specs_all(), scene_shape=(2, 1))
    st = RobotState(model.home_configuration(), np.zeros(model.n_q))
    kin = bset.evaluate(st, scene, KINEMATIC)
    tor = bset.evaluate(st, scene, TORQUE)
    expected = {
        "joint_position_limit": (1, 2),
        "joint_velocity_limit": (0, 1),
        "op_position_box": (1, 2),
        "op_velocity_limit": (0, 1),
        "singularity": (1, 2),
        "collision_pair": (1, 2),
        "whole_body_box": (1, 2),
        "self_collision_pair": (1, 2),
        "dynamic_obstacle": (1, 1),  # velocity-aware (gamma > 0)
    }
    ok = True
    for kind, rk, rt in zip(kin.kinds, kin.relative_degree, tor.relative_degree):
        want = expected[kind]
        ok &= (int(rk), int(rt)) == want
    return CheckResult("relative_degree_table", ok, "velocity/torque plant degrees as tabulated")


def check_scenario_determinism() -> CheckResult:
    from .scenarios import fig_clutter
    from .sim import ScenarioConfig, run_scenario

    cfg = ScenarioConfig.from_dict(fig_clutter(5, mode="velocity", seed=3, duration=0.3))
    a, _ = run_scenario(cfg)
    b, _ = run_scenario(cfg)
    same = (
        np.array_equal(a.q, b.q)
        and np.array_equal(a.command, b.command)
        and np.array_equal(a.h, b.h)
    )
    return CheckResult("scenario_determinism", bool(same), "replays are bitwise identical")


ALL_CHECKS = [
    check_fk_oracle,
    check_jacobian_fd,
    check_jacobian_partials_fd,
    check_mass_matrix,
    check_rnea_consistency,
    check_jdot_qd,
    check_opspace_identities,
    check_kernel_matches_reference,
    check_manipulability,
    check_qp_oracle,
    check_qp_determinism,
    check_pendulum_period,
    check_energy_conservation,
    check_rd2_rollout_consistency,
    check_curvature_paths,
    check_table_relative_degrees,
    check_scenario_determinism,
]


def run_all(gradient_states=100):
    results = []
    for fn in ALL_CHECKS:
        results.append(fn())
    results.append(check_barrier_gradients(states_per_kind=gradient_states))
    return results
