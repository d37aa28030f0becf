"""Safety-filter controllers for velocity- and torque-commanded arms.

Each control step (1) computes the nominal command from the two-task
hierarchy (an operational-space pose task plus a joint posture task in its
null space), (2) stacks barrier rows against the matching plant, and
(3) solves a QP whose objective is task-consistent: it penalizes deviation
of the task-space and null-space velocities (velocity mode) or accelerations
(torque mode) from their nominal values, not deviation of the raw input.

Baseline objectives ("input_metric", "opspace_only") are provided for
comparison runs; they reproduce the characteristic failure modes of
task-inconsistent filters (task error under the input metric, null-space
drift under the pure task metric).
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .barriers import (
    KINEMATIC,
    TORQUE,
    BarrierSet,
    BatchEvaluation,
    PlantModel,
    SceneSnapshot,
    _EvalCache,
    build_constraint_rows,
)
from .errors import SingularOpSpaceInertia
from .qp import DEFAULT_SLACK_PENALTY, INFEASIBLE, QpProblem, QpSolver
from .robot import (
    RobotModel,
    RobotState,
    cross3,
    kinematic_quantities,
    op_space_quantities,
    rotation_from_quaternion,
    state_bundle,
)

log = logging.getLogger(__name__)

OBJECTIVES = ("oscbf", "input_metric", "opspace_only")
VELOCITY = "velocity"


def orientation_error(R: np.ndarray, R_des: np.ndarray) -> np.ndarray:
    """Instantaneous angular error vector between two rotations.

    -1/2 sum_i r_i x r_i_des over the matrix columns; zero iff the rotations
    agree (within a half turn), and antisymmetric in its arguments.
    """
    c = cross3(R.T, R_des.T)  # rows: r_i x r_i_des
    return -0.5 * (c[0] + c[1] + c[2])


@dataclass(frozen=True)
class TaskTarget:
    """Reference for the task hierarchy: an EE pose plus an optional joint
    posture; feedforward twist/twist-rate default to zero (setpoint case)."""

    pos: np.ndarray
    rot: np.ndarray | None = None
    twist_ff: np.ndarray = field(default_factory=lambda: np.zeros(6))
    twist_rate_ff: np.ndarray = field(default_factory=lambda: np.zeros(6))
    q_des: np.ndarray | None = None
    qd_des: np.ndarray | None = None
    qdd_des: np.ndarray | None = None

    def __post_init__(self):
        object.__setattr__(self, "pos", np.asarray(self.pos, float))
        if self.rot is not None:
            R = np.asarray(self.rot, float)
            if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-6:
                raise ValueError("target rotation must be orthonormal")
            object.__setattr__(self, "rot", R)
        object.__setattr__(self, "twist_ff", np.asarray(self.twist_ff, float))
        object.__setattr__(self, "twist_rate_ff", np.asarray(self.twist_rate_ff, float))
        for nm in ("q_des", "qd_des", "qdd_des"):
            v = getattr(self, nm)
            if v is not None:
                object.__setattr__(self, nm, np.asarray(v, float))
        if not np.all(np.isfinite(self.pos)):
            raise ValueError("target entries must be finite")

    @classmethod
    def from_dict(cls, data: dict) -> "TaskTarget":
        rot = None
        if "quat" in data and data["quat"] is not None:
            rot = rotation_from_quaternion(data["quat"])
        elif "rot" in data and data["rot"] is not None:
            rot = np.asarray(data["rot"], float)
        return cls(
            pos=data["pos"],
            rot=rot,
            twist_ff=data.get("twist_ff", np.zeros(6)),
            twist_rate_ff=data.get("twist_rate_ff", np.zeros(6)),
            q_des=data.get("q_des"),
            qd_des=data.get("qd_des"),
            qdd_des=data.get("qdd_des"),
        )


@dataclass(frozen=True)
class Gains:
    """Diagonal PD gains and objective weights.

    Task-space entries are over the 6 twist rows (the controller selects the
    model's task rows); joint entries are per joint.
    """

    kp_task: np.ndarray
    kd_task: np.ndarray
    kp_joint: np.ndarray
    kd_joint: np.ndarray
    w_op: np.ndarray
    w_joint: np.ndarray

    def __post_init__(self):
        for nm in ("kp_task", "kd_task", "kp_joint", "kd_joint", "w_op", "w_joint"):
            v = np.asarray(getattr(self, nm), float)
            object.__setattr__(self, nm, v)
            if np.any(v <= 0):
                raise ValueError(f"{nm} diagonal entries must be > 0")

    @classmethod
    def default(cls, n_q: int, kp_pos=10.0, kp_rot=10.0, kd_pos=None, kd_rot=None,
                kp_joint=10.0, kd_joint=None) -> "Gains":
        kd_pos = 2.0 * np.sqrt(kp_pos) if kd_pos is None else kd_pos
        kd_rot = 2.0 * np.sqrt(kp_rot) if kd_rot is None else kd_rot
        kd_j = 2.0 * np.sqrt(kp_joint) if kd_joint is None else kd_joint
        return cls(
            kp_task=np.concatenate([np.full(3, kp_pos), np.full(3, kp_rot)]),
            kd_task=np.concatenate([np.full(3, kd_pos), np.full(3, kd_rot)]),
            kp_joint=np.full(n_q, kp_joint),
            kd_joint=np.full(n_q, kd_j),
            w_op=np.ones(6),
            w_joint=np.ones(n_q),
        )

    @classmethod
    def from_dict(cls, data: dict, n_q: int) -> "Gains":
        g = cls.default(
            n_q,
            kp_pos=data.get("kp_pos", 10.0),
            kp_rot=data.get("kp_rot", 10.0),
            kd_pos=data.get("kd_pos"),
            kd_rot=data.get("kd_rot"),
            kp_joint=data.get("kp_joint", 10.0),
            kd_joint=data.get("kd_joint"),
        )
        w_op = np.full(6, float(data.get("w_op", 1.0)))
        w_joint = np.full(n_q, float(data.get("w_joint", 1.0)))
        return cls(g.kp_task, g.kd_task, g.kp_joint, g.kd_joint, w_op, w_joint)


def _task_error(ee_pos, ee_rot, target: TaskTarget) -> np.ndarray:
    e = np.zeros(6)
    e[0:3] = ee_pos - target.pos
    if target.rot is not None:
        e[3:6] = orientation_error(ee_rot, target.rot)
    return e


def _posture_accel(state: RobotState, target: TaskTarget, gains: Gains, order: int):
    """Posture-task raw command: velocity (order 1) or acceleration (order 2)."""
    n = state.q.shape[0]
    out = np.zeros(n)
    if target.qdd_des is not None and order == 2:
        out = out + target.qdd_des
    if target.qd_des is not None:
        out = out + (target.qd_des if order == 1 else -gains.kd_joint * (state.qd - target.qd_des))
    elif order == 2:
        out = out - gains.kd_joint * state.qd
    if target.q_des is not None:
        out = out - gains.kp_joint * (state.q - target.q_des)
    return out


def kinematic_nominal(model: RobotModel, kq, state: RobotState, target: TaskTarget, gains: Gains):
    """Nominal velocities of the two-task hierarchy.

    Returns (nu_cmd, qd_null, qd_nom): the proportional task twist command on
    the task rows, the null-space posture velocity, and their sum mapped
    through the generalized inverse.
    """
    rows = list(kq.task_rows)
    e = _task_error(kq.ee_pos, kq.ee_rot, target)
    nu_cmd = (target.twist_ff - gains.kp_task * e)[rows]
    qd_null = kq.N_kin @ _posture_accel(state, target, gains, order=1)
    qd_nom = kq.J_pinv @ nu_cmd + qd_null
    return nu_cmd, qd_null, qd_nom


def dynamic_nominal(model: RobotModel, oq, state: RobotState, target: TaskTarget, gains: Gains):
    """Nominal torque command of the two-task hierarchy.

    Task wrench F = Lambda nu_dot_cmd, posture torque projected by the
    dynamically consistent null space, plus bias compensation:
    Gamma_nom = J'F + N'(M qdd_cmd) + c + g.
    """
    rows = list(oq.task_rows)
    e = _task_error(oq.ee_pos, oq.ee_rot, target)
    nu = oq.J @ state.qd
    nu_dot_cmd = (
        target.twist_rate_ff - gains.kp_task * e - gains.kd_task * (nu - target.twist_ff)
    )[rows]
    F = oq.lam @ nu_dot_cmd
    qdd_cmd = _posture_accel(state, target, gains, order=2)
    gamma_null = oq.NT @ (oq.M @ qdd_cmd)
    Jt = oq.J[rows]
    gamma_nom = Jt.T @ F + gamma_null + oq.c + oq.g
    return nu_dot_cmd, qdd_cmd, gamma_nom


def _objective(kind, J_task, Nmat, M_inv, w_op_rows, w_joint, u_nom, mode):
    """P and q of the task-consistent (or baseline) QP objective.

    Velocity mode: P = N'Wj^2 N + J'Wo^2 J over the commanded velocity.
    Torque mode: the same metric on the induced accelerations, so each map
    picks up an M^-1 on the right.
    """
    n = u_nom.shape[0]
    if kind == "input_metric":
        P = np.eye(n)
        return P, -u_nom
    if mode == KINEMATIC:
        task_map = J_task
        null_map = Nmat
    else:
        task_map = J_task @ M_inv
        null_map = Nmat.T @ M_inv  # rows of the induced null-space acceleration
    P = (task_map * (w_op_rows**2)[:, None]).T @ task_map
    if kind == "oscbf":
        P = P + (null_map * (w_joint**2)[:, None]).T @ null_map
    P = 0.5 * (P + P.T)
    return P, -(P @ u_nom)


def assemble_kinematic_qp(
    model: RobotModel,
    kq,
    state: RobotState,
    qd_nom: np.ndarray,
    cbf_rows,
    gains: Gains,
    objective: str = "oscbf",
    extra_hard_rows=None,
    slack_penalty: float = DEFAULT_SLACK_PENALTY,
    allow_zero_rows: bool = False,
) -> QpProblem:
    """QP over the commanded joint velocity: task-consistent objective, CBF
    rows slackable, the model's velocity box (plus any extra rows) hard."""
    n = model.n_q
    rows = list(kq.task_rows)
    A_cbf, b_cbf, _ = cbf_rows
    P, q = _objective(
        objective, kq.J[rows], kq.N_kin, None, gains.w_op[rows], gains.w_joint, qd_nom, KINEMATIC
    )
    eye = np.eye(n)
    hard_A = [eye, -eye]
    hard_b = [model.qd_min, -model.qd_max]
    if extra_hard_rows is not None:
        Ax, bx = extra_hard_rows
        if len(Ax):
            hard_A.append(Ax)
            hard_b.append(bx)
    G = np.vstack([A_cbf] + hard_A)
    h = np.concatenate([b_cbf] + hard_b)
    slackable = np.zeros(G.shape[0], dtype=bool)
    slackable[: A_cbf.shape[0]] = True
    return QpProblem(
        P=P, q=q, G=G, h=h, slackable=slackable, rho=slack_penalty,
        validate=False, allow_zero_rows=allow_zero_rows,
    )


def assemble_dynamic_qp(
    model: RobotModel,
    oq,
    state: RobotState,
    gamma_nom: np.ndarray,
    cbf_rows,
    gains: Gains,
    objective: str = "oscbf",
    wrench_min=None,
    wrench_max=None,
    slack_penalty: float = DEFAULT_SLACK_PENALTY,
    allow_zero_rows: bool = False,
) -> QpProblem:
    """QP over the commanded torque: acceleration-metric objective, CBF rows
    slackable, torque box (and optional task-wrench rows) hard."""
    n = model.n_q
    rows = list(oq.task_rows)
    A_cbf, b_cbf, _ = cbf_rows
    P, q = _objective(
        objective, oq.J[rows], oq.N, oq.M_inv, gains.w_op[rows], gains.w_joint,
        gamma_nom, TORQUE,
    )
    hard_A = [np.eye(n), -np.eye(n)]
    hard_b = [model.tau_min, -model.tau_max]
    if wrench_min is not None or wrench_max is not None:
        JbT = oq.Jbar.T  # rows map torque to task wrench
        bias_w = JbT @ (oq.c + oq.g)
        if wrench_min is not None:
            hard_A.append(JbT)
            hard_b.append(np.asarray(wrench_min, float) + bias_w)
        if wrench_max is not None:
            hard_A.append(-JbT)
            hard_b.append(-(np.asarray(wrench_max, float) + bias_w))
    m_cbf = A_cbf.shape[0]
    m_hard = sum(a.shape[0] for a in hard_A)
    G = np.empty((m_cbf + m_hard, n))
    G[:m_cbf] = A_cbf
    h = np.empty(m_cbf + m_hard)
    h[:m_cbf] = b_cbf
    at = m_cbf
    for a, b in zip(hard_A, hard_b):
        G[at : at + a.shape[0]] = a
        h[at : at + a.shape[0]] = b
        at += a.shape[0]
    slackable = np.zeros(G.shape[0], dtype=bool)
    slackable[:m_cbf] = True
    return QpProblem(
        P=P, q=q, G=G, h=h, slackable=slackable, rho=slack_penalty,
        validate=False, allow_zero_rows=allow_zero_rows,
    )


@dataclass(frozen=True)
class CommandDiagnostics:
    status: str
    iterations: int
    kkt_residual: float
    solve_time: float
    latency: float
    min_h: float
    h: np.ndarray
    h_ids: tuple
    h_kinds: tuple
    slack_max: float
    active_ids: tuple
    deviation_joint: float
    deviation_op: float
    nominal: np.ndarray
    emergency_clamp: bool = False


@dataclass(frozen=True)
class SafeCommand:
    """The filtered command: joint velocities or torques, plus diagnostics."""

    mode: str
    value: np.ndarray
    diagnostics: CommandDiagnostics


class SafetyFilterController:
    """One controller instance per robot; ``step`` is sequential (it carries
    the QP warm start). Instances are independent.

    Parameters mirror the scenario schema: barrier specs compile once against
    the scene shape; ``objective`` picks the QP metric; ``prune_k`` optionally
    keeps only the K nearest environment obstacles per robot sphere in the
    QP (all rows are still evaluated and logged); ``hocbf=False`` disables
    the high-order handling of RD2 rows (negative-control switch).
    """

    def __init__(
        self,
        model: RobotModel,
        barrier_specs,
        mode: str = KINEMATIC,
        gains: Gains | None = None,
        scene_shape=(0, 0),
        objective: str = "oscbf",
        slack_penalty: float = DEFAULT_SLACK_PENALTY,
        prune_k: int | None = None,
        hocbf: bool = True,
        wrench_min=None,
        wrench_max=None,
        gravity=(0.0, 0.0, -9.81),
        task_rows=None,
    ):
        if mode == KINEMATIC:
            mode = VELOCITY  # the reduced-order plant realizes velocity mode
        if mode not in (VELOCITY, TORQUE):
            raise ValueError(f"unknown mode {mode!r}")
        if objective not in OBJECTIVES:
            raise ValueError(f"unknown objective {objective!r}; pick from {OBJECTIVES}")
        self.model = model
        self.mode = mode
        self.gains = gains if gains is not None else Gains.default(model.n_q)
        self.barriers = BarrierSet(model, barrier_specs, scene_shape)
        self.objective = objective
        self.slack_penalty = float(slack_penalty)
        self.prune_k = prune_k
        self.hocbf = bool(hocbf)
        self.wrench_min = wrench_min
        self.wrench_max = wrench_max
        self.gravity = np.asarray(gravity, float)
        self.task_rows = tuple(task_rows) if task_rows is not None else model.task_rows
        self._solver = QpSolver()
        self._last_n_rows = -1
        self._eye_n = np.eye(model.n_q)
        self._rows_list = list(self.task_rows)
        self._needs_partials = any(
            s.kind in ("singularity", "op_velocity_limit") for s in self.barriers.specs
        )

    def _prune_mask(self, batch: BatchEvaluation) -> np.ndarray | None:
        if self.prune_k is None:
            return None
        keep = np.ones(batch.h.shape[0], dtype=bool)
        prunable = ("collision_pair", "dynamic_obstacle")
        # group prunable rows by (family tag, robot sphere): keep K nearest obstacles
        groups: dict[str, list[int]] = {}
        for i, (rid, kind) in enumerate(zip(batch.ids, batch.kinds)):
            if kind in prunable:
                sphere = rid.rsplit(".", 1)[-1]
                fam = rid.split(".", 1)[0]
                groups.setdefault(f"{fam}:{sphere}", []).append(i)
        for idx in groups.values():
            if len(idx) > self.prune_k:
                order = np.argsort(batch.h[idx], kind="stable")
                for pos in order[self.prune_k :]:
                    keep[idx[pos]] = False
        return keep

    def _input_constraint_rows(self, batch: BatchEvaluation, state: RobotState):
        """Velocity-limit barriers under the kinematic plant: hard rows on u
        (relative_degree 0). h is linear in qd, so a.u >= a.qd - h."""
        sel = np.flatnonzero(batch.keep & (batch.relative_degree == 0))
        if not len(sel):
            return np.zeros((0, self.model.n_q)), np.zeros(0)
        A = batch.dh_dqd[sel]
        b = A @ state.qd - batch.h[sel]
        return A, b

    def step(
        self,
        state: RobotState,
        target: TaskTarget,
        scene: SceneSnapshot | None = None,
    ) -> SafeCommand:
        """One safety-filtered control step. Returns the command plus
        diagnostics; on conflicting hard rows, clamps the nominal command to
        the input box and flags the emergency in the diagnostics."""
        t0 = time.perf_counter()
        if scene is None:
            scene = SceneSnapshot.empty()
        model = self.model
        if self.mode == VELOCITY:
            sb = state_bundle(
                model, state.q, state.qd, self.gravity,
                need_dynamics=False, need_partials=self._needs_partials,
            )
            kq = kinematic_quantities(
                model, state.q, task_rows=self.task_rows, fk=sb.fk, jac=sb.J
            )
            _, _, u_nom = kinematic_nominal(model, kq, state, target, self.gains)
            cache = _EvalCache(
                model, state.q, state.qd,
                _fk=sb.fk, _jac=sb.J, _sphere_jac=sb.sphere_jac, _partials=sb.partials,
            )
            batch = self.barriers.evaluate(state, scene, KINEMATIC, cache)
            plant = PlantModel.kinematic()
            rows = build_constraint_rows(
                batch, plant, state, hocbf=True, row_mask=self._prune_mask(batch)
            )
            extra = self._input_constraint_rows(batch, state)
            problem = assemble_kinematic_qp(
                model, kq, state, u_nom, rows, self.gains, self.objective,
                extra_hard_rows=extra, slack_penalty=self.slack_penalty,
            )
            J_dev = kq.J[list(self.task_rows)]
            box_lo, box_hi = model.qd_min, model.qd_max
        else:
            try:
                oq = op_space_quantities(
                    model, state.q, state.qd, self.gravity, task_rows=self.task_rows,
                    with_kinematic=False, need_partials=self._needs_partials,
                )
            except SingularOpSpaceInertia:
                value = np.zeros(model.n_q)
                latency = time.perf_counter() - t0
                log.warning("task inertia singular; emergency clamp to zero torque")
                diag = CommandDiagnostics(
                    status="singular", iterations=0, kkt_residual=np.inf,
                    solve_time=0.0, latency=latency, min_h=np.nan,
                    h=np.zeros(0), h_ids=(), h_kinds=(), slack_max=0.0,
                    active_ids=(), deviation_joint=np.nan, deviation_op=np.nan,
                    nominal=value, emergency_clamp=True,
                )
                return SafeCommand(self.mode, value, diag)
            _, _, u_nom = dynamic_nominal(model, oq, state, target, self.gains)
            cache = _EvalCache(
                model, state.q, state.qd,
                _fk=oq.fk, _jac=oq.J, _sphere_jac=oq.sphere_jac, _partials=oq.partials,
            )
            batch = self.barriers.evaluate(state, scene, TORQUE, cache)
            plant = PlantModel.torque(oq.M_inv, oq.c + oq.g)
            curvature = None
            if self.hocbf and np.any(batch.relative_degree == 2):
                curvature = self.barriers.curvature_fast(
                    state, scene, cache, batch.dh_dq, vp=oq.sphere_vp
                )
            rows = build_constraint_rows(
                batch, plant, state, curvature, hocbf=self.hocbf,
                row_mask=self._prune_mask(batch),
            )
            problem = assemble_dynamic_qp(
                model, oq, state, u_nom, rows, self.gains, self.objective,
                wrench_min=self.wrench_min, wrench_max=self.wrench_max,
                slack_penalty=self.slack_penalty,
                allow_zero_rows=not self.hocbf,
            )
            J_dev = (oq.J @ oq.M_inv)[list(self.task_rows)]
            box_lo, box_hi = model.tau_min, model.tau_max

        if problem.G.shape[0] != self._last_n_rows:
            self._solver.reset()  # row count changed; stale duals do not map
            self._last_n_rows = problem.G.shape[0]
        sol = self._solver.solve(problem)

        emergency = False
        if sol.status == INFEASIBLE:
            value = np.clip(u_nom, box_lo, box_hi)
            emergency = True
            log.warning("hard QP rows infeasible; clamping nominal command to the input box")
        else:
            value = sol.x

        slack_max = float(np.max(sol.t, initial=0.0))
        cbf_ids = rows[2]
        active = ()
        if cbf_ids and not emergency:
            m_cbf = problem.G[: len(cbf_ids)] @ value - problem.h[: len(cbf_ids)]
            active = tuple(cbf_ids[i] for i in np.flatnonzero(m_cbf < 1e-7))
        latency = time.perf_counter() - t0
        diag = CommandDiagnostics(
            status=sol.status,
            iterations=sol.iterations,
            kkt_residual=sol.kkt_residual,
            solve_time=sol.solve_time,
            latency=latency,
            min_h=float(np.min(batch.h, initial=np.inf)),
            h=batch.h,
            h_ids=batch.ids,
            h_kinds=batch.kinds,
            slack_max=slack_max,
            active_ids=active,
            deviation_joint=float(np.linalg.norm(value - u_nom)),
            deviation_op=float(np.linalg.norm(J_dev @ (value - u_nom))),
            nominal=u_nom,
            emergency_clamp=emergency,
        )
        return SafeCommand(self.mode, value, diag)
