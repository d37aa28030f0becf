"""Barrier functions over manipulator state, with gradients and QP rows.

Nine families of scalar barriers h(z) >= 0 over z = (q, qd): joint position
and velocity limits, an end-effector position box, a twist-magnitude box,
singularity avoidance through the manipulability index, whole-body collision
against scene spheres, whole-body box containment, self-collision pairs, and
velocity-inflated dynamic obstacles.

Each family evaluates to one scalar row per face/pair, with analytic
gradients (dh/dq, dh/dqd). Relative degree depends on the plant:

  - reduced-order velocity plant (q' = u): configuration barriers are RD1;
    velocity limits are plain input constraints (relative_degree 0).
  - full-order torque plant: configuration barriers are RD2 (handled with
    the high-order barrier construction h2 = h' + alpha(h)); velocity-level
    barriers are RD1.

``BarrierSet`` compiles a list of specs into a vectorized evaluator used by
the controllers; ``eval_barrier`` is the row-by-row public equivalent.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np

from .errors import DegenerateGeometry, WrongRelativeDegree
from .qp import LinearConstraintRow
from .robot import (
    ChainFrames,
    RobotModel,
    RobotState,
    forward_kinematics,
    jacobian,
    jacobian_partials,
    sphere_jacobians,
    sphere_velocity_config_gradients,
    velocity_product_data,
)

log = logging.getLogger(__name__)

KINEMATIC = "kinematic"
TORQUE = "torque"

KINDS = (
    "joint_position_limit",
    "joint_velocity_limit",
    "op_position_box",
    "op_velocity_limit",
    "singularity",
    "collision_pair",
    "whole_body_box",
    "self_collision_pair",
    "dynamic_obstacle",
)

VELOCITY_KINDS = ("joint_velocity_limit", "op_velocity_limit")

FACES = ("x_min", "x_max", "y_min", "y_max", "z_min", "z_max")

DEFAULT_ALPHA = 10.0
DEFAULT_GAMMA = 0.25
DEFAULT_SINGULARITY_EPS = 1e-2
COINCIDENT_TOL = 1e-9
CURVATURE_FD_STEP = 1e-6


@dataclass(frozen=True)
class PlantModel:
    """The control-affine plant a barrier row is built against.

    The torque plant carries the state-dependent quantities the Lie
    derivatives need: M^-1 and the bias c + g.
    """

    kind: str
    m_inv: np.ndarray | None = None
    bias: np.ndarray | None = None

    @classmethod
    def kinematic(cls) -> "PlantModel":
        return cls(kind=KINEMATIC)

    @classmethod
    def torque(cls, m_inv: np.ndarray, bias: np.ndarray) -> "PlantModel":
        return cls(kind=TORQUE, m_inv=np.asarray(m_inv), bias=np.asarray(bias))


@dataclass(frozen=True)
class SceneSnapshot:
    """Obstacle geometry at one instant: static spheres plus moving spheres
    with velocities."""

    static_centers: np.ndarray
    static_radii: np.ndarray
    moving_centers: np.ndarray
    moving_velocities: np.ndarray
    moving_radii: np.ndarray
    t: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "static_centers", np.asarray(self.static_centers, float).reshape(-1, 3))
        object.__setattr__(self, "static_radii", np.asarray(self.static_radii, float).reshape(-1))
        object.__setattr__(self, "moving_centers", np.asarray(self.moving_centers, float).reshape(-1, 3))
        object.__setattr__(self, "moving_velocities", np.asarray(self.moving_velocities, float).reshape(-1, 3))
        object.__setattr__(self, "moving_radii", np.asarray(self.moving_radii, float).reshape(-1))

    @classmethod
    def empty(cls, t: float = 0.0) -> "SceneSnapshot":
        z = np.zeros((0, 3))
        return cls(z, np.zeros(0), z.copy(), z.copy(), np.zeros(0), t)


@dataclass(frozen=True)
class BarrierSpec:
    """Configuration of one barrier family instance.

    Which optional fields apply depends on ``kind``; ``validate`` raises on
    mismatched parameters. ``alpha_gain``/``alpha2_gain`` are the linear
    class-K gains (alpha(s) = gain * s).
    """

    kind: str
    alpha_gain: float = DEFAULT_ALPHA
    alpha2_gain: float = DEFAULT_ALPHA
    # joint/op velocity + position limits (None = take from the model)
    lower: tuple | None = None
    upper: tuple | None = None
    # boxes
    box_min: tuple | None = None
    box_max: tuple | None = None
    faces: tuple = FACES
    # singularity
    epsilon: float = DEFAULT_SINGULARITY_EPS
    task_rows: tuple | None = None
    # collision families
    obstacle: int | None = None  # None = all scene obstacles of the matching kind
    robot_spheres: tuple | None = None
    pairs: tuple | None = None
    gamma: float = DEFAULT_GAMMA
    name: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown barrier kind {self.kind!r}")
        if self.alpha_gain <= 0 or self.alpha2_gain <= 0:
            raise ValueError("class-K gains must be > 0")
        if self.kind == "singularity" and self.epsilon <= 0:
            raise ValueError("singularity tolerance epsilon must be > 0")
        if self.kind == "dynamic_obstacle" and self.gamma < 0:
            raise ValueError("dynamic obstacle gamma must be >= 0")
        if self.kind in ("op_position_box", "whole_body_box"):
            if self.box_min is None or self.box_max is None:
                raise ValueError(f"{self.kind} needs box_min and box_max")
            lo = np.asarray(self.box_min, float)
            hi = np.asarray(self.box_max, float)
            if lo.shape != (3,) or hi.shape != (3,) or not np.all(lo < hi):
                raise ValueError("box_min must be < box_max elementwise")
            bad = set(self.faces) - set(FACES)
            if bad or not self.faces:
                raise ValueError(f"invalid faces {bad}")

    @classmethod
    def from_dict(cls, data: dict) -> "BarrierSpec":
        data = dict(data)
        for key in ("lower", "upper", "box_min", "box_max", "faces", "task_rows", "robot_spheres"):
            if data.get(key) is not None:
                data[key] = tuple(data[key])
        if data.get("pairs") is not None:
            data["pairs"] = tuple(tuple(p) for p in data["pairs"])
        return cls(**data)


@dataclass(frozen=True)
class BarrierEvaluation:
    """One scalar barrier row: value, gradients, and its relative degree
    under the plant it was evaluated for (0 = plain input constraint)."""

    h: float
    dh_dq: np.ndarray
    dh_dqd: np.ndarray
    relative_degree: int
    source: str
    alpha_gain: float = DEFAULT_ALPHA
    alpha2_gain: float = DEFAULT_ALPHA


def manipulability(model: RobotModel, q, task_rows=None, jac=None, fk=None) -> float:
    """Manipulability index: the product of the task Jacobian's singular
    values, equal to sqrt(det(J J^T)); 0 at singular configurations."""
    rows = list(task_rows) if task_rows is not None else list(model.task_rows)
    if jac is None:
        jac = jacobian(model, q, fk=fk)
    Jt = jac[rows]
    k, n = Jt.shape
    G = Jt @ Jt.T if k <= n else Jt.T @ Jt
    det = float(np.linalg.det(G))
    return float(np.sqrt(max(det, 0.0)))


def manipulability_gradient(
    model: RobotModel, q, task_rows=None, fk=None, jac=None, partials=None
):
    """(mu, dmu/dq) using dmu/dq_k = mu * tr(G^-1 (dJ/dq_k) J^T).

    Near-singular Gram matrices are damped before inversion, matching the
    barrier's use (the singularity barrier keeps states away from mu = 0).
    """
    rows = list(task_rows) if task_rows is not None else list(model.task_rows)
    if fk is None:
        fk = forward_kinematics(model, q)
    if jac is None:
        jac = jacobian(model, fk=fk)
    if partials is None:
        partials = jacobian_partials(model, fk=fk)
    Jt = jac[rows]
    dJt = partials[:, rows, :]
    k, n = Jt.shape
    if k <= n:
        G = Jt @ Jt.T
        dim = k
    else:
        G = Jt.T @ Jt
        dim = n
    det = float(np.linalg.det(G))
    mu = float(np.sqrt(max(det, 0.0)))
    ev = np.linalg.eigvalsh(G)
    if ev[0] < 1e-10:
        G = G + 1e-8 * np.eye(dim)
    Ginv = np.linalg.inv(G)
    if k <= n:
        trace = np.einsum("ab,kbm,am->k", Ginv, dJt, Jt)
    else:
        trace = np.einsum("ab,mb,kma->k", Ginv, Jt, dJt)
    return mu, mu * trace


@dataclass
class _EvalCache:
    """Lazy per-state kinematics shared across barrier families."""

    model: RobotModel
    q: np.ndarray
    qd: np.ndarray
    _fk: ChainFrames | None = None
    _jac: np.ndarray | None = None
    _partials: np.ndarray | None = None
    _sphere_jac: np.ndarray | None = None
    _sphere_vel_grad: np.ndarray | None = None

    @property
    def fk(self):
        if self._fk is None:
            self._fk = forward_kinematics(self.model, self.q)
        return self._fk

    @property
    def jac(self):
        if self._jac is None:
            self._jac = jacobian(self.model, fk=self.fk)
        return self._jac

    @property
    def partials(self):
        if self._partials is None:
            self._partials = jacobian_partials(self.model, fk=self.fk)
        return self._partials

    @property
    def sphere_jac(self):
        if self._sphere_jac is None:
            self._sphere_jac = sphere_jacobians(self.model, self.fk)
        return self._sphere_jac

    @property
    def sphere_vel_grad(self):
        if self._sphere_vel_grad is None:
            self._sphere_vel_grad = sphere_velocity_config_gradients(
                self.model, self.fk, self.qd, self.sphere_jac
            )
        return self._sphere_vel_grad


def _config_rd(plant_kind: str) -> int:
    return 1 if plant_kind == KINEMATIC else 2


class _Family:
    """One compiled barrier family: evaluates its rows vectorized.

    evaluate() returns (h, dh_dq, dh_dqd, keep_mask); dh_dqd may be None
    meaning identically zero. keep_mask flags rows whose gradient is defined
    (degenerate collision geometry is skipped with a warning).
    """

    rd_kinematic = 1
    rd_torque = 2

    def __init__(self, spec: BarrierSpec, model: RobotModel, scene_shape, index: int):
        self.spec = spec
        self.model = model
        self.index = index
        self.ids: list[str] = []

    @property
    def n_rows(self) -> int:
        return len(self.ids)

    def _tag(self, suffix: str) -> str:
        base = self.spec.name or f"{self.spec.kind}[{self.index}]"
        return f"{base}.{suffix}"

    def evaluate(self, cache: _EvalCache, scene: SceneSnapshot):
        raise NotImplementedError

    def curvature(self, cache: _EvalCache, scene: SceneSnapshot, vp):
        """Per-row qd'Hqd, or None if this family needs the finite-difference
        fallback. ``vp`` = (sphere velocities, sphere velocity-product
        accelerations, EE twist rate) at qdd = 0."""
        return None


class _JointPositionLimit(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        self.lo = np.asarray(spec.lower if spec.lower is not None else model.q_min, float)
        self.hi = np.asarray(spec.upper if spec.upper is not None else model.q_max, float)
        n = model.n_q
        self.ids = [self._tag(f"q{i}.lo") for i in range(n)] + [
            self._tag(f"q{i}.hi") for i in range(n)
        ]
        eye = np.eye(n)
        self._grad = np.vstack([eye, -eye])

    def evaluate(self, cache, scene):
        q = cache.q
        h = np.concatenate([q - self.lo, self.hi - q])
        return h, self._grad, None, None

    def curvature(self, cache, scene, vp):
        return np.zeros(self.n_rows)


class _JointVelocityLimit(_Family):
    rd_kinematic = 0  # plain input bounds under direct velocity control
    rd_torque = 1

    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        self.lo = np.asarray(spec.lower if spec.lower is not None else model.qd_min, float)
        self.hi = np.asarray(spec.upper if spec.upper is not None else model.qd_max, float)
        n = model.n_q
        self.ids = [self._tag(f"qd{i}.lo") for i in range(n)] + [
            self._tag(f"qd{i}.hi") for i in range(n)
        ]
        eye = np.eye(n)
        self._grad_qd = np.vstack([eye, -eye])
        self._grad_q = np.zeros((2 * n, n))

    def evaluate(self, cache, scene):
        qd = cache.qd
        h = np.concatenate([qd - self.lo, self.hi - qd])
        return h, self._grad_q, self._grad_qd, None


class _OpPositionBox(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        self.lo = np.asarray(spec.box_min, float)
        self.hi = np.asarray(spec.box_max, float)
        self.face_idx = [FACES.index(f) for f in spec.faces]
        self.ids = [self._tag(f) for f in spec.faces]

    def evaluate(self, cache, scene):
        x = cache.fk.ee_pos
        Jv = cache.jac[0:3]
        h6 = np.concatenate([x - self.lo, self.hi - x])
        g6 = np.vstack([Jv, -Jv])
        return h6[self.face_idx], g6[self.face_idx], None, None

    def curvature(self, cache, scene, vp):
        a6 = np.concatenate([vp[2][0:3], -vp[2][0:3]])
        return a6[self.face_idx]


class _OpVelocityLimit(_Family):
    rd_kinematic = 0  # linear in the commanded velocity: a hard QP row
    rd_torque = 1

    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        if spec.lower is None or spec.upper is None:
            raise ValueError("op_velocity_limit needs explicit lower/upper twist bounds")
        self.lo = np.asarray(spec.lower, float)
        self.hi = np.asarray(spec.upper, float)
        if self.lo.shape != (6,) or self.hi.shape != (6,):
            raise ValueError("twist bounds must be 6-vectors")
        names = ("vx", "vy", "vz", "wx", "wy", "wz")
        self.ids = [self._tag(f"{n}.lo") for n in names] + [self._tag(f"{n}.hi") for n in names]

    def evaluate(self, cache, scene):
        J = cache.jac
        nu = J @ cache.qd
        # dh/dq rows come from the configuration dependence of J at fixed qd
        dnu_dq = np.einsum("kij,j->ik", cache.partials, cache.qd)
        h = np.concatenate([nu - self.lo, self.hi - nu])
        dq = np.vstack([dnu_dq, -dnu_dq])
        dqd = np.vstack([J, -J])
        return h, dq, dqd, None


class _Singularity(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        self.rows = tuple(spec.task_rows) if spec.task_rows is not None else model.task_rows
        self.eps = spec.epsilon
        self.ids = [self._tag("mu")]
        self._rows_arr = np.asarray(self.rows, dtype=np.int64)

    def evaluate(self, cache, scene):
        mu, grad = manipulability_gradient(
            self.model, cache.q, task_rows=self.rows, fk=cache.fk,
            jac=cache.jac, partials=cache.partials,
        )
        return np.array([mu - self.eps]), grad[None, :], None, None

    # second directional difference of the manipulability value: exact to
    # O(step^2), and needs only two extra (batched) kinematics evaluations
    _VALUE_FD_STEP = 1e-4

    def _mu_at(self, q):
        from .robot import _kernels

        m = self.model
        if _kernels is not None:
            return _kernels.manipulability_kernel(
                q, m._off_rot, m._off_trans, m._axes, m._prismatic,
                m.ee_rotation, m.ee_translation, self._rows_arr,
            )
        return manipulability(m, None, task_rows=self.rows, fk=forward_kinematics(m, q))

    def curvature(self, cache, scene, vp):
        qd = cache.qd
        eps = self._VALUE_FD_STEP
        mu0 = manipulability(self.model, cache.q, task_rows=self.rows, jac=cache.jac)
        mup = self._mu_at(cache.q + eps * qd)
        mum = self._mu_at(cache.q - eps * qd)
        return np.array([(mup - 2.0 * mu0 + mum) / (eps * eps)])


class _CollisionPair(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        n_static = scene_shape[0]
        self.obstacles = (
            list(range(n_static)) if spec.obstacle is None else [int(spec.obstacle)]
        )
        self.sph = (
            list(range(model.n_spheres))
            if spec.robot_spheres is None
            else [int(i) for i in spec.robot_spheres]
        )
        self.ids = [
            self._tag(f"obs{o}.s{s}") for o in self.obstacles for s in self.sph
        ]

    def evaluate(self, cache, scene):
        centers = cache.fk.sphere_centers[self.sph]  # (S, 3)
        radii = self.model.sphere_radii[self.sph]
        oc = scene.static_centers[self.obstacles]  # (O, 3)
        orad = scene.static_radii[self.obstacles]
        d = centers[None, :, :] - oc[:, None, :]  # (O, S, 3)
        dist = np.sqrt(np.einsum("osc,osc->os", d, d))
        h = dist - radii[None, :] - orad[:, None]
        keep = dist.reshape(-1) > COINCIDENT_TOL
        dirn = d / np.maximum(dist, COINCIDENT_TOL)[:, :, None]
        Js = cache.sphere_jac[self.sph]  # (S, 3, n)
        grad = np.einsum("osc,scn->osn", dirn, Js)
        n = self.model.n_q
        return h.reshape(-1), grad.reshape(-1, n), None, keep

    def curvature(self, cache, scene, vp):
        # d2/dt2 of a point-to-point distance at qdd = 0:
        # (|v|^2 - (dhat.v)^2)/dist + dhat.a
        centers = cache.fk.sphere_centers[self.sph]
        oc = scene.static_centers[self.obstacles]
        d = centers[None, :, :] - oc[:, None, :]
        dist = np.maximum(np.sqrt(np.einsum("osc,osc->os", d, d)), COINCIDENT_TOL)
        dirn = d / dist[:, :, None]
        v = vp[0][self.sph]
        a = vp[1][self.sph]
        dv = np.einsum("osc,sc->os", dirn, v)
        vv = np.einsum("sc,sc->s", v, v)
        out = (vv[None, :] - dv**2) / dist + np.einsum("osc,sc->os", dirn, a)
        return out.reshape(-1)


class _WholeBodyBox(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        self.lo = np.asarray(spec.box_min, float)
        self.hi = np.asarray(spec.box_max, float)
        self.face_idx = np.array([FACES.index(f) for f in spec.faces])
        self.sph = (
            list(range(model.n_spheres))
            if spec.robot_spheres is None
            else [int(i) for i in spec.robot_spheres]
        )
        self.ids = [self._tag(f"s{s}.{f}") for s in self.sph for f in spec.faces]

    def evaluate(self, cache, scene):
        centers = cache.fk.sphere_centers[self.sph]
        radii = self.model.sphere_radii[self.sph]
        Js = cache.sphere_jac[self.sph]  # (S, 3, n)
        h6 = np.concatenate(
            [centers - self.lo[None, :] - radii[:, None],
             self.hi[None, :] - centers - radii[:, None]],
            axis=1,
        )  # (S, 6)
        g6 = np.concatenate([Js, -Js], axis=1)  # (S, 6, n)
        n = self.model.n_q
        return (
            h6[:, self.face_idx].reshape(-1),
            g6[:, self.face_idx, :].reshape(-1, n),
            None,
            None,
        )

    def curvature(self, cache, scene, vp):
        a = vp[1][self.sph]  # (S, 3)
        a6 = np.concatenate([a, -a], axis=1)  # (S, 6)
        return a6[:, self.face_idx].reshape(-1)


class _SelfCollisionPair(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        pairs = spec.pairs if spec.pairs is not None else model.self_collision_pairs
        self.pairs = [(int(j), int(k)) for j, k in pairs]
        if not self.pairs:
            raise ValueError("self_collision_pair barrier needs pairs (model has none)")
        self.ids = [self._tag(f"s{j}.s{k}") for j, k in self.pairs]
        self.j = np.array([p[0] for p in self.pairs])
        self.k = np.array([p[1] for p in self.pairs])

    def evaluate(self, cache, scene):
        cj = cache.fk.sphere_centers[self.j]
        ck = cache.fk.sphere_centers[self.k]
        rj = self.model.sphere_radii[self.j]
        rk = self.model.sphere_radii[self.k]
        d = cj - ck
        dist = np.sqrt(np.einsum("pc,pc->p", d, d))
        h = dist - rj - rk
        keep = dist > COINCIDENT_TOL
        dirn = d / np.maximum(dist, COINCIDENT_TOL)[:, None]
        Jdiff = cache.sphere_jac[self.j] - cache.sphere_jac[self.k]  # (P, 3, n)
        grad = np.einsum("pc,pcn->pn", dirn, Jdiff)
        return h, grad, None, keep

    def curvature(self, cache, scene, vp):
        d = cache.fk.sphere_centers[self.j] - cache.fk.sphere_centers[self.k]
        dist = np.maximum(np.sqrt(np.einsum("pc,pc->p", d, d)), COINCIDENT_TOL)
        dirn = d / dist[:, None]
        v = vp[0][self.j] - vp[0][self.k]
        a = vp[1][self.j] - vp[1][self.k]
        dv = np.einsum("pc,pc->p", dirn, v)
        vv = np.einsum("pc,pc->p", v, v)
        return (vv - dv**2) / dist + np.einsum("pc,pc->p", dirn, a)


class _DynamicObstacle(_Family):
    def __init__(self, spec, model, scene_shape, index):
        super().__init__(spec, model, scene_shape, index)
        n_moving = scene_shape[1]
        self.obstacles = (
            list(range(n_moving)) if spec.obstacle is None else [int(spec.obstacle)]
        )
        self.sph = (
            list(range(model.n_spheres))
            if spec.robot_spheres is None
            else [int(i) for i in spec.robot_spheres]
        )
        self.gamma = float(spec.gamma)
        self.ids = [self._tag(f"obs{o}.s{s}") for o in self.obstacles for s in self.sph]

    @property
    def rd_torque(self):
        return 1 if self.gamma > 0 else 2

    def evaluate(self, cache, scene):
        centers = cache.fk.sphere_centers[self.sph]
        radii = self.model.sphere_radii[self.sph]
        oc = scene.moving_centers[self.obstacles]
        ov = scene.moving_velocities[self.obstacles]
        orad = scene.moving_radii[self.obstacles]
        d = centers[None, :, :] - oc[:, None, :]  # (O, S, 3)
        dist = np.sqrt(np.einsum("osc,osc->os", d, d))
        keep = dist.reshape(-1) > COINCIDENT_TOL
        dirn = d / np.maximum(dist, COINCIDENT_TOL)[:, :, None]
        Js = cache.sphere_jac[self.sph]  # (S, 3, n)
        n = self.model.n_q

        grad_q = np.einsum("osc,scn->osn", dirn, Js)
        h = dist - radii[None, :] - orad[:, None]
        grad_qd = None
        if self.gamma > 0.0:
            v_rel = (Js @ cache.qd)[None, :, :] - ov[:, None, :]  # (O, S, 3)
            speed = np.sqrt(np.einsum("osc,osc->os", v_rel, v_rel))
            h = h - self.gamma * speed
            # subgradient 0 at exactly zero relative speed
            vdir = np.where(
                speed[:, :, None] > 1e-12, v_rel / np.maximum(speed, 1e-12)[:, :, None], 0.0
            )
            Dv = cache.sphere_vel_grad[self.sph]  # (S, 3, n)
            grad_q = grad_q - self.gamma * np.einsum("osc,scn->osn", vdir, Dv)
            grad_qd = -self.gamma * np.einsum("osc,scn->osn", vdir, Js)
            grad_qd = grad_qd.reshape(-1, n)
        return h.reshape(-1), grad_q.reshape(-1, n), grad_qd, keep

    def curvature(self, cache, scene, vp):
        if self.gamma > 0.0:
            return None  # RD1 under the torque plant: curvature unused
        # gamma = 0 reduces to the plain collision barrier against the
        # obstacle frozen at its current center (the state excludes it)
        centers = cache.fk.sphere_centers[self.sph]
        oc = scene.moving_centers[self.obstacles]
        d = centers[None, :, :] - oc[:, None, :]
        dist = np.maximum(np.sqrt(np.einsum("osc,osc->os", d, d)), COINCIDENT_TOL)
        dirn = d / dist[:, :, None]
        v = vp[0][self.sph]
        a = vp[1][self.sph]
        dv = np.einsum("osc,sc->os", dirn, v)
        vv = np.einsum("sc,sc->s", v, v)
        return ((vv[None, :] - dv**2) / dist + np.einsum("osc,sc->os", dirn, a)).reshape(-1)


_FAMILY_TYPES = {
    "joint_position_limit": _JointPositionLimit,
    "joint_velocity_limit": _JointVelocityLimit,
    "op_position_box": _OpPositionBox,
    "op_velocity_limit": _OpVelocityLimit,
    "singularity": _Singularity,
    "collision_pair": _CollisionPair,
    "whole_body_box": _WholeBodyBox,
    "self_collision_pair": _SelfCollisionPair,
    "dynamic_obstacle": _DynamicObstacle,
}


@dataclass
class BatchEvaluation:
    """All barrier rows of a set, stacked: h (m,), dh_dq (m, n), dh_dqd
    (m, n), relative degree per row, row ids, class-K gains, and a keep mask
    (False = degenerate geometry, row skipped)."""

    h: np.ndarray
    dh_dq: np.ndarray
    dh_dqd: np.ndarray
    relative_degree: np.ndarray
    alpha: np.ndarray
    alpha2: np.ndarray
    ids: tuple
    kinds: tuple
    keep: np.ndarray


class BarrierSet:
    """A compiled collection of barrier rows for one model and scene shape.

    Evaluation is vectorized per family and shares kinematics across
    families; results are independent of evaluation order and the object is
    immutable after construction, so instances are safe to share between
    threads.
    """

    def __init__(self, model: RobotModel, specs, scene_shape=(0, 0)):
        self.model = model
        self.specs = tuple(specs)
        self.scene_shape = tuple(scene_shape)
        self.families = [
            _FAMILY_TYPES[spec.kind](spec, model, scene_shape, i)
            for i, spec in enumerate(self.specs)
        ]
        self.ids = tuple(i for f in self.families for i in f.ids)
        self.kinds = tuple(f.spec.kind for f in self.families for _ in f.ids)
        self.n_rows = len(self.ids)
        self._alpha = np.concatenate(
            [np.full(f.n_rows, f.spec.alpha_gain) for f in self.families]
        ) if self.families else np.zeros(0)
        self._alpha2 = np.concatenate(
            [np.full(f.n_rows, f.spec.alpha2_gain) for f in self.families]
        ) if self.families else np.zeros(0)
        self._rd = {k: self._rd_for(k) for k in (KINEMATIC, TORQUE)}

    def _rd_for(self, plant_kind: str) -> np.ndarray:
        out = np.empty(self.n_rows, dtype=int)
        at = 0
        for f in self.families:
            rd = f.rd_kinematic if plant_kind == KINEMATIC else f.rd_torque
            out[at : at + f.n_rows] = rd
            at += f.n_rows
        return out

    def rd_for_plant(self, plant_kind: str) -> np.ndarray:
        return self._rd[plant_kind]

    def evaluate(
        self, state: RobotState, scene: SceneSnapshot | None = None,
        plant_kind: str = KINEMATIC, cache: _EvalCache | None = None,
    ) -> BatchEvaluation:
        if scene is None:
            scene = SceneSnapshot.empty()
        if cache is None:
            cache = _EvalCache(self.model, state.q, state.qd)
        n = self.model.n_q
        m = self.n_rows
        h = np.empty(m)
        dq = np.empty((m, n))
        dqd = None
        keep = np.ones(m, dtype=bool)
        at = 0
        for f in self.families:
            hf, gq, gqd, kp = f.evaluate(cache, scene)
            r = f.n_rows
            h[at : at + r] = hf
            dq[at : at + r] = gq
            if gqd is not None:
                if dqd is None:
                    dqd = np.zeros((m, n))
                dqd[at : at + r] = gqd
            if kp is not None:
                keep[at : at + r] = kp
            at += r
        if dqd is None:
            dqd = np.broadcast_to(0.0, (m, n))  # read-only shared zeros
        if not np.all(keep):
            for i in np.flatnonzero(~keep):
                log.warning("skipping degenerate barrier row %s (coincident centers)", self.ids[i])
        return BatchEvaluation(
            h=h, dh_dq=dq, dh_dqd=dqd,
            relative_degree=self.rd_for_plant(plant_kind),
            alpha=self._alpha, alpha2=self._alpha2,
            ids=self.ids, kinds=self.kinds, keep=keep,
        )

    def gradients_dq(self, q, qd, scene: SceneSnapshot, subset=None) -> np.ndarray:
        """dh/dq only, at a perturbed configuration (for the RD2 curvature
        finite difference along qd). ``subset`` restricts the evaluation to
        some families; other rows stay zero."""
        cache = _EvalCache(self.model, np.asarray(q, float), np.asarray(qd, float))
        n = self.model.n_q
        dq = np.zeros((self.n_rows, n))
        at = 0
        for f in self.families:
            if subset is None or f in subset:
                _, gq, _, _ = f.evaluate(cache, scene)
                dq[at : at + f.n_rows] = gq
            at += f.n_rows
        return dq

    def curvature_along(
        self, state: RobotState, scene: SceneSnapshot, center_dq: np.ndarray | None = None
    ) -> np.ndarray:
        """qd' H qd per row, by finite-differencing the analytic gradient
        along qd (step 1e-6), as the RD2 rows require.

        Forward difference when the center gradient is already available
        (one extra evaluation per step instead of two); the O(step) error is
        far below the discrete-time slip the rows tolerate.
        """
        eps = CURVATURE_FD_STEP
        qd = state.qd
        gp = self.gradients_dq(state.q + eps * qd, qd, scene)
        if center_dq is not None:
            return ((gp - center_dq) / eps) @ qd
        gm = self.gradients_dq(state.q - eps * qd, qd, scene)
        return ((gp - gm) / (2.0 * eps)) @ qd

    def curvature_fast(
        self,
        state: RobotState,
        scene: SceneSnapshot,
        cache: _EvalCache,
        center_dq: np.ndarray,
        vp: tuple | None = None,
    ) -> np.ndarray:
        """qd' H qd per row, analytically where the family supports it.

        Geometric families have exact second time-derivatives in terms of the
        velocity-product point accelerations (``vp``, recomputed here if not
        supplied); the manipulability barrier uses a second value difference;
        anything else falls back to the gradient finite difference. Agrees
        with ``curvature_along`` to finite-difference accuracy; tests check
        the paths against each other.
        """
        qd = state.qd
        out = np.empty(self.n_rows)
        fd_families = []
        need_vp = any(
            type(f).curvature is not _Family.curvature for f in self.families
        )
        if vp is None and need_vp:
            vp = velocity_product_data(self.model, cache.fk, qd)
        at = 0
        for f in self.families:
            c = f.curvature(cache, scene, vp)
            if c is None:
                fd_families.append(f)
            else:
                out[at : at + f.n_rows] = c
            at += f.n_rows
        if fd_families:
            eps = CURVATURE_FD_STEP
            gp = self.gradients_dq(state.q + eps * qd, qd, scene, subset=fd_families)
            fd = ((gp - center_dq) / eps) @ qd
            at = 0
            for f in self.families:
                if f in fd_families:
                    out[at : at + f.n_rows] = fd[at : at + f.n_rows]
                at += f.n_rows
        return out


def eval_barrier(
    spec: BarrierSpec,
    model: RobotModel,
    state: RobotState,
    scene: SceneSnapshot | None = None,
    plant_kind: str = KINEMATIC,
) -> list[BarrierEvaluation]:
    """Evaluate one spec to its list of scalar rows (one per face/pair).

    Raises DegenerateGeometry if any row's gradient is undefined (coincident
    sphere centers); batch callers instead skip those rows with a warning.
    """
    bset = BarrierSet(
        model, [spec],
        scene_shape=(len(scene.static_radii), len(scene.moving_radii)) if scene else (0, 0),
    )
    batch = bset.evaluate(state, scene, plant_kind)
    if not np.all(batch.keep):
        bad = [batch.ids[i] for i in np.flatnonzero(~batch.keep)]
        raise DegenerateGeometry(f"coincident sphere centers in rows {bad}")
    return [
        BarrierEvaluation(
            h=float(batch.h[i]),
            dh_dq=batch.dh_dq[i],
            dh_dqd=batch.dh_dqd[i],
            relative_degree=int(batch.relative_degree[i]),
            source=batch.ids[i],
            alpha_gain=spec.alpha_gain,
            alpha2_gain=spec.alpha2_gain,
        )
        for i in range(bset.n_rows)
    ]


def barrier_gradient(spec, model, state, scene=None, plant_kind=KINEMATIC):
    """(dh_dq, dh_dqd) stacked over the spec's rows; DegenerateGeometry
    propagates from eval_barrier."""
    evals = eval_barrier(spec, model, state, scene, plant_kind)
    return (
        np.array([e.dh_dq for e in evals]),
        np.array([e.dh_dqd for e in evals]),
    )


def build_rd1_constraint(
    ev: BarrierEvaluation, plant: PlantModel, state: RobotState
) -> LinearConstraintRow:
    """QP row enforcing h' >= -alpha(h) for a relative-degree-1 barrier.

    Velocity plant: h' = dh_dq . u, so a = dh_dq and b = -alpha h.
    Torque plant: h' = dh_dq.qd + dh_dqd.M^-1(u - c - g).
    """
    if ev.relative_degree != 1:
        raise WrongRelativeDegree(
            f"row {ev.source} has relative degree {ev.relative_degree}, expected 1"
        )
    a_h = ev.alpha_gain * ev.h
    if plant.kind == KINEMATIC:
        return LinearConstraintRow(a=ev.dh_dq.copy(), b=-a_h, slackable=True, source=ev.source)
    lg = plant.m_inv.T @ ev.dh_dqd
    b = -a_h - float(ev.dh_dq @ state.qd) + float(lg @ plant.bias)
    return LinearConstraintRow(a=lg, b=b, slackable=True, source=ev.source)


def build_rd2_constraint(
    ev: BarrierEvaluation, plant: PlantModel, state: RobotState, curvature: float
) -> LinearConstraintRow:
    """High-order barrier row for a relative-degree-2 barrier on the torque
    plant: with h2 = dh_dq.qd + alpha(h), enforce h2' >= -alpha2(h2).

    ``curvature`` is qd' (d2h/dq2) qd, finite-differenced from the analytic
    gradient along qd by the caller.
    """
    if ev.relative_degree != 2:
        raise WrongRelativeDegree(
            f"row {ev.source} has relative degree {ev.relative_degree}, expected 2"
        )
    if plant.kind != TORQUE:
        raise WrongRelativeDegree("RD2 rows only arise on the torque plant")
    hdot = float(ev.dh_dq @ state.qd)
    h2 = hdot + ev.alpha_gain * ev.h
    a = plant.m_inv.T @ ev.dh_dq
    b = (
        -ev.alpha2_gain * h2
        - curvature
        - ev.alpha_gain * hdot
        + float(a @ plant.bias)
    )
    return LinearConstraintRow(a=a, b=b, slackable=True, source=ev.source)


def build_constraint_rows(
    batch: BatchEvaluation,
    plant: PlantModel,
    state: RobotState,
    curvature: np.ndarray | None = None,
    hocbf: bool = True,
    row_mask: np.ndarray | None = None,
):
    """Vectorized assembly of the CBF rows of a batch evaluation.

    Returns (A, b, ids) for rows a.u >= b. Velocity-limit rows with
    relative_degree 0 (kinematic plant) are excluded here; the controller
    emits them as hard input constraints. ``row_mask`` drops rows (pruning)
    without re-evaluating. With ``hocbf=False`` the RD2 rows are built with
    the plain RD1 formula (their true Lie derivatives), which yields all-zero
    coefficient rows on the torque plant; this is a negative control, not a
    usable safety filter.
    """
    rd = batch.relative_degree
    keep = batch.keep & (rd > 0)
    if row_mask is not None:
        keep = keep & row_mask
    h = batch.h
    ids = batch.ids
    n = batch.dh_dq.shape[1]
    if plant.kind == KINEMATIC:
        sel = np.flatnonzero(keep)
        A = batch.dh_dq[sel]
        b = -(batch.alpha * h)[sel]
        return A, b, [ids[i] for i in sel]

    m_inv = plant.m_inv  # symmetric, equal to its transpose
    bias = plant.bias
    qd = state.qd
    rd1 = keep & (rd == 1)
    rd2 = keep & (rd == 2)
    if not hocbf:
        rd1 = keep.copy()
        rd2 = np.zeros_like(rd2)
    if rd2.size and rd2.all():
        # common case (all-configuration barrier sets): no row shuffling
        if curvature is None:
            raise ValueError("RD2 rows need the curvature term")
        a2 = batch.dh_dq @ m_inv
        hdot = batch.dh_dq @ qd
        h2 = hdot + batch.alpha * h
        b = -batch.alpha2 * h2 - curvature - batch.alpha * hdot + a2 @ bias
        return a2, b, list(ids)
    rows_A = np.empty((int(rd1.sum() + rd2.sum()), n))
    rows_b = np.empty(rows_A.shape[0])
    out_ids = []
    at = 0
    i1 = np.flatnonzero(rd1)
    if len(i1):
        lg = batch.dh_dqd[i1] @ m_inv  # rows dh_dqd . M^-1
        rows_A[at : at + len(i1)] = lg
        rows_b[at : at + len(i1)] = (
            -batch.alpha[i1] * h[i1] - batch.dh_dq[i1] @ qd + lg @ bias
        )
        out_ids += [ids[i] for i in i1]
        at += len(i1)
    i2 = np.flatnonzero(rd2)
    if len(i2):
        if curvature is None:
            raise ValueError("RD2 rows need the curvature term")
        a2 = batch.dh_dq[i2] @ m_inv
        hdot = batch.dh_dq[i2] @ qd
        h2 = hdot + batch.alpha[i2] * h[i2]
        rows_A[at : at + len(i2)] = a2
        rows_b[at : at + len(i2)] = (
            -batch.alpha2[i2] * h2 - curvature[i2] - batch.alpha[i2] * hdot + a2 @ bias
        )
        out_ids += [ids[i] for i in i2]
    return rows_A, rows_b, out_ids
