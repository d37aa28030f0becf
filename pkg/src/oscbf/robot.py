"""Serial-chain rigid-body kinematics and dynamics.

World-frame recursive algorithms for a fixed-base manipulator described by a
chain of revolute/prismatic joints: forward kinematics, geometric Jacobians
and their configuration partials, the composite-rigid-body mass matrix,
Newton-Euler bias forces, the Jacobian-rate product J̇q̇, and the
operational-space quantities (task-space inertia, bias wrenches, the
dynamically consistent inverse, and null-space projectors) used by the
task-hierarchy controllers.

All functions are pure: they take a RobotModel plus joint vectors and return
new arrays, so they are safe to call from any number of threads.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import SingularOpSpaceInertia

# numba-compiled kernels carry the per-state hot path when available; the
# numpy implementations below remain the reference and the fallback
# (OSCBF_NO_JIT=1 forces the fallback)
if os.environ.get("OSCBF_NO_JIT", "") != "1":
    try:
        from . import _kernels
    except ImportError:  # pragma: no cover - numba not installed
        _kernels = None
else:
    _kernels = None

REVOLUTE = "revolute"
PRISMATIC = "prismatic"

# Damping policy for near-singular task-space inversions: if the smallest
# eigenvalue of the matrix being inverted drops below EIG_DAMP_THRESHOLD, add
# DAMPING*I before inverting; below EIG_FAIL_THRESHOLD, give up and raise.
EIG_DAMP_THRESHOLD = 1e-8
EIG_FAIL_THRESHOLD = 1e-12
DAMPING = 1e-6

DEFAULT_GRAVITY = (0.0, 0.0, -9.81)


def _arr(x, shape=None) -> np.ndarray:
    out = np.ascontiguousarray(np.asarray(x, dtype=np.float64))
    if shape is not None and out.shape != shape:
        raise ValueError(f"expected shape {shape}, got {out.shape}")
    return out


def _frozen(a: np.ndarray) -> np.ndarray:
    a.flags.writeable = False
    return a


def _cr(a, b) -> np.ndarray:
    # 3-vector cross product; np.cross has ~25us overhead at this size
    return np.array(
        (
            a[1] * b[2] - a[2] * b[1],
            a[2] * b[0] - a[0] * b[2],
            a[0] * b[1] - a[1] * b[0],
        )
    )


_LEVI_CIVITA = np.zeros((3, 3, 3))
_LEVI_CIVITA[0, 1, 2] = _LEVI_CIVITA[1, 2, 0] = _LEVI_CIVITA[2, 0, 1] = 1.0
_LEVI_CIVITA[0, 2, 1] = _LEVI_CIVITA[1, 0, 2] = _LEVI_CIVITA[2, 1, 0] = -1.0
_LEVI_CIVITA.flags.writeable = False


def cross3(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cross product over the trailing axis; avoids np.cross's moveaxis cost."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 2 and b.ndim == 2:  # single einsum dispatch beats 12 small ops
        return np.einsum("ijk,nj,nk->ni", _LEVI_CIVITA, a, b)
    out = np.empty(np.broadcast_shapes(a.shape, b.shape))
    a0, a1, a2 = a[..., 0], a[..., 1], a[..., 2]
    b0, b1, b2 = b[..., 0], b[..., 1], b[..., 2]
    out[..., 0] = a1 * b2 - a2 * b1
    out[..., 1] = a2 * b0 - a0 * b2
    out[..., 2] = a0 * b1 - a1 * b0
    return out


def rotation_from_rpy(rpy) -> np.ndarray:
    """Rotation matrix from fixed-axis roll-pitch-yaw angles (x, then y, then z)."""
    r, p, y = np.asarray(rpy, dtype=np.float64)
    cr, sr = np.cos(r), np.sin(r)
    cp, sp = np.cos(p), np.sin(p)
    cy, sy = np.cos(y), np.sin(y)
    return np.array(
        [
            [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
            [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
            [-sp, cp * sr, cp * cr],
        ]
    )


def axis_angle_rotation(axis, angle: float) -> np.ndarray:
    """Rodrigues rotation about a unit axis."""
    a1, a2, a3 = axis
    c = np.cos(angle)
    s = np.sin(angle)
    t = 1.0 - c
    return np.array(
        [
            [t * a1 * a1 + c, t * a1 * a2 - s * a3, t * a1 * a3 + s * a2],
            [t * a1 * a2 + s * a3, t * a2 * a2 + c, t * a2 * a3 - s * a1],
            [t * a1 * a3 - s * a2, t * a2 * a3 + s * a1, t * a3 * a3 + c],
        ]
    )


def _axis_angle_batch(axes: np.ndarray, angles: np.ndarray) -> np.ndarray:
    """Rodrigues rotations for all joints at once, shape (n, 3, 3)."""
    c = np.cos(angles)
    s = np.sin(angles)
    t = 1.0 - c
    a1, a2, a3 = axes[:, 0], axes[:, 1], axes[:, 2]
    R = np.empty((len(angles), 3, 3))
    R[:, 0, 0] = t * a1 * a1 + c
    R[:, 0, 1] = t * a1 * a2 - s * a3
    R[:, 0, 2] = t * a1 * a3 + s * a2
    R[:, 1, 0] = t * a1 * a2 + s * a3
    R[:, 1, 1] = t * a2 * a2 + c
    R[:, 1, 2] = t * a2 * a3 - s * a1
    R[:, 2, 0] = t * a1 * a3 - s * a2
    R[:, 2, 1] = t * a2 * a3 + s * a1
    R[:, 2, 2] = t * a3 * a3 + c
    return R


def quaternion_from_rotation(R: np.ndarray) -> np.ndarray:
    """Unit quaternion [w, x, y, z] from a rotation matrix."""
    tr = R[0, 0] + R[1, 1] + R[2, 2]
    if tr > 0:
        s = np.sqrt(tr + 1.0) * 2.0
        w, x, y, z = 0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2]) * 2.0
        w, x, y, z = (R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s
    elif R[1, 1] > R[2, 2]:
        s = np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2]) * 2.0
        w, x, y, z = (R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s
    else:
        s = np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1]) * 2.0
        w, x, y, z = (R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s
    q = np.array([w, x, y, z])
    return q / np.linalg.norm(q)


def rotation_from_quaternion(q) -> np.ndarray:
    """Rotation matrix from a quaternion [w, x, y, z] (normalized internally)."""
    q = np.asarray(q, dtype=np.float64)
    w, x, y, z = q / np.linalg.norm(q)
    return np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
            [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
            [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
        ]
    )


@dataclass(frozen=True)
class JointSpec:
    """One joint: its type, local axis, and fixed transform from the parent link."""

    kind: str
    axis: np.ndarray
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        if self.kind not in (REVOLUTE, PRISMATIC):
            raise ValueError(f"unknown joint kind {self.kind!r}")
        object.__setattr__(self, "axis", _frozen(_arr(self.axis, (3,))))
        object.__setattr__(self, "rotation", _frozen(_arr(self.rotation, (3, 3))))
        object.__setattr__(self, "translation", _frozen(_arr(self.translation, (3,))))
        if abs(np.linalg.norm(self.axis) - 1.0) > 1e-9:
            raise ValueError("joint axis must have unit norm (within 1e-9)")
        R = self.rotation
        if np.max(np.abs(R @ R.T - np.eye(3))) > 1e-9 or np.linalg.det(R) < 0:
            raise ValueError("joint rotation must be a proper rotation matrix")


@dataclass(frozen=True)
class LinkInertial:
    """Mass properties of one link: mass, COM and rotational inertia in the link frame."""

    mass: float
    com: np.ndarray
    inertia: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "mass", float(self.mass))
        object.__setattr__(self, "com", _frozen(_arr(self.com, (3,))))
        object.__setattr__(self, "inertia", _frozen(_arr(self.inertia, (3, 3))))
        if self.mass <= 0:
            raise ValueError("link mass must be > 0")
        I = self.inertia
        if np.max(np.abs(I - I.T)) > 1e-12:
            raise ValueError("link inertia must be symmetric")
        if np.linalg.eigvalsh(I)[0] <= 0:
            raise ValueError("link inertia must be positive-definite")


@dataclass(frozen=True)
class CollisionSphere:
    """One collision sphere: owning link index, center in the link frame, radius."""

    link: int
    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "link", int(self.link))
        object.__setattr__(self, "center", _frozen(_arr(self.center, (3,))))
        object.__setattr__(self, "radius", float(self.radius))
        if self.radius <= 0:
            raise ValueError("sphere radius must be > 0")


@dataclass(frozen=True)
class RobotModel:
    """Immutable description of a fixed-base serial-chain manipulator.

    Link i is the body rigidly attached after joint i; its frame coincides
    with joint i's frame. The end-effector is a fixed transform from the last
    link. ``task_rows`` selects which rows of the 6-row twist (vx, vy, vz,
    wx, wy, wz) make up the operational-space task; planar arms use (0, 1).
    """

    name: str
    joints: tuple
    link_inertials: tuple
    collision_spheres: tuple
    self_collision_pairs: tuple
    q_min: np.ndarray
    q_max: np.ndarray
    qd_min: np.ndarray
    qd_max: np.ndarray
    tau_min: np.ndarray
    tau_max: np.ndarray
    ee_rotation: np.ndarray
    ee_translation: np.ndarray
    task_rows: tuple = (0, 1, 2, 3, 4, 5)
    q_home: np.ndarray | None = None

    # packed arrays derived in __post_init__ (not part of the public contract)
    _axes: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _off_rot: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _off_trans: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _prismatic: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _masses: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _coms: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _inertias: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _sphere_link: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _sphere_centers: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _sphere_radii: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _off4: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _all_revolute: bool = field(init=False, repr=False, compare=False, default=True)
    _k_le_j: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _tril_mask: np.ndarray = field(init=False, repr=False, compare=False, default=None)
    _eye_mask: np.ndarray = field(init=False, repr=False, compare=False, default=None)

    def __post_init__(self):
        joints = tuple(self.joints)
        links = tuple(self.link_inertials)
        spheres = tuple(self.collision_spheres)
        pairs = tuple((int(j), int(k)) for j, k in self.self_collision_pairs)
        object.__setattr__(self, "joints", joints)
        object.__setattr__(self, "link_inertials", links)
        object.__setattr__(self, "collision_spheres", spheres)
        object.__setattr__(self, "self_collision_pairs", pairs)
        n = len(joints)
        if n == 0:
            raise ValueError("model needs at least one joint")
        if len(links) != n:
            raise ValueError("need exactly one link inertial per joint")

        for nm in ("q_min", "q_max", "qd_min", "qd_max", "tau_min", "tau_max"):
            object.__setattr__(self, nm, _frozen(_arr(getattr(self, nm), (n,))))
        object.__setattr__(self, "ee_rotation", _frozen(_arr(self.ee_rotation, (3, 3))))
        object.__setattr__(self, "ee_translation", _frozen(_arr(self.ee_translation, (3,))))
        object.__setattr__(self, "task_rows", tuple(int(r) for r in self.task_rows))
        if self.q_home is not None:
            object.__setattr__(self, "q_home", _frozen(_arr(self.q_home, (n,))))

        if not np.all(self.q_min < self.q_max):
            raise ValueError("q_min must be < q_max elementwise")
        if not (np.all(self.qd_min < 0) and np.all(self.qd_max > 0)):
            raise ValueError("velocity limit interval must contain 0")
        if not (np.all(self.tau_min < 0) and np.all(self.tau_max > 0)):
            raise ValueError("torque limit interval must contain 0")
        if any(r < 0 or r > 5 for r in self.task_rows):
            raise ValueError("task_rows must be twist row indices 0..5")

        for j, k in pairs:
            if not (0 <= j < len(spheres) and 0 <= k < len(spheres)):
                raise ValueError("self-collision pair references invalid sphere index")
            if abs(spheres[j].link - spheres[k].link) <= 1:
                raise ValueError(
                    "self-collision pairs must not pair spheres on the same or adjacent links"
                )

        object.__setattr__(self, "_axes", _frozen(np.array([j.axis for j in joints])))
        object.__setattr__(self, "_off_rot", _frozen(np.array([j.rotation for j in joints])))
        object.__setattr__(self, "_off_trans", _frozen(np.array([j.translation for j in joints])))
        object.__setattr__(
            self, "_prismatic", _frozen(np.array([j.kind == PRISMATIC for j in joints]))
        )
        object.__setattr__(self, "_masses", _frozen(np.array([l.mass for l in links])))
        object.__setattr__(self, "_coms", _frozen(np.array([l.com for l in links])))
        object.__setattr__(self, "_inertias", _frozen(np.array([l.inertia for l in links])))
        off4 = np.zeros((n, 4, 4))
        off4[:, 3, 3] = 1.0
        for i, j in enumerate(joints):
            off4[i, :3, :3] = j.rotation
            off4[i, :3, 3] = j.translation
        object.__setattr__(self, "_off4", _frozen(off4))
        object.__setattr__(self, "_all_revolute", bool(not any(j.kind == PRISMATIC for j in joints)))
        idx = np.arange(n)
        object.__setattr__(self, "_k_le_j", _frozen(idx[None, :] <= idx[:, None]))
        object.__setattr__(self, "_tril_mask", _frozen(np.tril(np.ones((n, n), dtype=bool))))
        object.__setattr__(self, "_eye_mask", _frozen(np.eye(n, dtype=bool)))

        if spheres:
            for s in spheres:
                if not (0 <= s.link < n):
                    raise ValueError("collision sphere references invalid link")
            object.__setattr__(self, "_sphere_link", _frozen(np.array([s.link for s in spheres])))
            object.__setattr__(
                self, "_sphere_centers", _frozen(np.array([s.center for s in spheres]))
            )
            object.__setattr__(
                self, "_sphere_radii", _frozen(np.array([s.radius for s in spheres]))
            )
        else:
            object.__setattr__(self, "_sphere_link", _frozen(np.zeros(0, dtype=int)))
            object.__setattr__(self, "_sphere_centers", _frozen(np.zeros((0, 3))))
            object.__setattr__(self, "_sphere_radii", _frozen(np.zeros(0)))

    @property
    def n_q(self) -> int:
        return len(self.joints)

    @property
    def n_spheres(self) -> int:
        return len(self.collision_spheres)

    @property
    def sphere_radii(self) -> np.ndarray:
        return self._sphere_radii

    @property
    def sphere_links(self) -> np.ndarray:
        return self._sphere_link

    def home_configuration(self) -> np.ndarray:
        if self.q_home is not None:
            return np.array(self.q_home)
        return np.clip(np.zeros(self.n_q), self.q_min, self.q_max)

    @classmethod
    def from_dict(cls, data: dict) -> "RobotModel":
        """Build a model from the JSON robot-description schema.

        Schema: ``{"name", "joints": [{"type", "axis", "origin": {"xyz",
        "rpy"}}], "links": [{"mass", "com", "inertia"}], "collision_spheres":
        [{"link", "center", "radius"}], "self_collision_pairs": [[j, k]],
        "limits": {"q_min", "q_max", "qd_min", "qd_max", "tau_min",
        "tau_max"}, "ee_frame": {"xyz", "rpy"}, "task_rows", "q_home"}``.
        Angles in radians, lengths in meters, masses in kg.
        """
        joints = tuple(
            JointSpec(
                kind=j["type"],
                axis=j["axis"],
                rotation=rotation_from_rpy(j.get("origin", {}).get("rpy", (0, 0, 0))),
                translation=j.get("origin", {}).get("xyz", (0, 0, 0)),
            )
            for j in data["joints"]
        )
        links = tuple(
            LinkInertial(mass=l["mass"], com=l["com"], inertia=l["inertia"])
            for l in data["links"]
        )
        spheres = tuple(
            CollisionSphere(link=s["link"], center=s["center"], radius=s["radius"])
            for s in data.get("collision_spheres", ())
        )
        limits = data["limits"]
        ee = data.get("ee_frame", {})
        return cls(
            name=data.get("name", "robot"),
            joints=joints,
            link_inertials=links,
            collision_spheres=spheres,
            self_collision_pairs=tuple(tuple(p) for p in data.get("self_collision_pairs", ())),
            q_min=limits["q_min"],
            q_max=limits["q_max"],
            qd_min=limits["qd_min"],
            qd_max=limits["qd_max"],
            tau_min=limits["tau_min"],
            tau_max=limits["tau_max"],
            ee_rotation=rotation_from_rpy(ee.get("rpy", (0, 0, 0))),
            ee_translation=ee.get("xyz", (0, 0, 0)),
            task_rows=tuple(data.get("task_rows", (0, 1, 2, 3, 4, 5))),
            q_home=data.get("q_home"),
        )

    @classmethod
    def load(cls, path) -> "RobotModel":
        with open(path) as f:
            return cls.from_dict(json.load(f))


@dataclass(frozen=True)
class RobotState:
    """Joint positions and velocities; the state the barrier functions see."""

    q: np.ndarray
    qd: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", _arr(self.q))
        object.__setattr__(self, "qd", _arr(self.qd))
        if self.q.ndim != 1 or self.q.shape != self.qd.shape:
            raise ValueError("q and qd must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(self.q)) and np.all(np.isfinite(self.qd))):
            raise ValueError("state entries must be finite")


@dataclass(frozen=True)
class ChainFrames:
    """World-frame poses produced by forward kinematics."""

    rot: np.ndarray  # (n, 3, 3) link rotations
    pos: np.ndarray  # (n, 3) link-frame origins
    axis_world: np.ndarray  # (n, 3) joint axes
    ee_rot: np.ndarray  # (3, 3)
    ee_pos: np.ndarray  # (3,)
    sphere_centers: np.ndarray  # (n_spheres, 3)


def _check_q(model: RobotModel, q) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (model.n_q,):
        raise ValueError(f"expected q of shape ({model.n_q},), got {q.shape}")
    return q


def forward_kinematics(model: RobotModel, q) -> ChainFrames:
    """Pose of every link origin, collision-sphere center, and the EE frame."""
    q = _check_q(model, q)
    if _kernels is not None:
        return ChainFrames(
            *_kernels.frames_kernel(
                q, model._off_rot, model._off_trans, model._axes, model._prismatic,
                model.ee_rotation, model.ee_translation,
                model._sphere_link, model._sphere_centers,
            )
        )
    return _forward_kinematics_numpy(model, q)


def _forward_kinematics_numpy(model: RobotModel, q) -> ChainFrames:
    n = model.n_q
    axes = model._axes
    prism = model._prismatic
    # per-joint step transform: fixed offset composed with the joint motion
    steps = np.empty((n, 4, 4))
    steps[:, 3, :3] = 0.0
    steps[:, 3, 3] = 1.0
    steps[:, :3, :3] = _axis_angle_batch(axes, q)
    steps[:, :3, 3] = 0.0
    if prism.any():
        steps[prism, :3, :3] = np.eye(3)
        steps[prism, :3, 3] = axes[prism] * q[prism, None]
    steps = model._off4 @ steps
    frames = np.empty((n, 4, 4))
    T = steps[0]
    frames[0] = T
    for i in range(1, n):
        T = T @ steps[i]
        frames[i] = T
    rots = frames[:, :3, :3]
    poss = frames[:, :3, 3]
    axis_world = np.einsum("nij,nj->ni", rots, axes)
    ee_rot = T[:3, :3] @ model.ee_rotation
    ee_pos = T[:3, 3] + T[:3, :3] @ model.ee_translation
    if model.n_spheres:
        sl = model._sphere_link
        centers = poss[sl] + np.einsum("sij,sj->si", rots[sl], model._sphere_centers)
    else:
        centers = np.zeros((0, 3))
    return ChainFrames(rots, poss, axis_world, ee_rot, ee_pos, centers)


def jacobian(model: RobotModel, q=None, fk: ChainFrames | None = None) -> np.ndarray:
    """Geometric Jacobian of the EE frame: rows 0-2 linear, rows 3-5 angular."""
    if fk is None:
        fk = forward_kinematics(model, q)
    lever = cross3(fk.axis_world, fk.ee_pos[None, :] - fk.pos)
    J = np.empty((6, model.n_q))
    if model._all_revolute:
        J[0:3] = lever.T
        J[3:6] = fk.axis_world.T
        return J
    prism = model._prismatic[:, None]
    J[0:3] = np.where(prism, fk.axis_world, lever).T
    J[3:6] = np.where(prism, 0.0, fk.axis_world).T
    return J


def point_jacobian(
    model: RobotModel, q, link_index: int, point_in_link, fk: ChainFrames | None = None
) -> np.ndarray:
    """3 x n_q map from joint rates to the world velocity of a link-fixed point.

    ``link_index = -1`` addresses the fixed base (zero Jacobian).
    """
    if not (-1 <= link_index < model.n_q):
        raise ValueError(f"invalid link index {link_index}")
    if fk is None:
        fk = forward_kinematics(model, q)
    n = model.n_q
    if link_index == -1:
        return np.zeros((3, n))
    x = fk.pos[link_index] + fk.rot[link_index] @ _arr(point_in_link, (3,))
    cols = np.where(
        model._prismatic[:, None],
        fk.axis_world,
        cross3(fk.axis_world, x[None, :] - fk.pos),
    )
    cols[link_index + 1 :] = 0.0
    return cols.T


def sphere_jacobians(model: RobotModel, fk: ChainFrames) -> np.ndarray:
    """Stacked point Jacobians of every collision-sphere center, shape (S, 3, n)."""
    n = model.n_q
    if model.n_spheres == 0:
        return np.zeros((0, 3, n))
    rel = fk.sphere_centers[:, None, :] - fk.pos[None, :, :]  # (S, n, 3)
    cols = cross3(fk.axis_world[None, :, :], rel)
    if not model._all_revolute:
        cols = np.where(model._prismatic[None, :, None], fk.axis_world[None, :, :], cols)
    mask = model._sphere_link[:, None] >= np.arange(n)[None, :]
    cols = cols * mask[:, :, None]
    return cols.transpose(0, 2, 1)


def _chain_partials(model: RobotModel, fk: ChainFrames):
    """Common derivative tensors for Jacobian partials.

    Returns (Dz, Dp) with Dz[j, k] = d z_j / d q_k and Dp[j, k] = d p_j / d q_k.
    """
    n = model.n_q
    z = fk.axis_world
    p = fk.pos
    k_le_j = model._k_le_j  # [j, k]
    if model._all_revolute:
        Dz = cross3(z[None, :, :], z[:, None, :]) * k_le_j[:, :, None]
        rel_jk = p[:, None, :] - p[None, :, :]  # p_j - p_k
        Dp = cross3(z[None, :, :], rel_jk) * k_le_j[:, :, None]
        return Dz, Dp
    prism = model._prismatic
    Dz = cross3(z[None, :, :], z[:, None, :]) * (k_le_j & ~prism[None, :])[:, :, None]
    rel_jk = p[:, None, :] - p[None, :, :]
    Dp = np.where(
        prism[None, :, None],
        np.broadcast_to(z[None, :, :], (n, n, 3)),
        cross3(z[None, :, :], rel_jk),
    ) * k_le_j[:, :, None]
    return Dz, Dp


def jacobian_partials(model: RobotModel, q=None, fk: ChainFrames | None = None) -> np.ndarray:
    """Configuration partials of the EE Jacobian: out[k] = dJ/dq_k, shape (n, 6, n).

    World-frame identities for a serial chain: joints k upstream of a frame
    rotate its axis and origin (cross products with z_k); joints downstream
    only move the end-effector point.
    """
    if fk is None:
        fk = forward_kinematics(model, q)
    n = model.n_q
    z = fk.axis_world
    p = fk.pos
    pe = fk.ee_pos

    Dz, Dp = _chain_partials(model, fk)
    rel_e = pe[None, :] - p  # (j, 3): pe - p_j
    # Dpe[k] = d ee_pos / d q_k: exactly the linear Jacobian columns
    lever = cross3(z, rel_e)
    if model._all_revolute:
        dJv = cross3(Dz, rel_e[:, None, :]) + cross3(z[:, None, :], lever[None, :, :] - Dp)
        dJw = Dz
    else:
        prism = model._prismatic
        Dpe = np.where(prism[:, None], z, lever)
        dJv_rev = cross3(Dz, rel_e[:, None, :]) + cross3(z[:, None, :], Dpe[None, :, :] - Dp)
        dJv = np.where(prism[:, None, None], Dz, dJv_rev)
        dJw = np.where(prism[:, None, None], 0.0, Dz)

    out = np.empty((n, 6, n))
    out[:, 0:3, :] = dJv.transpose(1, 2, 0)
    out[:, 3:6, :] = dJw.transpose(1, 2, 0)
    return out


def sphere_velocity_config_gradients(
    model: RobotModel, fk: ChainFrames, qd, sphere_jac: np.ndarray | None = None
) -> np.ndarray:
    """d(v_s)/dq for every sphere center s at fixed joint rates, shape (S, 3, n).

    v_s = J_s(q) qd; the returned tensor stacks the configuration gradients of
    those point velocities (needed by velocity-aware collision barriers).
    """
    n = model.n_q
    S = model.n_spheres
    qd = np.asarray(qd, dtype=np.float64)
    if S == 0:
        return np.zeros((0, 3, n))
    z = fk.axis_world
    p = fk.pos
    prism = model._prismatic
    rev = ~prism
    if sphere_jac is None:
        sphere_jac = sphere_jacobians(model, fk)

    Dz, Dp = _chain_partials(model, fk)
    moves = model._sphere_link[:, None] >= np.arange(n)[None, :]  # joint j moves sphere s
    w = qd[None, :] * moves  # (S, j)
    w_rev = w if model._all_revolute else w * rev[None, :]

    # term A: sum_j w_sj rev_j (Dz[j,k] x (x_s - p_j))
    rel_s = fk.sphere_centers[:, None, :] - p[None, :, :]  # (S, j, 3)
    crossA = cross3(Dz[None, :, :, :], rel_s[:, :, None, :])  # (S, j, k, 3)
    termA = np.einsum("sj,sjkc->sck", w_rev, crossA)

    # term B: (sum_j w_sj rev_j z_j) x Js[:, k]  -  sum_j w_sj rev_j (z_j x Dp[j,k])
    omega = w_rev @ z  # (S, 3): angular velocity of each sphere's link
    B1 = cross3(omega[:, None, :], sphere_jac.transpose(0, 2, 1)).transpose(0, 2, 1)
    crossB2 = cross3(z[:, None, :], Dp)  # (j, k, 3)
    B2 = np.einsum("sj,jkc->sck", w_rev, crossB2)

    out = termA + B1 - B2
    if not model._all_revolute:
        # prismatic columns' axes also rotate with upstream joints
        out = out + np.einsum("sj,jkc->sck", w * prism[None, :], Dz)
    return out


def _forward_pass(model: RobotModel, fk: ChainFrames, q, qd, qdd, a_base):
    """Velocity/acceleration recursion over the chain (world frame).

    Returns per-link angular velocity w, angular acceleration al, and the
    classical acceleration a of each link-frame origin (as material points),
    with the base accelerating at ``a_base`` (gravity trick). Runs on plain
    Python floats: at these sizes that is several times faster than numpy.
    """
    n = model.n_q
    prism = model._prismatic
    zs = fk.axis_world.tolist()
    pos = fk.pos.tolist()
    qdl = np.asarray(qd, dtype=np.float64).tolist()
    qddl = np.asarray(qdd, dtype=np.float64).tolist()
    w0 = w1 = w2 = 0.0
    l0 = l1 = l2 = 0.0  # angular acceleration
    v0 = v1 = v2 = 0.0
    a0, a1, a2 = float(a_base[0]), float(a_base[1]), float(a_base[2])
    p0 = p1 = p2 = 0.0
    ws = np.empty((n, 3))
    als = np.empty((n, 3))
    vs = np.empty((n, 3))
    accs = np.empty((n, 3))
    for i in range(n):
        z = zs[i]
        pi = pos[i]
        r0 = pi[0] - p0
        r1 = pi[1] - p1
        r2 = pi[2] - p2
        wr0 = w1 * r2 - w2 * r1
        wr1 = w2 * r0 - w0 * r2
        wr2 = w0 * r1 - w1 * r0
        # coincident-point acceleration: a + al x r + w x (w x r)
        a0 = a0 + (l1 * r2 - l2 * r1) + (w1 * wr2 - w2 * wr1)
        a1 = a1 + (l2 * r0 - l0 * r2) + (w2 * wr0 - w0 * wr2)
        a2 = a2 + (l0 * r1 - l1 * r0) + (w0 * wr1 - w1 * wr0)
        v0 += wr0
        v1 += wr1
        v2 += wr2
        dq = qdl[i]
        ddq = qddl[i]
        z0, z1, z2 = z[0], z[1], z[2]
        if prism[i]:
            s0, s1, s2 = z0 * dq, z1 * dq, z2 * dq
            a0 += 2.0 * (w1 * s2 - w2 * s1) + z0 * ddq
            a1 += 2.0 * (w2 * s0 - w0 * s2) + z1 * ddq
            a2 += 2.0 * (w0 * s1 - w1 * s0) + z2 * ddq
            v0 += s0
            v1 += s1
            v2 += s2
        else:
            # al += z qdd + (w x z) qd ; w += z qd
            l0 += z0 * ddq + (w1 * z2 - w2 * z1) * dq
            l1 += z1 * ddq + (w2 * z0 - w0 * z2) * dq
            l2 += z2 * ddq + (w0 * z1 - w1 * z0) * dq
            w0 += z0 * dq
            w1 += z1 * dq
            w2 += z2 * dq
        ws[i, 0] = w0
        ws[i, 1] = w1
        ws[i, 2] = w2
        als[i, 0] = l0
        als[i, 1] = l1
        als[i, 2] = l2
        vs[i, 0] = v0
        vs[i, 1] = v1
        vs[i, 2] = v2
        accs[i, 0] = a0
        accs[i, 1] = a1
        accs[i, 2] = a2
        p0, p1, p2 = pi[0], pi[1], pi[2]
    return ws, als, vs, accs


def _com_positions(model: RobotModel, fk: ChainFrames) -> np.ndarray:
    return fk.pos + np.einsum("nij,nj->ni", fk.rot, model._coms)


def _backward_tau(model: RobotModel, fk: ChainFrames, coms_w, F, N) -> np.ndarray:
    """Joint torques carrying per-link inertial wrenches (F at COM, moment N).

    Reverse cumulative sums give the force/moment supported by each joint.
    """
    SF = np.cumsum(F[::-1], axis=0)[::-1]  # sum_{j>=i} F_j
    cxF = cross3(coms_w, F)
    SM = np.cumsum(cxF[::-1], axis=0)[::-1]
    n_about_p = SM - cross3(fk.pos, SF)
    if N is not None:
        n_about_p = n_about_p + np.cumsum(N[::-1], axis=0)[::-1]
    tau = np.einsum("ni,ni->n", fk.axis_world, n_about_p)
    if not model._all_revolute:
        tau = np.where(model._prismatic, np.einsum("ni,ni->n", fk.axis_world, SF), tau)
    return tau


def _link_wrenches(model: RobotModel, fk: ChainFrames, ws, als, accs, coms_w, Iw=None):
    rc = coms_w - fk.pos
    a_com = accs + cross3(als, rc) + cross3(ws, cross3(ws, rc))
    F = model._masses[:, None] * a_com
    if Iw is None:
        Iw = fk.rot @ model._inertias @ fk.rot.transpose(0, 2, 1)
    Iww = np.einsum("nij,nj->ni", Iw, ws)
    N = np.einsum("nij,nj->ni", Iw, als) + cross3(ws, Iww)
    return F, N


def rnea(
    model: RobotModel,
    q,
    qd,
    qdd,
    gravity=DEFAULT_GRAVITY,
    fk: ChainFrames | None = None,
) -> np.ndarray:
    """Inverse dynamics: joint torques realizing (q, qd, qdd) under gravity.

    Classical world-frame Newton-Euler recursion; gravity enters through the
    standard trick of accelerating the base at -gravity.
    """
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    qdd = _check_q(model, qdd)
    if fk is None:
        fk = forward_kinematics(model, q)
    a_base = -np.asarray(gravity, dtype=np.float64)
    ws, als, _, accs = _forward_pass(model, fk, q, qd, qdd, a_base)
    coms_w = _com_positions(model, fk)
    F, N = _link_wrenches(model, fk, ws, als, accs, coms_w)
    return _backward_tau(model, fk, coms_w, F, N)


def gravity_torques(model: RobotModel, fk: ChainFrames, gravity, coms_w=None) -> np.ndarray:
    """g(q): the zero-velocity Newton-Euler call in closed form (every link
    COM accelerates at -gravity; no velocity products, no angular terms)."""
    if coms_w is None:
        coms_w = _com_positions(model, fk)
    F = model._masses[:, None] * (-np.asarray(gravity, dtype=np.float64))[None, :]
    return _backward_tau(model, fk, coms_w, F, None)


def bias_forces(model: RobotModel, q, qd, gravity=DEFAULT_GRAVITY, fk: ChainFrames | None = None):
    """Coriolis/centrifugal vector c(q, qd) and gravity vector g(q).

    Newton-Euler with qdd = 0 at the actual velocity gives c + g; the
    zero-velocity call isolates g.
    """
    q = _check_q(model, q)
    if fk is None:
        fk = forward_kinematics(model, q)
    zeros = np.zeros(model.n_q)
    cg = rnea(model, q, qd, zeros, gravity, fk)
    g = gravity_torques(model, fk, gravity)
    return cg - g, g


def _ee_accel(model: RobotModel, fk: ChainFrames, ws, als, accs, extra=None) -> np.ndarray:
    n = model.n_q
    r = fk.ee_pos - fk.pos[n - 1]
    w = ws[n - 1]
    a_e = accs[n - 1] + _cr(als[n - 1], r) + _cr(w, _cr(w, r))
    if extra is not None:
        a_e = a_e + extra
    return np.concatenate([a_e, als[n - 1]])


def jdot_qd(model: RobotModel, q=None, qd=None, fk: ChainFrames | None = None) -> np.ndarray:
    """The 6-vector J'(q, qd) qd: EE twist rate at zero joint acceleration.

    Computed by forward propagation of accelerations with qdd = 0 and no
    gravity, then evaluated at the EE point.
    """
    if fk is None:
        fk = forward_kinematics(model, q)
    qd = np.asarray(qd, dtype=np.float64)
    zeros = np.zeros(model.n_q)
    ws, als, _, accs = _forward_pass(model, fk, None, qd, zeros, np.zeros(3))
    return _ee_accel(model, fk, ws, als, accs)


def velocity_product_data(model: RobotModel, fk: ChainFrames, qd, pass_data=None):
    """Velocity and velocity-product acceleration of every collision-sphere
    center, plus the EE twist rate, at zero joint acceleration and no gravity.

    These are the exact second time-derivatives the geometric barriers need:
    for a body-fixed point x, d2x/dt2 at qdd = 0. ``pass_data`` optionally
    reuses a previously computed (ws, als, vs, accs) recursion (for instance
    the one inside ``dynamics_bundle``). Returns (v_spheres (S,3),
    a_spheres (S,3), jdot_qd (6,)).
    """
    qd = np.asarray(qd, dtype=np.float64)
    if pass_data is None:
        zeros = np.zeros(model.n_q)
        ws, als, vs, accs = _forward_pass(model, fk, None, qd, zeros, np.zeros(3))
    else:
        ws, als, vs, accs = pass_data
    jq = _ee_accel(model, fk, ws, als, accs)
    if model.n_spheres == 0:
        return np.zeros((0, 3)), np.zeros((0, 3)), jq
    sl = model._sphere_link
    r = fk.sphere_centers - fk.pos[sl]
    w = ws[sl]
    al = als[sl]
    v_s = vs[sl] + cross3(w, r)
    a_s = accs[sl] + cross3(al, r) + cross3(w, cross3(w, r))
    return v_s, a_s, jq


def dynamics_bundle(model: RobotModel, q, qd, gravity=DEFAULT_GRAVITY, fk=None):
    """(M, c, g, jdot_qd, pass_nograv): everything the torque pipeline needs
    from one kinematics pass and one velocity-product pass.

    The forward pass is run once with the gravity trick; the zero-gravity
    recursion (ws, als, vs, accs) it implies is returned for reuse by the
    barrier curvature terms, and yields the EE Jacobian-rate product free.
    """
    q = _check_q(model, q)
    qd = np.asarray(qd, dtype=np.float64)
    if fk is None:
        fk = forward_kinematics(model, q)
    coms_w = _com_positions(model, fk)
    Iw = fk.rot @ model._inertias @ fk.rot.transpose(0, 2, 1)
    M = mass_matrix(model, q, fk, coms_w, Iw)
    g_vec = np.asarray(gravity, dtype=np.float64)
    zeros = np.zeros(model.n_q)
    ws, als, vs, accs = _forward_pass(model, fk, q, qd, zeros, -g_vec)
    F, N = _link_wrenches(model, fk, ws, als, accs, coms_w, Iw)
    cg = _backward_tau(model, fk, coms_w, F, N)
    g = gravity_torques(model, fk, gravity, coms_w)
    jq = _ee_accel(model, fk, ws, als, accs, extra=g_vec)
    # the gravity trick offsets every linear acceleration by exactly -g, so
    # the zero-gravity recursion the barrier curvature needs is recovered here
    pass_nograv = (ws, als, vs, accs + g_vec[None, :])
    return M, cg - g, g, jq, pass_nograv


_I3 = np.eye(3)
_I3.flags.writeable = False


def _shift_batch(d: np.ndarray) -> np.ndarray:
    """Parallel-axis inertia increments for unit masses displaced by rows of d."""
    dd = np.einsum("nc,nc->n", d, d)
    return dd[:, None, None] * _I3[None, :, :] - d[:, None, :] * d[:, :, None]


def mass_matrix(
    model: RobotModel, q, fk: ChainFrames | None = None, coms_w=None, Iw=None
) -> np.ndarray:
    """Joint-space mass matrix via the composite-rigid-body algorithm.

    The composite bodies (links k..n) are aggregated by reverse cumulative
    sums, using the identity sum_j m_j shift(c_j - cbar) = sum_j m_j
    shift(c_j) - m_tot shift(cbar); each joint's unit-acceleration wrench is
    then projected onto the upstream joint axes in one batched pass.
    """
    q = _check_q(model, q)
    if fk is None:
        fk = forward_kinematics(model, q)
    n = model.n_q
    prism = model._prismatic
    zs = fk.axis_world
    pos = fk.pos
    if coms_w is None:
        coms_w = fk.pos + np.einsum("nij,nj->ni", fk.rot, model._coms)
    if Iw is None:
        Iw = fk.rot @ model._inertias @ fk.rot.transpose(0, 2, 1)
    masses = model._masses

    # composite mass / COM / inertia for links k..n-1 (reverse cumsums)
    m_c = np.cumsum(masses[::-1])[::-1]  # (n,)
    mc_com = np.cumsum((masses[:, None] * coms_w)[::-1], axis=0)[::-1]
    c_c = mc_com / m_c[:, None]
    I_about_origin = Iw + masses[:, None, None] * _shift_batch(coms_w)
    I_c = np.cumsum(I_about_origin[::-1], axis=0)[::-1] - m_c[:, None, None] * _shift_batch(c_c)

    # unit joint-acceleration wrench of each composite, about its joint origin
    arm = c_c - pos  # (n, 3)
    all_rev = model._all_revolute
    if all_rev:
        F = m_c[:, None] * cross3(zs, arm)
        n_mom = cross3(arm, F) + np.einsum("kab,kb->ka", I_c, zs)
    else:
        F = np.where(prism[:, None], m_c[:, None] * zs, m_c[:, None] * cross3(zs, arm))
        n_mom = cross3(arm, F) + np.where(
            prism[:, None], 0.0, np.einsum("kab,kb->ka", I_c, zs)
        )

    # project onto upstream joints j <= k: revolute j uses the moment about
    # p_j, prismatic j the force along its axis
    rel = pos[:, None, :] - pos[None, :, :]  # (k, j, 3): p_k - p_j
    mom = n_mom[:, None, :] + cross3(rel, F[:, None, :])  # (k, j, 3)
    cols = np.einsum("jc,kjc->kj", zs, mom)
    if not all_rev:
        cols = np.where(prism[None, :], F @ zs.T, cols)
    M = np.where(model._tril_mask, cols, 0.0).T
    return np.where(model._eye_mask, M, M + M.T)


def kinetic_energy(model: RobotModel, q, qd, fk: ChainFrames | None = None) -> float:
    qd = np.asarray(qd, dtype=np.float64)
    return 0.5 * float(qd @ mass_matrix(model, q, fk) @ qd)


def damped_pinv(Jt: np.ndarray) -> np.ndarray:
    """Moore-Penrose pseudo-inverse with the near-singular damping rule.

    Exact (J J^T)^-1-based inverse away from singularities; when the smallest
    eigenvalue of the Gram matrix drops below ``EIG_DAMP_THRESHOLD``, a
    damping term ``DAMPING * I`` is added before inverting.
    """
    k, n = Jt.shape
    if k <= n:
        G = Jt @ Jt.T
        if np.linalg.eigvalsh(G)[0] < EIG_DAMP_THRESHOLD:
            G = G + DAMPING * np.eye(k)
        return Jt.T @ np.linalg.inv(G)
    G = Jt.T @ Jt
    if np.linalg.eigvalsh(G)[0] < EIG_DAMP_THRESHOLD:
        G = G + DAMPING * np.eye(n)
    return np.linalg.inv(G) @ Jt.T


@dataclass(frozen=True)
class OpSpaceQuantities:
    """Operational-space model at one state.

    ``J`` is the full 6 x n Jacobian; the task-space quantities (lam, mu, p,
    Jbar, projectors) are built on the task rows. ``N``/``NT`` use the
    dynamically consistent inverse (torque pipeline); ``N_kin`` uses the
    damped Moore-Penrose pseudo-inverse (velocity pipeline).
    """

    ee_pos: np.ndarray
    ee_rot: np.ndarray
    J: np.ndarray
    jdot_qd: np.ndarray
    M: np.ndarray
    M_inv: np.ndarray
    c: np.ndarray
    g: np.ndarray
    lam: np.ndarray
    mu: np.ndarray
    p: np.ndarray
    Jbar: np.ndarray
    N: np.ndarray
    NT: np.ndarray
    J_pinv: np.ndarray
    N_kin: np.ndarray
    task_rows: tuple
    fk: ChainFrames
    sphere_vp: tuple = None  # (sphere velocities, vel-product accels, jdot_qd)
    sphere_jac: "np.ndarray | None" = None
    partials: "np.ndarray | None" = None


@dataclass(frozen=True)
class StateBundle:
    """Everything the controllers need at one state, from one pass.

    ``sphere_jac``/``partials`` are None when not requested; ``sphere_vp`` is
    (sphere velocities, sphere velocity-product accelerations, EE twist rate)
    at zero joint acceleration, used by the barrier curvature terms.
    """

    fk: ChainFrames
    J: np.ndarray
    sphere_jac: np.ndarray | None
    partials: np.ndarray | None
    M: np.ndarray | None
    c: np.ndarray | None
    g: np.ndarray | None
    jdot_qd: np.ndarray | None
    sphere_vp: tuple | None


def state_bundle(
    model: RobotModel,
    q,
    qd,
    gravity=DEFAULT_GRAVITY,
    need_dynamics: bool = True,
    need_partials: bool = True,
) -> StateBundle:
    """Per-state kinematics (+ dynamics) for the control hot path.

    Dispatches to the compiled kernel when available; otherwise composes the
    reference numpy implementations. Both paths compute identical quantities
    (tests compare them).
    """
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    g_vec = np.asarray(gravity, dtype=np.float64)
    if _kernels is not None:
        (rots, poss, axw, ee_rot, ee_pos, centers, J, sphJ, dJ, M, c, g, jq,
         v_sph, a_sph) = _kernels.state_kernel(
            q, np.asarray(qd, dtype=np.float64), g_vec,
            model._off_rot, model._off_trans, model._axes, model._prismatic,
            model.ee_rotation, model.ee_translation,
            model._sphere_link, model._sphere_centers,
            model._masses, model._coms, model._inertias,
            need_dynamics, need_partials,
        )
        fk = ChainFrames(rots, poss, axw, ee_rot, ee_pos, centers)
        return StateBundle(
            fk=fk, J=J, sphere_jac=sphJ,
            partials=dJ if need_partials else None,
            M=M if need_dynamics else None,
            c=c if need_dynamics else None,
            g=g if need_dynamics else None,
            jdot_qd=jq if need_dynamics else None,
            sphere_vp=(v_sph, a_sph, jq) if need_dynamics else None,
        )
    fk = forward_kinematics(model, q)
    J = jacobian(model, fk=fk)
    sphJ = sphere_jacobians(model, fk)
    dJ = jacobian_partials(model, fk=fk) if need_partials else None
    if not need_dynamics:
        return StateBundle(fk, J, sphJ, dJ, None, None, None, None, None)
    M, c, g, jq, pass_nograv = dynamics_bundle(model, q, qd, gravity, fk)
    v_sph, a_sph, _ = velocity_product_data(model, fk, qd, pass_nograv)
    return StateBundle(fk, J, sphJ, dJ, M, c, g, jq, (v_sph, a_sph, jq))


def op_space_quantities(
    model: RobotModel,
    q,
    qd,
    gravity=DEFAULT_GRAVITY,
    task_rows=None,
    fk: ChainFrames | None = None,
    with_kinematic: bool = True,
    need_partials: bool = False,
) -> OpSpaceQuantities:
    """All joint- and operational-space dynamic quantities at one state.

    ``with_kinematic=False`` skips the pseudo-inverse projector pair, which
    only the velocity pipeline needs.
    """
    q = _check_q(model, q)
    qd = _check_q(model, qd)
    rows = tuple(task_rows) if task_rows is not None else model.task_rows
    if fk is not None and _kernels is None:
        J = jacobian(model, fk=fk)
        M, c, g, jq, pass_nograv = dynamics_bundle(model, q, qd, gravity, fk)
        sb = StateBundle(fk, J, None, None, M, c, g, jq, None)
        sphere_vp = velocity_product_data(model, fk, qd, pass_nograv)
    else:
        sb = state_bundle(model, q, qd, gravity, need_partials=need_partials)
        fk = sb.fk
        J = sb.J
        M, c, g, jq = sb.M, sb.c, sb.g, sb.jdot_qd
        sphere_vp = sb.sphere_vp

    Jt = J[list(rows)]
    k = len(rows)
    M_inv = np.linalg.inv(M)
    A = Jt @ M_inv @ Jt.T
    A = 0.5 * (A + A.T)
    ev_min = np.linalg.eigvalsh(A)[0]
    if ev_min < EIG_FAIL_THRESHOLD:
        raise SingularOpSpaceInertia(
            f"task inertia eigenvalue {ev_min:.3e} below {EIG_FAIL_THRESHOLD:.0e}"
        )
    if ev_min < EIG_DAMP_THRESHOLD:
        A = A + DAMPING * np.eye(k)
    lam = np.linalg.inv(A)
    lam = 0.5 * (lam + lam.T)
    Jbar = M_inv @ Jt.T @ lam
    mu = Jbar.T @ c - lam @ jq[list(rows)]
    p = Jbar.T @ g
    I_n = np.eye(model.n_q)
    N = I_n - Jbar @ Jt
    NT = I_n - Jt.T @ Jbar.T
    if with_kinematic:
        J_pinv = damped_pinv(Jt)
        N_kin = I_n - J_pinv @ Jt
    else:
        J_pinv = None
        N_kin = None
    return OpSpaceQuantities(
        ee_pos=fk.ee_pos,
        ee_rot=fk.ee_rot,
        J=J,
        jdot_qd=jq,
        M=M,
        M_inv=M_inv,
        c=c,
        g=g,
        lam=lam,
        mu=mu,
        p=p,
        Jbar=Jbar,
        N=N,
        NT=NT,
        J_pinv=J_pinv,
        N_kin=N_kin,
        task_rows=rows,
        fk=fk,
        sphere_vp=sphere_vp,
        sphere_jac=sb.sphere_jac,
        partials=sb.partials,
    )


@dataclass(frozen=True)
class KinematicQuantities:
    """The cheap subset needed by the velocity pipeline (no dynamics)."""

    ee_pos: np.ndarray
    ee_rot: np.ndarray
    J: np.ndarray
    J_pinv: np.ndarray
    N_kin: np.ndarray
    task_rows: tuple
    fk: ChainFrames


def kinematic_quantities(
    model: RobotModel, q, task_rows=None, fk: ChainFrames | None = None, jac=None
) -> KinematicQuantities:
    q = _check_q(model, q)
    if fk is None:
        fk = forward_kinematics(model, q)
    rows = tuple(task_rows) if task_rows is not None else model.task_rows
    J = jac if jac is not None else jacobian(model, fk=fk)
    Jt = J[list(rows)]
    J_pinv = damped_pinv(Jt)
    N_kin = np.eye(model.n_q) - J_pinv @ Jt
    return KinematicQuantities(
        ee_pos=fk.ee_pos,
        ee_rot=fk.ee_rot,
        J=J,
        J_pinv=J_pinv,
        N_kin=N_kin,
        task_rows=rows,
        fk=fk,
    )
