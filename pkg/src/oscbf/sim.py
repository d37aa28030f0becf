"""Deterministic fixed-step simulator, scenario schema, and benchmark harness.

Scenarios pair a robot model with barrier specs, an obstacle set, a reference
trajectory, and controller settings. Velocity mode integrates the reduced
first-order plant exactly; torque mode integrates the full dynamics with RK4.
A velocity-mode scenario may request ``inner_loop`` execution, where the safe
velocity command is tracked by a computed-torque inner loop saturated at the
torque limits on the full dynamics (how velocity-level filters behave on a
real arm with finite actuation).

Runs are bitwise-reproducible given (config, seed), excluding wall-clock
fields; logs stream to CSV with a versioned JSON summary.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .barriers import KINEMATIC, TORQUE, BarrierSpec, SceneSnapshot
from .controller import VELOCITY, Gains, SafetyFilterController, TaskTarget
from .errors import SimDiverged
from .models import load_robot
from .robot import (
    RobotModel,
    RobotState,
    forward_kinematics,
    quaternion_from_rotation,
    rotation_from_quaternion,
    state_bundle,
)

SCHEMA_VERSION = 1


@dataclass(frozen=True)
class MovingObstacle:
    """Sphere following piecewise-linear waypoints (t, x, y, z); it holds the
    first/last waypoint outside the time range."""

    waypoints: np.ndarray  # (k, 4) rows (t, x, y, z)
    radius: float

    def __post_init__(self):
        w = np.asarray(self.waypoints, float).reshape(-1, 4)
        if w.shape[0] < 1 or np.any(np.diff(w[:, 0]) <= 0):
            raise ValueError("waypoints need strictly increasing times")
        object.__setattr__(self, "waypoints", w)
        object.__setattr__(self, "radius", float(self.radius))

    def state_at(self, t: float):
        w = self.waypoints
        if t <= w[0, 0]:
            return w[0, 1:4], np.zeros(3)
        if t >= w[-1, 0]:
            return w[-1, 1:4], np.zeros(3)
        i = int(np.searchsorted(w[:, 0], t, side="right") - 1)
        t0, t1 = w[i, 0], w[i + 1, 0]
        frac = (t - t0) / (t1 - t0)
        vel = (w[i + 1, 1:4] - w[i, 1:4]) / (t1 - t0)
        return w[i, 1:4] + frac * (w[i + 1, 1:4] - w[i, 1:4]), vel


@dataclass
class Obstacles:
    static_centers: np.ndarray
    static_radii: np.ndarray
    moving: tuple

    @classmethod
    def from_dict(cls, data: dict | None) -> "Obstacles":
        data = data or {}
        static = data.get("static", [])
        centers = np.array([s["center"] for s in static], float).reshape(-1, 3)
        radii = np.array([s["radius"] for s in static], float)
        moving = tuple(
            MovingObstacle(m["waypoints"], m["radius"]) for m in data.get("moving", [])
        )
        return cls(centers, radii, moving)

    def snapshot(self, t: float) -> SceneSnapshot:
        if self.moving:
            states = [m.state_at(t) for m in self.moving]
            mc = np.array([s[0] for s in states])
            mv = np.array([s[1] for s in states])
            mr = np.array([m.radius for m in self.moving])
        else:
            mc = np.zeros((0, 3))
            mv = np.zeros((0, 3))
            mr = np.zeros(0)
        return SceneSnapshot(self.static_centers, self.static_radii, mc, mv, mr, t)

    @property
    def shape(self):
        return (len(self.static_radii), len(self.moving))


class WaypointReference:
    """Piecewise-linear EE position (orientation held per segment), with an
    optional posture target per waypoint."""

    def __init__(self, times, positions, quats=None, postures=None):
        self.times = np.asarray(times, float)
        self.positions = np.asarray(positions, float).reshape(-1, 3)
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("waypoint times must increase")
        self.rots = None
        if quats is not None:
            self.rots = [rotation_from_quaternion(q) if q is not None else None for q in quats]
        self.postures = postures

    def target(self, t: float, default_rot, default_posture) -> TaskTarget:
        tt = self.times
        if t <= tt[0]:
            i, frac = 0, 0.0
        elif t >= tt[-1]:
            i, frac = len(tt) - 2, 1.0
        else:
            i = int(np.searchsorted(tt, t, side="right") - 1)
            frac = (t - tt[i]) / (tt[i + 1] - tt[i])
        pos = self.positions[i] + frac * (self.positions[i + 1] - self.positions[i])
        rot = default_rot
        if self.rots is not None and self.rots[min(i, len(self.rots) - 1)] is not None:
            rot = self.rots[min(i, len(self.rots) - 1)]
        posture = default_posture
        if self.postures is not None:
            p = self.postures[min(i, len(self.postures) - 1)]
            if p is not None:
                posture = np.asarray(p, float)
        return TaskTarget(pos=pos, rot=rot, q_des=posture)


class LineReference:
    """Periodic straight-line sweep between two points (triangle-wave time
    profile), the classic fast in-and-out probe of a boundary."""

    def __init__(self, point_a, point_b, period):
        self.a = np.asarray(point_a, float)
        self.b = np.asarray(point_b, float)
        self.period = float(period)

    def target(self, t: float, default_rot, default_posture) -> TaskTarget:
        phase = (t % self.period) / self.period
        s = 2.0 * phase if phase < 0.5 else 2.0 * (1.0 - phase)
        return TaskTarget(
            pos=self.a + s * (self.b - self.a), rot=default_rot, q_des=default_posture
        )


class TeleopReference:
    """Latest-wins mailbox of external targets; holds the last one."""

    def __init__(self, initial: TaskTarget):
        self._latest = initial

    def put(self, target: TaskTarget):
        self._latest = target

    def target(self, t, default_rot, default_posture) -> TaskTarget:
        return self._latest


def _build_reference(data: dict, rng: np.random.Generator):
    kind = data["type"]
    if kind == "waypoints":
        return WaypointReference(
            [w["t"] for w in data["points"]],
            [w["pos"] for w in data["points"]],
            quats=[w.get("quat") for w in data["points"]],
            postures=[w.get("q_des") for w in data["points"]],
        )
    if kind == "sweep":
        # seed-jittered waypoint sweep: probes each constraint family in turn
        jp = float(data.get("jitter_pos", 0.0))
        times = [w["t"] for w in data["points"]]
        pos = np.array([w["pos"] for w in data["points"]], float)
        if jp > 0:
            pos = pos + rng.uniform(-jp, jp, pos.shape)
        return WaypointReference(
            times, pos,
            quats=[w.get("quat") for w in data["points"]],
            postures=[w.get("q_des") for w in data["points"]],
        )
    if kind == "line":
        return LineReference(data["a"], data["b"], data["period"])
    raise ValueError(f"unknown reference type {kind!r}")


@dataclass
class ScenarioConfig:
    """Everything needed to reproduce one experiment run."""

    robot: str
    mode: str = VELOCITY
    duration: float = 5.0
    dt: float = 1e-3
    seed: int = 0
    gravity: tuple = (0.0, 0.0, -9.81)
    barriers: list = field(default_factory=list)
    obstacles: dict | None = None
    reference: dict | None = None
    initial_q: list | None = None
    initial_q_jitter: float = 0.0
    posture_target: list | None = None
    gains: dict = field(default_factory=dict)
    objective: str = "oscbf"
    slack_penalty: float = 1e6
    prune_k: int | None = None
    hocbf: bool = True
    inner_loop: bool = False
    inner_kv: float = 40.0
    clutter: dict | None = None
    name: str = "scenario"

    def __post_init__(self):
        if self.dt <= 0 or self.duration < self.dt:
            raise ValueError("need dt > 0 and duration >= dt")
        if self.mode not in (VELOCITY, TORQUE):
            raise ValueError(f"unknown mode {self.mode!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "ScenarioConfig":
        data = dict(data)
        data.pop("v", None)
        return cls(**data)

    @classmethod
    def load(cls, path) -> "ScenarioConfig":
        with open(path) as f:
            return cls.from_dict(json.load(f))

    def to_dict(self) -> dict:
        out = {"v": SCHEMA_VERSION}
        for k, v in self.__dict__.items():
            out[k] = v
        return out

    def with_overrides(self, **kw) -> "ScenarioConfig":
        data = dict(self.__dict__)
        data.update({k: v for k, v in kw.items() if v is not None})
        return ScenarioConfig(**data)


def generate_clutter(model: RobotModel, q0, clutter: dict, rng: np.random.Generator):
    """Random spheres in a box, rejection-sampled so the initial pose is safe."""
    count = int(clutter["count"])
    lo = np.asarray(clutter.get("box_min", (0.2, -0.6, 0.1)), float)
    hi = np.asarray(clutter.get("box_max", (0.8, 0.6, 0.9)), float)
    r_lo, r_hi = clutter.get("radius_range", (0.03, 0.10))
    margin = float(clutter.get("margin", 0.02))
    fk = forward_kinematics(model, q0)
    centers = []
    radii = []
    attempts = 0
    while len(centers) < count:
        attempts += 1
        if attempts > 10000:
            raise RuntimeError("could not place clutter satisfying the safety margin")
        c = rng.uniform(lo, hi)
        r = float(rng.uniform(r_lo, r_hi))
        dists = np.linalg.norm(fk.sphere_centers - c[None, :], axis=1)
        if np.min(dists - model.sphere_radii - r) > margin and (
            np.linalg.norm(fk.ee_pos - c) - r > margin
        ):
            centers.append(c)
            radii.append(r)
    return np.array(centers).reshape(-1, 3), np.array(radii)


def integrate_step(model: RobotModel, state: RobotState, command, mode: str, dt: float,
                   gravity=(0.0, 0.0, -9.81)) -> RobotState:
    """One plant step: exact integrator for the reduced velocity model; RK4 on
    the full dynamics for torque commands (zero-order hold)."""
    command = np.asarray(command, float)
    if mode in (VELOCITY, KINEMATIC):
        q = state.q + command * dt
        new = (q, command)
    else:
        tau = command

        def f(q, qd):
            sb = state_bundle(model, q, qd, gravity, need_partials=False)
            return np.linalg.solve(sb.M, tau - sb.c - sb.g)

        q, qd = state.q, state.qd
        k1v = f(q, qd)
        k1x = qd
        k2v = f(q + 0.5 * dt * k1x, qd + 0.5 * dt * k1v)
        k2x = qd + 0.5 * dt * k1v
        k3v = f(q + 0.5 * dt * k2x, qd + 0.5 * dt * k2v)
        k3x = qd + 0.5 * dt * k2v
        k4v = f(q + dt * k3x, qd + dt * k3v)
        k4x = qd + dt * k3v
        new = (
            q + dt / 6.0 * (k1x + 2 * k2x + 2 * k3x + k4x),
            qd + dt / 6.0 * (k1v + 2 * k2v + 2 * k3v + k4v),
        )
    if not (np.all(np.isfinite(new[0])) and np.all(np.isfinite(new[1]))):
        raise SimDiverged("non-finite state after integration step")
    return RobotState(new[0], new[1])


@dataclass
class RunLog:
    """Column-oriented per-step telemetry for one run."""

    t: np.ndarray
    q: np.ndarray
    qd: np.ndarray
    command: np.ndarray
    h: np.ndarray  # (steps, rows)
    h_ids: tuple
    h_kinds: tuple
    min_h: np.ndarray
    slack_max: np.ndarray
    ee_pos: np.ndarray
    ee_quat: np.ndarray
    err_pos: np.ndarray
    err_rot: np.ndarray
    qp_iterations: np.ndarray
    latency: np.ndarray
    statuses: list
    dev_joint: np.ndarray = None  # ||command - nominal|| per step

    def to_csv(self, path):
        n = self.q.shape[1]
        header = (
            ["t"]
            + [f"q{i}" for i in range(n)]
            + [f"qd{i}" for i in range(n)]
            + [f"cmd{i}" for i in range(n)]
            + [f"h:{rid}" for rid in self.h_ids]
            + ["min_h", "slack_max", "ee_x", "ee_y", "ee_z",
               "ee_qw", "ee_qx", "ee_qy", "ee_qz", "err_pos", "err_rot",
               "qp_iterations", "latency", "dev_joint", "status"]
        )
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(len(self.t)):
                w.writerow(
                    [f"{self.t[i]:.6f}"]
                    + [repr(v) for v in self.q[i]]
                    + [repr(v) for v in self.qd[i]]
                    + [repr(v) for v in self.command[i]]
                    + [repr(v) for v in self.h[i]]
                    + [repr(self.min_h[i]), repr(self.slack_max[i])]
                    + [repr(v) for v in self.ee_pos[i]]
                    + [repr(v) for v in self.ee_quat[i]]
                    + [repr(self.err_pos[i]), repr(self.err_rot[i])]
                    + [int(self.qp_iterations[i]), repr(self.latency[i]),
                       repr(self.dev_joint[i]), self.statuses[i]]
                )

    def records(self):
        """Iterate per-step LogRecord views."""
        for i in range(len(self.t)):
            yield LogRecord(
                t=self.t[i], q=self.q[i], qd=self.qd[i], command=self.command[i],
                h=self.h[i], min_h=self.min_h[i], slack_max=self.slack_max[i],
                ee_pos=self.ee_pos[i], ee_quat=self.ee_quat[i],
                err_pos=self.err_pos[i], err_rot=self.err_rot[i],
                qp_iterations=int(self.qp_iterations[i]), latency=self.latency[i],
                status=self.statuses[i],
            )


@dataclass(frozen=True)
class LogRecord:
    t: float
    q: np.ndarray
    qd: np.ndarray
    command: np.ndarray
    h: np.ndarray
    min_h: float
    slack_max: float
    ee_pos: np.ndarray
    ee_quat: np.ndarray
    err_pos: float
    err_rot: float
    qp_iterations: int
    latency: float
    status: str


def _summary(config: ScenarioConfig, log: RunLog, diverged: bool, extra=None) -> dict:
    kinds = sorted(set(log.h_kinds))
    min_h_per_kind = {}
    for kind in kinds:
        cols = [i for i, k in enumerate(log.h_kinds) if k == kind]
        min_h_per_kind[kind] = float(np.min(log.h[:, cols])) if cols else None
    lat = log.latency[1:] if len(log.latency) > 1 else log.latency  # drop cold-start step
    freq = 1.0 / np.maximum(lat, 1e-9)
    out = {
        "v": SCHEMA_VERSION,
        "scenario": config.name,
        "mode": config.mode,
        "steps": int(len(log.t)),
        "dt": config.dt,
        "seed": config.seed,
        "rows": int(log.h.shape[1]),
        "min_h": float(np.min(log.h)) if log.h.size else None,
        "min_h_per_kind": min_h_per_kind,
        "max_slack": float(np.max(log.slack_max)) if len(log.slack_max) else 0.0,
        "rms_pos_err": float(np.sqrt(np.mean(log.err_pos**2))),
        "rms_rot_err": float(np.sqrt(np.mean(log.err_rot**2))),
        "median_latency": float(np.median(lat)),
        "mean_freq_hz": float(np.mean(freq)),
        "p5_freq_hz": float(np.percentile(freq, 5)),
        "statuses": {s: log.statuses.count(s) for s in set(log.statuses)},
        "diverged": bool(diverged),
        "safety_violation": bool(np.min(log.h, initial=np.inf) < -1e-3),
    }
    if extra:
        out.update(extra)
    return out


def run_scenario(config: ScenarioConfig, model: RobotModel | None = None):
    """Simulate one scenario; returns (RunLog, summary dict).

    Deterministic given (config, seed): the rng drives only clutter placement,
    reference jitter, and the initial-pose jitter.
    """
    if model is None:
        model = load_robot(config.robot)
    rng = np.random.default_rng(config.seed)
    n = model.n_q

    q0 = np.asarray(config.initial_q, float) if config.initial_q is not None else model.home_configuration()
    if config.initial_q_jitter > 0:
        for _ in range(100):
            cand = q0 + rng.uniform(-config.initial_q_jitter, config.initial_q_jitter, n)
            if np.all(cand > model.q_min) and np.all(cand < model.q_max):
                q0 = cand
                break

    obstacles = Obstacles.from_dict(config.obstacles)
    if config.clutter:
        cc, cr = generate_clutter(model, q0, config.clutter, rng)
        obstacles.static_centers = np.vstack([obstacles.static_centers, cc])
        obstacles.static_radii = np.concatenate([obstacles.static_radii, cr])

    specs = [BarrierSpec.from_dict(b) for b in config.barriers]
    gains = Gains.from_dict(config.gains, n)
    controller = SafetyFilterController(
        model,
        specs,
        mode=config.mode,
        gains=gains,
        scene_shape=obstacles.shape,
        objective=config.objective,
        slack_penalty=config.slack_penalty,
        prune_k=config.prune_k,
        hocbf=config.hocbf,
        gravity=config.gravity,
    )

    fk0 = forward_kinematics(model, q0)
    default_posture = (
        np.asarray(config.posture_target, float)
        if config.posture_target is not None
        else q0.copy()
    )
    if config.reference is None:
        reference = TeleopReference(TaskTarget(pos=fk0.ee_pos, rot=fk0.ee_rot, q_des=default_posture))
    else:
        reference = _build_reference(config.reference, rng)

    steps = int(round(config.duration / config.dt))
    m_rows = controller.barriers.n_rows
    log = RunLog(
        t=np.empty(steps), q=np.empty((steps, n)), qd=np.empty((steps, n)),
        command=np.empty((steps, n)), h=np.empty((steps, m_rows)),
        h_ids=controller.barriers.ids, h_kinds=controller.barriers.kinds,
        min_h=np.empty(steps), slack_max=np.empty(steps),
        ee_pos=np.empty((steps, 3)), ee_quat=np.empty((steps, 4)),
        err_pos=np.empty(steps), err_rot=np.empty(steps),
        qp_iterations=np.empty(steps, dtype=int), latency=np.empty(steps),
        statuses=[], dev_joint=np.empty(steps),
    )

    state = RobotState(q0, np.zeros(n))
    diverged = False

    from .controller import orientation_error  # local import to avoid cycle at module load

    for i in range(steps):
        t = i * config.dt
        scene = obstacles.snapshot(t)
        target = reference.target(t, fk0.ee_rot, default_posture)
        cmd = controller.step(state, target, scene)

        fk = forward_kinematics(model, state.q)
        e_pos = float(np.linalg.norm(fk.ee_pos - target.pos))
        e_rot = (
            float(np.linalg.norm(orientation_error(fk.ee_rot, target.rot)))
            if target.rot is not None
            else 0.0
        )
        d = cmd.diagnostics
        log.t[i] = t
        log.q[i] = state.q
        log.qd[i] = state.qd
        log.command[i] = cmd.value
        log.h[i] = d.h
        log.min_h[i] = d.min_h
        log.slack_max[i] = d.slack_max
        log.ee_pos[i] = fk.ee_pos
        log.ee_quat[i] = quaternion_from_rotation(fk.ee_rot)
        log.err_pos[i] = e_pos
        log.err_rot[i] = e_rot
        log.qp_iterations[i] = d.iterations
        log.latency[i] = d.latency
        log.dev_joint[i] = d.deviation_joint
        log.statuses.append(d.status)

        try:
            if config.mode == VELOCITY and config.inner_loop:
                # track the safe velocity with a saturated computed-torque loop
                sb = state_bundle(model, state.q, state.qd, config.gravity, need_partials=False)
                tau = sb.M @ (config.inner_kv * (cmd.value - state.qd)) + sb.c + sb.g
                tau = np.clip(tau, model.tau_min, model.tau_max)
                state = integrate_step(model, state, tau, TORQUE, config.dt, config.gravity)
            else:
                state = integrate_step(model, state, cmd.value, config.mode, config.dt, config.gravity)
        except SimDiverged:
            diverged = True
            log = _truncate_log(log, i + 1)
            break

    summary = _summary(config, log, diverged)
    return log, summary


def _truncate_log(log: RunLog, n: int) -> RunLog:
    return RunLog(
        t=log.t[:n], q=log.q[:n], qd=log.qd[:n], command=log.command[:n],
        h=log.h[:n], h_ids=log.h_ids, h_kinds=log.h_kinds,
        min_h=log.min_h[:n], slack_max=log.slack_max[:n],
        ee_pos=log.ee_pos[:n], ee_quat=log.ee_quat[:n],
        err_pos=log.err_pos[:n], err_rot=log.err_rot[:n],
        qp_iterations=log.qp_iterations[:n], latency=log.latency[:n],
        statuses=log.statuses[:n], dev_joint=log.dev_joint[:n],
    )


def benchmark(config: ScenarioConfig, trials: int = 3, model: RobotModel | None = None) -> dict:
    """Latency statistics over repeated runs; the first (warm-up) trial is
    discarded. Frequencies are per-step controller rates."""
    if model is None:
        model = load_robot(config.robot)
    lat = []
    rows = None
    for trial in range(trials + 1):
        log, summary = run_scenario(config, model)
        rows = summary["rows"]
        if trial == 0:
            continue  # warm-up: JIT and cache effects settle
        lat.append(log.latency[1:])
    lat = np.concatenate(lat)
    freq = 1.0 / np.maximum(lat, 1e-9)
    return {
        "rows": int(rows),
        "mode": config.mode,
        "median_latency": float(np.median(lat)),
        "mean_freq_hz": float(np.mean(freq)),
        "p5_freq_hz": float(np.percentile(freq, 5)),
        "median_freq_hz": float(np.median(freq)),
    }


def write_summary(summary: dict, path):
    with open(path, "w") as f:
        json.dump(summary, f, indent=1, sort_keys=True)
