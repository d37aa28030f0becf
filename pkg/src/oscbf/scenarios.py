"""Bundled experiment scenarios.

Builders return plain config dicts (the JSON schema); the files under
scenarios/ are generated from these, and tests/benchmarks can construct them
directly. The adversarial sweep drives the end-effector target through each
constraint family in turn: outside the task box, through the floor, into an
obstacle, a wrist twist against the joint range, then a near-singular full
reach, and home.
"""

from __future__ import annotations

import json
from pathlib import Path

# workspace geometry shared by the 7-DOF scenarios
EE_BOX_MIN = (0.05, -0.50, 0.08)
EE_BOX_MAX = (0.72, 0.50, 0.85)
WB_BOX_MIN = (-0.40, -0.65, 0.03)
WB_BOX_MAX = (0.90, 0.65, 1.10)
OBSTACLE = {"center": [0.45, 0.25, 0.45], "radius": 0.12}

HOME_EE = [0.307, 0.0, 0.487]
HOME_QUAT = [0.0, 0.92387953, -0.38268343, 0.0]
# home orientation twisted 2.9 rad about world z: demands a wrist roll past
# the last joint's range, pressing its position limit
TWIST_QUAT = [0.0, 0.26856477, 0.96326163, 0.0]


def barrier_suite(
    singularity=True, ee_box=True, joint_limits=True, collision=True, wb_box=True,
    joint_velocity=False,
):
    """The standard five-family barrier list (168 rows with one obstacle)."""
    out = []
    if singularity:
        out.append({"kind": "singularity", "epsilon": 0.01})
    if ee_box:
        out.append({"kind": "op_position_box", "box_min": EE_BOX_MIN, "box_max": EE_BOX_MAX})
    if joint_limits:
        out.append({"kind": "joint_position_limit"})
    if collision:
        out.append({"kind": "collision_pair"})
    if wb_box:
        out.append({"kind": "whole_body_box", "box_min": WB_BOX_MIN, "box_max": WB_BOX_MAX})
    if joint_velocity:
        out.append({"kind": "joint_velocity_limit"})
    return out


def sweep_reference():
    """Scripted adversarial sweep probing every family boundary in turn:
    task wall, floor, obstacle, wrist twist (joint limits), full reach
    (singularity)."""
    home_posture = [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 0.785]
    return {
        "type": "sweep",
        "jitter_pos": 0.015,
        "points": [
            {"t": 0.0, "pos": HOME_EE},
            {"t": 0.5, "pos": HOME_EE},
            {"t": 1.4, "pos": [0.85, 0.05, 0.50]},   # beyond the +x task wall
            {"t": 2.0, "pos": [0.85, 0.05, 0.50]},
            {"t": 2.9, "pos": [0.50, 0.18, -0.05]},  # through the floor
            {"t": 3.5, "pos": [0.50, 0.18, -0.05]},
            {"t": 4.3, "pos": [0.45, 0.25, 0.45]},   # into the obstacle
            {"t": 5.0, "pos": [0.45, 0.25, 0.45]},
            # re-anchor at home so every seed reaches the twist from the same
            # configuration branch
            {"t": 5.7, "pos": HOME_EE, "quat": HOME_QUAT, "q_des": home_posture},
            {"t": 6.1, "pos": HOME_EE, "quat": HOME_QUAT, "q_des": home_posture},
            # wrist-roll limit: orientation twist plus a beyond-limit posture
            # pull so the press lands regardless of how the IK redistributes
            {"t": 6.8, "pos": [0.35, 0.0, 0.55], "quat": TWIST_QUAT,
             "q_des": [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 3.4]},
            {"t": 7.5, "pos": [0.35, 0.0, 0.55], "quat": TWIST_QUAT,
             "q_des": [0.0, -0.785, 0.0, -2.356, 0.0, 1.571, 3.4]},
            # unwind the wrist with the EE parked before moving on
            {"t": 8.1, "pos": [0.35, 0.0, 0.55], "quat": HOME_QUAT, "q_des": home_posture},
            {"t": 9.2, "pos": [0.88, -0.28, 0.42], "quat": HOME_QUAT},  # full-extension reach
            {"t": 9.9, "pos": [0.88, -0.28, 0.42], "quat": HOME_QUAT},
            {"t": 11.0, "pos": HOME_EE, "quat": HOME_QUAT},
            {"t": 11.6, "pos": HOME_EE, "quat": HOME_QUAT},
        ],
    }


def fig_sweep(mode="velocity", seed=0):
    """All five families, 168 rows, adversarial sweep (both control modes).

    The joint-limit rows run at class-K gain 6 here: the wrist press drives a
    joint straight into its bound, and the softer gain brakes early enough to
    keep the discrete-time slip an order of magnitude inside tolerance.
    """
    barriers = barrier_suite()
    for b in barriers:
        if b["kind"] == "joint_position_limit":
            b["alpha_gain"] = 6.0
            b["alpha2_gain"] = 6.0
    return {
        "v": 1,
        "name": "all_constraints_sweep",
        "robot": "panda",
        "mode": mode,
        "duration": 11.6,
        "dt": 1e-3,
        "seed": seed,
        "initial_q_jitter": 0.015,
        "barriers": barriers,
        "obstacles": {"static": [OBSTACLE], "moving": []},
        "reference": sweep_reference(),
        "gains": {"kp_pos": 8.0, "kp_rot": 8.0, "kp_joint": 6.0}
        if mode == "velocity"
        else {"kp_pos": 90.0, "kp_rot": 60.0, "kp_joint": 25.0},
    }


def fig_dynamic_line(mode="torque", seed=0):
    """Fast periodic line clipping a sphere obliquely, with finite actuation.

    Velocity mode runs through the saturated inner tracking loop on the full
    dynamics, matching how a velocity-level filter meets real torque limits:
    its boundary detour is visibly wider than the torque-level filter's.
    """
    return {
        "v": 1,
        "name": "dynamic_line",
        "robot": "panda",
        "mode": mode,
        "duration": 6.0,
        "dt": 1e-3,
        "seed": seed,
        "inner_loop": mode == "velocity",
        "inner_kv": 30.0,
        "barriers": [
            {"kind": "collision_pair"},
            {"kind": "joint_velocity_limit"},
        ],
        "obstacles": {"static": [{"center": [0.43, 0.32, 0.42], "radius": 0.13}], "moving": []},
        "reference": {
            "type": "line",
            "a": [0.45, -0.35, 0.50],
            "b": [0.45, 0.55, 0.50],
            "period": 1.2,
        },
        "gains": {"kp_pos": 9.0, "kp_rot": 9.0, "kp_joint": 6.0}
        if mode == "velocity"
        else {"kp_pos": 80.0, "kp_rot": 50.0, "kp_joint": 30.0},
    }


def line_deviation(ee_pos, a, b, skip: int = 1000):
    """RMS distance of an EE trace from the (infinite) reference line."""
    import numpy as np

    a = np.asarray(a, float)
    b = np.asarray(b, float)
    u = (b - a) / np.linalg.norm(b - a)
    rel = np.asarray(ee_pos) - a[None, :]
    closest = a[None, :] + (rel @ u)[:, None] * u[None, :]
    d = np.linalg.norm(ee_pos - closest, axis=1)
    return float(np.sqrt(np.mean(d[skip:] ** 2)))


def fig_boundary_push(objective="oscbf", seed=0):
    """Target pushed past an obstacle that blocks both the hand and forearm:
    the scenario that separates task-consistent from baseline objectives."""
    return {
        "v": 1,
        "name": f"boundary_push_{objective}",
        "robot": "panda",
        "mode": "velocity",
        "duration": 4.0,
        "dt": 1e-3,
        "seed": seed,
        "objective": objective,
        "barriers": [
            {"kind": "collision_pair"},
            {"kind": "joint_position_limit"},
        ],
        "obstacles": {"static": [{"center": [0.43, 0.16, 0.52], "radius": 0.13}], "moving": []},
        "reference": {
            "type": "waypoints",
            "points": [
                {"t": 0.0, "pos": HOME_EE},
                {"t": 1.2, "pos": [0.47, 0.20, 0.50]},  # inside the obstacle
                {"t": 4.0, "pos": [0.47, 0.20, 0.50]},
            ],
        },
        "gains": {"kp_pos": 8.0, "kp_rot": 8.0, "kp_joint": 6.0},
    }


def null_space_motion(model, q_trace, qd_trace, dt, stride: int = 10) -> float:
    """Integrated null-space joint speed over a run (subsampled)."""
    import numpy as np

    from .robot import kinematic_quantities

    total = 0.0
    for i in range(0, len(q_trace), stride):
        kq = kinematic_quantities(model, q_trace[i])
        total += float(np.linalg.norm(kq.N_kin @ qd_trace[i])) * dt * stride
    return total


def fig_clutter(n_bodies=20, mode="torque", seed=0, duration=2.0):
    """Cluttered tabletop: table halfspace plus randomly placed spheres."""
    return {
        "v": 1,
        "name": f"clutter_{n_bodies}",
        "robot": "panda",
        "mode": mode,
        "duration": duration,
        "dt": 1e-3,
        "seed": seed,
        "barriers": [
            {"kind": "collision_pair"},
            {"kind": "whole_body_box", "box_min": WB_BOX_MIN, "box_max": WB_BOX_MAX,
             "faces": ["z_min"]},  # the table halfspace
        ],
        "obstacles": {"static": [], "moving": []},
        "clutter": {"count": n_bodies, "box_min": (0.25, -0.55, 0.15),
                    "box_max": (0.75, 0.55, 0.85), "radius_range": (0.03, 0.10)},
        "reference": {
            "type": "waypoints",
            "points": [
                {"t": 0.0, "pos": HOME_EE},
                {"t": 1.0, "pos": [0.55, 0.25, 0.35]},
                {"t": 2.0, "pos": [0.45, -0.25, 0.60]},
            ],
        },
        "gains": {"kp_pos": 8.0, "kp_rot": 8.0, "kp_joint": 6.0}
        if mode == "velocity"
        else {"kp_pos": 120.0, "kp_rot": 60.0, "kp_joint": 40.0},
    }


def fig_teleop(seed=0):
    """Live-target scenario for the teleoperation bridge (no scripted ref)."""
    cfg = fig_sweep(mode="velocity", seed=seed)
    cfg["name"] = "teleop"
    cfg["reference"] = None
    cfg["duration"] = 3600.0
    return cfg


def bench_rows_configs(mode="velocity", duration=0.5):
    """Collision-scaling ladder: 1, 21, 168, 420, 1050 rows of the same
    family (robot spheres x environment bodies), as in the clutter scaling
    experiment, so frequency is monotone in row count by construction."""
    # benign reference + generous placement margins: rows stay inactive, so
    # the measured cost scales with the row count rather than with which rung
    # happens to graze a boundary
    base_ref = {
        "type": "waypoints",
        "points": [
            {"t": 0.0, "pos": HOME_EE},
            {"t": 0.5, "pos": [0.33, -0.05, 0.52]},
        ],
    }
    clutter_box = {"box_min": (0.25, -0.6, 0.15), "box_max": (0.8, 0.6, 0.9),
                   "radius_range": (0.03, 0.08), "margin": 0.15}

    def base(name, barriers, clutter=None, obstacles=None):
        return {
            "v": 1, "name": name, "robot": "panda", "mode": mode,
            "duration": duration, "dt": 1e-3, "seed": 0,
            "barriers": barriers,
            "obstacles": obstacles or {"static": [OBSTACLE], "moving": []},
            "clutter": clutter,
            "reference": base_ref,
            "gains": {"kp_pos": 6.0, "kp_rot": 6.0, "kp_joint": 5.0}
            if mode == "velocity"
            else {"kp_pos": 100.0, "kp_rot": 50.0, "kp_joint": 30.0},
        }

    collision = [{"kind": "collision_pair"}]
    return [
        base("rows_1", [{"kind": "collision_pair", "robot_spheres": [18]}]),
        base("rows_21", collision),
        base("rows_168", collision,
             clutter=dict(clutter_box, count=7),
             obstacles={"static": [OBSTACLE], "moving": []}),
        base("rows_420", collision,
             clutter=dict(clutter_box, count=20),
             obstacles={"static": [], "moving": []}),
        base("rows_1050", collision,
             clutter=dict(clutter_box, count=50),
             obstacles={"static": [], "moving": []}),
    ]


def table_speed_configs(mode="velocity", duration=0.5):
    """The six-experiment speed table: one config per constraint family plus
    the combined suite; row counts 1, 6, 14, 21, 126, 168."""
    names = [
        ("singularity", barrier_suite(True, False, False, False, False)),
        ("ee_containment", barrier_suite(False, True, False, False, False)),
        ("joint_limits", barrier_suite(False, False, True, False, False)),
        ("collision", barrier_suite(False, False, False, True, False)),
        ("wb_containment", barrier_suite(False, False, False, False, True)),
        ("all", barrier_suite()),
    ]
    ref = {
        "type": "waypoints",
        "points": [
            {"t": 0.0, "pos": HOME_EE},
            {"t": 0.5, "pos": [0.45, 0.15, 0.45]},
        ],
    }
    out = []
    for name, bars in names:
        out.append({
            "v": 1, "name": f"speed_{name}", "robot": "panda", "mode": mode,
            "duration": duration, "dt": 1e-3, "seed": 0, "barriers": bars,
            "obstacles": {"static": [OBSTACLE], "moving": []},
            "reference": ref,
            "gains": {"kp_pos": 6.0, "kp_rot": 6.0, "kp_joint": 5.0}
            if mode == "velocity"
            else {"kp_pos": 100.0, "kp_rot": 50.0, "kp_joint": 30.0},
        })
    return out


BUNDLED = {
    "fig1_all_constraints": lambda: fig_sweep("velocity"),
    "fig1_all_constraints_torque": lambda: fig_sweep("torque"),
    "fig5_dynamic": lambda: fig_dynamic_line("torque"),
    "fig3_boundary_push": lambda: fig_boundary_push("oscbf"),
    "clutter20": lambda: fig_clutter(20),
    "teleop": fig_teleop,
}


def export_bundled(directory):
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for name, builder in BUNDLED.items():
        (directory / f"{name}.json").write_text(json.dumps(builder(), indent=1))
