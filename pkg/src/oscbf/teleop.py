"""WebSocket teleoperation bridge.

Three roles, no shared locks on the control path:

  - the sim loop runs the safety filter at the configured rate (1 kHz sim
    time, paced to wall clock by ``rt_factor``) and publishes a state frame
    into a latest-wins mailbox;
  - the broadcaster sends the newest frame to every client at ~60 Hz;
  - the command reader parses incoming target messages into a second
    latest-wins mailbox the sim consumes (stale targets are simply replaced;
    a silent or disconnected client leaves the last target in force).

Wire protocol v1 (JSON text messages over WebSocket; schemas in
docs/wire.md): state frames are ``{"v":1,"type":"state",...}``, commands are
``{"v":1,"type":"target","pos":[x,y,z],"quat":[w,x,y,z]?,"q_des":[...]?,
"t_client":float?}``. Malformed commands are dropped and answered with an
error frame.
"""

from __future__ import annotations

import asyncio
import json
import logging
import threading
import time

import numpy as np

from .controller import SafetyFilterController, TaskTarget, Gains
from .barriers import BarrierSpec
from .models import load_robot
from .robot import RobotState, forward_kinematics, quaternion_from_rotation, rotation_from_quaternion
from .sim import Obstacles, ScenarioConfig, integrate_step

log = logging.getLogger(__name__)

WIRE_VERSION = 1
BROADCAST_HZ = 60.0


class Mailbox:
    """Single-value latest-wins slot; writers never block readers."""

    def __init__(self, value=None):
        self._value = value
        self._lock = threading.Lock()

    def put(self, value):
        with self._lock:
            self._value = value

    def get(self):
        with self._lock:
            return self._value


def parse_command(raw: str | bytes) -> TaskTarget:
    """Validate one wire command into a TaskTarget; raises ValueError."""
    data = json.loads(raw)
    if not isinstance(data, dict) or data.get("type") != "target":
        raise ValueError("expected a {'type': 'target'} message")
    pos = np.asarray(data["pos"], dtype=float)
    if pos.shape != (3,) or not np.all(np.isfinite(pos)):
        raise ValueError("pos must be a finite 3-vector")
    rot = None
    if data.get("quat") is not None:
        quat = np.asarray(data["quat"], dtype=float)
        if quat.shape != (4,) or not np.all(np.isfinite(quat)):
            raise ValueError("quat must be a finite 4-vector [w,x,y,z]")
        norm = float(np.linalg.norm(quat))
        if abs(norm - 1.0) > 1e-3:
            raise ValueError("quat must be unit norm")
        rot = rotation_from_quaternion(quat)
    q_des = None
    if data.get("q_des") is not None:
        q_des = np.asarray(data["q_des"], dtype=float)
        if not np.all(np.isfinite(q_des)):
            raise ValueError("q_des must be finite")
    return TaskTarget(pos=pos, rot=rot, q_des=q_des)


class TeleopSim:
    """The 1 kHz control/physics loop behind the bridge."""

    def __init__(self, config: ScenarioConfig, rt_factor: float = 1.0):
        self.config = config
        self.model = load_robot(config.robot)
        self.rt_factor = rt_factor
        self.obstacles = Obstacles.from_dict(config.obstacles)
        if config.clutter:
            from .sim import generate_clutter

            rng = np.random.default_rng(config.seed)
            q_init = (np.asarray(config.initial_q, float) if config.initial_q is not None
                      else self.model.home_configuration())
            cc, cr = generate_clutter(self.model, q_init, config.clutter, rng)
            self.obstacles.static_centers = np.vstack([self.obstacles.static_centers, cc])
            self.obstacles.static_radii = np.concatenate([self.obstacles.static_radii, cr])
        specs = [BarrierSpec.from_dict(b) for b in config.barriers]
        self.controller = SafetyFilterController(
            self.model, specs, mode=config.mode,
            gains=Gains.from_dict(config.gains, self.model.n_q),
            scene_shape=self.obstacles.shape,
            objective=config.objective, slack_penalty=config.slack_penalty,
            prune_k=config.prune_k, hocbf=config.hocbf, gravity=config.gravity,
        )
        q0 = (np.asarray(config.initial_q, float) if config.initial_q is not None
              else self.model.home_configuration())
        fk0 = forward_kinematics(self.model, q0)
        self.state = RobotState(q0, np.zeros(self.model.n_q))
        self.home_target = TaskTarget(pos=fk0.ee_pos, rot=fk0.ee_rot, q_des=q0)
        self.command_box = Mailbox(self.home_target)
        self.frame_box = Mailbox(None)
        self.command_seq = Mailbox((0, 0.0))  # (seq, recv wall time) of the newest command
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.overruns = 0
        self.steps = 0

    def start(self):
        self._thread = threading.Thread(target=self._loop, name="teleop-sim", daemon=True)
        self._thread.start()

    def stop(self):
        self._stop.set()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def config_frame(self) -> dict:
        """One-time scene description sent to each client on connect."""
        boxes = []
        for spec in self.config.barriers:
            if spec.get("kind") in ("op_position_box", "whole_body_box"):
                boxes.append({
                    "name": spec["kind"],
                    "min": list(spec["box_min"]),
                    "max": list(spec["box_max"]),
                })
        import importlib.resources as res

        robot_desc = None
        try:
            from .models import BUNDLED

            if self.config.robot in BUNDLED:
                ref = res.files("oscbf").joinpath(f"assets/{self.config.robot}.json")
                robot_desc = json.loads(ref.read_text())
            else:
                with open(self.config.robot) as f:
                    robot_desc = json.load(f)
        except OSError:
            robot_desc = None
        return {
            "v": WIRE_VERSION,
            "type": "config",
            "robot": robot_desc,
            "obstacles": {
                "static": [
                    {"center": c.tolist(), "radius": float(r)}
                    for c, r in zip(self.obstacles.static_centers, self.obstacles.static_radii)
                ]
            },
            "boxes": boxes,
            "mode": self.config.mode,
        }

    def _frame(self, t, diag, applied_seq) -> dict:
        fk = forward_kinematics(self.model, self.state.q)
        quat = quaternion_from_rotation(fk.ee_rot)
        min_h_per_kind: dict = {}
        for kind, h in zip(diag.h_kinds, diag.h):
            cur = min_h_per_kind.get(kind)
            min_h_per_kind[kind] = float(h) if cur is None else min(cur, float(h))
        return {
            "v": WIRE_VERSION,
            "type": "state",
            "t": round(t, 6),
            "q": [round(v, 6) for v in self.state.q],
            "ee": {"pos": [round(v, 6) for v in fk.ee_pos],
                   "quat": [round(v, 8) for v in quat]},
            "min_h": {k: round(v, 6) for k, v in min_h_per_kind.items()},
            "slack_max": float(diag.slack_max),
            "mode": self.config.mode,
            "status": diag.status,
            "applied_seq": applied_seq,
        }

    def _loop(self):
        dt = self.config.dt
        period = dt * self.rt_factor
        decimate = max(1, int(round(1.0 / (dt * BROADCAST_HZ))))
        next_tick = time.perf_counter()
        t = 0.0
        while not self._stop.is_set():
            target = self.command_box.get()
            seq, _ = self.command_seq.get()
            scene = self.obstacles.snapshot(t)
            cmd = self.controller.step(self.state, target, scene)
            self.state = integrate_step(
                self.model, self.state, cmd.value, self.config.mode, dt, self.config.gravity
            )
            if self.steps % decimate == 0:  # frames leave at the broadcast rate
                self.frame_box.put(self._frame(t, cmd.diagnostics, seq))
            t += dt
            self.steps += 1
            next_tick += period
            now = time.perf_counter()
            if now < next_tick:
                time.sleep(next_tick - now)
            else:
                self.overruns += 1
                next_tick = now  # resynchronize instead of spiraling


async def _serve(sim: TeleopSim, host: str, port: int, ready: asyncio.Event | None = None,
                 stop: asyncio.Event | None = None):
    import websockets

    clients: set = set()

    async def handler(ws):
        clients.add(ws)
        try:
            await ws.send(json.dumps(sim.config_frame()))
            async for raw in ws:
                try:
                    target = parse_command(raw)
                except (ValueError, KeyError, json.JSONDecodeError, TypeError) as exc:
                    await ws.send(json.dumps(
                        {"v": WIRE_VERSION, "type": "error", "message": str(exc)}
                    ))
                    continue
                seq, _ = sim.command_seq.get()
                sim.command_box.put(target)
                sim.command_seq.put((seq + 1, time.perf_counter()))
        finally:
            clients.discard(ws)

    async def broadcaster():
        period = 1.0 / BROADCAST_HZ
        while True:
            frame = sim.frame_box.get()
            if frame is not None and clients:
                msg = json.dumps(frame)
                await asyncio.gather(
                    *(ws.send(msg) for ws in list(clients)), return_exceptions=True
                )
            await asyncio.sleep(period)

    async with websockets.serve(handler, host, port):
        log.info("teleop bridge listening on ws://%s:%d", host, port)
        task = asyncio.create_task(broadcaster())
        if ready is not None:
            ready.set()
        try:
            if stop is None:
                await asyncio.Future()
            else:
                await stop.wait()
        finally:
            task.cancel()


def serve_forever(config: ScenarioConfig, host="127.0.0.1", port=8765, rt_factor=1.0):
    """Blocking entry point used by the CLI."""
    sim = TeleopSim(config, rt_factor=rt_factor)
    sim.start()
    try:
        asyncio.run(_serve(sim, host, port))
    except KeyboardInterrupt:
        pass
    finally:
        sim.stop()


class BridgeServer:
    """Test-friendly bridge: runs the sim thread plus an asyncio server in a
    background thread; ``stop()`` tears both down."""

    def __init__(self, config: ScenarioConfig, host="127.0.0.1", port=8765, rt_factor=1.0):
        self.sim = TeleopSim(config, rt_factor=rt_factor)
        self.host = host
        self.port = port
        self._loop = None
        self._stop_event = None
        self._thread = None

    def start(self, timeout=10.0):
        self.sim.start()
        ready = threading.Event()

        def runner():
            async def main():
                self._loop = asyncio.get_running_loop()
                self._stop_event = asyncio.Event()
                aready = asyncio.Event()

                async def flag():
                    await aready.wait()
                    ready.set()

                task = asyncio.create_task(flag())
                await _serve(self.sim, self.host, self.port, aready, self._stop_event)
                task.cancel()

            asyncio.run(main())

        self._thread = threading.Thread(target=runner, name="teleop-server", daemon=True)
        self._thread.start()
        if not ready.wait(timeout):
            raise RuntimeError("teleop bridge did not start in time")

    def stop(self):
        if self._loop is not None and self._stop_event is not None:
            self._loop.call_soon_threadsafe(self._stop_event.set)
        if self._thread is not None:
            self._thread.join(timeout=5.0)
        self.sim.stop()
