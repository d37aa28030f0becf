// Cockpit wiring: WebSocket client, input handling, replay mode, render loop.
//
// Live mode connects to the bridge (default ws://127.0.0.1:8765), receives
// the one-time config frame (robot + scene), then streams state frames into
// the view model. Dragging the green target marker (or arrow keys / PgUp /
// PgDn; [ and ] twist the tool) moves the commanded pose through the
// rate-limited driver; the safety filter on the server does the rest.
// Replay mode loads a run's log.csv and plays it back without any server.

import { parseLogCsv } from "./csv.js";
import { forwardKinematics, FkResult } from "./fk.js";
import { Camera, drawDashboard, drawScene, familyColor } from "./render.js";
import { TargetDriver } from "./ratelimit.js";
import { twistQuat } from "./quat.js";
import type { ConfigFrame, Quat, RobotDescription, ServerMessage, StateFrame, Vec3 } from "./types.js";
import { ViewModel } from "./viewmodel.js";

const sceneCanvas = document.getElementById("scene") as HTMLCanvasElement;
const dashCanvas = document.getElementById("dashboard") as HTMLCanvasElement;
const statusEl = document.getElementById("status") as HTMLElement;
const legendEl = document.getElementById("legend") as HTMLElement;
const banner = document.getElementById("banner") as HTMLElement;
const urlInput = document.getElementById("url") as HTMLInputElement;
const speedInput = document.getElementById("speed") as HTMLInputElement;
const fileInput = document.getElementById("logfile") as HTMLInputElement;

const vm = new ViewModel(10.0);
const cam = new Camera();
let robot: RobotDescription | null = null;
let config: ConfigFrame | null = null;
let fk: FkResult | null = null;
let driver: TargetDriver | null = null;
let targetQuat: Quat | null = null;
let ws: WebSocket | null = null;
let replay: { frames: StateFrame[]; index: number } | null = null;

function setStatus(text: string, bad = false) {
  statusEl.textContent = text;
  statusEl.style.color = bad ? "#e5484d" : "#46a758";
  banner.style.display = bad ? "block" : "none";
  banner.textContent = bad ? text : "";
}

function handleMessage(msg: ServerMessage) {
  if (msg.type === "config") {
    config = msg;
    robot = msg.robot;
    if (msg.mode === "replay") return;
  } else if (msg.type === "state") {
    vm.ingest(msg);
    if (robot) fk = forwardKinematics(robot, msg.q);
    if (!driver) {
      driver = new TargetDriver(msg.ee.pos, Number(speedInput.value) || 0.5);
      targetQuat = [...msg.ee.quat];
    }
  } else if (msg.type === "error") {
    console.warn("bridge rejected a command:", msg.message);
  }
}

function connect() {
  replay = null;
  vm.status = "connecting";
  setStatus("connecting…");
  ws = new WebSocket(urlInput.value);
  ws.onopen = () => {
    vm.status = "connected";
    setStatus("connected");
  };
  ws.onmessage = (ev) => {
    try {
      handleMessage(JSON.parse(ev.data as string));
    } catch (err) {
      console.warn("bad frame", err);
    }
  };
  ws.onclose = () => {
    vm.status = "disconnected";
    setStatus("disconnected from bridge", true);
    ws = null;
  };
  ws.onerror = () => setStatus("socket error", true);
}

function sendTarget(pos: Vec3) {
  if (!ws || ws.readyState !== WebSocket.OPEN) return;
  const cmd: Record<string, unknown> = {
    v: 1, type: "target", pos, t_client: Date.now() / 1000,
  };
  if (targetQuat) cmd.quat = targetQuat;
  ws.send(JSON.stringify(cmd));
}

// --- input ---------------------------------------------------------------
let dragging = false;
sceneCanvas.addEventListener("pointerdown", (ev) => {
  if (!driver) return;
  dragging = true;
  sceneCanvas.setPointerCapture(ev.pointerId);
});
sceneCanvas.addEventListener("pointermove", (ev) => {
  if (!driver) return;
  if (dragging && ev.buttons & 1) {
    const d = cam.dragToWorld(ev.movementX, ev.movementY);
    driver.moveDesired(d);
  } else if (ev.buttons & 2) {
    cam.azimuth += ev.movementX * 0.008;
    cam.elevation = Math.max(-1.4, Math.min(1.4, cam.elevation + ev.movementY * 0.008));
  }
});
sceneCanvas.addEventListener("pointerup", () => (dragging = false));
sceneCanvas.addEventListener("contextmenu", (ev) => ev.preventDefault());
sceneCanvas.addEventListener("wheel", (ev) => {
  cam.scale = Math.max(80, Math.min(1500, cam.scale * (ev.deltaY < 0 ? 1.1 : 0.9)));
  ev.preventDefault();
});

const KEY_MOVES: Record<string, Vec3> = {
  ArrowUp: [0.02, 0, 0],
  ArrowDown: [-0.02, 0, 0],
  ArrowLeft: [0, 0.02, 0],
  ArrowRight: [0, -0.02, 0],
  PageUp: [0, 0, 0.02],
  PageDown: [0, 0, -0.02],
};
window.addEventListener("keydown", (ev) => {
  if (!driver) return;
  const move = KEY_MOVES[ev.key];
  if (move) {
    driver.moveDesired(move);
    ev.preventDefault();
  } else if (ev.key === "[" || ev.key === "]") {
    // orientation twist about world z as a unit-quaternion increment
    const angle = ev.key === "[" ? 0.1 : -0.1;
    if (targetQuat) targetQuat = twistQuat(targetQuat, [0, 0, 1], angle);
    ev.preventDefault();
  }
});
speedInput.addEventListener("change", () => {
  if (driver) driver.speedCap = Number(speedInput.value) || 0.5;
});

// --- replay --------------------------------------------------------------
fileInput.addEventListener("change", async () => {
  const file = fileInput.files?.[0];
  if (!file) return;
  if (ws) ws.close();
  const log = parseLogCsv(await file.text());
  replay = { frames: log.frames, index: 0 };
  vm.status = "replay";
  vm.series.clear();
  driver = null;
  setStatus(`replaying ${file.name} (${log.frames.length} steps)`);
});

// --- main loop -----------------------------------------------------------
let lastReplayAdvance = 0;
function frameLoop(nowMs: number) {
  const now = nowMs / 1000;
  if (replay) {
    // play back at roughly real time, decimated like the live stream
    if (now - lastReplayAdvance > 1 / 60) {
      lastReplayAdvance = now;
      const stride = Math.max(1, Math.round(replay.frames.length / (60 * replay.frames[replay.frames.length - 1].t + 1)));
      for (let k = 0; k < stride && replay.index < replay.frames.length; k++) {
        handleMessage(replay.frames[replay.index]);
        replay.index += 1;
      }
      if (replay.index >= replay.frames.length) replay.index = 0; // loop
    }
  } else if (driver) {
    const wp = driver.tick(now);
    if (wp) sendTarget(wp);
  }
  const targetPos = driver ? driver.current : vm.latest ? vm.latest.ee.pos : null;
  drawScene(sceneCanvas.getContext("2d")!, cam, vm, fk, config, targetPos as Vec3 | null);
  drawDashboard(dashCanvas.getContext("2d")!, vm);
  legend();
  requestAnimationFrame(frameLoop);
}

function legend() {
  if (!vm.latest) return;
  const rows = Object.entries(vm.latest.min_h)
    .sort()
    .map(([kind, v]) =>
      `<span style="color:${familyColor(kind)}">&#9632;</span> ${kind}: ${v.toFixed(4)}`)
    .join("<br>");
  legendEl.innerHTML = rows +
    `<br><br>status: ${vm.latest.status}<br>slack: ${vm.latest.slack_max.toExponential(1)}` +
    `<br>t = ${vm.latest.t.toFixed(2)} s`;
}

(document.getElementById("connect") as HTMLButtonElement).addEventListener("click", connect);
connect();
requestAnimationFrame(frameLoop);
