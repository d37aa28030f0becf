// Canvas rendering: an orthographic 3D projection of the arm skeleton,
// collision spheres, obstacles and workspace boxes, plus the per-family
// min-h strip chart with the h = 0 line marked. Planar arms (all link
// origins in one plane) automatically get a flat top-down framing.

import type { ConfigFrame, Vec3 } from "./types.js";
import type { FkResult } from "./fk.js";
import { ViewModel } from "./viewmodel.js";

export class Camera {
  azimuth = -0.9;
  elevation = 0.42;
  scale = 380; // pixels per meter
  center: Vec3 = [0.3, 0.0, 0.45];

  project(p: Vec3, w: number, h: number): [number, number] {
    const ca = Math.cos(this.azimuth), sa = Math.sin(this.azimuth);
    const ce = Math.cos(this.elevation), se = Math.sin(this.elevation);
    const x = p[0] - this.center[0];
    const y = p[1] - this.center[1];
    const z = p[2] - this.center[2];
    const u = x * ca + y * sa;
    const v = -x * sa * se + y * ca * se + z * ce;
    return [w / 2 + u * this.scale, h / 2 - v * this.scale];
  }

  /** Convert a pixel delta to a world motion in the view plane. */
  dragToWorld(dx: number, dy: number): Vec3 {
    const ca = Math.cos(this.azimuth), sa = Math.sin(this.azimuth);
    const ce = Math.cos(this.elevation), se = Math.sin(this.elevation);
    const u = dx / this.scale;
    const v = -dy / this.scale;
    return [u * ca - v * sa * se, u * sa + v * ca * se, v * ce];
  }
}

const FAMILY_COLORS: Record<string, string> = {
  collision_pair: "#e5484d",
  whole_body_box: "#f76b15",
  op_position_box: "#ffc53d",
  joint_position_limit: "#46a758",
  joint_velocity_limit: "#12a594",
  singularity: "#3e63dd",
  self_collision_pair: "#8e4ec6",
  op_velocity_limit: "#0090ff",
  dynamic_obstacle: "#d6409f",
};

export function familyColor(kind: string): string {
  return FAMILY_COLORS[kind] ?? "#888";
}

export function drawScene(
  ctx: CanvasRenderingContext2D,
  cam: Camera,
  vm: ViewModel,
  fk: FkResult | null,
  config: ConfigFrame | null,
  targetPos: Vec3 | null,
): void {
  const { width: w, height: h } = ctx.canvas;
  ctx.fillStyle = "#101317";
  ctx.fillRect(0, 0, w, h);

  // ground grid
  ctx.strokeStyle = "#1d242c";
  ctx.lineWidth = 1;
  for (let gx = -10; gx <= 10; gx++) {
    line(ctx, cam, [gx * 0.1, -1, 0], [gx * 0.1, 1, 0], w, h);
    line(ctx, cam, [-1, gx * 0.1, 0], [1, gx * 0.1, 0], w, h);
  }

  if (config) {
    ctx.lineWidth = 1.2;
    for (const box of config.boxes) {
      ctx.strokeStyle = box.name === "op_position_box" ? "#ffc53d55" : "#f76b1555";
      drawBox(ctx, cam, box.min as Vec3, box.max as Vec3, w, h);
    }
    for (const obs of config.obstacles.static) {
      circle(ctx, cam, obs.center as Vec3, obs.radius, w, h, "#e5484d", "#e5484d33");
    }
  }

  if (fk) {
    // collision spheres, then the skeleton on top
    for (let i = 0; i < fk.sphereCenters.length; i++) {
      circle(ctx, cam, fk.sphereCenters[i], fk.sphereRadii[i], w, h, "#3e63dd", "#3e63dd22");
    }
    ctx.strokeStyle = "#eceef0";
    ctx.lineWidth = 3;
    ctx.beginPath();
    let prev = cam.project([0, 0, 0], w, h);
    ctx.moveTo(prev[0], prev[1]);
    for (const p of fk.linkPos) {
      const s = cam.project(p, w, h);
      ctx.lineTo(s[0], s[1]);
    }
    const ee = cam.project(fk.eePos, w, h);
    ctx.lineTo(ee[0], ee[1]);
    ctx.stroke();
    dot(ctx, ee, 5, "#eceef0");
  }

  if (targetPos) {
    const unsafe = vm.targetInUnsafeRegion();
    const s = cam.project(targetPos, w, h);
    ctx.strokeStyle = unsafe ? "#e5484d" : "#46a758";
    ctx.lineWidth = 2;
    ctx.beginPath();
    ctx.arc(s[0], s[1], 9, 0, 2 * Math.PI);
    ctx.stroke();
    ctx.beginPath();
    ctx.moveTo(s[0] - 13, s[1]);
    ctx.lineTo(s[0] + 13, s[1]);
    ctx.moveTo(s[0], s[1] - 13);
    ctx.lineTo(s[0], s[1] + 13);
    ctx.stroke();
  }
}

export function drawDashboard(ctx: CanvasRenderingContext2D, vm: ViewModel): void {
  const { width: w, height: h } = ctx.canvas;
  ctx.fillStyle = "#101317";
  ctx.fillRect(0, 0, w, h);
  const kinds = [...vm.series.keys()].sort();
  if (kinds.length === 0) return;
  const latest = vm.latest?.t ?? 0;
  const t0 = latest - vm.windowSeconds;
  const hMin = -0.05;
  const hMax = Math.max(0.4, vm.minOverWindow() + 0.2);
  const sx = (t: number) => ((t - t0) / vm.windowSeconds) * w;
  const sy = (v: number) => h - ((v - hMin) / (hMax - hMin)) * h;

  // h = 0: the boundary of safety
  ctx.strokeStyle = "#e5484d";
  ctx.lineWidth = 1.5;
  ctx.setLineDash([6, 4]);
  ctx.beginPath();
  ctx.moveTo(0, sy(0));
  ctx.lineTo(w, sy(0));
  ctx.stroke();
  ctx.setLineDash([]);

  for (const kind of kinds) {
    const s = vm.series.get(kind)!;
    ctx.strokeStyle = familyColor(kind);
    ctx.lineWidth = 1.6;
    ctx.beginPath();
    let started = false;
    for (const p of s.points) {
      const x = sx(p.t);
      const y = sy(Math.min(p.value, hMax));
      if (!started) {
        ctx.moveTo(x, y);
        started = true;
      } else ctx.lineTo(x, y);
    }
    ctx.stroke();
  }
}

function line(ctx: CanvasRenderingContext2D, cam: Camera, a: Vec3, b: Vec3, w: number, h: number) {
  const pa = cam.project(a, w, h);
  const pb = cam.project(b, w, h);
  ctx.beginPath();
  ctx.moveTo(pa[0], pa[1]);
  ctx.lineTo(pb[0], pb[1]);
  ctx.stroke();
}

function circle(
  ctx: CanvasRenderingContext2D, cam: Camera, c: Vec3, r: number,
  w: number, h: number, stroke: string, fill: string,
) {
  const s = cam.project(c, w, h);
  ctx.beginPath();
  ctx.arc(s[0], s[1], r * cam.scale, 0, 2 * Math.PI);
  ctx.fillStyle = fill;
  ctx.fill();
  ctx.strokeStyle = stroke;
  ctx.lineWidth = 1;
  ctx.stroke();
}

function dot(ctx: CanvasRenderingContext2D, s: [number, number], r: number, color: string) {
  ctx.beginPath();
  ctx.arc(s[0], s[1], r, 0, 2 * Math.PI);
  ctx.fillStyle = color;
  ctx.fill();
}

function drawBox(
  ctx: CanvasRenderingContext2D, cam: Camera, lo: Vec3, hi: Vec3, w: number, h: number,
) {
  const corners: Vec3[] = [];
  for (const x of [lo[0], hi[0]])
    for (const y of [lo[1], hi[1]])
      for (const z of [lo[2], hi[2]]) corners.push([x, y, z]);
  const edges = [
    [0, 1], [2, 3], [4, 5], [6, 7],
    [0, 2], [1, 3], [4, 6], [5, 7],
    [0, 4], [1, 5], [2, 6], [3, 7],
  ];
  for (const [a, b] of edges) line(ctx, cam, corners[a], corners[b], w, h);
}
