// Minimal forward kinematics over the robot-description JSON: enough to
// place every link origin and collision sphere for rendering. Mirrors the
// server's chain convention (link i's frame follows joint i's motion).

import type { RobotDescription, Vec3 } from "./types.js";

type Mat3 = number[][];

function rotRpy(rpy: number[]): Mat3 {
  const [r, p, y] = rpy;
  const cr = Math.cos(r), sr = Math.sin(r);
  const cp = Math.cos(p), sp = Math.sin(p);
  const cy = Math.cos(y), sy = Math.sin(y);
  return [
    [cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr],
    [sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr],
    [-sp, cp * sr, cp * cr],
  ];
}

function rotAxisAngle(axis: Vec3, angle: number): Mat3 {
  const [a1, a2, a3] = axis;
  const c = Math.cos(angle), s = Math.sin(angle), t = 1 - c;
  return [
    [t * a1 * a1 + c, t * a1 * a2 - s * a3, t * a1 * a3 + s * a2],
    [t * a1 * a2 + s * a3, t * a2 * a2 + c, t * a2 * a3 - s * a1],
    [t * a1 * a3 - s * a2, t * a2 * a3 + s * a1, t * a3 * a3 + c],
  ];
}

function matMul(a: Mat3, b: Mat3): Mat3 {
  const out: Mat3 = [[0, 0, 0], [0, 0, 0], [0, 0, 0]];
  for (let i = 0; i < 3; i++)
    for (let j = 0; j < 3; j++)
      out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
  return out;
}

function matVec(a: Mat3, v: Vec3): Vec3 {
  return [
    a[0][0] * v[0] + a[0][1] * v[1] + a[0][2] * v[2],
    a[1][0] * v[0] + a[1][1] * v[1] + a[1][2] * v[2],
    a[2][0] * v[0] + a[2][1] * v[1] + a[2][2] * v[2],
  ];
}

export interface FkResult {
  linkPos: Vec3[];
  eePos: Vec3;
  sphereCenters: Vec3[];
  sphereRadii: number[];
}

export function forwardKinematics(robot: RobotDescription, q: number[]): FkResult {
  let R: Mat3 = [[1, 0, 0], [0, 1, 0], [0, 0, 1]];
  let p: Vec3 = [0, 0, 0];
  const rots: Mat3[] = [];
  const linkPos: Vec3[] = [];
  robot.joints.forEach((joint, i) => {
    const xyz = (joint.origin?.xyz ?? [0, 0, 0]) as Vec3;
    const rpy = joint.origin?.rpy ?? [0, 0, 0];
    const step = matVec(R, xyz);
    p = [p[0] + step[0], p[1] + step[1], p[2] + step[2]];
    R = matMul(R, rotRpy(rpy));
    if (joint.type === "prismatic") {
      const slide = matVec(R, [
        joint.axis[0] * q[i], joint.axis[1] * q[i], joint.axis[2] * q[i],
      ]);
      p = [p[0] + slide[0], p[1] + slide[1], p[2] + slide[2]];
    } else {
      R = matMul(R, rotAxisAngle(joint.axis, q[i]));
    }
    rots.push(R);
    linkPos.push(p);
  });
  const eeXyz = (robot.ee_frame?.xyz ?? [0, 0, 0]) as Vec3;
  const eeOff = matVec(R, eeXyz);
  const eePos: Vec3 = [p[0] + eeOff[0], p[1] + eeOff[1], p[2] + eeOff[2]];

  const sphereCenters: Vec3[] = [];
  const sphereRadii: number[] = [];
  for (const s of robot.collision_spheres ?? []) {
    const off = matVec(rots[s.link], s.center as Vec3);
    const base = linkPos[s.link];
    sphereCenters.push([base[0] + off[0], base[1] + off[1], base[2] + off[2]]);
    sphereRadii.push(s.radius);
  }
  return { linkPos, eePos, sphereCenters, sphereRadii };
}
