// Target motion with a speed cap and a bounded command rate: dragging one
// meter at a 0.5 m/s cap takes at least two seconds of emitted waypoints,
// and no more than maxHz commands leave per second regardless of input rate.
// With no input the driver is silent (the server holds the last target).

import type { Vec3 } from "./types.js";

export class TargetDriver {
  current: Vec3;
  desired: Vec3;
  private lastEmit = -Infinity;
  private lastStep: number;
  private settled = true; // no input yet: emit nothing

  constructor(
    start: Vec3,
    public speedCap = 0.5, // m/s
    public maxHz = 60,
  ) {
    this.current = [...start] as Vec3;
    this.desired = [...start] as Vec3;
    this.lastStep = 0;
  }

  moveDesired(delta: Vec3): void {
    this.desired = [
      this.desired[0] + delta[0],
      this.desired[1] + delta[1],
      this.desired[2] + delta[2],
    ];
    this.settled = false;
  }

  setDesired(pos: Vec3): void {
    this.desired = [...pos] as Vec3;
    this.settled = false;
  }

  /** Advance the rate-limited target; returns a waypoint to emit or null. */
  tick(now: number): Vec3 | null {
    const dt = Math.max(0, now - this.lastStep);
    this.lastStep = now;
    if (this.settled) return null;
    const d: Vec3 = [
      this.desired[0] - this.current[0],
      this.desired[1] - this.current[1],
      this.desired[2] - this.current[2],
    ];
    const dist = Math.hypot(d[0], d[1], d[2]);
    if (dist > 1e-12) {
      const step = Math.min(dist, this.speedCap * dt);
      const s = step / dist;
      this.current = [
        this.current[0] + d[0] * s,
        this.current[1] + d[1] * s,
        this.current[2] + d[2] * s,
      ];
    }
    if (now - this.lastEmit < 1 / this.maxHz) return null;
    this.lastEmit = now;
    if (dist <= 1e-12) this.settled = true; // final waypoint, then silence
    return [...this.current] as Vec3;
  }
}
