// Cockpit state: the latest frame, a rolling min-h window per barrier
// family, the target marker, and connection status. Values pass through
// untouched (the dashboard must match the on-disk log bit for bit), and the
// view model never mutates sim state: the only outbound path is a
// TargetCommand built by the input layer.

import type { Quat, StateFrame, Vec3 } from "./types.js";

export interface SeriesPoint {
  t: number;
  value: number;
}

export class RollingSeries {
  points: SeriesPoint[] = [];
  constructor(public windowSeconds: number) {}

  push(t: number, value: number): void {
    this.points.push({ t, value });
    const cutoff = t - this.windowSeconds;
    let drop = 0;
    while (drop < this.points.length && this.points[drop].t < cutoff) drop++;
    if (drop > 0) this.points.splice(0, drop);
  }

  latest(): SeriesPoint | undefined {
    return this.points[this.points.length - 1];
  }

  min(): number {
    return this.points.reduce((m, p) => Math.min(m, p.value), Infinity);
  }
}

export type ConnectionStatus = "connecting" | "connected" | "disconnected" | "replay";

export class ViewModel {
  latest: StateFrame | null = null;
  series = new Map<string, RollingSeries>();
  targetPos: Vec3 | null = null;
  targetQuat: Quat | null = null;
  status: ConnectionStatus = "connecting";
  frameCount = 0;

  constructor(public windowSeconds = 10.0) {}

  ingest(frame: StateFrame): void {
    this.latest = frame;
    this.frameCount += 1;
    for (const [kind, value] of Object.entries(frame.min_h)) {
      let s = this.series.get(kind);
      if (!s) {
        s = new RollingSeries(this.windowSeconds);
        this.series.set(kind, s);
      }
      s.push(frame.t, value); // pass-through: no smoothing, no rounding
    }
    if (this.targetPos === null) {
      this.targetPos = [...frame.ee.pos];
      this.targetQuat = [...frame.ee.quat];
    }
  }

  minOverWindow(): number {
    let m = Infinity;
    for (const s of this.series.values()) m = Math.min(m, s.min());
    return m;
  }

  /** True when the commanded target currently violates some streamed h. */
  targetInUnsafeRegion(): boolean {
    if (!this.latest) return false;
    return Math.min(...Object.values(this.latest.min_h)) < 0;
  }
}
