// Replay parser for the simulator's log.csv: reconstructs state frames so
// the cockpit renders runs without a live bridge. Per-row h columns are
// reduced to per-family minima exactly as the bridge does (values pass
// through unmodified, so the dashboard matches the log bit for bit).

import type { StateFrame } from "./types.js";

export interface ReplayLog {
  frames: StateFrame[];
  q_columns: number;
}

function familyOf(rowId: string): string {
  const bracket = rowId.indexOf("[");
  return bracket >= 0 ? rowId.slice(0, bracket) : rowId;
}

export function parseLogCsv(text: string): ReplayLog {
  const lines = text.trim().split(/\r?\n/);
  if (lines.length < 2) throw new Error("log.csv has no data rows");
  const header = lines[0].split(",");
  const qCols: number[] = [];
  const hCols: { index: number; family: string }[] = [];
  const col = (name: string) => header.indexOf(name);
  header.forEach((name, i) => {
    if (/^q\d+$/.test(name)) qCols.push(i);
    if (name.startsWith("h:")) hCols.push({ index: i, family: familyOf(name.slice(2)) });
  });
  const ee = ["ee_x", "ee_y", "ee_z"].map(col);
  const quat = ["ee_qw", "ee_qx", "ee_qy", "ee_qz"].map(col);
  const tCol = col("t");
  const slackCol = col("slack_max");
  const statusCol = col("status");
  if (tCol < 0 || ee.some((i) => i < 0)) throw new Error("not a run log: missing columns");

  const frames: StateFrame[] = [];
  for (let li = 1; li < lines.length; li++) {
    const parts = lines[li].split(",");
    const minH: Record<string, number> = {};
    for (const { index, family } of hCols) {
      const v = Number(parts[index]);
      if (!(family in minH) || v < minH[family]) minH[family] = v;
    }
    frames.push({
      v: 1,
      type: "state",
      t: Number(parts[tCol]),
      q: qCols.map((i) => Number(parts[i])),
      ee: {
        pos: [Number(parts[ee[0]]), Number(parts[ee[1]]), Number(parts[ee[2]])],
        quat: [
          Number(parts[quat[0]]), Number(parts[quat[1]]),
          Number(parts[quat[2]]), Number(parts[quat[3]]),
        ],
      },
      min_h: minH,
      slack_max: slackCol >= 0 ? Number(parts[slackCol]) : 0,
      mode: "replay",
      status: statusCol >= 0 ? parts[statusCol] : "",
      applied_seq: 0,
    });
  }
  return { frames, q_columns: qCols.length };
}
