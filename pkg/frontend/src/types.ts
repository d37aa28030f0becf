// Wire protocol v1 message shapes (see ../docs/wire.md).

export interface StateFrame {
  v: 1;
  type: "state";
  t: number;
  q: number[];
  ee: { pos: [number, number, number]; quat: [number, number, number, number] };
  min_h: Record<string, number>;
  slack_max: number;
  mode: string;
  status: string;
  applied_seq: number;
}

export interface ConfigFrame {
  v: 1;
  type: "config";
  robot: RobotDescription;
  obstacles: { static: { center: number[]; radius: number }[] };
  boxes: { name: string; min: number[]; max: number[] }[];
  mode: string;
}

export interface ErrorFrame {
  v: 1;
  type: "error";
  message: string;
}

export type ServerMessage = StateFrame | ConfigFrame | ErrorFrame;

export interface TargetCommand {
  v: 1;
  type: "target";
  pos: [number, number, number];
  quat?: [number, number, number, number];
  q_des?: number[];
  t_client?: number;
}

export interface RobotDescription {
  name: string;
  joints: {
    type: "revolute" | "prismatic";
    axis: [number, number, number];
    origin?: { xyz?: number[]; rpy?: number[] };
  }[];
  collision_spheres?: { link: number; center: number[]; radius: number }[];
  ee_frame?: { xyz?: number[]; rpy?: number[] };
}

export type Vec3 = [number, number, number];
export type Quat = [number, number, number, number]; // [w, x, y, z]
