/**
 * Wire protocol types and codec, mirroring the server exactly.
 *
 * Messages are JSON objects with a "type" field; the server stamps a
 * per-client monotone "seq" on everything it sends. Encoding is
 * canonical: keys sorted, no whitespace.
 */

export const PROTO_VERSION = 1;

export const MESSAGE_TYPES = [
  "join",
  "server_hello",
  "state_update",
  "human_action",
  "goal_edit",
  "error",
  "ack",
] as const;

export type MessageType = (typeof MESSAGE_TYPES)[number];

export const ACTIONS = ["noop", "up", "down", "left", "right", "fire"] as const;
export type ActionName = (typeof ACTIONS)[number];

export type Role = "spectator" | "human" | "editor";

export interface GridGeometry {
  width: number;
  height: number;
  cell_px: number;
}

export interface ServerHello {
  type: "server_hello";
  seq?: number;
  proto_version: number;
  grid: GridGeometry;
  palette: Record<string, number[]>;
  role: Role;
  agent_id: string | null;
}

export interface TankView {
  id: number;
  side: "player" | "enemy";
  agent_id: string | null;
  pos: [number, number];
  facing: number;
  alive: boolean;
}

export interface BulletView {
  pos: [number, number];
  dir: number;
  owner_side: "player" | "enemy";
}

export interface ResolvedTargetView {
  cell: [number, number];
  priority: number;
  bonus_reward: number;
  spec_id: string;
  entity_id: number | null;
  working_region: [number, number, number, number] | null;
}

export interface StateUpdate {
  type: "state_update";
  seq?: number;
  tick: number;
  episode: number;
  status: string;
  grid: string[];
  base: [number, number];
  tanks: TankView[];
  bullets: BulletView[];
  scores: Record<string, number>;
  resolved_targets: Record<string, ResolvedTargetView[]>;
}

export interface HumanAction {
  type: "human_action";
  agent_id: string;
  action: ActionName;
}

export interface GoalEdit {
  type: "goal_edit";
  edit: {
    kind: "set_working_region" | "set_targets" | "set_control_mode";
    group_id: string;
    rect?: [number, number, number, number];
    specs?: unknown[];
    mode?: string;
  };
}

export interface ErrorMessage {
  type: "error";
  seq?: number;
  code: string;
  text: string;
}

export interface AckMessage {
  type: "ack";
  seq?: number;
  ack: Record<string, unknown>;
}

export interface JoinMessage {
  type: "join";
  role: Role;
  agent_id: string | null;
}

export type Message =
  | ServerHello
  | StateUpdate
  | HumanAction
  | GoalEdit
  | ErrorMessage
  | AckMessage
  | JoinMessage;

export class ProtocolError extends Error {}

/** Canonical JSON: keys sorted recursively, compact separators. */
function canonical(value: unknown): string {
  if (Array.isArray(value)) {
    return "[" + value.map(canonical).join(",") + "]";
  }
  if (value !== null && typeof value === "object") {
    const entries = Object.entries(value as Record<string, unknown>)
      .sort(([a], [b]) => (a < b ? -1 : a > b ? 1 : 0))
      .map(([k, v]) => JSON.stringify(k) + ":" + canonical(v));
    return "{" + entries.join(",") + "}";
  }
  return JSON.stringify(value);
}

export function encode(msg: Message): string {
  if (!MESSAGE_TYPES.includes(msg.type)) {
    throw new ProtocolError(`unknown message type ${String(msg.type)}`);
  }
  return canonical(msg);
}

export function decode(text: string): Message {
  let parsed: unknown;
  try {
    parsed = JSON.parse(text);
  } catch (e) {
    throw new ProtocolError(`not valid JSON: ${String(e)}`);
  }
  if (
    parsed === null ||
    typeof parsed !== "object" ||
    Array.isArray(parsed) ||
    !MESSAGE_TYPES.includes((parsed as { type?: MessageType }).type!)
  ) {
    throw new ProtocolError(`unknown message type in ${text.slice(0, 80)}`);
  }
  return parsed as Message;
}

export function humanAction(agentId: string, action: ActionName): HumanAction {
  return { type: "human_action", agent_id: agentId, action };
}

export function setWorkingRegion(
  groupId: string,
  rect: [number, number, number, number],
): GoalEdit {
  return {
    type: "goal_edit",
    edit: { kind: "set_working_region", group_id: groupId, rect },
  };
}

export function join(role: Role, agentId: string | null): JoinMessage {
  return { type: "join", role, agent_id: agentId };
}
