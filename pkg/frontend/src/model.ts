/**
 * Client-side session model: the latest snapshot of everything the UI
 * needs, updated by applying incoming messages. Rendering reads only
 * this model, and only its latest state update — the client never
 * simulates or extrapolates between updates.
 */

import {
  AckMessage,
  ErrorMessage,
  GridGeometry,
  Message,
  Role,
  ServerHello,
  StateUpdate,
} from "./protocol.js";

export type ConnectionStatus = "connecting" | "connected" | "closed";

export interface DraftRect {
  groupId: string;
  x0: number;
  y0: number;
  x1: number;
  y1: number;
}

export interface ClientModel {
  status: ConnectionStatus;
  role: Role | null;
  agentId: string | null;
  grid: GridGeometry | null;
  palette: Record<string, number[]>;
  latest: StateUpdate | null;
  lastError: ErrorMessage | null;
  lastAck: AckMessage | null;
  /** In-progress working-region drag, in cell coordinates. */
  draft: DraftRect | null;
  /** True while an issued goal edit awaits its ack or error. */
  editPending: boolean;
  lastSeq: number;
}

export function initialModel(): ClientModel {
  return {
    status: "connecting",
    role: null,
    agentId: null,
    grid: null,
    palette: {},
    latest: null,
    lastError: null,
    lastAck: null,
    draft: null,
    editPending: false,
    lastSeq: 0,
  };
}

/** Apply one server message; mutates and returns the model. */
export function applyMessage(model: ClientModel, msg: Message): ClientModel {
  const seq = (msg as { seq?: number }).seq;
  if (seq !== undefined) {
    model.lastSeq = seq;
  }
  switch (msg.type) {
    case "server_hello": {
      const hello = msg as ServerHello;
      model.status = "connected";
      model.role = hello.role;
      model.agentId = hello.agent_id;
      model.grid = hello.grid;
      model.palette = hello.palette;
      break;
    }
    case "state_update":
      model.latest = msg as StateUpdate;
      break;
    case "error":
      model.lastError = msg as ErrorMessage;
      model.editPending = false; // draft is kept so the user can retry
      break;
    case "ack":
      model.lastAck = msg as AckMessage;
      model.editPending = false;
      model.draft = null;
      break;
    default:
      break; // client-to-server types are never applied
  }
  return model;
}

/** Clamp a cell coordinate into the grid. */
export function clampCell(
  grid: GridGeometry,
  x: number,
  y: number,
): [number, number] {
  const cx = Math.min(Math.max(Math.floor(x), 0), grid.width - 1);
  const cy = Math.min(Math.max(Math.floor(y), 0), grid.height - 1);
  return [cx, cy];
}

/** Normalized [x0, y0, x1, y1] of a draft, or null for zero-area drags. */
export function draftToRect(
  draft: DraftRect,
): [number, number, number, number] | null {
  const x0 = Math.min(draft.x0, draft.x1);
  const x1 = Math.max(draft.x0, draft.x1);
  const y0 = Math.min(draft.y0, draft.y1);
  const y1 = Math.max(draft.y0, draft.y1);
  if (x0 === x1 && y0 === y1) {
    return null;
  }
  return [x0, y0, x1, y1];
}
