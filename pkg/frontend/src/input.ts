/**
 * Input mapping: translates keyboard and pointer events into outgoing
 * messages, gated by the role granted in the server hello. The functions
 * here are pure — they inspect the model and return a message (or null),
 * so tests can drive them without a DOM.
 */

import { ClientModel, clampCell, draftToRect } from "./model.js";
import {
  ActionName,
  GoalEdit,
  HumanAction,
  humanAction,
  setWorkingRegion,
} from "./protocol.js";

export const KEY_ACTIONS: Record<string, ActionName> = {
  ArrowUp: "up",
  ArrowDown: "down",
  ArrowLeft: "left",
  ArrowRight: "right",
  " ": "fire",
};

/** Map a key press to a human action, or null if the key is unbound or
 * the client is not playing a tank. */
export function keyToAction(
  model: ClientModel,
  key: string,
): HumanAction | null {
  if (model.role !== "human" || model.agentId === null) {
    return null;
  }
  const action = KEY_ACTIONS[key];
  return action === undefined ? null : humanAction(model.agentId, action);
}

/** Begin a working-region drag at pixel coordinates. */
export function pointerDown(
  model: ClientModel,
  groupId: string,
  pxX: number,
  pxY: number,
): void {
  if (model.role !== "editor" || !model.grid) {
    return;
  }
  const [cx, cy] = clampCell(
    model.grid,
    pxX / model.grid.cell_px,
    pxY / model.grid.cell_px,
  );
  model.draft = { groupId, x0: cx, y0: cy, x1: cx, y1: cy };
}

/** Extend the current drag; no-op when no drag is active. */
export function pointerMove(model: ClientModel, pxX: number, pxY: number): void {
  if (!model.draft || !model.grid) {
    return;
  }
  const [cx, cy] = clampCell(
    model.grid,
    pxX / model.grid.cell_px,
    pxY / model.grid.cell_px,
  );
  model.draft.x1 = cx;
  model.draft.y1 = cy;
}

/** Finish the drag: returns the goal edit to send, or null if the drag
 * covered a single cell (accidental click) — those are dropped. */
export function pointerUp(model: ClientModel): GoalEdit | null {
  if (!model.draft) {
    return null;
  }
  const rect = draftToRect(model.draft);
  if (rect === null) {
    model.draft = null;
    return null;
  }
  model.editPending = true;
  return setWorkingRegion(model.draft.groupId, rect);
}
