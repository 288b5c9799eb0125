/**
 * Pure scene renderer: draws the latest state update onto an abstract
 * drawing surface. Same model in, same draw calls out — there is no
 * animation state, interpolation, or other hidden input.
 */

import { ClientModel } from "./model.js";
import { StateUpdate } from "./protocol.js";

/** Minimal drawing interface; a Canvas 2D context satisfies it via the
 * adapter in index.ts, and tests use a recording implementation. */
export interface Surface {
  clear(width: number, height: number): void;
  fillRect(x: number, y: number, w: number, h: number, color: string): void;
  strokeRect(x: number, y: number, w: number, h: number, color: string): void;
  fillText(text: string, x: number, y: number, color: string): void;
}

const TILE_COLORS: Record<string, string> = {
  ".": "rgb(0,0,0)",
  s: "rgb(170,90,40)",
  "#": "rgb(120,120,120)",
  "~": "rgb(40,90,200)",
  B: "rgb(230,230,60)",
};

export const TARGET_OVERLAY = "rgba(255,80,80,0.45)";
export const REGION_OUTLINE = "rgb(255,160,40)";
export const DRAFT_OUTLINE = "rgb(80,200,255)";

function rgb(palette: Record<string, number[]>, key: string, fallback: string): string {
  const c = palette[key];
  return c ? `rgb(${c[0]},${c[1]},${c[2]})` : fallback;
}

function tankColor(
  model: ClientModel,
  side: string,
  agentId: string | null,
): string {
  if (side === "enemy") {
    return rgb(model.palette, "enemy", "rgb(200,60,60)");
  }
  return rgb(model.palette, `player_${agentId}`, "rgb(240,200,40)");
}

export function render(model: ClientModel, surface: Surface): void {
  const grid = model.grid;
  if (!grid) {
    return;
  }
  const px = grid.cell_px;
  surface.clear(grid.width * px, grid.height * px);

  const state = model.latest;
  if (!state) {
    surface.fillText("waiting for first update", 4, 12, "rgb(200,200,200)");
    return;
  }

  drawTiles(state, px, surface);
  drawTargets(state, px, surface);
  drawTanks(model, state, px, surface);
  drawBullets(state, px, surface);
  drawRegions(state, px, surface);
  drawDraft(model, px, surface);
  drawHud(model, state, px, surface);
}

function drawTiles(state: StateUpdate, px: number, surface: Surface): void {
  state.grid.forEach((row, y) => {
    for (let x = 0; x < row.length; x++) {
      const color = TILE_COLORS[row[x]];
      if (color && row[x] !== ".") {
        surface.fillRect(x * px, y * px, px, px, color);
      }
    }
  });
}

function drawTargets(state: StateUpdate, px: number, surface: Surface): void {
  for (const targets of Object.values(state.resolved_targets)) {
    for (const target of targets) {
      const [x, y] = target.cell;
      surface.fillRect(x * px, y * px, px, px, TARGET_OVERLAY);
    }
  }
}

function drawTanks(
  model: ClientModel,
  state: StateUpdate,
  px: number,
  surface: Surface,
): void {
  const inset = Math.max(1, Math.floor(px / 8));
  for (const tank of state.tanks) {
    if (!tank.alive) {
      continue;
    }
    const [x, y] = tank.pos;
    surface.fillRect(
      x * px + inset,
      y * px + inset,
      px - 2 * inset,
      px - 2 * inset,
      tankColor(model, tank.side, tank.agent_id),
    );
  }
}

function drawBullets(state: StateUpdate, px: number, surface: Surface): void {
  const size = Math.max(2, Math.floor(px / 4));
  const off = Math.floor((px - size) / 2);
  for (const bullet of state.bullets) {
    const [x, y] = bullet.pos;
    surface.fillRect(x * px + off, y * px + off, size, size, "rgb(255,255,255)");
  }
}

function drawRegions(state: StateUpdate, px: number, surface: Surface): void {
  for (const targets of Object.values(state.resolved_targets)) {
    for (const target of targets) {
      const region = target.working_region;
      if (region) {
        const [x0, y0, x1, y1] = region;
        surface.strokeRect(
          x0 * px,
          y0 * px,
          (x1 - x0 + 1) * px,
          (y1 - y0 + 1) * px,
          REGION_OUTLINE,
        );
      }
    }
  }
}

function drawDraft(model: ClientModel, px: number, surface: Surface): void {
  if (!model.draft) {
    return;
  }
  const x0 = Math.min(model.draft.x0, model.draft.x1);
  const y0 = Math.min(model.draft.y0, model.draft.y1);
  const x1 = Math.max(model.draft.x0, model.draft.x1);
  const y1 = Math.max(model.draft.y0, model.draft.y1);
  surface.strokeRect(
    x0 * px,
    y0 * px,
    (x1 - x0 + 1) * px,
    (y1 - y0 + 1) * px,
    DRAFT_OUTLINE,
  );
}

function drawHud(
  model: ClientModel,
  state: StateUpdate,
  px: number,
  surface: Surface,
): void {
  const scores = Object.entries(state.scores)
    .map(([agent, score]) => `${agent}:${score}`)
    .join("  ");
  surface.fillText(
    `ep ${state.episode} tick ${state.tick}  ${scores}`,
    4,
    state.grid.length * px - 4,
    "rgb(220,220,220)",
  );
  if (state.status !== "running") {
    surface.fillText(
      `game over: ${state.status}`,
      4,
      Math.floor((state.grid.length * px) / 2),
      "rgb(255,80,80)",
    );
  }
  if (model.lastError) {
    surface.fillText(
      `error: ${model.lastError.code}`,
      4,
      14,
      "rgb(255,120,120)",
    );
  }
}
