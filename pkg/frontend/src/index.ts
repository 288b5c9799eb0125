/**
 * Browser entry point: connects to the session server, wires keyboard
 * and pointer input, and redraws the canvas on every update.
 *
 * Query parameters: host (default location host), port (default 8765),
 * role (spectator | human | editor), agent (e.g. p0), group (goal group
 * edited by drags, default g0).
 */

import { SessionClient, SocketLike } from "./client.js";
import { keyToAction, pointerDown, pointerMove, pointerUp } from "./input.js";
import { render, Surface } from "./renderer.js";
import { Role } from "./protocol.js";

function canvasSurface(ctx: CanvasRenderingContext2D): Surface {
  return {
    clear(width, height) {
      ctx.canvas.width = width;
      ctx.canvas.height = height;
      ctx.fillStyle = "rgb(0,0,0)";
      ctx.fillRect(0, 0, width, height);
    },
    fillRect(x, y, w, h, color) {
      ctx.fillStyle = color;
      ctx.fillRect(x, y, w, h);
    },
    strokeRect(x, y, w, h, color) {
      ctx.strokeStyle = color;
      ctx.lineWidth = 2;
      ctx.strokeRect(x, y, w, h);
    },
    fillText(text, x, y, color) {
      ctx.fillStyle = color;
      ctx.font = "12px monospace";
      ctx.fillText(text, x, y);
    },
  };
}

export function main(): void {
  const params = new URLSearchParams(window.location.search);
  const host = params.get("host") ?? window.location.hostname ?? "127.0.0.1";
  const port = params.get("port") ?? "8765";
  const role = (params.get("role") ?? "spectator") as Role;
  const agent = params.get("agent");
  const group = params.get("group") ?? "g0";

  const canvas = document.getElementById("game") as HTMLCanvasElement;
  const ctx = canvas.getContext("2d");
  if (!ctx) {
    throw new Error("canvas 2d context unavailable");
  }
  const surface = canvasSurface(ctx);

  const socket = new WebSocket(`ws://${host}:${port}/`) as unknown as SocketLike;
  const client = new SessionClient(socket, role, agent);
  client.onUpdate = (model) => render(model, surface);

  window.addEventListener("keydown", (ev) => {
    const action = keyToAction(client.model, ev.key);
    if (action) {
      ev.preventDefault();
      client.send(action);
    }
  });

  canvas.addEventListener("pointerdown", (ev) => {
    const rect = canvas.getBoundingClientRect();
    pointerDown(
      client.model,
      group,
      ev.clientX - rect.left,
      ev.clientY - rect.top,
    );
    render(client.model, surface);
  });
  canvas.addEventListener("pointermove", (ev) => {
    if (!client.model.draft) {
      return;
    }
    const rect = canvas.getBoundingClientRect();
    pointerMove(client.model, ev.clientX - rect.left, ev.clientY - rect.top);
    render(client.model, surface);
  });
  canvas.addEventListener("pointerup", () => {
    const edit = pointerUp(client.model);
    if (edit) {
      client.send(edit);
    }
    render(client.model, surface);
  });
}

if (typeof window !== "undefined" && typeof document !== "undefined") {
  window.addEventListener("DOMContentLoaded", main);
}
