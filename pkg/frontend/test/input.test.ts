import { describe, expect, it } from "vitest";

import {
  keyToAction,
  pointerDown,
  pointerMove,
  pointerUp,
} from "../src/input.js";
import { applyMessage, initialModel } from "../src/model.js";
import { sampleHello } from "./model.test.js";

function modelWithRole(role: "spectator" | "human" | "editor") {
  return applyMessage(initialModel(), sampleHello(role));
}

describe("keyToAction", () => {
  it("maps arrows and space for the playing human", () => {
    const m = modelWithRole("human");
    expect(keyToAction(m, "ArrowLeft")).toEqual({
      type: "human_action",
      agent_id: "p0",
      action: "left",
    });
    expect(keyToAction(m, " ")?.action).toBe("fire");
    expect(keyToAction(m, "ArrowUp")?.action).toBe("up");
  });

  it("ignores unbound keys", () => {
    expect(keyToAction(modelWithRole("human"), "q")).toBeNull();
  });

  it("is inert for spectators and editors", () => {
    expect(keyToAction(modelWithRole("spectator"), "ArrowLeft")).toBeNull();
    expect(keyToAction(modelWithRole("editor"), " ")).toBeNull();
  });
});

describe("working-region drag", () => {
  it("tracks a drag in cell coordinates and emits the edit on release", () => {
    const m = modelWithRole("editor");
    // cell_px is 32; pixels (40, 40) -> cell (1, 1), (200, 100) -> (6, 3).
    pointerDown(m, "g0", 40, 40);
    pointerMove(m, 200, 100);
    const edit = pointerUp(m);
    expect(edit?.edit).toEqual({
      kind: "set_working_region",
      group_id: "g0",
      rect: [1, 1, 6, 3],
    });
    expect(m.editPending).toBe(true);
  });

  it("clamps drags that leave the canvas", () => {
    const m = modelWithRole("editor");
    pointerDown(m, "g0", 40, 40);
    pointerMove(m, 10_000, -50);
    expect(pointerUp(m)?.edit.rect).toEqual([1, 0, 8, 1]);
  });

  it("drops zero-area drags without sending anything", () => {
    const m = modelWithRole("editor");
    pointerDown(m, "g0", 40, 40);
    pointerMove(m, 41, 33);
    expect(pointerUp(m)).toBeNull();
    expect(m.draft).toBeNull();
    expect(m.editPending).toBe(false);
  });

  it("does not start drags for non-editors", () => {
    const m = modelWithRole("human");
    pointerDown(m, "g0", 40, 40);
    expect(m.draft).toBeNull();
    expect(pointerUp(m)).toBeNull();
  });
});
