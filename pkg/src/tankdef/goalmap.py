"""Goal maps: declarative per-group target specifications.

A goal map assigns each policy group an ordered list of target specs.
Specs resolve against the live state into concrete cells, which are
rendered as white squares on a black mask image (the network's second
input stream) and drive bonus-reward shaping during training.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .engine import Cell, GameState, TileKind
from .observation import ObsConfig, area_resize


class GoalMapError(Exception):
    pass


class UnknownGroup(GoalMapError):
    pass


class MalformedRect(GoalMapError):
    pass


@dataclass(frozen=True)
class Rect:
    """Inclusive cell rectangle [c0..c1] x [r0..r1]."""

    c0: int
    r0: int
    c1: int
    r1: int

    def __post_init__(self) -> None:
        if self.c1 < self.c0 or self.r1 < self.r0:
            raise MalformedRect(f"empty rectangle {self}")

    def contains(self, cell: Cell) -> bool:
        c, r = cell
        return self.c0 <= c <= self.c1 and self.r0 <= r <= self.r1

    def to_list(self) -> List[int]:
        return [self.c0, self.r0, self.c1, self.r1]

    @classmethod
    def from_list(cls, v) -> "Rect":
        try:
            if len(v) != 4:
                raise MalformedRect(f"rect needs 4 ints, got {v!r}")
            return cls(*(int(x) for x in v))
        except (TypeError, ValueError) as e:
            raise MalformedRect(f"rect needs 4 ints, got {v!r}") from e


@dataclass(frozen=True)
class TargetSelector:
    """One of: all_enemies_in_region (needs rect), closest_enemy_to_base,
    fixed_location (needs cell)."""

    kind: str
    rect: Optional[Rect] = None
    cell: Optional[Cell] = None

    KINDS = ("all_enemies_in_region", "closest_enemy_to_base", "fixed_location")

    def __post_init__(self) -> None:
        if self.kind not in self.KINDS:
            raise GoalMapError(f"unknown selector kind {self.kind!r}")
        if self.kind == "all_enemies_in_region" and self.rect is None:
            raise GoalMapError("all_enemies_in_region needs a rect")
        if self.kind == "fixed_location" and self.cell is None:
            raise GoalMapError("fixed_location needs a cell")


@dataclass
class TargetSpec:
    selector: TargetSelector
    priority: int
    bonus_reward: float = 2.0
    working_region: Optional[Rect] = None
    spec_id: str = ""

    def __post_init__(self) -> None:
        if self.bonus_reward < 0:
            raise GoalMapError("bonus_reward must be >= 0")


@dataclass
class ResolvedTarget:
    cell: Cell
    priority: int
    bonus_reward: float
    spec_id: str
    entity_id: Optional[int] = None  # set when the target is an enemy tank
    working_region: Optional[Rect] = None

    def to_dict(self) -> dict:
        return {
            "cell": list(self.cell),
            "priority": self.priority,
            "bonus_reward": self.bonus_reward,
            "spec_id": self.spec_id,
            "entity_id": self.entity_id,
            "working_region": self.working_region.to_list()
            if self.working_region
            else None,
        }


@dataclass
class TargetMeta:
    resolved: List[ResolvedTarget]
    resolved_at_tick: int


@dataclass
class GoalMap:
    entries: Dict[str, List[TargetSpec]] = field(default_factory=dict)

    def specs_for(self, group_id: str) -> List[TargetSpec]:
        if group_id not in self.entries:
            raise UnknownGroup(group_id)
        return self.entries[group_id]

    def validate(self) -> None:
        for gid, specs in self.entries.items():
            prios = [s.priority for s in specs]
            if len(prios) != len(set(prios)):
                raise GoalMapError(f"duplicate priorities in group {gid!r}")


def resolve_targets(goal_map: GoalMap, state: GameState,
                    group_id: str) -> TargetMeta:
    """Evaluate every spec of a group against the live state.

    all_enemies_in_region: every alive enemy inside the rect.
    closest_enemy_to_base: single alive enemy with minimal Manhattan
    distance to the base cell, ties broken by lowest entity id.
    fixed_location: the configured cell. Result sorted by priority.
    """
    resolved: List[ResolvedTarget] = []
    for spec in goal_map.specs_for(group_id):
        sel = spec.selector
        if sel.kind == "all_enemies_in_region":
            for enemy in state.alive_enemies():
                if sel.rect.contains(enemy.pos):
                    resolved.append(_resolved(spec, enemy.pos, enemy.id))
        elif sel.kind == "closest_enemy_to_base":
            enemies = state.alive_enemies()
            if enemies:
                bc, br = state.base
                best = min(
                    enemies,
                    key=lambda e: (abs(e.pos[0] - bc) + abs(e.pos[1] - br), e.id),
                )
                resolved.append(_resolved(spec, best.pos, best.id))
        else:  # fixed_location
            resolved.append(_resolved(spec, sel.cell, None))
    resolved.sort(key=lambda t: (t.priority, t.cell))
    return TargetMeta(resolved=resolved, resolved_at_tick=state.tick)


def _resolved(spec: TargetSpec, cell: Cell,
              entity_id: Optional[int]) -> ResolvedTarget:
    return ResolvedTarget(
        cell=tuple(cell),
        priority=spec.priority,
        bonus_reward=spec.bonus_reward,
        spec_id=spec.spec_id,
        entity_id=entity_id,
        working_region=spec.working_region,
    )


def render_mask_native(meta: TargetMeta, grid_hw: Tuple[int, int],
                       cell_px: int) -> np.ndarray:
    """Black native-resolution image with a white cell_px square per
    resolved target cell; overlaps merge (max)."""
    h, w = grid_hw
    mask = np.zeros((h * cell_px, w * cell_px), dtype=np.float32)
    for tgt in meta.resolved:
        c, r = tgt.cell
        mask[r * cell_px:(r + 1) * cell_px, c * cell_px:(c + 1) * cell_px] = 255.0
    return mask


def render_mask(meta: TargetMeta, cfg: ObsConfig, cell_px: int) -> np.ndarray:
    """Native mask rescaled to net_size with the same area-average
    downscale as observations; values stay in [0, 255]."""
    h = cfg.native_size[0] // cell_px
    w = cfg.native_size[1] // cell_px
    native = render_mask_native(meta, (h, w), cell_px)
    return area_resize(native, cfg.net_size).astype(np.float32)


def goal_bonus(
    events: List[dict],
    metas: Dict[str, TargetMeta],
    group_of_agent: Dict[str, str],
) -> Dict[str, float]:
    """Bonus rewards for kills of designated targets.

    A kill earns the spec's bonus when the destroyed enemy was resolved
    as a target for the killer's group (matched by entity id, falling
    back to the resolved cell) and, if the spec has a working region,
    the kill happened inside it. Bonuses shape training rewards only;
    evaluation reports environment reward.
    """
    bonus: Dict[str, float] = {}
    for ev in events:
        if ev.get("kind") != "enemy_destroyed" or ev.get("by") is None:
            continue
        agent = ev["by"]
        group = group_of_agent.get(agent)
        if group is None or group not in metas:
            continue
        kill_cell = tuple(ev["cell"])
        for tgt in metas[group].resolved:
            matched = (
                tgt.entity_id is not None and tgt.entity_id == ev.get("enemy_id")
            ) or (tgt.entity_id is None and tgt.cell == kill_cell)
            if not matched:
                continue
            if tgt.working_region and not tgt.working_region.contains(kill_cell):
                continue
            bonus[agent] = bonus.get(agent, 0.0) + tgt.bonus_reward
            break
    return bonus


# -- config (de)serialization --------------------------------------------


def selector_to_dict(sel: TargetSelector) -> dict:
    d: dict = {"kind": sel.kind}
    if sel.rect:
        d["rect"] = sel.rect.to_list()
    if sel.cell:
        d["cell"] = list(sel.cell)
    return d


def selector_from_dict(d: dict) -> TargetSelector:
    return TargetSelector(
        kind=d["kind"],
        rect=Rect.from_list(d["rect"]) if d.get("rect") else None,
        cell=tuple(d["cell"]) if d.get("cell") else None,
    )


def spec_to_dict(spec: TargetSpec) -> dict:
    return {
        "selector": selector_to_dict(spec.selector),
        "priority": spec.priority,
        "bonus": spec.bonus_reward,
        "working_region": spec.working_region.to_list()
        if spec.working_region
        else None,
        "id": spec.spec_id,
    }


def spec_from_dict(d: dict, default_id: str = "") -> TargetSpec:
    return TargetSpec(
        selector=selector_from_dict(d["selector"]),
        priority=int(d["priority"]),
        bonus_reward=float(d.get("bonus", 2.0)),
        working_region=Rect.from_list(d["working_region"])
        if d.get("working_region")
        else None,
        spec_id=d.get("id") or default_id,
    )


def goalmap_to_dict(gm: GoalMap) -> dict:
    return {
        gid: [spec_to_dict(s) for s in specs] for gid, specs in gm.entries.items()
    }


def goalmap_from_dict(d: dict) -> GoalMap:
    gm = GoalMap(
        entries={
            gid: [
                spec_from_dict(sd, default_id=f"{gid}:{i}")
                for i, sd in enumerate(specs)
            ]
            for gid, specs in d.items()
        }
    )
    gm.validate()
    return gm
