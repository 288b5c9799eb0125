"""Multi-Target System runtime.

Owns the policy groups, routes each group's (observation, goal mask)
pair to that group's network, assembles the joint action map, and
applies live goal edits atomically between decision steps.
"""

from __future__ import annotations

import queue
import threading
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .engine import Action, GameState
from .goalmap import (
    GoalMap,
    Rect,
    TargetMeta,
    TargetSpec,
    goalmap_from_dict,
    goalmap_to_dict,
    render_mask,
    resolve_targets,
    spec_from_dict,
)
from .nn import DualStreamNet, NetArchitecture
from .observation import ObsConfig
from .scripted import Policy, make_policy


class MtsError(Exception):
    pass


class ConfigError(MtsError):
    pass


class UnknownGroup(MtsError):
    pass


CONTROL_MODES = ("learned", "scripted", "human")


@dataclass
class PolicyGroup:
    group_id: str
    members: List[str]
    network_id: str
    control_mode: str = "learned"
    scripted_policy: str = "noop"

    def __post_init__(self) -> None:
        if self.control_mode not in CONTROL_MODES:
            raise ConfigError(f"unknown control mode {self.control_mode!r}")


@dataclass
class StrategyConfig:
    groups: List[PolicyGroup]
    goal_map: GoalMap
    use_goal_map: bool = True

    def to_dict(self) -> dict:
        return {
            "use_goal_map": self.use_goal_map,
            "groups": [
                {
                    "group_id": g.group_id,
                    "members": list(g.members),
                    "network_id": g.network_id,
                    "control_mode": g.control_mode,
                    "scripted_policy": g.scripted_policy,
                }
                for g in self.groups
            ],
            "goal_map": goalmap_to_dict(self.goal_map),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StrategyConfig":
        return cls(
            groups=[
                PolicyGroup(
                    group_id=g["group_id"],
                    members=list(g["members"]),
                    network_id=g["network_id"],
                    control_mode=g.get("control_mode", "learned"),
                    scripted_policy=g.get("scripted_policy", "noop"),
                )
                for g in d["groups"]
            ],
            goal_map=goalmap_from_dict(d.get("goal_map", {})),
            use_goal_map=d.get("use_goal_map", True),
        )


@dataclass
class EditCommand:
    """Goal-map / control edit, applied between decision steps.

    kind: set_targets (group_id, specs: list of spec dicts),
    set_working_region (group_id, spec_id, rect),
    set_control_mode (group_id, mode[, scripted_policy]).
    """

    kind: str
    group_id: str
    specs: Optional[List[dict]] = None
    spec_id: Optional[str] = None
    rect: Optional[List[int]] = None
    mode: Optional[str] = None
    scripted_policy: Optional[str] = None

    KINDS = ("set_targets", "set_working_region", "set_control_mode")

    def to_dict(self) -> dict:
        return {k: v for k, v in self.__dict__.items() if v is not None}

    @classmethod
    def from_dict(cls, d: dict) -> "EditCommand":
        cmd = cls(**{k: d.get(k) for k in
                     ("kind", "group_id", "specs", "spec_id", "rect", "mode",
                      "scripted_policy")})
        if cmd.kind not in cls.KINDS:
            raise MtsError(f"unknown edit kind {cmd.kind!r}")
        return cmd


@dataclass
class DecideResult:
    actions: Dict[str, Action]
    metas: Dict[str, TargetMeta]
    masks: Dict[str, np.ndarray]
    outputs: Dict[str, Tuple[np.ndarray, float]] = field(default_factory=dict)
    # Forward activation caches per learned agent (train mode only); lets
    # the trainer backpropagate without re-running the batch forward pass.
    caches: Dict[str, dict] = field(default_factory=dict)


class MtsRuntime:
    """Single-writer runtime: one driver thread calls decide(); edits may
    be enqueued from any thread and become visible at the next decide."""

    def __init__(
        self,
        config: StrategyConfig,
        networks: Dict[str, DualStreamNet],
        obs_cfg: ObsConfig,
        cell_px: int = 8,
    ):
        seen: set = set()
        for g in config.groups:
            if g.group_id in {x.group_id for x in config.groups if x is not g}:
                raise ConfigError(f"duplicate group id {g.group_id!r}")
            for m in g.members:
                if m in seen:
                    raise ConfigError(f"agent {m!r} in more than one group")
                seen.add(m)
            if g.control_mode == "learned" and g.network_id not in networks:
                raise ConfigError(
                    f"group {g.group_id!r} references unknown network "
                    f"{g.network_id!r}"
                )
            if config.use_goal_map and g.group_id not in config.goal_map.entries:
                config.goal_map.entries[g.group_id] = []
        config.goal_map.validate()

        self.config = config
        self.networks = networks
        self.obs_cfg = obs_cfg
        self.cell_px = cell_px
        self._edits: "queue.Queue[EditCommand]" = queue.Queue()
        self._human_inputs: Dict[str, Action] = {}
        self._human_lock = threading.Lock()
        self._scripted: Dict[str, Policy] = {
            g.group_id: make_policy(g.scripted_policy) for g in config.groups
        }

    # -- edits ------------------------------------------------------------

    def group(self, group_id: str) -> PolicyGroup:
        for g in self.config.groups:
            if g.group_id == group_id:
                return g
        raise UnknownGroup(group_id)

    def apply_edit(self, cmd: EditCommand) -> dict:
        """Validate and enqueue an edit; it takes effect at the next
        decide() call, never mid-decision."""
        self.group(cmd.group_id)  # raises UnknownGroup
        if cmd.kind == "set_working_region":
            Rect.from_list(cmd.rect)  # raises MalformedRect
        elif cmd.kind == "set_targets":
            for i, sd in enumerate(cmd.specs or []):
                spec_from_dict(sd, default_id=f"{cmd.group_id}:{i}")
        elif cmd.kind == "set_control_mode":
            if cmd.mode not in CONTROL_MODES:
                raise MtsError(f"unknown control mode {cmd.mode!r}")
        else:
            raise MtsError(f"unknown edit kind {cmd.kind!r}")
        self._edits.put(cmd)
        return {"status": "queued", "kind": cmd.kind, "group_id": cmd.group_id}

    def _drain_edits(self) -> None:
        while True:
            try:
                cmd = self._edits.get_nowait()
            except queue.Empty:
                return
            self._apply_now(cmd)

    def _apply_now(self, cmd: EditCommand) -> None:
        group = self.group(cmd.group_id)
        if cmd.kind == "set_targets":
            self.config.goal_map.entries[cmd.group_id] = [
                spec_from_dict(sd, default_id=f"{cmd.group_id}:{i}")
                for i, sd in enumerate(cmd.specs or [])
            ]
            self.config.goal_map.validate()
        elif cmd.kind == "set_working_region":
            rect = Rect.from_list(cmd.rect)
            for spec in self.config.goal_map.entries.get(cmd.group_id, []):
                if cmd.spec_id in (None, "", spec.spec_id):
                    spec.working_region = rect
        elif cmd.kind == "set_control_mode":
            group.control_mode = cmd.mode
            if cmd.scripted_policy:
                group.scripted_policy = cmd.scripted_policy
                self._scripted[group.group_id] = make_policy(cmd.scripted_policy)

    # -- human inputs -----------------------------------------------------

    def buffer_human_action(self, agent_id: str, action: Action) -> None:
        with self._human_lock:
            self._human_inputs[agent_id] = action

    def _take_human_action(self, agent_id: str) -> Action:
        with self._human_lock:
            return self._human_inputs.pop(agent_id, Action.NOOP)

    # -- decision ---------------------------------------------------------

    def group_of_agent(self) -> Dict[str, str]:
        return {m: g.group_id for g in self.config.groups for m in g.members}

    def decide(
        self,
        state: GameState,
        obs: Dict[str, np.ndarray],
        mode: str = "eval",
        rng: Optional[np.random.Generator] = None,
    ) -> "DecideResult":
        """One decision step for every group.

        In "train" mode learned actions are sampled from the policy; in
        "eval" mode argmax (first index on ties). The result carries the
        per-group resolved targets and rendered masks, plus per-agent
        (probs, value) for learned agents.
        """
        self._drain_edits()
        self._assert_partition(state)

        actions: Dict[str, Action] = {}
        metas: Dict[str, TargetMeta] = {}
        masks: Dict[str, np.ndarray] = {}
        outputs: Dict[str, Tuple[np.ndarray, float]] = {}
        caches: Dict[str, dict] = {}
        for group in self.config.groups:
            mask_net = None
            if self.config.use_goal_map:
                meta = resolve_targets(self.config.goal_map, state,
                                       group.group_id)
                metas[group.group_id] = meta
                mask = render_mask(meta, self.obs_cfg, self.cell_px)
                masks[group.group_id] = mask
                mask_net = (mask / 255.0).astype(np.float32)[:, :, None]
            for agent_id in group.members:
                if group.control_mode == "human":
                    actions[agent_id] = self._take_human_action(agent_id)
                elif group.control_mode == "scripted":
                    actions[agent_id] = self._scripted[group.group_id](
                        state, agent_id
                    )
                else:
                    net = self.networks[group.network_id]
                    probs, value, fcache = net.forward(
                        obs[agent_id],
                        mask_net if net.arch.use_mask else None,
                    )
                    outputs[agent_id] = (probs, value)
                    if mode == "train":
                        if rng is None:
                            raise MtsError("train mode needs an rng to sample")
                        caches[agent_id] = fcache
                        actions[agent_id] = Action(
                            int(rng.choice(len(probs), p=probs / probs.sum()))
                        )
                    else:
                        actions[agent_id] = Action(int(np.argmax(probs)))
        return DecideResult(actions=actions, metas=metas, masks=masks,
                            outputs=outputs, caches=caches)

    def _assert_partition(self, state: GameState) -> None:
        members = [m for g in self.config.groups for m in g.members]
        players = {t.agent_id for t in state.players()}
        if len(members) != len(set(members)) or set(members) != players:
            raise MtsError(
                f"groups {sorted(members)} do not partition players "
                f"{sorted(players)}"
            )
