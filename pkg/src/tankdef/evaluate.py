"""Frozen-policy evaluation and report export.

Evaluation runs the argmax policy for a fixed budget of decision steps
over consecutive seeded episodes and reports the mean total environment
reward and mean decision steps per completed episode. Reports export to
CSV (one row per milestone, optional reference rows) for external
plotting of training curves.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Tuple

import numpy as np

from .engine import EngineConfig, load_stage
from .mts import MtsRuntime, StrategyConfig
from .nn import ArchitectureMismatch, DualStreamNet, load_checkpoint
from .observation import ObsConfig, ObservationPipeline, repeat_and_observe

# Published comparison rows (mean reward, mean steps/episode) for the
# goal-map method variants; ingested as fixture constants, never computed.
TABLE1_FIXTURES: Dict[str, Tuple[float, float]] = {
    "goal_map_single_player": (149.0, 152.0),
    "goal_map_and_human": (301.0, 234.0),
    "goal_map_modified_behaviors": (363.0, 295.0),
}


class EvalError(Exception):
    pass


@dataclass
class MilestoneReport:
    milestone_step: int
    episodes: int
    mean_total_reward: float
    mean_steps_per_episode: float
    seed: int
    per_episode_rewards: List[float] = field(default_factory=list)
    per_episode_steps: List[int] = field(default_factory=list)
    insufficient_data: bool = False
    label: str = ""

    @classmethod
    def from_episodes(cls, milestone_step: int, rewards: List[float],
                      steps: List[int], seed: int,
                      label: str = "") -> "MilestoneReport":
        if len(rewards) != len(steps):
            raise EvalError("reward/step episode lists misaligned")
        n = len(rewards)
        return cls(
            milestone_step=milestone_step,
            episodes=n,
            mean_total_reward=float(np.mean(rewards)) if n else 0.0,
            mean_steps_per_episode=float(np.mean(steps)) if n else 0.0,
            seed=seed,
            per_episode_rewards=list(rewards),
            per_episode_steps=list(steps),
            insufficient_data=n == 0,
            label=label,
        )


@dataclass
class HumanReference:
    novice: Optional[Tuple[float, float]] = None     # (reward, steps)
    competent: Optional[Tuple[float, float]] = None
    source: str = "configured fixture"


def load_networks(
    checkpoints: Dict[str, str], strategy: StrategyConfig,
    obs_cfg: ObsConfig,
) -> Tuple[Dict[str, DualStreamNet], Dict[str, int]]:
    """Load one network per checkpoint path, checking the architecture
    against what the strategy requires."""
    from .a3c import build_networks, Hyperparams

    expected = build_networks(strategy, obs_cfg, Hyperparams(total_steps=1,
                                                             workers=1))
    nets: Dict[str, DualStreamNet] = {}
    steps: Dict[str, int] = {}
    for nid, path in checkpoints.items():
        expect_arch = expected[nid][0] if nid in expected else None
        arch, params, step = load_checkpoint(path, expect_arch=expect_arch)
        nets[nid] = DualStreamNet(arch, params)
        steps[nid] = step
    missing = set(expected) - set(nets)
    if missing:
        raise ArchitectureMismatch(
            f"no checkpoint supplied for networks {sorted(missing)}"
        )
    return nets, steps


def evaluate(
    checkpoints: Dict[str, str],
    strategy: StrategyConfig,
    stage_text: str,
    engine_cfg: EngineConfig,
    obs_cfg: ObsConfig,
    eval_steps: int = 50_000,
    seed: int = 0,
    milestone_step: Optional[int] = None,
    label: str = "",
) -> MilestoneReport:
    """Run the frozen argmax policy for eval_steps decision steps across
    consecutive seeded episodes; aggregate completed episodes only."""
    nets, ckpt_steps = load_networks(checkpoints, strategy, obs_cfg)
    if milestone_step is None:
        milestone_step = max(ckpt_steps.values(), default=0)
    runtime = MtsRuntime(
        StrategyConfig.from_dict(strategy.to_dict()), nets, obs_cfg,
        cell_px=engine_cfg.cell_px,
    )

    rewards: List[float] = []
    steps_per_ep: List[int] = []
    steps_left = eval_steps
    episode = 0
    while steps_left > 0:
        state = load_stage(stage_text, engine_cfg, seed=seed + 13 * episode)
        pipeline = ObservationPipeline(
            obs_cfg, sorted(t.agent_id for t in state.players())
        )
        obs = pipeline.observe(state)
        ep_steps = 0
        terminal = False
        while steps_left > 0 and not terminal:
            decision = runtime.decide(state, obs, mode="eval")
            obs, _, terminal, _ = repeat_and_observe(
                state, decision.actions, pipeline
            )
            ep_steps += 1
            steps_left -= 1
        if terminal:
            # Environment reward only; goal bonuses never enter reports.
            rewards.append(float(sum(state.agent_scores.values())))
            steps_per_ep.append(ep_steps)
        episode += 1
    return MilestoneReport.from_episodes(
        milestone_step, rewards, steps_per_ep, seed, label=label
    )


# -- export ---------------------------------------------------------------

CSV_COLUMNS = ["label", "milestone_step", "episodes", "mean_total_reward",
               "mean_steps_per_episode", "seed"]


def export_report(
    reports: List[MilestoneReport],
    human_ref: Optional[HumanReference],
    path: str,
) -> None:
    """Write the milestone series as CSV with optional reference rows.

    Floats are written with repr precision so parsing the file
    reproduces the in-memory values exactly.
    """
    if not reports:
        raise EvalError("nothing to export")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for r in sorted(reports, key=lambda x: x.milestone_step):
            writer.writerow([
                r.label or "milestone", r.milestone_step, r.episodes,
                repr(r.mean_total_reward), repr(r.mean_steps_per_episode),
                r.seed,
            ])
        if human_ref is not None:
            for name in ("novice", "competent"):
                ref = getattr(human_ref, name)
                if ref is not None:
                    writer.writerow([name, "", "", repr(float(ref[0])),
                                     repr(float(ref[1])), ""])
        for scheme, (rew, steps) in TABLE1_FIXTURES.items():
            writer.writerow([f"table1:{scheme}", "", "", repr(rew),
                             repr(steps), ""])


def parse_report_csv(path: str) -> List[dict]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    out = []
    for row in rows:
        out.append({
            "label": row["label"],
            "milestone_step": int(row["milestone_step"])
            if row["milestone_step"] else None,
            "episodes": int(row["episodes"]) if row["episodes"] else None,
            "mean_total_reward": float(row["mean_total_reward"]),
            "mean_steps_per_episode": float(row["mean_steps_per_episode"]),
            "seed": int(row["seed"]) if row["seed"] else None,
        })
    return out
