"""Command-line entry points: train, eval, play, serve.

Exit codes: 0 on success, 1 on runtime failure, 2 on bad usage,
3 on a configuration error.
"""

from __future__ import annotations

import argparse
import os
import re
import sys
from typing import Dict, List, Optional

from .a3c import Hyperparams, TrainerError, train
from .config import (
    load_engine_config,
    load_obs_config,
    load_stage_text,
    load_strategy_config,
)
from .engine import MalformedStage, Status, load_stage, step
from .evaluate import (
    EvalError,
    HumanReference,
    MilestoneReport,
    evaluate,
    export_report,
)
from .mts import ConfigError
from .nn import ArchitectureMismatch
from .observation import render_frame
from .scripted import REGISTRY, make_policy
from .server import BridgeServer, ServerError, Session

EXIT_OK = 0
EXIT_RUNTIME = 1
EXIT_USAGE = 2
EXIT_CONFIG = 3


def _banner(title: str, settings: Dict[str, object]) -> None:
    """Echo the resolved settings so every run is self-describing."""
    print(f"== tankdef {title} ==")
    for key, value in settings.items():
        print(f"  {key}: {value}")


def _add_common(p: argparse.ArgumentParser, stage_default: str = "default",
                with_obs: bool = True) -> None:
    p.add_argument("--stage", default=stage_default,
                   help="stage file path or bundled name (default/desk)")
    p.add_argument("--engine", default=None,
                   help="engine config YAML (path or bundled name)")
    if with_obs:
        p.add_argument("--obs", default=None,
                       help="observation config YAML (path or bundled name)")
    p.add_argument("--seed", type=int, default=0)


def _parse_checkpoints(pairs: List[str]) -> Dict[str, str]:
    out: Dict[str, str] = {}
    for pair in pairs:
        nid, sep, path = pair.partition("=")
        if not sep or not nid or not path:
            raise ConfigError(f"--checkpoint wants NETWORK_ID=PATH, got {pair!r}")
        out[nid] = path
    return out


def _discover_run_dir(run_dir: str) -> Dict[Optional[int], Dict[str, str]]:
    """Map milestone step -> {network_id: path} from a training output
    directory; the final checkpoints live under the key None."""
    found: Dict[Optional[int], Dict[str, str]] = {}
    pattern = re.compile(r"ckpt_(.+)_(?:step(\d+)|final)\.bin$")
    for name in sorted(os.listdir(run_dir)):
        m = pattern.match(name)
        if not m:
            continue
        nid = m.group(1)
        step = int(m.group(2)) if m.group(2) else None
        found.setdefault(step, {})[nid] = os.path.join(run_dir, name)
    if not found:
        raise ConfigError(f"no checkpoints found in {run_dir!r}")
    return found


# -- train ----------------------------------------------------------------


def cmd_train(args: argparse.Namespace) -> int:
    stage_text = load_stage_text(args.stage)
    engine_cfg = load_engine_config(args.engine)
    obs_cfg = load_obs_config(args.obs)
    strategy = load_strategy_config(args.strategy)
    hp = Hyperparams(
        learning_rate=args.lr,
        workers=args.workers,
        total_steps=args.steps,
        seed=args.seed,
    )
    _banner("train", {
        "stage": args.stage,
        "strategy": args.strategy,
        "engine": args.engine or "(defaults)",
        "obs": args.obs or "(defaults)",
        "out": args.out,
        "workers": hp.workers,
        "total_steps": hp.total_steps,
        "learning_rate": hp.learning_rate,
        "use_goal_map": strategy.use_goal_map,
        "seed": args.seed,
    })
    result = train(stage_text, engine_cfg, obs_cfg, strategy, hp, args.out)
    print(f"trained {result.total_steps} steps")
    print(f"log: {result.log_path}")
    for nid, path in sorted(result.final_checkpoints.items()):
        print(f"final checkpoint {nid}: {path}")
    return EXIT_OK


# -- eval -----------------------------------------------------------------


def cmd_eval(args: argparse.Namespace) -> int:
    stage_text = load_stage_text(args.stage)
    engine_cfg = load_engine_config(args.engine)
    obs_cfg = load_obs_config(args.obs)
    strategy = load_strategy_config(args.strategy)

    if args.run_dir:
        discovered = _discover_run_dir(args.run_dir)
        if args.milestones:
            jobs = sorted(
                (step, ckpts) for step, ckpts in discovered.items()
                if step is not None
            )
            if not jobs:
                raise ConfigError(
                    f"no milestone checkpoints in {args.run_dir!r}"
                )
        else:
            if None not in discovered:
                raise ConfigError(f"no final checkpoints in {args.run_dir!r}")
            jobs = [(None, discovered[None])]
    elif args.checkpoint:
        jobs = [(None, _parse_checkpoints(args.checkpoint))]
    else:
        raise ConfigError("eval needs --run-dir or --checkpoint")

    _banner("eval", {
        "stage": args.stage,
        "strategy": args.strategy,
        "milestones": len(jobs),
        "eval_steps": args.steps,
        "seed": args.seed,
        "out": args.out or "(stdout only)",
    })
    reports: List[MilestoneReport] = []
    for step, ckpts in jobs:
        report = evaluate(
            ckpts, strategy, stage_text, engine_cfg, obs_cfg,
            eval_steps=args.steps, seed=args.seed, milestone_step=step,
            label=args.label,
        )
        reports.append(report)
        flag = " (insufficient data)" if report.insufficient_data else ""
        print(
            f"milestone {report.milestone_step}: {report.episodes} episodes, "
            f"mean reward {report.mean_total_reward:.2f}, "
            f"mean steps/episode {report.mean_steps_per_episode:.1f}{flag}"
        )
    if args.out:
        human_ref = None
        if args.human_novice or args.human_competent:
            human_ref = HumanReference(
                novice=tuple(args.human_novice) if args.human_novice else None,
                competent=(tuple(args.human_competent)
                           if args.human_competent else None),
            )
        export_report(reports, human_ref, args.out)
        print(f"report: {args.out}")
    return EXIT_OK


# -- play -----------------------------------------------------------------


def cmd_play(args: argparse.Namespace) -> int:
    stage_text = load_stage_text(args.stage)
    engine_cfg = load_engine_config(args.engine)
    if args.policy not in REGISTRY:
        raise ConfigError(
            f"unknown policy {args.policy!r}; choose from {sorted(REGISTRY)}"
        )
    _banner("play", {
        "stage": args.stage,
        "policy": args.policy,
        "episodes": args.episodes,
        "seed": args.seed,
        "dump_frames": args.dump_frames or "(off)",
    })
    if args.dump_frames:
        os.makedirs(args.dump_frames, exist_ok=True)

    totals: List[float] = []
    for episode in range(args.episodes):
        policy = make_policy(args.policy, seed=args.seed + episode)
        state = load_stage(stage_text, engine_cfg, seed=args.seed + episode)
        frame_index = 0
        while state.status == Status.RUNNING:
            actions = {t.agent_id: policy(state, t.agent_id)
                       for t in state.players()}
            step(state, actions)
            if args.dump_frames:
                _dump_frame(state, args.dump_frames, episode, frame_index)
                frame_index += 1
        total = float(sum(state.agent_scores.values()))
        totals.append(total)
        print(f"episode {episode}: {state.status.value} after "
              f"{state.tick} ticks, total reward {total:.1f}")
    mean = sum(totals) / len(totals) if totals else 0.0
    print(f"mean total reward over {len(totals)} episodes: {mean:.2f}")
    return EXIT_OK


def _dump_frame(state, out_dir: str, episode: int, index: int) -> None:
    from PIL import Image

    frame = render_frame(state)
    path = os.path.join(out_dir, f"ep{episode:03d}_t{index:05d}.png")
    Image.fromarray(frame).save(path)


# -- serve ----------------------------------------------------------------


def cmd_serve(args: argparse.Namespace) -> int:
    stage_text = load_stage_text(args.stage)
    engine_cfg = load_engine_config(args.engine)
    obs_cfg = load_obs_config(args.obs)
    strategy = load_strategy_config(args.strategy)

    if args.checkpoint:
        from .evaluate import load_networks

        networks, _ = load_networks(
            _parse_checkpoints(args.checkpoint), strategy, obs_cfg
        )
    else:
        # No checkpoints: fresh seeded networks (useful for UI work).
        from .a3c import build_networks
        from .nn import DualStreamNet

        networks = {
            nid: DualStreamNet(arch, params)
            for nid, (arch, params) in build_networks(
                strategy, obs_cfg, Hyperparams(total_steps=1, workers=1,
                                               seed=args.seed)
            ).items()
        }

    _banner("serve", {
        "stage": args.stage,
        "strategy": args.strategy,
        "host": args.host,
        "port": args.port,
        "tick_rate": args.tick_rate,
        "checkpoints": ", ".join(args.checkpoint) or "(fresh networks)",
        "seed": args.seed,
    })
    session = Session(stage_text, engine_cfg, obs_cfg, strategy, networks,
                      seed=args.seed, restart_delay=args.restart_delay)
    server = BridgeServer(session, host=args.host, port=args.port,
                          tick_rate=args.tick_rate)
    print(f"listening on ws://{args.host}:{args.port}")
    server.run_forever()
    return EXIT_OK


# -- entry point ----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="tankdef",
        description="Multiple tank defence: training, evaluation, scripted "
                    "play and the live co-play server.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="run the asynchronous trainer")
    _add_common(p)
    p.add_argument("--strategy", default="default_strategy")
    p.add_argument("--out", default="runs/latest")
    p.add_argument("--steps", type=int, default=10_000_000,
                   help="total decision steps across all workers")
    p.add_argument("--workers", type=int, default=8)
    p.add_argument("--lr", type=float, default=0.004)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate frozen checkpoints")
    _add_common(p)
    p.add_argument("--strategy", default="default_strategy")
    p.add_argument("--checkpoint", action="append", default=[],
                   metavar="NETWORK_ID=PATH")
    p.add_argument("--run-dir", default=None,
                   help="training output directory to pull checkpoints from")
    p.add_argument("--milestones", action="store_true",
                   help="evaluate every milestone checkpoint in --run-dir")
    p.add_argument("--steps", type=int, default=50_000,
                   help="decision-step budget per milestone")
    p.add_argument("--label", default="milestone")
    p.add_argument("--out", default=None, help="CSV report path")
    p.add_argument("--human-novice", type=float, nargs=2, default=None,
                   metavar=("REWARD", "STEPS"))
    p.add_argument("--human-competent", type=float, nargs=2, default=None,
                   metavar=("REWARD", "STEPS"))
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("play", help="watch scripted policies play")
    _add_common(p, with_obs=False)
    p.add_argument("--policy", default="base_camper",
                   help=f"one of {sorted(REGISTRY)}")
    p.add_argument("--episodes", type=int, default=1)
    p.add_argument("--dump-frames", default=None, metavar="DIR",
                   help="write a PNG of every tick into DIR")
    p.set_defaults(func=cmd_play)

    p = sub.add_parser("serve", help="run the live WebSocket session server")
    _add_common(p)
    p.add_argument("--strategy", default="default_strategy")
    p.add_argument("--checkpoint", action="append", default=[],
                   metavar="NETWORK_ID=PATH")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--tick-rate", type=float, default=10.0,
                   help="decision steps per second")
    p.add_argument("--restart-delay", type=float, default=1.0,
                   help="seconds to linger on a finished episode")
    p.set_defaults(func=cmd_serve)

    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (MalformedStage, TrainerError, EvalError, ServerError,
            ArchitectureMismatch, OSError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_RUNTIME
    except KeyboardInterrupt:
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
