"""Asynchronous advantage actor-critic training.

Parallel workers own private environment replicas, collect short n-step
rollouts per policy group, compute advantage policy gradients with an
entropy bonus, and apply RMSProp updates to a shared parameter store.
Checkpoints are written at 20 evenly spaced global-step milestones.

Step counting: one global step = one environment decision step (action
repeat already applied), summed across workers.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .engine import EngineConfig, GameState, load_stage
from .goalmap import goal_bonus
from .mts import MtsRuntime, StrategyConfig
from .nn import DualStreamNet, NetArchitecture, Params, save_checkpoint
from .observation import ObsConfig, ObservationPipeline, repeat_and_observe

try:  # fused float32 optimizer step from the compiled extension
    from .nn import _convkernels as _ck
except ImportError:  # pure-NumPy fallback below
    _ck = None

MILESTONES = 20


class TrainerError(Exception):
    pass


class EmptyBuffer(TrainerError):
    pass


class NonFiniteLoss(TrainerError):
    pass


@dataclass
class Hyperparams:
    learning_rate: float = 0.004
    workers: int = 8
    total_steps: int = 10_000_000
    t_max: int = 5
    gamma: float = 0.99
    entropy_beta: float = 0.01
    value_loss_coeff: float = 0.5
    rmsprop_decay: float = 0.99
    rmsprop_epsilon: float = 0.1
    grad_clip: float = 40.0
    seed: int = 0

    def __post_init__(self) -> None:
        positives = [
            self.learning_rate, self.total_steps, self.t_max, self.gamma,
            self.value_loss_coeff, self.rmsprop_decay, self.rmsprop_epsilon,
        ]
        if any(v <= 0 for v in positives) or self.workers < 1:
            raise TrainerError("hyperparameters must be positive, workers >= 1")

    def to_dict(self) -> dict:
        return dict(self.__dict__)

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        return cls(**d)


# -- returns and loss -----------------------------------------------------


def compute_returns(
    rewards: List[float],
    values: List[float],
    bootstrap: float,
    terminal: bool,
    gamma: float,
) -> Tuple[np.ndarray, np.ndarray]:
    """n-step discounted returns and advantages.

    R_t = r_t + gamma * R_{t+1}, seeded with 0 on terminal rollouts and
    the bootstrap value estimate otherwise; A_t = R_t - V(s_t).
    """
    if not rewards:
        raise EmptyBuffer("empty rollout buffer")
    if len(values) != len(rewards):
        raise TrainerError("values misaligned with rewards")
    running = 0.0 if terminal else float(bootstrap)
    returns = np.empty(len(rewards), dtype=np.float64)
    for t in range(len(rewards) - 1, -1, -1):
        running = rewards[t] + gamma * running
        returns[t] = running
    advantages = returns - np.asarray(values, dtype=np.float64)
    return returns, advantages


def entropy(probs: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    p = np.clip(probs, eps, 1.0)
    return -(p * np.log(p)).sum(axis=-1)


def loss_and_grads(
    net: DualStreamNet,
    obs: np.ndarray,
    masks: Optional[np.ndarray],
    actions: np.ndarray,
    returns: np.ndarray,
    advantages: np.ndarray,
    hp: Hyperparams,
) -> Tuple[Params, dict]:
    """A3C loss over a rollout batch and its parameter gradients.

    loss = sum_t [ -log pi(a_t|s_t) * A_t  (A treated as a constant)
                   + value_loss_coeff * (R_t - V(s_t))^2
                   - entropy_beta * H(pi(.|s_t)) ]
    Gradients are clipped to a global norm of hp.grad_clip.
    """
    probs, values, cache = net.forward(obs, masks)
    return _grads_from_cache(net, cache, probs, values, actions, returns,
                             advantages, hp)


def _stack_caches(caches: List[dict]) -> dict:
    """Concatenate single-step forward caches into one batch cache."""
    batch: dict = {}
    for key in caches[0]:
        if key == "params":
            batch[key] = caches[0][key]
        else:
            vals = [c[key] for c in caches]
            batch[key] = None if vals[0] is None else np.concatenate(vals)
    return batch


def loss_and_grads_cached(
    net: DualStreamNet,
    caches: List[dict],
    values: List[float],
    actions: np.ndarray,
    returns: np.ndarray,
    advantages: np.ndarray,
    hp: Hyperparams,
) -> Tuple[Params, dict]:
    """Same loss/gradients as loss_and_grads, but reuses the forward
    activations captured while the rollout actions were chosen instead of
    re-running the batch forward pass."""
    cache = _stack_caches(caches)
    probs = cache["probs"]
    return _grads_from_cache(net, cache, probs, np.asarray(values), actions,
                             returns, advantages, hp)


def _grads_from_cache(
    net: DualStreamNet,
    cache: dict,
    probs: np.ndarray,
    values: np.ndarray,
    actions: np.ndarray,
    returns: np.ndarray,
    advantages: np.ndarray,
    hp: Hyperparams,
) -> Tuple[Params, dict]:
    n = probs.shape[0]
    idx = np.arange(n)
    eps = 1e-8

    logp = np.log(np.clip(probs[idx, actions], eps, 1.0))
    ent = entropy(probs)
    value_err = returns - values
    policy_loss = float(-(logp * advantages).sum())
    value_loss = float(hp.value_loss_coeff * (value_err ** 2).sum())
    entropy_term = float(ent.sum())
    total = policy_loss + value_loss - hp.entropy_beta * entropy_term

    # d/dlogits of -log pi(a)*A is A*(pi - onehot(a));
    # d/dlogits of -H is pi*(log pi + H).
    onehot = np.zeros_like(probs)
    onehot[idx, actions] = 1.0
    grad_logits = advantages[:, None] * (probs - onehot)
    logp_all = np.log(np.clip(probs, eps, 1.0))
    grad_logits += hp.entropy_beta * probs * (logp_all + ent[:, None])
    grad_value = -2.0 * hp.value_loss_coeff * value_err

    dtype = net.params["fc_w"].dtype
    grads = net.backward(
        cache, grad_logits.astype(dtype), grad_value.astype(dtype)
    )
    grad_norm = clip_global_norm(grads, hp.grad_clip)
    diagnostics = {
        "loss": total,
        "policy_loss": policy_loss,
        "value_loss": value_loss,
        "entropy": entropy_term / n,
        "grad_norm": grad_norm,
    }
    if not np.isfinite(total):
        raise NonFiniteLoss(f"non-finite loss: {diagnostics}")
    return grads, diagnostics


def clip_global_norm(grads: Params, max_norm: float) -> float:
    """In-place global-norm clipping; returns the pre-clip norm."""
    total = float(
        np.sqrt(sum(float(np.vdot(g, g)) for g in grads.values()))
    )
    if max_norm > 0 and total > max_norm:
        scale = max_norm / (total + 1e-12)
        for g in grads.values():
            g *= scale
    return total


# -- shared parameters ----------------------------------------------------


class SharedParamStore:
    """Shared parameters plus RMSProp state, one entry per network id.

    Updates take a short per-network lock, which makes each update atomic
    at the network granularity; snapshots are internally consistent.
    The global step counter is its own lock-protected atomic.
    """

    def __init__(self, networks: Dict[str, Tuple[NetArchitecture, Params]]):
        self._nets: Dict[str, Params] = {}
        self._arch: Dict[str, NetArchitecture] = {}
        self._opt: Dict[str, Params] = {}
        self._locks: Dict[str, threading.Lock] = {}
        for nid, (arch, params) in networks.items():
            self._arch[nid] = arch
            self._nets[nid] = {k: v.copy() for k, v in params.items()}
            self._opt[nid] = {
                k: np.zeros_like(v) for k, v in params.items()
            }
            self._locks[nid] = threading.Lock()
        self._step = 0
        self._step_lock = threading.Lock()
        self.failure: Optional[BaseException] = None

    @property
    def network_ids(self) -> List[str]:
        return sorted(self._nets)

    def arch(self, net_id: str) -> NetArchitecture:
        return self._arch[net_id]

    def snapshot(self, net_id: str) -> Params:
        with self._locks[net_id]:
            return {k: v.copy() for k, v in self._nets[net_id].items()}

    def copy_into(self, net_id: str, dst: Params) -> None:
        """Refresh an existing parameter dict in place (no allocation)."""
        with self._locks[net_id]:
            for k, v in self._nets[net_id].items():
                np.copyto(dst[k], v)

    def apply(self, net_id: str, grads: Params, hp: Hyperparams) -> None:
        with self._locks[net_id]:
            params, opt = self._nets[net_id], self._opt[net_id]
            for name, g in grads.items():
                p = params[name]
                g = np.ascontiguousarray(g, dtype=p.dtype)
                s = opt[name]
                if _ck is not None and p.dtype == np.float32:
                    _ck.rmsprop_update(
                        p.reshape(-1), s.reshape(-1), g.reshape(-1),
                        hp.learning_rate, hp.rmsprop_decay,
                        hp.rmsprop_epsilon,
                    )
                    continue
                s *= hp.rmsprop_decay
                tmp = np.square(g)
                tmp *= 1.0 - hp.rmsprop_decay
                s += tmp
                np.add(s, hp.rmsprop_epsilon, out=tmp)
                np.sqrt(tmp, out=tmp)
                np.divide(g, tmp, out=tmp)
                tmp *= hp.learning_rate
                p -= tmp

    def advance_steps(self, n: int) -> Tuple[int, int]:
        with self._step_lock:
            start = self._step
            self._step += n
            return start, self._step

    @property
    def step_count(self) -> int:
        with self._step_lock:
            return self._step


def milestone_steps(total_steps: int, count: int = MILESTONES) -> List[int]:
    """`count` evenly spaced global-step milestones ending at total_steps."""
    return [max(1, round(total_steps * (i + 1) / count)) for i in range(count)]


# -- worker ---------------------------------------------------------------


@dataclass
class _AgentBuffer:
    caches: List[dict] = field(default_factory=list)
    actions: List[int] = field(default_factory=list)
    rewards: List[float] = field(default_factory=list)
    values: List[float] = field(default_factory=list)

    def clear(self) -> None:
        self.caches.clear()
        self.actions.clear()
        self.rewards.clear()
        self.values.clear()

    def __len__(self) -> int:
        return len(self.actions)


class Worker:
    """One training worker with a private environment replica."""

    def __init__(
        self,
        worker_id: int,
        store: SharedParamStore,
        stage_text: str,
        engine_cfg: EngineConfig,
        obs_cfg: ObsConfig,
        strategy: StrategyConfig,
        hp: Hyperparams,
        log_fn: Callable[[dict], None],
        checkpoint_fn: Callable[[int, int], None],
    ):
        self.worker_id = worker_id
        self.store = store
        self.stage_text = stage_text
        self.engine_cfg = engine_cfg
        self.obs_cfg = obs_cfg
        self.hp = hp
        self.log_fn = log_fn
        self.checkpoint_fn = checkpoint_fn
        self.rng = np.random.default_rng(hp.seed * 9973 + worker_id)
        self.episode_index = 0
        self.episode_return = 0.0
        self.episode_steps = 0
        self.recent_returns: List[float] = []

        # Per-worker runtime with local network copies; parameters are
        # refreshed from the shared store before every rollout.
        self.strategy = StrategyConfig.from_dict(strategy.to_dict())
        self.nets = {
            nid: DualStreamNet(store.arch(nid), store.snapshot(nid))
            for nid in store.network_ids
        }
        self.runtime = MtsRuntime(
            self.strategy, self.nets, obs_cfg, cell_px=engine_cfg.cell_px
        )
        self.group_of_agent = self.runtime.group_of_agent()
        # Optional coarse scheduling lock: on hosts with fewer cores than
        # workers, letting threads interleave per NumPy call just churns
        # the GIL; taking whole-rollout turns is faster and still fair.
        self.turn_lock: Optional[threading.Lock] = None
        self._reset_env()

    def _env_seed(self) -> int:
        return self.hp.seed + self.worker_id * 100_003 + self.episode_index * 7919

    def _reset_env(self) -> None:
        self.state: GameState = load_stage(
            self.stage_text, self.engine_cfg, seed=self._env_seed()
        )
        agent_ids = sorted(t.agent_id for t in self.state.players())
        self.pipeline = ObservationPipeline(self.obs_cfg, agent_ids)
        self.obs = self.pipeline.observe(self.state)
        self.episode_return = 0.0
        self.episode_steps = 0
        self.episode_index += 1

    def run(self) -> None:
        try:
            while self.store.step_count < self.hp.total_steps:
                if self.store.failure is not None:
                    return
                if self.turn_lock is not None:
                    # A block of rollouts per turn keeps this worker's
                    # parameters and environment hot in cache.
                    with self.turn_lock:
                        for _ in range(8):
                            if self.store.step_count >= self.hp.total_steps \
                                    or self.store.failure is not None:
                                break
                            self._rollout()
                else:
                    self._rollout()
        except BaseException as e:  # noqa: BLE001 - report and stop the run
            self.store.failure = e
            raise

    def _rollout(self) -> None:
        for nid, net in self.nets.items():
            self.store.copy_into(nid, net.params)

        buffers: Dict[str, _AgentBuffer] = {
            aid: _AgentBuffer() for aid in self.group_of_agent
        }
        terminal = False
        steps = 0
        for _ in range(self.hp.t_max):
            decision = self.runtime.decide(
                self.state, self.obs, mode="train", rng=self.rng
            )
            self.obs, env_rewards, terminal, events = repeat_and_observe(
                self.state, decision.actions, self.pipeline
            )
            bonuses = (
                goal_bonus(events, decision.metas, self.group_of_agent)
                if self.strategy.use_goal_map
                else {}
            )
            for aid, buf in buffers.items():
                if aid not in decision.outputs:
                    continue  # not a learned agent
                _, value = decision.outputs[aid]
                reward = env_rewards.get(aid, 0.0) + bonuses.get(aid, 0.0)
                buf.caches.append(decision.caches[aid])
                buf.actions.append(int(decision.actions[aid]))
                buf.rewards.append(reward)
                buf.values.append(value)
            self.episode_return += sum(env_rewards.values())
            steps += 1
            self.episode_steps += 1
            if terminal:
                break

        bootstraps = {} if terminal else self._bootstrap_values(buffers)
        self._update(buffers, terminal, bootstraps)
        start, end = self.store.advance_steps(steps)
        self.checkpoint_fn(start, end)
        if terminal:
            self.recent_returns.append(self.episode_return)
            del self.recent_returns[:-20]
            self._reset_env()

    def _bootstrap_values(
        self, buffers: Dict[str, _AgentBuffer]
    ) -> Dict[str, float]:
        """Value estimates of the post-rollout state, per learned agent,
        using a freshly resolved goal mask for that state."""
        from .goalmap import resolve_targets, render_mask

        values: Dict[str, float] = {}
        for group in self.strategy.groups:
            if group.control_mode != "learned":
                continue
            net = self.nets[group.network_id]
            mask_net = None
            if net.arch.use_mask:
                meta = resolve_targets(
                    self.strategy.goal_map, self.state, group.group_id
                )
                mask = render_mask(meta, self.obs_cfg, self.engine_cfg.cell_px)
                mask_net = (mask / 255.0).astype(np.float32)[:, :, None]
            for aid in group.members:
                if aid not in buffers or len(buffers[aid]) == 0:
                    continue
                _, value, _ = net.forward(self.obs[aid], mask_net)
                values[aid] = value
        return values

    def _update(
        self,
        buffers: Dict[str, _AgentBuffer],
        terminal: bool,
        bootstraps: Dict[str, float],
    ) -> None:
        group_batches: Dict[str, List[Tuple[str, _AgentBuffer]]] = {}
        for aid, buf in buffers.items():
            if len(buf) == 0:
                continue
            group_batches.setdefault(self.group_of_agent[aid], []).append(
                (aid, buf)
            )

        for group in self.strategy.groups:
            if group.control_mode != "learned":
                continue
            bufs = group_batches.get(group.group_id, [])
            if not bufs:
                continue
            net = self.nets[group.network_id]
            cache_b, val_b, act_b, ret_b, adv_b = [], [], [], [], []
            for aid, buf in bufs:
                returns, advantages = compute_returns(
                    buf.rewards, buf.values, bootstraps.get(aid, 0.0),
                    terminal, self.hp.gamma,
                )
                cache_b.extend(buf.caches)
                val_b.extend(buf.values)
                act_b.extend(buf.actions)
                ret_b.extend(returns)
                adv_b.extend(advantages)
            grads, diag = loss_and_grads_cached(
                net, cache_b, val_b, np.asarray(act_b),
                np.asarray(ret_b), np.asarray(adv_b), self.hp,
            )
            self.store.apply(group.network_id, grads, self.hp)
            diag.update(
                step=self.store.step_count,
                worker=self.worker_id,
                group=group.group_id,
                recent_return=(
                    float(np.mean(self.recent_returns))
                    if self.recent_returns
                    else None
                ),
            )
            self.log_fn(diag)


# -- run orchestration ----------------------------------------------------


def build_networks(
    strategy: StrategyConfig, obs_cfg: ObsConfig, hp: Hyperparams
) -> Dict[str, Tuple[NetArchitecture, Params]]:
    """One (architecture, initial params) pair per referenced network id.

    Goal-map strategies get the dual-stream net; the plain baseline gets
    the single-stream variant. Initialization is seeded per network.
    """
    from .nn import init_params

    arch = NetArchitecture(
        input_hw=obs_cfg.net_size,
        frame_stack=obs_cfg.frame_stack,
        use_mask=strategy.use_goal_map,
    )
    net_ids = sorted(
        {g.network_id for g in strategy.groups if g.control_mode == "learned"}
    )
    return {
        nid: (arch, init_params(arch, seed=hp.seed + 17 * i))
        for i, nid in enumerate(net_ids)
    }


@dataclass
class TrainResult:
    final_checkpoints: Dict[str, str]
    milestone_checkpoints: Dict[int, Dict[str, str]]
    log_path: str
    total_steps: int


def train(
    stage_text: str,
    engine_cfg: EngineConfig,
    obs_cfg: ObsConfig,
    strategy: StrategyConfig,
    hp: Hyperparams,
    out_dir: str,
) -> TrainResult:
    """Run the full training loop and write checkpoints plus a JSONL log."""
    os.makedirs(out_dir, exist_ok=True)
    networks = build_networks(strategy, obs_cfg, hp)
    if not networks:
        raise TrainerError("strategy has no learned groups to train")
    store = SharedParamStore(networks)

    log_path = os.path.join(out_dir, "train_log.jsonl")
    log_lock = threading.Lock()
    log_fh = open(log_path, "w")
    log_fh.write(json.dumps({
        "record": "header",
        "step_convention": "global environment decision steps summed "
                           "across workers (action repeat applied)",
        "hyperparams": hp.to_dict(),
        "networks": sorted(networks),
        "started": time.time(),
    }) + "\n")

    def log_fn(rec: dict) -> None:
        with log_lock:
            log_fh.write(json.dumps(rec) + "\n")

    milestones = milestone_steps(hp.total_steps)
    milestone_ckpts: Dict[int, Dict[str, str]] = {}
    ckpt_lock = threading.Lock()

    def write_checkpoints(tag: str, step: int) -> Dict[str, str]:
        paths = {}
        for nid in store.network_ids:
            path = os.path.join(out_dir, f"ckpt_{nid}_{tag}.bin")
            save_checkpoint(path, store.arch(nid), store.snapshot(nid), step)
            paths[nid] = path
        return paths

    def checkpoint_fn(start: int, end: int) -> None:
        # The worker whose increment crosses a milestone writes it.
        for m in milestones:
            if start < m <= end:
                with ckpt_lock:
                    if m not in milestone_ckpts:
                        milestone_ckpts[m] = write_checkpoints(f"step{m}", m)

    workers = [
        Worker(wid, store, stage_text, engine_cfg, obs_cfg, strategy, hp,
               log_fn, checkpoint_fn)
        for wid in range(hp.workers)
    ]
    if hp.workers == 1:
        workers[0].run()
    else:
        threads = [
            threading.Thread(target=w.run, name=f"worker-{w.worker_id}")
            for w in workers
        ]
        # Workers are GIL-bound; a longer switch interval cuts context
        # switches in the NumPy-heavy update loops.
        import sys

        if (os.cpu_count() or 1) < hp.workers:
            turn_lock = threading.Lock()
            for w in workers:
                w.turn_lock = turn_lock
        prev_interval = sys.getswitchinterval()
        sys.setswitchinterval(0.05)
        try:
            for t in threads:
                t.start()
            for t in threads:
                t.join()
        finally:
            sys.setswitchinterval(prev_interval)
    if store.failure is not None:
        log_fh.close()
        raise store.failure

    # Any milestones not crossed exactly (rollouts can overshoot
    # total_steps) get the final parameters.
    final_step = store.step_count
    for m in milestones:
        if m not in milestone_ckpts:
            with ckpt_lock:
                milestone_ckpts[m] = write_checkpoints(f"step{m}", m)
    finals = write_checkpoints("final", final_step)
    log_fn({"record": "footer", "final_step": final_step})
    log_fh.close()
    return TrainResult(
        final_checkpoints=finals,
        milestone_checkpoints=dict(sorted(milestone_ckpts.items())),
        log_path=log_path,
        total_steps=final_step,
    )
