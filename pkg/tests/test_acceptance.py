"""End-to-end acceptance checks for the full stack.

Each test pins one user-facing guarantee: deterministic simulation, exact
rewards, scripted-policy bias, goal-mask and convolution oracles, gradient
correctness, reproducible training, learning at desk scale, the evaluation
protocol, and the wire codec. Runtime-heavy checks state their budget in
the docstring; the multi-hour learning-trend run is marked slow.
"""

import json
import shutil
import time

import numpy as np
import pytest

from tankdef.a3c import (
    Hyperparams,
    compute_returns,
    entropy,
    loss_and_grads,
    milestone_steps,
    train,
)
from tankdef.config import bundled_stage, load_strategy_config
from tankdef.engine import (
    Action,
    EngineConfig,
    Status,
    load_stage,
    step,
)
from tankdef.goalmap import (
    GoalMap,
    ResolvedTarget,
    TargetMeta,
    TargetSelector,
    TargetSpec,
    render_mask_native,
    resolve_targets,
)
from tankdef.nn import (
    DualStreamNet,
    NetArchitecture,
    grad_check,
    init_params,
    load_checkpoint,
)
from tankdef.evaluate import TABLE1_FIXTURES, MilestoneReport, evaluate
from tankdef.observation import ObsConfig
from tankdef.scripted import make_policy
from tankdef import protocol


# -- engine ----------------------------------------------------------------


class TestEngineDeterminism:
    def test_identical_hashes_across_reruns(self, default_stage_text):
        """3 seeds x 10,000 ticks with a scripted policy, run twice each:
        the serialized-state hashes must match tick for tick (< 30 s)."""
        start = time.time()
        for seed in (0, 1, 2):
            hashes = []
            for _ in range(2):
                policy = make_policy("enemy_chaser")
                state = load_stage(default_stage_text, seed=seed)
                run = []
                for _ in range(10_000):
                    if state.status != Status.RUNNING:
                        state = load_stage(default_stage_text,
                                           seed=seed + state.tick)
                    step(state, {t.agent_id: policy(state, t.agent_id)
                                 for t in state.alive_players()})
                    run.append(state.state_hash())
                hashes.append(run)
            assert hashes[0] == hashes[1]
        assert time.time() - start < 30.0


class TestRewardCorrectness:
    def test_exactly_ten_per_kill(self, box_state):
        outcome = step(box_state, {"p0": Action.FIRE})
        assert outcome.rewards == {"p0": 10.0}
        assert box_state.agent_scores["p0"] == 10.0

    def test_base_hit_is_terminal(self):
        stage = "#####\n#1.B#\n#E~~#\n#####"
        cfg = EngineConfig(p_fire=0.0, p_advance=0.0, max_enemies=1)
        state = load_stage(stage, cfg, seed=0)
        step(state, {"p0": Action.RIGHT})  # face the base
        outcome = step(state, {"p0": Action.FIRE})
        assert outcome.terminal
        assert state.status == Status.BASE_DESTROYED

    def test_replay_accumulates_only_kill_rewards(self, default_stage_text):
        policy = make_policy("enemy_chaser")
        state = load_stage(default_stage_text, seed=5)
        kills = 0
        for _ in range(2_000):
            if state.status != Status.RUNNING:
                break
            outcome = step(state, {t.agent_id: policy(state, t.agent_id)
                                   for t in state.alive_players()})
            kills += sum(1 for e in outcome.events
                         if e["kind"] == "enemy_destroyed")
        assert sum(state.agent_scores.values()) == 10.0 * kills


class TestBiasProperty:
    def test_camper_mean_episode_length_exceeds_chaser(
            self, default_stage_text):
        """Strict inequality on mean episode length over 50 seeded
        episodes per policy (< 2 min)."""
        start = time.time()
        means = {}
        for name in ("base_camper", "enemy_chaser"):
            lengths = []
            for seed in range(50):
                policy = make_policy(name, seed=seed)
                state = load_stage(default_stage_text, seed=seed)
                while state.status == Status.RUNNING:
                    step(state, {t.agent_id: policy(state, t.agent_id)
                                 for t in state.alive_players()})
                lengths.append(state.tick)
            means[name] = float(np.mean(lengths))
        assert means["base_camper"] > means["enemy_chaser"]
        assert time.time() - start < 120.0


# -- goal masks ------------------------------------------------------------


def _union_oracle(cells, grid_hw, cell_px):
    h, w = grid_hw
    out = np.zeros((h * cell_px, w * cell_px), dtype=np.float32)
    for y in range(h * cell_px):
        for x in range(w * cell_px):
            if (x // cell_px, y // cell_px) in cells:
                out[y, x] = 255.0
    return out


class TestGoalMaskOracle:
    def test_native_mask_equals_union_oracle_500_sets(self):
        rng = np.random.default_rng(11)
        for _ in range(500):
            h, w = int(rng.integers(3, 14)), int(rng.integers(3, 14))
            px = int(rng.integers(2, 9))
            cells = {(int(rng.integers(w)), int(rng.integers(h)))
                     for _ in range(int(rng.integers(0, 6)))}
            meta = TargetMeta(resolved=[
                ResolvedTarget(cell=c, priority=i, bonus_reward=1.0,
                               spec_id=f"s{i}", entity_id=None,
                               working_region=None)
                for i, c in enumerate(sorted(cells))
            ], resolved_at_tick=0)
            np.testing.assert_array_equal(
                render_mask_native(meta, (h, w), px),
                _union_oracle(cells, (h, w), px),
            )

    def test_closest_enemy_matches_brute_force_1000_states(
            self, default_stage_text):
        gm = GoalMap(entries={"g": [TargetSpec(
            spec_id="s", selector=TargetSelector(kind="closest_enemy_to_base"),
            priority=0, bonus_reward=2.0, working_region=None)]})
        rng = np.random.default_rng(3)
        state = load_stage(default_stage_text, EngineConfig(), seed=0)
        cells = [(c, r) for r in range(state.height)
                 for c in range(state.width)
                 if state.tile((c, r)).value == 0]
        agree = 0
        for _ in range(1000):
            k = int(rng.integers(1, 6))
            picks = rng.choice(len(cells), size=k, replace=False)
            for i, enemy in enumerate(state.alive_enemies()):
                enemy.alive = i < k
                if i < k:
                    enemy.pos = cells[int(picks[i])]
            meta = resolve_targets(gm, state, "g")
            bc, br = state.base
            _, _, best = min((abs(e.pos[0] - bc) + abs(e.pos[1] - br),
                              e.id, e) for e in state.alive_enemies())
            if (meta.resolved[0].entity_id == best.id
                    and meta.resolved[0].cell == best.pos):
                agree += 1
        assert agree == 1000


# -- network ---------------------------------------------------------------


def _naive_conv2d(x, w, b, stride):
    n, h, wdt, _ = x.shape
    k, _, _, c_out = w.shape
    h_out = (h - k) // stride + 1
    w_out = (wdt - k) // stride + 1
    out = np.zeros((n, h_out, w_out, c_out), dtype=np.float64)
    for s in range(n):
        for i in range(h_out):
            for j in range(w_out):
                patch = x[s, i * stride:i * stride + k,
                          j * stride:j * stride + k, :]
                for f in range(c_out):
                    out[s, i, j, f] = (patch * w[:, :, :, f]).sum() + b[f]
    return out


class TestConvolutionOracle:
    def test_matches_quadruple_loop_on_100_instances(self):
        from tankdef.nn import kernels

        rng = np.random.default_rng(0)
        for _ in range(100):
            k = int(rng.integers(1, 5))
            stride = int(rng.integers(1, 4))
            h = k + stride * int(rng.integers(0, 4))
            wdt = k + stride * int(rng.integers(0, 4))
            c_in, c_out, n = (int(rng.integers(1, 4)) for _ in range(3))
            x = rng.normal(size=(max(n, 1), h, wdt, c_in))
            w = rng.normal(size=(k, k, c_in, c_out))
            b = rng.normal(size=c_out)
            np.testing.assert_allclose(
                kernels.conv2d_forward(x, w, b, stride),
                _naive_conv2d(x, w, b, stride),
                rtol=1e-10, atol=1e-10,
            )


class TestGradientCheck:
    def test_full_loss_vs_central_differences(self):
        """Dual-stream net, complete actor-critic loss on a synthetic
        3-step buffer; >= 200 coordinates covering every tensor, max
        relative error < 1e-3 (< 5 min)."""
        start = time.time()
        arch = NetArchitecture(input_hw=(20, 20), conv=((4, 5, 3), (6, 3, 2)),
                               hidden=16)
        params64 = {k: v.astype(np.float64)
                    for k, v in init_params(arch, seed=1).items()}
        net = DualStreamNet(arch, params64)
        rng = np.random.default_rng(2)
        obs = rng.random((3, 20, 20, 4))
        masks = rng.random((3, 20, 20, 1))
        actions = np.array([4, 0, 2])
        returns = rng.normal(size=3)
        advantages = rng.normal(size=3)
        hp = Hyperparams(grad_clip=0.0)

        grads, _ = loss_and_grads(net, obs, masks, actions, returns,
                                  advantages, hp)

        def value_fn(p):
            probs, values, _ = DualStreamNet(arch, p).forward(obs, masks)
            logp = np.log(np.clip(probs[np.arange(3), actions], 1e-8, 1.0))
            return float(
                -(logp * advantages).sum()
                + hp.value_loss_coeff * ((returns - values) ** 2).sum()
                - hp.entropy_beta * entropy(probs).sum()
            )

        report = grad_check(net.params, value_fn, grads, num_coords=220,
                            eps=1e-5, tolerance=1e-3, seed=5)
        assert report.passed, report.failures[:5]
        assert report.coords_checked >= 200
        assert report.tensors_covered == len(net.params)
        assert time.time() - start < 300.0


class TestShapePipeline:
    def test_published_architecture_shapes(self):
        arch = NetArchitecture()  # 84x84, dual stream
        assert arch.input_hw == (84, 84)
        net = DualStreamNet(arch, init_params(arch, seed=0))
        assert net.conv_shapes == [(20, 20, 16), (9, 9, 32)]
        assert arch.stream_features == 9 * 9 * 32 == 2592
        assert net.params["fc_w"].shape == (5184, 256)
        assert net.params["policy_w"].shape == (256, 6)
        assert net.params["value_w"].shape == (256, 1)


class TestReturnRecursionOracle:
    def test_1000_random_buffers_within_1e6(self):
        rng = np.random.default_rng(9)
        for _ in range(1000):
            n = int(rng.integers(1, 9))
            rewards = rng.normal(size=n).tolist()
            values = rng.normal(size=n).tolist()
            bootstrap = float(rng.normal())
            terminal = bool(rng.integers(2))
            gamma = float(rng.uniform(0.3, 0.999))
            returns, adv = compute_returns(rewards, values, bootstrap,
                                           terminal, gamma)
            expected = []
            for t in range(n):
                acc = sum((gamma ** (k - t)) * rewards[k] for k in range(t, n))
                if not terminal:
                    acc += (gamma ** (n - t)) * bootstrap
                expected.append(acc)
            np.testing.assert_allclose(returns, expected, atol=1e-6)
            np.testing.assert_allclose(adv, np.array(expected) - values,
                                       atol=1e-6)


# -- training --------------------------------------------------------------


def _desk_setup(use_goal_map=True):
    stage = bundled_stage("desk")
    engine_cfg = EngineConfig(max_enemies=2, step_limit=400, cell_px=12)
    obs_cfg = ObsConfig(native_size=(108, 108))
    name = "desk_strategy" if use_goal_map else "desk_baseline"
    return stage, engine_cfg, obs_cfg, load_strategy_config(name)


class TestSingleWorkerDeterminism:
    def test_20k_steps_bit_identical(self, tmp_path):
        """workers=1, 20,000 decision steps, same seed twice: final
        checkpoints match byte for byte (<= 10 min)."""
        start = time.time()
        stage, engine_cfg, obs_cfg, strategy = _desk_setup()
        blobs = []
        for run in ("a", "b"):
            hp = Hyperparams(total_steps=20_000, workers=1, seed=11)
            result = train(stage, engine_cfg, obs_cfg, strategy, hp,
                           str(tmp_path / run))
            _, params, _ = load_checkpoint(
                result.final_checkpoints["net_solo"])
            blobs.append({k: v.tobytes() for k, v in params.items()})
        assert blobs[0] == blobs[1]
        assert time.time() - start < 600.0


def _random_policy_mean_reward(stage, engine_cfg, action_repeat, eval_steps,
                               seed):
    """Mean completed-episode reward of a uniform random policy acting at
    the same decision cadence as the trained agents."""
    rng = np.random.default_rng(seed)
    rewards, done, ep = [], 0, 0
    while done < eval_steps:
        state = load_stage(stage, engine_cfg, seed=seed * 1000 + ep)
        ep += 1
        total = 0.0
        while state.status == Status.RUNNING and done < eval_steps:
            acts = {t.agent_id: Action(int(rng.integers(6)))
                    for t in state.alive_players()}
            for _ in range(action_repeat):
                outcome = step(state, acts)
                total += sum(outcome.rewards.values())
                if outcome.terminal:
                    break
            done += 1
        if state.status != Status.RUNNING:
            rewards.append(total)
    return float(np.mean(rewards)) if rewards else 0.0


@pytest.mark.slow
class TestDeskScaleLearningTrend:
    def test_learning_beats_random_and_goal_map_extends_episodes(
            self, tmp_path):
        """Desk scale: 9x9 stage, 2 enemies, workers=4, 200,000 decision
        steps per run, 5 seeds per variant (<= 2 h total).

        (a) the goal-map variant's final evaluated mean reward is at
            least 3x the random-policy baseline in >= 4 of 5 seeds;
        (b) the goal-map variant's mean episode length is >= the plain
            baseline variant's in >= 4 of 5 seeds.
        """
        seeds = range(5)
        eval_steps = 1500
        metrics = {"goal_map": {}, "baseline": {}}
        for variant, use_goal_map in (("goal_map", True),
                                      ("baseline", False)):
            stage, engine_cfg, obs_cfg, strategy = _desk_setup(use_goal_map)
            for seed in seeds:
                out = tmp_path / f"{variant}_{seed}"
                hp = Hyperparams(total_steps=200_000, workers=4, seed=seed)
                result = train(stage, engine_cfg, obs_cfg, strategy, hp,
                               str(out))
                report = evaluate(result.final_checkpoints, strategy, stage,
                                  engine_cfg, obs_cfg, eval_steps=eval_steps,
                                  seed=seed)
                assert not report.insufficient_data
                metrics[variant][seed] = (report.mean_total_reward,
                                          report.mean_steps_per_episode)
                shutil.rmtree(out)  # ~100 MB of checkpoints per run

        stage, engine_cfg, obs_cfg, _ = _desk_setup()
        reward_wins = 0
        length_wins = 0
        for seed in seeds:
            random_mean = _random_policy_mean_reward(
                stage, engine_cfg, obs_cfg.action_repeat, eval_steps, seed)
            trained_reward, trained_len = metrics["goal_map"][seed]
            if trained_reward >= 3.0 * random_mean and trained_reward > 0:
                reward_wins += 1
            if trained_len >= metrics["baseline"][seed][1]:
                length_wins += 1
        summary = json.dumps({str(k): v for k, v in metrics.items()})
        assert reward_wins >= 4, summary
        assert length_wins >= 4, summary


# -- evaluation protocol ---------------------------------------------------


class TestEvaluationProtocol:
    def test_twenty_milestones_for_any_total(self):
        for total in (1, 7, 19, 20, 21, 1000, 123457, 10_000_000):
            ms = milestone_steps(total)
            assert len(ms) == 20
            assert ms[-1] == total
            assert ms == sorted(ms)

    def test_aggregation_matches_recomputation(self):
        rng = np.random.default_rng(4)
        for _ in range(100):
            n = int(rng.integers(1, 40))
            rewards = rng.uniform(0, 400, size=n).tolist()
            steps = rng.integers(1, 500, size=n).tolist()
            report = MilestoneReport.from_episodes(123, rewards, steps,
                                                   seed=0)
            assert report.mean_total_reward == float(np.mean(rewards))
            assert report.mean_steps_per_episode == float(np.mean(steps))
            assert report.episodes == n

    def test_table1_rows_round_trip(self, tmp_path):
        from tankdef.evaluate import export_report, parse_report_csv

        assert set(TABLE1_FIXTURES.values()) == {(149.0, 152.0),
                                                 (301.0, 234.0),
                                                 (363.0, 295.0)}
        report = MilestoneReport.from_episodes(10, [1.0], [2], seed=0,
                                               label="m")
        path = str(tmp_path / "r.csv")
        export_report([report], None, path)
        rows = {r["label"]: r for r in parse_report_csv(path)}
        for scheme, (reward, steps) in TABLE1_FIXTURES.items():
            row = rows[f"table1:{scheme}"]
            assert row["mean_total_reward"] == reward
            assert row["mean_steps_per_episode"] == steps


# -- wire protocol ---------------------------------------------------------


class TestWireProtocolRoundTrip:
    def _random_message(self, rng, state):
        if rng.random() < 0.5:
            metas = {"g": TargetMeta(resolved=[
                ResolvedTarget(cell=(int(rng.integers(13)),
                                     int(rng.integers(13))),
                               priority=i,
                               bonus_reward=float(rng.uniform(0, 5)),
                               spec_id=f"s{i}",
                               entity_id=(int(rng.integers(99))
                                          if rng.random() < 0.5 else None))
                for i in range(int(rng.integers(0, 4)))
            ], resolved_at_tick=state.tick)}
            return protocol.state_update(state, metas,
                                         episode=int(rng.integers(30)))
        x0, y0 = int(rng.integers(9)), int(rng.integers(9))
        return protocol.goal_edit({
            "kind": "set_working_region",
            "group_id": f"g{int(rng.integers(3))}",
            "rect": [x0, y0, x0 + int(rng.integers(4)),
                     y0 + int(rng.integers(4))],
        })

    def test_encode_decode_identity_1000_messages(self, default_stage_text):
        rng = np.random.default_rng(21)
        state = load_stage(default_stage_text, seed=0)
        for _ in range(1000):
            if state.status == Status.RUNNING and rng.random() < 0.25:
                step(state, {t.agent_id: Action(int(rng.integers(6)))
                             for t in state.alive_players()})
            msg = self._random_message(rng, state)
            assert protocol.decode(protocol.encode(msg)) == \
                json.loads(json.dumps(msg))

    def test_transcript_replay_identical(self, tmp_path, default_stage_text):
        rng = np.random.default_rng(22)
        state = load_stage(default_stage_text, seed=3)
        sent = []
        for _ in range(60):
            if state.status != Status.RUNNING:
                break
            step(state, {t.agent_id: Action(int(rng.integers(6)))
                         for t in state.alive_players()})
            sent.append(self._random_message(rng, state))
        path = tmp_path / "session.bin"
        path.write_bytes(b"".join(protocol.encode_frame(m) for m in sent))
        assert list(protocol.decode_frames(path.read_bytes())) == \
            [json.loads(json.dumps(m)) for m in sent]
