"""Observation pipeline: rendering, grayscale, resizing, stacking."""

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from tankdef.engine import Action, EngineConfig, load_stage, step
from tankdef.observation import (
    PALETTE,
    DimensionMismatch,
    FrameStack,
    ObsConfig,
    ObservationPipeline,
    area_resize,
    preprocess,
    render_frame,
    repeat_and_observe,
    resize_weights,
)


def naive_area_resize(img, out_hw):
    """Box-filter downscale computed cell by cell with plain loops."""
    h_in, w_in = img.shape
    h_out, w_out = out_hw
    out = np.zeros(out_hw)
    for i in range(h_out):
        for j in range(w_out):
            y0, y1 = i * h_in / h_out, (i + 1) * h_in / h_out
            x0, x1 = j * w_in / w_out, (j + 1) * w_in / w_out
            acc = 0.0
            for y in range(int(np.floor(y0)), int(np.ceil(y1))):
                wy = min(y + 1, y1) - max(y, y0)
                for x in range(int(np.floor(x0)), int(np.ceil(x1))):
                    wx = min(x + 1, x1) - max(x, x0)
                    acc += wy * wx * img[y, x]
            out[i, j] = acc / ((y1 - y0) * (x1 - x0))
    return out


class TestObsConfig:
    def test_default_rescale_factor_below_one(self):
        cfg = ObsConfig()
        assert cfg.delta == (84 / 104, 84 / 104)
        assert all(d < 1 for d in cfg.delta)

    def test_upscale_rejected(self):
        with pytest.raises(ValueError):
            ObsConfig(native_size=(64, 64))

    def test_bad_repeat_and_stack_rejected(self):
        with pytest.raises(ValueError):
            ObsConfig(action_repeat=0)
        with pytest.raises(ValueError):
            ObsConfig(frame_stack=0)

    def test_for_state_matches_grid(self, default_stage_text):
        state = load_stage(default_stage_text)
        cfg = ObsConfig.for_state(state)
        assert cfg.native_size == (13 * 8, 13 * 8)

    def test_round_trip(self):
        cfg = ObsConfig(native_size=(108, 108), action_repeat=3)
        assert ObsConfig.from_dict(cfg.to_dict()) == cfg


class TestRenderFrame:
    def test_dimensions_match_grid_times_cell_px(self, default_stage_text):
        state = load_stage(default_stage_text)
        frame = render_frame(state)
        assert frame.shape == (104, 104, 3)
        assert frame.dtype == np.uint8

    def test_pixel_counts_per_entity(self, box_state):
        """Every tank paints exactly one cell_px x cell_px block."""
        frame = render_frame(box_state)
        px = box_state.config.cell_px
        for key, tank in (("player_p0", box_state.players()[0]),
                          ("enemy", box_state.alive_enemies()[0])):
            color = np.array(PALETTE[key], dtype=np.uint8)
            hits = (frame == color).all(axis=-1).sum()
            assert hits == px * px, key
            c, r = tank.pos
            block = frame[r * px:(r + 1) * px, c * px:(c + 1) * px]
            assert (block == color).all()

    def test_bullet_renders_as_two_by_two_dot(self, box_state):
        step(box_state, {"p0": Action.LEFT})    # avoid killing the enemy
        step(box_state, {"p0": Action.UP})      # face up against the pond
        step(box_state, {"p0": Action.FIRE})
        assert box_state.bullets, "expected a bullet in flight"
        frame = render_frame(box_state)
        white = np.array(PALETTE["bullet"], dtype=np.uint8)
        assert (frame == white).all(axis=-1).sum() == 4

    def test_rendering_is_pure(self, box_state):
        a = render_frame(box_state)
        b = render_frame(box_state)
        np.testing.assert_array_equal(a, b)


class TestResize:
    def test_weight_rows_sum_to_one(self):
        for src, dst in ((104, 84), (108, 84), (10, 7)):
            w = resize_weights(src, dst)
            assert w.shape == (dst, src)
            np.testing.assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    def test_constant_image_is_preserved(self):
        img = np.full((104, 104), 37.0)
        out = area_resize(img, (84, 84))
        np.testing.assert_allclose(out, 37.0, atol=1e-9)

    def test_mean_is_preserved(self, rng):
        img = rng.uniform(0, 255, size=(104, 104))
        out = area_resize(img, (52, 52))
        assert out.mean() == pytest.approx(img.mean(), rel=1e-9)

    @pytest.mark.parametrize("src_hw,dst_hw", [
        ((12, 12), (7, 7)), ((104, 104), (84, 84)), ((9, 15), (5, 11)),
    ])
    def test_matches_naive_box_filter(self, rng, src_hw, dst_hw):
        img = rng.uniform(0, 255, size=src_hw)
        fast = area_resize(img, dst_hw)
        slow = naive_area_resize(img, dst_hw)
        np.testing.assert_allclose(fast, slow, atol=1e-9)


class TestPreprocess:
    def test_grayscale_weights(self):
        cfg = ObsConfig(native_size=(104, 104))
        frame = np.zeros((104, 104, 3), dtype=np.uint8)
        frame[:, :] = (200, 100, 50)
        gray = preprocess(frame, cfg)
        # preprocess keeps the [0, 255] range; /255 happens on stack push
        expected = 0.299 * 200 + 0.587 * 100 + 0.114 * 50
        np.testing.assert_allclose(gray, expected, atol=1e-4)

    def test_output_shape_and_range(self, default_stage_text):
        state = load_stage(default_stage_text)
        gray = preprocess(render_frame(state), ObsConfig())
        assert gray.shape == (84, 84)
        assert gray.dtype == np.float32
        assert float(gray.min()) >= 0.0 and float(gray.max()) <= 255.0

    def test_wrong_native_size_rejected(self):
        with pytest.raises(DimensionMismatch):
            preprocess(np.zeros((100, 104, 3), dtype=np.uint8), ObsConfig())


class TestFrameStack:
    def test_starts_zero_padded_newest_last(self):
        cfg = ObsConfig()
        stack = FrameStack(cfg)
        gray = np.full((84, 84), 127.5, dtype=np.float32)
        stack.push(gray)
        tensor = stack.tensor()
        assert tensor.shape == (84, 84, 4)
        np.testing.assert_array_equal(tensor[:, :, :3], 0.0)
        # push normalizes by 1/255
        np.testing.assert_allclose(tensor[:, :, 3], 0.5)

    def test_oldest_frame_dropped(self):
        cfg = ObsConfig()
        stack = FrameStack(cfg)
        for v in (25.5, 51.0, 76.5, 102.0, 127.5):
            stack.push(np.full((84, 84), v, dtype=np.float32))
        tensor = stack.tensor()
        np.testing.assert_allclose(tensor[0, 0], [0.2, 0.3, 0.4, 0.5])

    def test_reset_clears_history(self):
        cfg = ObsConfig()
        stack = FrameStack(cfg)
        stack.push(np.full((84, 84), 255.0, dtype=np.float32))
        stack.reset()
        stack.push(np.full((84, 84), 178.5, dtype=np.float32))
        tensor = stack.tensor()
        np.testing.assert_array_equal(tensor[:, :, :3], 0.0)


class TestRepeatAndObserve:
    def test_one_decision_step_is_action_repeat_ticks(self, desk_stage_text):
        engine_cfg = EngineConfig(max_enemies=2, cell_px=12)
        state = load_stage(desk_stage_text, engine_cfg, seed=0)
        obs_cfg = ObsConfig.for_state(state)
        pipeline = ObservationPipeline(obs_cfg, ["p0"])
        obs, rewards, terminal, events = repeat_and_observe(
            state, {"p0": Action.NOOP}, pipeline
        )
        assert state.tick == obs_cfg.action_repeat == 5
        assert obs["p0"].shape == (84, 84, 4)
        assert set(rewards) == {"p0"}

    def test_stops_early_on_terminal(self):
        stage = "#####\n#~E~#\n#~~~#\n#.1.#\n#..B#\n#####"
        engine_cfg = EngineConfig(p_fire=1.0, p_advance=0.0, max_enemies=1,
                                  cell_px=14)
        state = load_stage(stage, engine_cfg, seed=0)
        obs_cfg = ObsConfig.for_state(state, net_size=(60, 60))
        pipeline = ObservationPipeline(obs_cfg, ["p0"])
        _, _, terminal, events = repeat_and_observe(
            state, {"p0": Action.NOOP}, pipeline
        )
        assert terminal
        assert state.tick == 1  # first tick already killed the player

    def test_rewards_summed_over_ticks(self, box_state):
        obs_cfg = ObsConfig.for_state(box_state, net_size=(30, 30))
        pipeline = ObservationPipeline(obs_cfg, ["p0"])
        _, rewards, _, events = repeat_and_observe(
            box_state, {"p0": Action.FIRE}, pipeline
        )
        assert rewards["p0"] == 10.0
        assert sum(e["kind"] == "enemy_destroyed" for e in events) == 1


@given(src=st.integers(2, 60), dst=st.integers(1, 59))
@settings(max_examples=40, deadline=None)
def test_resize_preserves_total_mass_property(src, dst):
    if dst >= src:
        dst = src - 1
    rng = np.random.default_rng(src * 1000 + dst)
    img = rng.uniform(0, 255, size=(src, src))
    out = area_resize(img, (dst, dst))
    # area averaging preserves the mean exactly (row weights sum to 1)
    assert out.mean() == pytest.approx(img.mean(), rel=1e-9)
