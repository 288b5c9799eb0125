"""Command-line interface: exit codes, banners, end-to-end subcommands."""

import os

import pytest

from tankdef.cli import (
    EXIT_CONFIG,
    EXIT_OK,
    EXIT_USAGE,
    build_parser,
    main,
)


class TestParsing:
    def test_no_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main([])
        assert exc.value.code == EXIT_USAGE

    def test_unknown_command_is_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["conquer"])
        assert exc.value.code == EXIT_USAGE

    def test_all_subcommands_accept_seed(self):
        parser = build_parser()
        for cmd in ("train", "eval", "play", "serve"):
            args = parser.parse_args([cmd, "--seed", "42"])
            assert args.seed == 42


class TestConfigErrors:
    def test_unknown_stage_exits_3(self, capsys):
        assert main(["play", "--stage", "atlantis"]) == EXIT_CONFIG
        assert "config error" in capsys.readouterr().err

    def test_unknown_policy_exits_3(self):
        assert main(["play", "--policy", "grandmaster"]) == EXIT_CONFIG

    def test_eval_without_checkpoints_exits_3(self):
        assert main(["eval", "--stage", "desk"]) == EXIT_CONFIG

    def test_malformed_checkpoint_spec_exits_3(self):
        assert main(["eval", "--stage", "desk",
                     "--checkpoint", "no-equals-sign"]) == EXIT_CONFIG


class TestPlay:
    def test_runs_and_banners(self, capsys):
        code = main(["play", "--stage", "desk", "--engine", "desk_engine",
                     "--episodes", "2", "--seed", "3"])
        out = capsys.readouterr().out
        assert code == EXIT_OK
        assert "== tankdef play ==" in out
        assert "seed: 3" in out
        assert "mean total reward over 2 episodes" in out

    def test_same_seed_same_summary(self, capsys):
        argv = ["play", "--stage", "desk", "--engine", "desk_engine",
                "--episodes", "2", "--seed", "5"]
        main(argv)
        first = capsys.readouterr().out
        main(argv)
        second = capsys.readouterr().out
        assert first == second

    def test_dump_frames_writes_pngs(self, tmp_path, capsys):
        out_dir = tmp_path / "frames"
        code = main(["play", "--stage", "desk", "--engine", "desk_engine",
                     "--episodes", "1", "--seed", "0",
                     "--dump-frames", str(out_dir)])
        assert code == EXIT_OK
        frames = sorted(os.listdir(out_dir))
        assert frames and frames[0].endswith(".png")
        with open(out_dir / frames[0], "rb") as fh:
            assert fh.read(8) == b"\x89PNG\r\n\x1a\n"


class TestTrainEval:
    def test_train_then_eval_round_trip(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        code = main(["train", "--stage", "desk", "--engine", "desk_engine",
                     "--obs", "desk_obs", "--strategy", "desk_strategy",
                     "--steps", "40", "--workers", "1", "--seed", "1",
                     "--out", out])
        assert code == EXIT_OK
        assert "trained" in capsys.readouterr().out
        assert os.path.exists(os.path.join(out, "train_log.jsonl"))

        report = str(tmp_path / "report.csv")
        code = main(["eval", "--stage", "desk", "--engine", "desk_engine",
                     "--obs", "desk_obs", "--strategy", "desk_strategy",
                     "--run-dir", out, "--steps", "120", "--seed", "1",
                     "--out", report])
        assert code == EXIT_OK
        assert os.path.exists(report)
        assert "milestone" in capsys.readouterr().out

    def test_eval_all_milestones(self, tmp_path, capsys):
        out = str(tmp_path / "run")
        main(["train", "--stage", "desk", "--engine", "desk_engine",
              "--obs", "desk_obs", "--strategy", "desk_strategy",
              "--steps", "40", "--workers", "1", "--seed", "1",
              "--out", out])
        capsys.readouterr()
        code = main(["eval", "--stage", "desk", "--engine", "desk_engine",
                     "--obs", "desk_obs", "--strategy", "desk_strategy",
                     "--run-dir", out, "--milestones", "--steps", "30",
                     "--seed", "1"])
        out_text = capsys.readouterr().out
        assert code == EXIT_OK
        assert out_text.count("milestone ") >= 20
