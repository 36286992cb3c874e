"""CLI command tests: train/eval/heatmap/bullets, file formats, determinism."""

import json
from pathlib import Path

import numpy as np
import pytest

from skirmish.cli import main
from skirmish.config import (
    RunConfig,
    config_from_dict,
    config_hash,
    config_to_dict,
    desk_run_config,
    load_run_config,
    save_run_config,
)
from skirmish.experiments import bullet_range_session, grid_to_pgm, heatmap_grid
from skirmish.mapdef import load_bundled
from skirmish.net import ParamSet, load_checkpoint


@pytest.fixture(scope="module")
def trained_dir(tmp_path_factory):
    """One short CLI training run shared by the command tests."""
    out = tmp_path_factory.mktemp("run")
    code = main(
        [
            "train",
            "--steps",
            "600",
            "--seed",
            "5",
            "--out",
            str(out),
            "--quiet",
        ]
    )
    assert code == 0
    return out


class TestConfig:
    def test_round_trip(self, tmp_path):
        cfg = desk_run_config(mode="pure", seed=9, total_steps=1234)
        path = tmp_path / "cfg.json"
        save_run_config(cfg, path)
        again = load_run_config(path)
        assert again == cfg
        assert config_hash(again) == config_hash(cfg)

    def test_mode_validation(self):
        with pytest.raises(ValueError):
            RunConfig(mode="both").validate()

    def test_hash_changes_with_content(self):
        a = desk_run_config(seed=1)
        b = desk_run_config(seed=2)
        assert config_hash(a) != config_hash(b)


class TestTrainCommand:
    def test_outputs_exist(self, trained_dir):
        assert (trained_dir / "checkpoint.bin").exists()
        metrics = (trained_dir / "metrics.csv").read_text().splitlines()
        assert metrics[0].startswith("# config_hash=")
        assert metrics[1].startswith("version,steps")
        assert len(metrics) >= 3  # at least one data row
        ps = load_checkpoint(trained_dir / "checkpoint.bin")
        assert ps.version >= 1

    def test_same_seed_identical_metrics(self, tmp_path):
        outs = []
        for name in ("a", "b"):
            out = tmp_path / name
            code = main(
                ["train", "--steps", "400", "--seed", "3", "--out", str(out), "--quiet"]
            )
            assert code == 0
            outs.append((out / "metrics.csv").read_text())
        assert outs[0] == outs[1]

    def test_pure_rl_never_activates_navmesh(self, tmp_path):
        from dataclasses import replace

        from skirmish.config import desk_run_config
        from skirmish.env import make_env, run_episode

        cfg = desk_run_config(mode="pure", seed=0)
        env = make_env(cfg.env_config())
        ps = ParamSet(replace(cfg.net, seed=0))
        rng = np.random.default_rng(0)
        total_nav = 0
        for seed in range(5):
            result = run_episode(env, ps, seed=seed, sample_rng=rng)
            total_nav += result.nav_activations
        assert total_nav == 0

    def test_bad_config_path_machine_readable_error(self, capsys):
        code = main(["train", "--config", "/nonexistent/cfg.json"])
        assert code != 0
        err = capsys.readouterr().err
        payload = json.loads(err.strip().splitlines()[-1])
        assert "error" in payload


class TestEvalCommand:
    def test_vs_bt_report_sums(self, trained_dir, capsys):
        code = main(
            ["eval", "--ckpt", str(trained_dir / "checkpoint.bin"), "--vs", "bt",
             "--episodes", "6", "--seed", "2"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["wins"] + report["losses"] + report["draws"] == report["episodes"] == 6
        lo, hi = report["win_rate_wilson_95"]
        assert 0.0 <= lo <= report["win_rate"] <= hi <= 1.0

    def test_bad_opponent_spec(self, trained_dir, capsys):
        code = main(
            ["eval", "--ckpt", str(trained_dir / "checkpoint.bin"), "--vs", "nonsense",
             "--episodes", "1"]
        )
        assert code != 0

    def test_vs_checkpoint_runs(self, trained_dir, capsys):
        code = main(
            ["eval", "--ckpt", str(trained_dir / "checkpoint.bin"), "--vs",
             f"ckpt:{trained_dir / 'checkpoint.bin'}", "--episodes", "4"]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        assert report["episodes"] == 4


class TestHeatmapCommand:
    def test_zero_episodes_all_zero(self, trained_dir, tmp_path, capsys):
        out = tmp_path / "hm"
        code = main(
            ["heatmap", "--ckpt", str(trained_dir / "checkpoint.bin"), "--episodes",
             "0", "--out", str(out)]
        )
        assert code == 0
        rows = [
            line for line in (out / "heatmap.csv").read_text().splitlines()
            if not line.startswith("#")
        ]
        values = [int(v) for row in rows for v in row.split(",")]
        assert sum(values) == 0

    def test_grid_dims_match_map(self, trained_dir, tmp_path, capsys):
        out = tmp_path / "hm2"
        code = main(
            ["heatmap", "--ckpt", str(trained_dir / "checkpoint.bin"), "--episodes",
             "1", "--out", str(out)]
        )
        assert code == 0
        report = json.loads(capsys.readouterr().out)
        m = load_bundled("farm_small")
        assert report["grid"] == [int(np.ceil(m.width)), int(np.ceil(m.height))]
        assert report["samples"] >= 1

    def test_scripted_walker_marks_its_line(self):
        # Oracle: a straight-line walker's visited cells are exactly the cells
        # along its path.
        m = load_bundled("farm_small")
        positions = [(10.0 + k, 40.5) for k in range(20)]
        grid = heatmap_grid(m, positions)
        for k in range(20):
            assert grid[40, 10 + k] == 1
        assert grid.sum() == 20

    def test_pgm_header(self):
        m = load_bundled("farm_small")
        grid = heatmap_grid(m, [(5.0, 5.0)] * 10)
        pgm = grid_to_pgm(grid, "test").splitlines()
        assert pgm[0] == "P2"
        assert pgm[2] == f"{grid.shape[1]} {grid.shape[0]}"
        assert pgm[3] == "255"


class TestBulletsCommand:
    def test_ruled_session_truncated(self, trained_dir, tmp_path, capsys):
        out = tmp_path / "b"
        code = main(
            ["bullets", "--ckpt", str(trained_dir / "checkpoint.bin"), "--distance",
             "150", "--shots", "500", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "bullets_ruled.csv").read_text().splitlines()
        assert lines[1] == "episode,tick,distance,offset_x,offset_y,hit_part"
        r_limit = 150.0 * 40.0 / 1500.0
        for line in lines[2:]:
            parts = line.split(",")
            ox, oy = float(parts[3]), float(parts[4])
            assert np.hypot(ox, oy) <= r_limit

    def test_unconstrained_exceeds_radius_sometimes(self):
        rows = bullet_range_session(150.0, 2000, seed=1, unconstrained=True)
        r_limit = 150.0 * 40.0 / 1500.0
        outside = sum(1 for r in rows if np.hypot(*r.offset) > r_limit)
        assert outside > 0

    def test_zero_shots_header_only(self, trained_dir, tmp_path, capsys):
        out = tmp_path / "b0"
        code = main(
            ["bullets", "--ckpt", str(trained_dir / "checkpoint.bin"), "--distance",
             "100", "--shots", "0", "--out", str(out)]
        )
        assert code == 0
        lines = (out / "bullets_ruled.csv").read_text().splitlines()
        assert len(lines) == 2  # comment + header, no data rows
