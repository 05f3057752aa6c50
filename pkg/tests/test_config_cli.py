import json
from pathlib import Path

import pytest

from hetgrasp.cli import main
from hetgrasp.config import ExperimentConfig, load_config, parse_config, with_overrides
from hetgrasp.errors import ConfigError

CONFIGS = Path(__file__).resolve().parent.parent / "configs"


def test_shipped_configs_parse():
    canonical = load_config(CONFIGS / "canonical.yaml")
    assert canonical.dataset.instances == 210 and canonical.physics.clamp_force == "auto"
    fast = load_config(CONFIGS / "fast.yaml")
    assert fast.training.steps < canonical.training.steps


def test_unknown_key_names_line():
    with pytest.raises(ConfigError, match=r"training\.stepz.*:3"):
        parse_config("name: x\ntraining:\n  stepz: 10\n", "cfg.yaml")
    with pytest.raises(ConfigError, match="unknown key"):
        parse_config("optimizer: {}\n")


def test_type_and_range_errors():
    with pytest.raises(ConfigError, match="integer"):
        parse_config("training:\n  steps: ten\n")
    with pytest.raises(ConfigError):
        parse_config("physics:\n  clamp_force: -3\n")
    with pytest.raises(ConfigError):
        parse_config("eval:\n  split: everything\n")
    with pytest.raises(ConfigError):
        parse_config("net:\n  aggregator: max\n")
    with pytest.raises(ConfigError):
        parse_config("eval:\n  k_values: [0, 25]\n")
    with pytest.raises(ConfigError):
        ExperimentConfig().physics_params()


def test_hash_tracks_content():
    a = parse_config("training:\n  steps: 10\n")
    b = parse_config("# comment\ntraining: {steps: 10}\n")
    assert a.hash() == b.hash()
    assert with_overrides(a, training={"steps": 11}).hash() != a.hash()
    assert parse_config("") == ExperimentConfig()


def test_fov_keeps_trunk_input():
    cfg = ExperimentConfig()
    assert cfg.net_config(64).input_size == cfg.net_config(32).input_size


def _cli(*args, cfg, out):
    return main([*args, "--config", str(cfg), "--out", str(out), "--deterministic"])


def test_missing_artifact_exit_code(tmp_path, capsys):
    assert _cli("train", cfg=CONFIGS / "fast.yaml", out=tmp_path) == 1
    assert "hetgrasp collect" in capsys.readouterr().err
    assert _cli("calibrate", cfg=CONFIGS / "fast.yaml", out=tmp_path) == 1
    bad = tmp_path / "bad.yaml"
    bad.write_text("trainig: {}\n")
    assert _cli("gen-objects", cfg=bad, out=tmp_path) == 1


def test_pipeline_end_to_end(tmp_path):
    cfg = CONFIGS / "fast.yaml"
    for step in (["gen-objects"], ["calibrate"], ["collect"], ["stats"], ["train", "--model", "condex"],
                 ["train", "--model", "dexnet"], ["eval-error", "--model", "condex"], ["curve"],
                 ["eval-grasp", "--model", "condex", "--strategy", "accumulated"], ["export"]):
        assert _cli(*step, cfg=cfg, out=tmp_path) == 0, step
    root = tmp_path / "fast"
    calib = json.loads((root / "metrics" / "calibration.json").read_text())
    assert calib["clamp_force"] > 0 and "created" not in calib
    export = json.loads((root / "export.json").read_text())
    assert "checkpoints/condex.ckpt" in export["artifacts"]
    assert (root / "metrics" / "curve.svg").exists()
    # a second deterministic run reproduces every artifact
    for step in (["gen-objects"], ["calibrate"], ["collect"], ["train", "--model", "condex"]):
        assert _cli(*step, cfg=cfg, out=tmp_path / "again") == 0
    for rel in ("shards/shard-0000.bin", "checkpoints/condex.ckpt", "objects/manifest.csv"):
        assert (root / rel).read_bytes() == (tmp_path / "again" / "fast" / rel).read_bytes(), rel
