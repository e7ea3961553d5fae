import dataclasses
import math

import pytest

from evpercept.config import (ConfigError, RunConfig, load_run_config, load_scene_config, run_config_for_scene,
                              write_run_config, write_scene_config)
from evpercept.simulator import SceneConfig


def dataset_files(tmp_path):
    for name in ("events.csv", "poses.txt", "imu.csv", "velocity.csv", "depth_index.csv"):
        (tmp_path / name).write_text("")


def test_run_config_round_trip(tmp_path):
    dataset_files(tmp_path)
    cfg = RunConfig.default(tmp_path)
    cfg.pipeline = dataclasses.replace(cfg.pipeline, window=0.02, compensation="rotation", estimator="mono",
                                       t_start=0.1, t_end=0.4)
    cfg.threshold = dataclasses.replace(cfg.threshold, c=0.3)
    cfg.extrinsics = dataclasses.replace(cfg.extrinsics, depth_translation=(0.1, 0.0, -0.02))
    write_run_config(tmp_path / "run.cfg", cfg)
    back = load_run_config(tmp_path / "run.cfg")
    for name in ("pipeline", "threshold", "extrinsics", "detection", "tracking", "depth", "solver", "camera"):
        assert getattr(back, name) == getattr(cfg, name), name
    assert back.path("events") == tmp_path / "events.csv"
    write_run_config(tmp_path / "default.cfg", RunConfig.default(tmp_path))
    assert math.isnan(load_run_config(tmp_path / "default.cfg").pipeline.t_start)


def test_partial_config_uses_defaults(tmp_path):
    dataset_files(tmp_path)
    (tmp_path / "run.cfg").write_text("[pipeline]\nwindow = 0.01  # shorter\n")
    cfg = load_run_config(tmp_path / "run.cfg")
    assert cfg.pipeline.window == 0.01
    assert cfg.threshold == RunConfig.default().threshold


@pytest.mark.parametrize("text, match", [
    ("[pipelin]\nwindow = 0.01\n", "unknown section"),
    ("[pipeline]\nwindw = 0.01\n", "unknown key"),
    ("[pipeline]\nwindow = soon\n", "cannot parse"),
    ("[pipeline]\ncompensation = warp\n", "compensation"),
    ("[pipeline]\nwindow = -1\n", "window"),
    ("[pipeline]\nfigures = maybe\n", "cannot parse"),
])
def test_invalid_run_config(tmp_path, text, match):
    dataset_files(tmp_path)
    (tmp_path / "run.cfg").write_text(text)
    with pytest.raises(ConfigError, match=match):
        load_run_config(tmp_path / "run.cfg")


def test_missing_dataset_files(tmp_path):
    (tmp_path / "run.cfg").write_text("[dataset]\nimu = nope.csv\n")
    with pytest.raises(ConfigError, match="does not exist"):
        load_run_config(tmp_path / "run.cfg")
    load_run_config(tmp_path / "run.cfg", check_files=False)
    with pytest.raises(ConfigError):
        load_run_config(tmp_path / "absent.cfg")


def test_scene_config_round_trip(tmp_path):
    scene = dataclasses.replace(SceneConfig(), seed=7, duration=0.3)
    write_scene_config(tmp_path / "s.cfg", scene)
    assert load_scene_config(tmp_path / "s.cfg") == scene
    (tmp_path / "bad.cfg").write_text("[scene]\nsed = 3\n")
    with pytest.raises(ConfigError):
        load_scene_config(tmp_path / "bad.cfg")


def test_run_config_for_scene_matches_cameras():
    scene = SceneConfig()
    cfg = run_config_for_scene(scene)
    assert (cfg.camera.width, cfg.camera.fx) == (scene.width, scene.fx)
    assert cfg.depth_camera.fx == scene.depth_fx
    assert cfg.pipeline.window == scene.window
