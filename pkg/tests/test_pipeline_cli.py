import io
import shutil

import numpy as np
import pytest

from conftest import scene_config
from evpercept.cli import EXIT_CONFIG, EXIT_DATASET, EXIT_OK, EXIT_PIPELINE, main
from evpercept.config import load_run_config
from evpercept.events import EventStream
from evpercept.pipeline import Dataset, DatasetError, load_dataset, process


def cli(*argv):
    out = io.StringIO()
    code = main(list(map(str, argv)), out)
    return code, out.getvalue()


def rows(text):
    return dict(line.split("\t", 1) for line in text.splitlines() if "\t" in line)


@pytest.fixture(scope="module")
def default_runs(default_scene):
    return {est: process(Dataset.from_bundle(default_scene), scene_config(default_scene, estimator=est))
            for est in ("fusion", "mono")}


def test_empty_event_stream(default_scene):
    ds = Dataset.from_bundle(default_scene)
    ds.events = EventStream(np.zeros(0), np.zeros(0, int), np.zeros(0, int), np.zeros(0, int), 240, 180)
    ds.labels, ds.truth_windows = None, None
    res = process(ds, scene_config(default_scene))
    assert res.report.detections == 0 and res.estimate is None


def test_default_scene_estimate(default_runs):
    fusion, mono = default_runs["fusion"], default_runs["mono"]
    assert fusion.report.detection_rate >= 0.9
    assert fusion.report.ape.mean < 0.3
    assert mono.report.ape.mean > fusion.report.ape.mean
    assert fusion.report.depth_measurements >= 3


def test_translation_compensation_raises_contrast(default_scene):
    eta = {m: process(Dataset.from_bundle(default_scene), scene_config(default_scene, compensation=m))
           .report.mean_contrast() for m in ("none", "rotation", "rotation+translation")}
    assert eta["rotation+translation"] >= eta["rotation"]


def test_run_reports_are_reproducible(dataset_dir, tmp_path):
    outs = []
    for name in ("a", "b"):
        code, text = cli("run", dataset_dir / "run.cfg", "-o", tmp_path / name, "--no-figures")
        assert code == EXIT_OK
        outs.append(tmp_path / name)
    for f in ("metrics.txt", "trajectory.txt", "detections.csv", "tracks.csv", "observations.csv"):
        assert (outs[0] / f).read_bytes() == (outs[1] / f).read_bytes(), f


def test_run_writes_figures(dataset_dir, tmp_path):
    code, text = cli("run", dataset_dir / "run.cfg", "-o", tmp_path / "r")
    assert code == EXIT_OK
    assert rows(text)["run_dir"] == str(tmp_path / "r")
    for name in ("contrast.png", "detections.png", "trajectory.png", "mean_time_images.png"):
        assert (tmp_path / "r" / "figures" / name).stat().st_size > 0


def test_metrics_and_compare(dataset_dir, tmp_path):
    cli("run", dataset_dir / "run.cfg", "-o", tmp_path / "a", "--no-figures")
    code, text = cli("metrics", tmp_path / "a")
    assert code == EXIT_OK
    m = rows(text)
    assert float(m["detection_rate"]) >= 0.9 and "compensation_ms_avg" in m
    assert any(line.startswith("figure\t") for line in text.splitlines())
    code, text = cli("compare", tmp_path / "a", tmp_path / "a")
    assert code == EXIT_OK
    lines = [l.split("\t") for l in text.splitlines()]
    assert lines[0] == ["metric", "a", "b", "b-a"]
    assert all(l[3] in ("", "0.000000") for l in lines[1:])
    assert cli("metrics", tmp_path / "nothing")[0] == EXIT_DATASET


def test_simulate_command(tmp_path):
    scene = tmp_path / "scene.cfg"
    scene.write_text("[scene]\nduration = 0.1\nball = false\n")
    code, text = cli("simulate", scene)
    assert code == EXIT_OK
    r = rows(text)
    assert r["object_events"] == "0" and int(r["events"]) > 0
    assert (tmp_path / "scene" / "run.cfg").exists()
    code, _ = cli("run", tmp_path / "scene" / "run.cfg", "--no-figures")
    assert code == EXIT_OK


def test_exit_codes(dataset_dir, tmp_path):
    bad = tmp_path / "bad.cfg"
    bad.write_text("[pipeline]\nwindw = 1\n")
    assert cli("run", bad)[0] == EXIT_CONFIG
    assert cli("simulate", tmp_path / "missing.cfg")[0] == EXIT_CONFIG

    broken = tmp_path / "broken"
    shutil.copytree(dataset_dir, broken, ignore=shutil.ignore_patterns("depth"))
    shutil.copytree(dataset_dir / "depth", broken / "depth")
    lines = (broken / "events.csv").read_text().splitlines()
    lines[5] = "0.1,oops,3,1"
    (broken / "events.csv").write_text("\n".join(lines) + "\n")
    assert cli("run", broken / "run.cfg", "--no-figures")[0] == EXIT_DATASET

    noimu = tmp_path / "noimu"
    shutil.copytree(dataset_dir, noimu)
    cfg_text = (noimu / "run.cfg").read_text().replace("imu = imu.csv", "imu = ")
    (noimu / "run.cfg").write_text(cfg_text)
    assert cli("run", noimu / "run.cfg", "--no-figures")[0] == EXIT_PIPELINE


def test_malformed_dataset_names_file_and_line(dataset_dir, tmp_path):
    d = tmp_path / "d"
    shutil.copytree(dataset_dir, d)
    lines = (d / "poses.txt").read_text().splitlines()
    idx = next(i for i, l in enumerate(lines) if l and not l.startswith("#"))
    lines[idx + 3] = "0.003 1 2"
    (d / "poses.txt").write_text("\n".join(lines) + "\n")
    with pytest.raises(DatasetError, match=rf"poses.txt:{idx + 4}"):
        load_dataset(load_run_config(d / "run.cfg"))
