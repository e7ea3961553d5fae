import dataclasses

import pytest

from evpercept.config import run_config_for_scene
from evpercept.simulator import SceneConfig, generate, write_dataset


@pytest.fixture(scope="session")
def default_scene():
    return generate(SceneConfig())


@pytest.fixture(scope="session")
def fast_scene():
    return generate(SceneConfig(speed=5.0))


@pytest.fixture(scope="session")
def dataset_dir(tmp_path_factory, default_scene):
    """Default scene written to disk, with its ``run.cfg``."""
    return write_dataset(default_scene, tmp_path_factory.mktemp("default"))


def scene_config(bundle, **pipeline):
    cfg = run_config_for_scene(bundle.config)
    cfg.pipeline = dataclasses.replace(cfg.pipeline, figures=False, **pipeline)
    return cfg


ACCEPTANCE_LINES = []


def record_criterion(number, name, ok, detail):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number:>2} {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[2])):
            terminalreporter.write_line(line)
