"""INI configuration for scenes and pipeline runs.

Every stage's tunables live in a section named after the stage; keys are
the dataclass field names.  Tuples are comma separated.  Paths in
``[dataset]`` are relative to the config file.
"""

from __future__ import annotations

import configparser
import dataclasses
import pathlib
from typing import Union

import numpy as np

from .compensation import Mode
from .depth import DepthConfig
from .detection import DetectionConfig, ThresholdParams
from .geometry import Intrinsics, Pose
from .simulator import SceneConfig
from .tracking import TrackerConfig
from .trajectory import SolverConfig


class ConfigError(ValueError):
    pass


ESTIMATOR_MODES = ("mono", "fusion")


@dataclasses.dataclass
class DatasetPaths:
    events: str = "events.csv"
    imu: str = "imu.csv"
    velocity: str = "velocity.csv"
    poses: str = "poses.txt"
    depth_index: str = "depth_index.csv"
    ground_truth: str = ""
    labels: str = ""


@dataclasses.dataclass
class CameraSettings:
    width: int = 240
    height: int = 180
    fx: float = 200.0
    fy: float = 200.0
    cx: float = 120.0
    cy: float = 90.0

    def intrinsics(self) -> Intrinsics:
        return Intrinsics(self.fx, self.fy, self.cx, self.cy, self.width, self.height)


@dataclasses.dataclass
class ExtrinsicSettings:
    """Depth camera to event camera, and IMU to event camera rotation."""

    depth_translation: tuple = (0.05, 0.0, 0.0)
    depth_quaternion: tuple = (1.0, 0.0, 0.0, 0.0)
    imu_quaternion: tuple = (1.0, 0.0, 0.0, 0.0)

    def depth_pose(self) -> Pose:
        return Pose.from_quaternion(self.depth_quaternion, self.depth_translation)

    def imu_rotation(self) -> np.ndarray:
        return Pose.from_quaternion(self.imu_quaternion, (0.0, 0.0, 0.0)).rotation


@dataclasses.dataclass
class PipelineSettings:
    window: float = 0.025
    compensation: str = "rotation+translation"
    estimator: str = "fusion"
    output: str = "run"
    t_start: float = float("nan")
    t_end: float = float("nan")
    min_events: int = 50  # windows with fewer events skip detection
    depth_max_age: float = 0.1  # oldest depth frame usable for compensation
    figures: bool = True
    dump_images: bool = False

    def __post_init__(self):
        if self.window <= 0:
            raise ConfigError("window must be positive")
        try:
            Mode(self.compensation)
        except ValueError:
            raise ConfigError(f"unknown compensation mode {self.compensation!r}") from None
        if self.estimator not in ESTIMATOR_MODES:
            raise ConfigError(f"unknown estimator mode {self.estimator!r}")


@dataclasses.dataclass
class RunConfig:
    dataset: DatasetPaths
    camera: CameraSettings
    depth_camera: CameraSettings
    extrinsics: ExtrinsicSettings
    pipeline: PipelineSettings
    threshold: ThresholdParams
    detection: DetectionConfig
    tracking: TrackerConfig
    depth: DepthConfig
    solver: SolverConfig
    base_dir: pathlib.Path = pathlib.Path(".")

    @classmethod
    def default(cls, base_dir=".") -> "RunConfig":
        return cls(DatasetPaths(), CameraSettings(), CameraSettings(fx=180.0, fy=180.0), ExtrinsicSettings(),
                   PipelineSettings(), ThresholdParams(), DetectionConfig(), TrackerConfig(), DepthConfig(),
                   SolverConfig(), pathlib.Path(base_dir))

    def path(self, name: str) -> pathlib.Path | None:
        value = getattr(self.dataset, name)
        if not value:
            return None
        p = pathlib.Path(value)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def output_dir(self) -> pathlib.Path:
        p = pathlib.Path(self.pipeline.output)
        return p if p.is_absolute() else self.base_dir / p

    @property
    def mode(self) -> Mode:
        return Mode(self.pipeline.compensation)


_SECTIONS = {
    "dataset": DatasetPaths,
    "camera": CameraSettings,
    "depth_camera": CameraSettings,
    "extrinsics": ExtrinsicSettings,
    "pipeline": PipelineSettings,
    "threshold": ThresholdParams,
    "detection": DetectionConfig,
    "tracking": TrackerConfig,
    "depth": DepthConfig,
    "solver": SolverConfig,
}


def _parse_value(raw: str, default, where: str):
    raw = raw.strip()
    try:
        if isinstance(default, bool):
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(default, tuple):
            return tuple(float(p) for p in raw.split(","))
        return raw
    except ValueError:
        raise ConfigError(f"{where}: cannot parse {raw!r} as {type(default).__name__}") from None


def section_to_dataclass(cls, section, base=None, where: str = ""):
    """Build ``cls`` from an INI section, starting from ``base`` or the class defaults."""
    base = base if base is not None else cls()
    names = {f.name for f in dataclasses.fields(cls)}
    values = {}
    for key, raw in section.items():
        if key not in names:
            raise ConfigError(f"{where}: unknown key {key!r}")
        values[key] = _parse_value(raw, getattr(base, key), f"{where}.{key}")
    try:
        return dataclasses.replace(base, **values)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}: {exc}") from None


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ", ".join(repr(float(v)) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def dataclass_to_section(obj) -> dict:
    return {f.name: _format_value(getattr(obj, f.name)) for f in dataclasses.fields(obj)}


def _read_ini(path) -> configparser.ConfigParser:
    parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        with open(path) as f:
            parser.read_file(f)
    except OSError as exc:
        raise ConfigError(f"{path}: {exc.strerror}") from None
    except configparser.Error as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return parser


def load_run_config(path: Union[str, pathlib.Path], check_files: bool = True) -> RunConfig:
    path = pathlib.Path(path)
    parser = _read_ini(path)
    cfg = RunConfig.default(path.parent)
    for name in parser.sections():
        if name not in _SECTIONS:
            raise ConfigError(f"{path}: unknown section [{name}]")
        current = getattr(cfg, name)
        setattr(cfg, name, section_to_dataclass(_SECTIONS[name], parser[name], current, f"{path}:[{name}]"))
    if check_files:
        for key in ("events", "poses"):
            p = cfg.path(key)
            if p is None or not p.exists():
                raise ConfigError(f"{path}: dataset file {key} = {p} does not exist")
        for key in ("imu", "velocity", "depth_index", "ground_truth", "labels"):
            p = cfg.path(key)
            if p is not None and not p.exists():
                raise ConfigError(f"{path}: dataset file {key} = {p} does not exist")
    return cfg


def write_run_config(path: Union[str, pathlib.Path], cfg: RunConfig) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    for name in _SECTIONS:
        parser[name] = dataclass_to_section(getattr(cfg, name))
    with open(path, "w") as f:
        parser.write(f)


def run_config_for_scene(scene: SceneConfig, dataset_dir=None) -> RunConfig:
    """Run config matching a simulated dataset written next to it."""
    cfg = RunConfig.default(dataset_dir or ".")
    cfg.dataset = DatasetPaths(ground_truth="ground_truth.txt", labels="labels.txt")
    cfg.camera = CameraSettings(scene.width, scene.height, scene.fx, scene.fy, scene.cx, scene.cy)
    cfg.depth_camera = CameraSettings(scene.depth_width, scene.depth_height, scene.depth_fx, scene.depth_fy,
                                      scene.depth_cx, scene.depth_cy)
    cfg.extrinsics = ExtrinsicSettings(depth_translation=tuple(scene.depth_baseline))
    cfg.pipeline = dataclasses.replace(cfg.pipeline, window=scene.window)
    cfg.depth = dataclasses.replace(cfg.depth, max_range=scene.depth_max_range)
    return cfg


def load_scene_config(path: Union[str, pathlib.Path]) -> SceneConfig:
    parser = _read_ini(path)
    unknown = [s for s in parser.sections() if s != "scene"]
    if unknown:
        raise ConfigError(f"{path}: unknown section [{unknown[0]}]")
    if not parser.has_section("scene"):
        return SceneConfig()
    return section_to_dataclass(SceneConfig, parser["scene"], where=f"{path}:[scene]")


def write_scene_config(path: Union[str, pathlib.Path], scene: SceneConfig) -> None:
    parser = configparser.ConfigParser(interpolation=None)
    parser.optionxform = str
    parser["scene"] = dataclass_to_section(scene)
    with open(path, "w") as f:
        parser.write(f)
