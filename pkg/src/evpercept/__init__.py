"""Event-camera perception for fast-moving objects.

Ego-motion compensation of event streams, mean-time-image detection, 2D
tracking, depth segmentation and ballistic trajectory estimation, with a
deterministic scene simulator for evaluation.
"""

from .compensation import Mode, compensate
from .config import ConfigError, RunConfig, load_run_config, load_scene_config
from .detection import DetectionROI, detect
from .geometry import Intrinsics, Pose, backproject, project, transform
from .metrics import MetricsReport, ape, relative_contrast
from .pipeline import DatasetError, PipelineError, load_dataset, process, run
from .simulator import SceneConfig, generate, write_dataset
from .tracking import Tracker
from .trajectory import BallisticTrajectory, DepthObservation, EventObservation, estimate

__version__ = "0.1.0"

__all__ = [
    "BallisticTrajectory", "ConfigError", "DatasetError", "DepthObservation", "DetectionROI", "EventObservation",
    "Intrinsics", "MetricsReport", "Mode", "PipelineError", "Pose", "RunConfig", "SceneConfig", "Tracker", "ape",
    "backproject", "compensate", "detect", "estimate", "generate", "load_dataset", "load_run_config",
    "load_scene_config", "process", "project", "relative_contrast", "run", "transform", "write_dataset",
]
