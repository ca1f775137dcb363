"""Rotation regression of rigid objects from partial point cloud segments."""

from . import so3
from .config import RunConfig, load_config
from .data import ObjectModel, Sample, generate_sample, make_dataset
from .evaluation import EvalRecord, EvalReport, angle_error, make_report
from .geometry import CameraIntrinsics, PointCloudSegment, backproject
from .model import ArchitectureSpec, dg_spec, init_model, pn_spec, predict_rotation
from .training import evaluate_samples, prepare_inputs, train

__version__ = "0.1.0"

__all__ = [
    "ArchitectureSpec",
    "CameraIntrinsics",
    "EvalRecord",
    "EvalReport",
    "ObjectModel",
    "PointCloudSegment",
    "RunConfig",
    "Sample",
    "angle_error",
    "backproject",
    "dg_spec",
    "evaluate_samples",
    "generate_sample",
    "init_model",
    "load_config",
    "make_dataset",
    "make_report",
    "pn_spec",
    "predict_rotation",
    "prepare_inputs",
    "so3",
    "train",
]
