"""Functional and cycle-level model of a fixed-point ViT sleep-staging accelerator."""

from .config import ModelConfig, build_tensor_map, count_parameters
from .fixedpoint import COMPUTE_FORMAT, FixedValue, QFormat
from .memory import MemorySystem, load_weight_file, save_weight_file
from .model import Engine, InferenceOutput, RollingFilter, Stage, make_engine
from .oracle import reference_infer, sweep_bitwidths
from .profiling import ActivityTrace, PowerModel, activity_ratios, effective_power

__version__ = "0.1.0"

__all__ = [
    "COMPUTE_FORMAT",
    "ActivityTrace",
    "Engine",
    "FixedValue",
    "InferenceOutput",
    "MemorySystem",
    "ModelConfig",
    "PowerModel",
    "QFormat",
    "RollingFilter",
    "Stage",
    "activity_ratios",
    "build_tensor_map",
    "count_parameters",
    "effective_power",
    "load_weight_file",
    "make_engine",
    "reference_infer",
    "save_weight_file",
    "sweep_bitwidths",
]
