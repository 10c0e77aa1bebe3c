"""Streaming human-object interaction modeling.

Two estimators built on the same recipe -- a causal selective state-space
backbone with short/long-term memory augmentation:

    OnlineMotionGenerator   frame-by-frame conditional motion synthesis with
                            a streaming diffusion sampler
    OnlineActionSegmenter   per-frame action labeling of 4D point cloud
                            streams

plus the pieces they are made of (selective scan, memory consolidation,
noise schedules, a 4D point convolution backbone), synthetic dataset
families with known oracles, distribution metrics, and a config-driven
experiment harness (streamhoi.runs / the `streamhoi` command).
"""

from .config import RunConfig
from .datasets import (
    MotionPair,
    MotionSequence,
    PointCloudSequence,
    SynthMotionSpec,
    SynthPcdSpec,
    make_interaction_clips,
    make_motion_pairs,
)
from .diffusion import DiffusionSchedule, make_schedule, posterior_step, q_sample
from .exceptions import (
    ConfigurationError,
    InvalidStateError,
    NumericalError,
    ShapeError,
)
from .features import MotionFeatureExtractor
from .generation import OnlineMotionGenerator
from .mamba import MambaBlock, selective_scan
from .memory import (
    LongTermMemory,
    MemoryConfig,
    MemoryState,
    ShortTermMemory,
    consolidate,
    fuse_memory,
    rollout_pooled,
)
from .metrics import (
    FeatureSet,
    diversity,
    edit_score,
    f1_at_overlap,
    frame_accuracy,
    frechet_distance,
    recognition_accuracy,
)
from .perception import OnlineActionSegmenter
from .point4d import PointBackbone4D, PointConv4D, farthest_point_indices
from .ssm import SSMParameters, discretize, ssm_kernel, ssm_scan

__version__ = "0.1.0"

__all__ = [
    "ConfigurationError",
    "DiffusionSchedule",
    "FeatureSet",
    "InvalidStateError",
    "LongTermMemory",
    "MambaBlock",
    "MemoryConfig",
    "MemoryState",
    "MotionFeatureExtractor",
    "MotionPair",
    "MotionSequence",
    "NumericalError",
    "OnlineActionSegmenter",
    "OnlineMotionGenerator",
    "PointBackbone4D",
    "PointCloudSequence",
    "PointConv4D",
    "RunConfig",
    "SSMParameters",
    "ShapeError",
    "ShortTermMemory",
    "SynthMotionSpec",
    "SynthPcdSpec",
    "consolidate",
    "discretize",
    "diversity",
    "edit_score",
    "f1_at_overlap",
    "farthest_point_indices",
    "frame_accuracy",
    "frechet_distance",
    "fuse_memory",
    "make_interaction_clips",
    "make_motion_pairs",
    "make_schedule",
    "posterior_step",
    "q_sample",
    "recognition_accuracy",
    "rollout_pooled",
    "selective_scan",
    "ssm_kernel",
    "ssm_scan",
    "__version__",
]
