"""Dual-structure particle map for environments with static and dynamic obstacles."""
from .config import Config, FilterParams, MapConfig, VelocityParams, desk_profile
from .geometry import Pose
from .pipeline import DSPMap, Frame, preprocess, voxel_filter

__all__ = [
    "Config", "FilterParams", "MapConfig", "VelocityParams", "desk_profile",
    "Pose", "DSPMap", "Frame", "preprocess", "voxel_filter",
]
__version__ = "0.1.0"
