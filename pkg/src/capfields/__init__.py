"""Monocular RGBD human-object capture and free-viewpoint rendering."""

__version__ = "0.1.0"

from .transforms import DualQuaternion, Se3, dqb, se3_apply, skin_weight
from .camera import Camera, look_at
from .edgraph import EDGraph, GraphMotion, sample_ed_nodes, warp_backward, warp_forward
from .skeleton import Skeleton, SkeletonPose, default_humanoid, skeleton_lbs

__all__ = [
    "Camera",
    "DualQuaternion",
    "EDGraph",
    "GraphMotion",
    "Se3",
    "Skeleton",
    "SkeletonPose",
    "default_humanoid",
    "dqb",
    "look_at",
    "sample_ed_nodes",
    "se3_apply",
    "skeleton_lbs",
    "skin_weight",
    "warp_backward",
    "warp_forward",
]
