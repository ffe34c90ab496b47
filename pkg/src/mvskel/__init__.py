"""Multi-view skeleton toolkit: camera recovery from paired 2D/3D skeletons,
triangulation, tracking and action-recognition input preparation."""

from .skeldata import JointLayout, Skeleton2D, Skeleton3D, SkeletonSequence, builtin_layout

__version__ = "0.1.0"

__all__ = ["JointLayout", "Skeleton2D", "Skeleton3D", "SkeletonSequence", "builtin_layout"]
