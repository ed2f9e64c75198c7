"""Partial-to-partial rigid point cloud registration with confidence guided distance."""

from .errors import (
    DegenerateConfidence,
    DegenerateGeometry,
    DegenerateSampling,
    InvalidArgument,
    NoConsensus,
    NonFiniteLoss,
    RegistrationError,
)
from .geometry import PointCloud, RigidTransform

__version__ = "0.1.0"

__all__ = [
    "PointCloud",
    "RigidTransform",
    "RegistrationError",
    "InvalidArgument",
    "DegenerateGeometry",
    "DegenerateConfidence",
    "DegenerateSampling",
    "NoConsensus",
    "NonFiniteLoss",
]
