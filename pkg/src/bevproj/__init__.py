"""Probabilistic camera-to-BEV projection with confidence-based temporal fusion."""
from .estimator import BevEncoder
from .exceptions import ConfigurationError, FormatError, ValidationError
from .fields import (
    CombinedProvider,
    ConstantProvider,
    FieldSet,
    LoadedProvider,
    OccluderMaskProvider,
    SlopeOracleProvider,
    ZeroProvider,
)
from .fusion import ABLATIONS, FusionConfig, HistoryState
from .geometry import BevGridSpec, CameraRig, EgoPose, GroundPlane, build_pull_map, surround_rig, warp_bev
from .projector import RawBev, prob_project, static_project
from .sampling import Deterministic, Gauss2, Stochastic

__version__ = "0.1.0"

__all__ = [
    "ABLATIONS", "BevEncoder", "BevGridSpec", "CameraRig", "CombinedProvider", "ConfigurationError",
    "ConstantProvider", "Deterministic", "EgoPose", "FieldSet", "FormatError", "FusionConfig", "Gauss2",
    "GroundPlane", "HistoryState", "LoadedProvider", "OccluderMaskProvider", "RawBev", "SlopeOracleProvider",
    "Stochastic", "ValidationError", "ZeroProvider", "build_pull_map", "prob_project", "static_project",
    "surround_rig", "warp_bev",
]
