"""Scene change detection for roughly registered image pairs.

The pipeline estimates epipolar-constrained dense optical flow between the
two views (grid matching, five-point RANSAC, variational densification)
and feeds the pair plus flow into an encoder-decoder network that predicts
per-pixel change probability.
"""

from .containers import ChangeMask, FlowField, Image, ImagePair, Tensor4
from .densify import DensifyConfig, densify, flow_energy
from .epipolar import (
    CameraModel,
    EssentialMatrix,
    RansacConfig,
    RansacResult,
    five_point_essential,
    ransac_essential,
)
from .estimators import ChangeDetector, EpipolarFlow
from .matching import Match, MatchConfig, MatchSet, match_images
from .metrics import Confusion, binarize, confusion, evaluate_fold, f1, miou
from .net import NetworkConfig, NetworkParams, TrainConfig, forward, init_params, train

__version__ = "0.1.0"

__all__ = [
    "ChangeMask",
    "FlowField",
    "Image",
    "ImagePair",
    "Tensor4",
    "DensifyConfig",
    "densify",
    "flow_energy",
    "CameraModel",
    "EssentialMatrix",
    "RansacConfig",
    "RansacResult",
    "five_point_essential",
    "ransac_essential",
    "ChangeDetector",
    "EpipolarFlow",
    "Match",
    "MatchConfig",
    "MatchSet",
    "match_images",
    "Confusion",
    "binarize",
    "confusion",
    "evaluate_fold",
    "f1",
    "miou",
    "NetworkConfig",
    "NetworkParams",
    "TrainConfig",
    "forward",
    "init_params",
    "train",
    "__version__",
]
