"""Weakly supervised part detection on backbone feature maps.

The package trains a two-stream scoring head over discretized part
proposals: per-proposal category probabilities and per-detector proposal
weights are aggregated into an image-level prediction, optimized with
binary cross entropy plus SGD with momentum and optional singular value
bounding of the classification weights.
"""

from .config import TrainConfig
from .data import FeatureMap, Sample, SyntheticTaskSpec, gen_synthetic
from .dpp import AnchorSpec, Proposal
from .errors import PartnetError
from .head import HeadParams, ScoreMatrices
from .tensor import SeededRng

__all__ = [
    "AnchorSpec", "FeatureMap", "HeadParams", "PartnetError", "Proposal",
    "Sample", "ScoreMatrices", "SeededRng", "SyntheticTaskSpec",
    "TrainConfig", "gen_synthetic",
]

__version__ = "0.1.0"
