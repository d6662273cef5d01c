"""Online 1-nearest-neighbor learning under smoothed and adversarial processes.

Modules: ``metric`` (spaces and entropy numbers), ``measure`` (reference
measures), ``labels`` (label families and margins), ``processes`` (instance
processes), ``learner`` (the 1-NN rule), ``covertree`` (sequential cover
trees, tails, separated events), ``geometry`` (boundary dimension and rate
curves), ``harness``/``config``/``report``/``cli`` (experiments and audits).
"""

from .config import ConfigError, ExperimentConfig
from .covertree import CoverTree
from .labels import FAMILIES
from .learner import NearestNeighborLearner, RoundRecord
from .measure import ReferenceMeasure
from .metric import MetricSpace
from .processes import make_generator

__version__ = "0.1.0"

__all__ = [
    "ConfigError", "CoverTree", "ExperimentConfig", "FAMILIES", "MetricSpace",
    "NearestNeighborLearner", "ReferenceMeasure", "RoundRecord", "make_generator",
]
