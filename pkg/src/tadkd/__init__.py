"""RGB-based temporal action detection trained by decomposed cross-modal
distillation, evaluated on a synthetic benchmark with controllable cues."""

from .types import (
    ActionInstance,
    AnnotationSet,
    LossWeights,
    Prediction,
    PredictionSet,
    validate_annotations,
)

__all__ = [
    "ActionInstance",
    "AnnotationSet",
    "LossWeights",
    "Prediction",
    "PredictionSet",
    "validate_annotations",
]

__version__ = "0.1.0"
