"""Human-in-the-loop radiology AI assistant, desk scale.

Library plus HTTP service plus simulation CLI: personalized per-user detector
models, correction-driven few-shot retraining, swarm weight merging across
user nodes, and worklist prioritization.
"""

from .model import (
    BoundingBox,
    ImagePayload,
    InferenceResult,
    LabelFinding,
    ModelConfig,
    ModelWeights,
    TrainingExample,
    infer,
)

__all__ = [
    "BoundingBox",
    "ImagePayload",
    "InferenceResult",
    "LabelFinding",
    "ModelConfig",
    "ModelWeights",
    "TrainingExample",
    "infer",
]

__version__ = "0.1.0"
