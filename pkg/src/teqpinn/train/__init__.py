"""Loss assembly, optimisers, metrics and checkpoints."""

from .loss import LossWeights, PinnObjective, total_loss
from .metrics import Metrics, evaluate
from .models import KINDS, Model, build_model
from .optim import NumericalAbort, TrainState, adam_minimize, lbfgs_minimize

__all__ = [
    "KINDS",
    "LossWeights",
    "Metrics",
    "Model",
    "NumericalAbort",
    "PinnObjective",
    "TrainState",
    "adam_minimize",
    "build_model",
    "evaluate",
    "lbfgs_minimize",
    "total_loss",
]
