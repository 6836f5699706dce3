"""Interactive video object segmentation: scribble in, propagate everywhere."""

from .masks import (
    Frame,
    LabelMask,
    MultiObjectProbs,
    ProbMask,
    argmax_label,
    blend,
    jaccard,
    neutral_mask,
    soft_aggregate,
)
from .nets import IPNModel, ModelConfig, init_params, load_checkpoint, save_checkpoint
from .scribbles import Scribble, ScribbleSet, synthesize_round_scribbles
from .session import Session, blend_weight, get_masks, plan_propagation, run_round, start_session

__version__ = "0.1.0"

__all__ = [
    "Frame",
    "LabelMask",
    "MultiObjectProbs",
    "ProbMask",
    "argmax_label",
    "blend",
    "jaccard",
    "neutral_mask",
    "soft_aggregate",
    "IPNModel",
    "ModelConfig",
    "init_params",
    "load_checkpoint",
    "save_checkpoint",
    "Scribble",
    "ScribbleSet",
    "synthesize_round_scribbles",
    "Session",
    "blend_weight",
    "get_masks",
    "plan_propagation",
    "run_round",
    "start_session",
    "__version__",
]
