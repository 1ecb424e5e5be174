"""sfodkit: a desk-scale sandbox for source-free detector adaptation.

A mean-teacher loop over a synthetic detection world splits teacher
pseudo-labels by dual confidence thresholds: the high band trains the
student conventionally, the low band feeds proposal soft training and
local spatial contrastive learning. No pixels, no backbone — a feature
oracle stands in for both, keeping every experiment seconds-scale and
bit-reproducible.
"""

from .config import Config, ConfigError, load_config
from .detector import (ModelParams, forward, load_checkpoint, predict_detections,
                       save_checkpoint)
from .geometry import BBox, iou, iou_matrix, nms
from .losses import (LossReport, ProposalBatch, grad_check, loss_high, loss_lscl,
                     loss_pst, total_loss)
from .metrics import EvalResult, average_precision, evaluate_model
from .pseudo import PseudoLabelSet, assign_labels, match_low_confidence, partition_detections
from .synthworld import (DomainConfig, Scene, generate_dataset, generate_proposals,
                         load_dataset, make_world, save_dataset)

__version__ = "0.1.0"

__all__ = [
    "BBox", "Config", "ConfigError", "DomainConfig", "EvalResult", "LossReport",
    "ModelParams", "ProposalBatch", "PseudoLabelSet", "Scene",
    "assign_labels", "average_precision", "evaluate_model", "forward",
    "generate_dataset", "generate_proposals", "grad_check", "iou", "iou_matrix",
    "load_checkpoint", "load_config", "load_dataset", "loss_high", "loss_lscl",
    "loss_pst", "make_world", "match_low_confidence", "nms", "partition_detections",
    "predict_detections", "save_checkpoint", "save_dataset", "total_loss",
]
