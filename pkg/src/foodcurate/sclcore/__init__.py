"""Supervised-contrastive recognition core at desk scale.

Two-stage protocol: stage 1 trains a small convolutional encoder plus an MLP
projection head with the supervised contrastive loss on multiview batches;
stage 2 freezes the encoder, discards the projection head, and fits a linear
class head with cross-entropy.  Everything is pure numpy, double precision,
and deterministic under a fixed seed.
"""

from .ops import check_finite, normalize_rows, normalize_rows_backward, one_hot, softmax
from .losses import (
    cross_entropy,
    cross_entropy_logits_grad,
    positive_sets,
    scl_loss,
    scl_loss_grad,
)
from .augment import AugmentationPair, MultiviewBatch, make_multiview_batch
from .network import Encoder, LinearHead, ProjectionHead
from .train import (
    TrainConfig,
    evaluate_topk,
    predict_logits,
    topk_accuracy,
    train_stage1,
    train_stage2,
)
from .checkpoint import load_model, save_model

__all__ = [
    "AugmentationPair",
    "Encoder",
    "LinearHead",
    "MultiviewBatch",
    "ProjectionHead",
    "TrainConfig",
    "check_finite",
    "cross_entropy",
    "cross_entropy_logits_grad",
    "evaluate_topk",
    "load_model",
    "make_multiview_batch",
    "normalize_rows",
    "normalize_rows_backward",
    "one_hot",
    "positive_sets",
    "predict_logits",
    "save_model",
    "scl_loss",
    "scl_loss_grad",
    "softmax",
    "topk_accuracy",
    "train_stage1",
    "train_stage2",
]
