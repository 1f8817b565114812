"""Two-stage training: contrastive pretraining, then a frozen linear probe.

Stage 1 optimizes the supervised contrastive loss over multiview batches with
plain SGD (no momentum) and L2 weight decay; the projection head is discarded
afterwards.  Stage 2 freezes the encoder and fits only the linear class head
with cross-entropy.  Both stages are bit-deterministic under a fixed seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .augment import AugmentationPair, make_multiview_batch
from .losses import cross_entropy, cross_entropy_logits_grad, scl_loss, scl_loss_grad
from .network import (
    Encoder,
    LinearHead,
    ProjectionHead,
    images_to_tensor,
    sgd_step,
    zero_grads,
)
from .ops import SclError, normalize_rows, normalize_rows_backward, one_hot, softmax


@dataclass
class TrainConfig:
    """Hyperparameters for both stages.

    batch_size counts source samples; a contrastive batch therefore holds
    2 * batch_size views, which is why contrastive batches are half the size
    of plain cross-entropy batches at equal memory.  temperature divides the
    similarities inside the contrastive softmax.
    """

    temperature: float = 0.1
    stage1_lr: float = 0.1
    stage2_lr: float = 0.05
    weight_decay: float = 1e-4
    epochs: int = 200
    batch_size: int = 32
    seed: int = 0
    embed_dim: int = 64
    proj_dim: int = 32
    proj_hidden_dim: int = 64
    conv_channels: tuple[int, int] = (8, 16)
    stem_pools: int = 1
    augmentation: AugmentationPair = field(default_factory=AugmentationPair)

    def __post_init__(self) -> None:
        positives = {
            "temperature": self.temperature,
            "stage1_lr": self.stage1_lr,
            "stage2_lr": self.stage2_lr,
            "batch_size": self.batch_size,
            "embed_dim": self.embed_dim,
            "proj_dim": self.proj_dim,
            "proj_hidden_dim": self.proj_hidden_dim,
        }
        for name, v in positives.items():
            if v <= 0:
                raise SclError(f"{name} must be positive, got {v}")
        if self.epochs < 0 or self.weight_decay < 0:
            raise SclError("epochs and weight_decay must be >= 0")


def _validate_labels(labels: np.ndarray) -> None:
    if np.unique(labels).size < 2:
        raise SclError("training needs at least two classes")


def train_stage1(
    samples: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    encoder: Encoder | None = None,
    projector: ProjectionHead | None = None,
) -> tuple[Encoder, ProjectionHead, list[float]]:
    """Contrastive pretraining; returns (encoder, projector, per-epoch loss curve).

    The curve records the mean per-view contrastive loss of each epoch; the
    update itself follows the summed loss, so larger batches take larger
    steps (tune the learning rate together with the batch size).
    """
    samples = np.asarray(samples)
    labels = np.asarray(labels)
    _validate_labels(labels)
    if encoder is None:
        encoder = Encoder(
            in_channels=samples.shape[3],
            conv_channels=cfg.conv_channels,
            embed_dim=cfg.embed_dim,
            seed=cfg.seed,
            stem_pools=cfg.stem_pools,
        )
    if projector is None:
        projector = ProjectionHead(
            embed_dim=cfg.embed_dim,
            hidden_dim=cfg.proj_hidden_dim,
            proj_dim=cfg.proj_dim,
            seed=cfg.seed + 1,
        )
    params = encoder.params() + projector.params()
    shuffle_rng = np.random.default_rng(cfg.seed + 17)
    n = samples.shape[0]
    curve: list[float] = []
    encoder.set_training(True)
    for epoch in range(cfg.epochs):
        order = shuffle_rng.permutation(n)
        view_loss_sum = 0.0
        view_count = 0
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            batch = make_multiview_batch(
                samples[idx],
                labels[idx],
                cfg.augmentation,
                seed=cfg.seed * 1_000_003 + epoch,
                source_indices=idx,
            )
            x = images_to_tensor(batch.views)
            raw_e = encoder.forward(x)
            e = normalize_rows(raw_e)
            raw_s = projector.forward(e)
            s = normalize_rows(raw_s)
            loss = scl_loss(s, batch.labels, cfg.temperature)
            n_views = s.shape[0]
            view_loss_sum += loss
            view_count += n_views

            zero_grads(params)
            ds = scl_loss_grad(s, batch.labels, cfg.temperature)
            d_raw_s = normalize_rows_backward(raw_s, ds)
            de = projector.backward(d_raw_s)
            d_raw_e = normalize_rows_backward(raw_e, de)
            encoder.backward(d_raw_e)
            sgd_step(params, cfg.stage1_lr, cfg.weight_decay)
        curve.append(view_loss_sum / view_count)
    encoder.set_training(False)
    return encoder, projector, curve


def _embed_in_batches(encoder: Encoder, samples: np.ndarray, batch: int = 64) -> np.ndarray:
    outs = []
    for start in range(0, samples.shape[0], batch):
        outs.append(encoder.embed(images_to_tensor(samples[start : start + batch])))
    return np.concatenate(outs, axis=0)


def train_stage2(
    encoder: Encoder,
    samples: np.ndarray,
    labels: np.ndarray,
    cfg: TrainConfig,
    n_classes: int | None = None,
) -> tuple[LinearHead, list[float]]:
    """Fit the linear class head on frozen unit-norm embeddings.

    Only head parameters change; the encoder is never touched.  Plain-CE
    batches hold 2 * batch_size samples (the contrastive stage halves them).
    Returns (head, per-epoch mean cross-entropy curve).
    """
    labels = np.asarray(labels)
    if n_classes is None:
        n_classes = int(labels.max()) + 1
    present = np.unique(labels)
    missing = sorted(set(range(n_classes)) - set(present.tolist()))
    if missing:
        raise SclError(f"classes absent from training data: {missing}")
    head = LinearHead(embed_dim=encoder.embed_dim, n_classes=n_classes)
    embeddings = _embed_in_batches(encoder, np.asarray(samples))
    targets = one_hot(labels, n_classes)
    rng = np.random.default_rng(cfg.seed + 29)
    n = embeddings.shape[0]
    ce_batch = 2 * cfg.batch_size
    curve: list[float] = []
    for _ in range(cfg.epochs):
        order = rng.permutation(n)
        total = 0.0
        for start in range(0, n, ce_batch):
            idx = order[start : start + ce_batch]
            logits = head.forward(embeddings[idx])
            total += cross_entropy(softmax(logits), targets[idx]) * idx.size
            zero_grads(head.params())
            head.backward(cross_entropy_logits_grad(logits, targets[idx]))
            sgd_step(head.params(), cfg.stage2_lr, cfg.weight_decay)
        curve.append(total / n)
    return head, curve


def predict_logits(encoder: Encoder, head: LinearHead, samples: np.ndarray) -> np.ndarray:
    return head.forward(_embed_in_batches(encoder, np.asarray(samples)))


def topk_accuracy(logits: np.ndarray, labels: np.ndarray, k: int) -> float:
    """Fraction of rows whose true class is among the k largest logits.

    Equal logits rank by ascending class index, so the result is deterministic.
    """
    logits = np.asarray(logits)
    labels = np.asarray(labels)
    if labels.size == 0:
        raise SclError("cannot evaluate on empty data")
    if k < 1 or k > logits.shape[1]:
        raise SclError(f"k must be in [1, {logits.shape[1]}], got {k}")
    ranked = np.argsort(-logits, axis=1, kind="stable")[:, :k]
    hits = (ranked == labels[:, None]).any(axis=1)
    return float(hits.mean())


def evaluate_topk(
    encoder: Encoder, head: LinearHead, samples: np.ndarray, labels: np.ndarray, k: int
) -> float:
    """Top-k accuracy of the frozen encoder plus class head on given samples."""
    return topk_accuracy(predict_logits(encoder, head, samples), labels, k)
