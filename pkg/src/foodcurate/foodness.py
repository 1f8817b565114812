"""Binary food / non-food filtering with a pluggable scorer.

Two scorer kinds are supported: a cheap trainable baseline (logistic
regression over color histograms plus a grayscale thumbnail) and an imported
score table, so outputs of a stronger external classifier can be plugged in
via CSV.  The filtering decision is always ``score >= threshold -> food``;
ties count as food so a constant-0.5 scorer is well defined.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .imaging import PixelImage, resize_bilinear, to_grayscale
from .manifest import Manifest, StageReport

#: 3 x 16 histogram bins + 16 x 16 thumbnail.
FEATURE_DIM = 304

HISTOGRAM_BINS = 16
THUMBNAIL_SIDE = 16

LABEL_SOURCE_HUMAN = "human"
LABEL_SOURCE_MODEL = "model"


class FoodnessError(ValueError):
    """Raised on unscorable records, unknown ids, or degenerate training data."""


@dataclass(frozen=True)
class FoodnessLabel:
    image_id: str
    is_food: bool
    source: str = LABEL_SOURCE_HUMAN


def extract_features(img: PixelImage) -> np.ndarray:
    """304-dim feature row: normalized 16-bin RGB histograms + 16x16 gray thumbnail.

    Each histogram block sums to 1; thumbnail samples are scaled to [0, 1].
    Grayscale inputs are treated as having equal RGB channels.
    """
    p = img.pixels
    if img.channels == 1:
        p = np.repeat(p, 3, axis=2)
    n = p.shape[0] * p.shape[1]
    hists = []
    for c in range(3):
        bins = np.bincount(p[:, :, c].ravel() >> 4, minlength=HISTOGRAM_BINS)
        hists.append(bins.astype(np.float64) / n)
    thumb = resize_bilinear(to_grayscale(img), THUMBNAIL_SIDE, THUMBNAIL_SIDE)
    flat = thumb.pixels[:, :, 0].astype(np.float64).ravel() / 255.0
    return np.concatenate(hists + [flat])


def _sigmoid(x: np.ndarray) -> np.ndarray:
    out = np.empty_like(x, dtype=np.float64)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


@dataclass
class BaselineScorer:
    """Logistic model over feature rows: score = sigmoid(w . x + b)."""

    weights: np.ndarray
    bias: float = 0.0

    def score_features(self, x: np.ndarray) -> float:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != self.weights.shape:
            raise FoodnessError(
                f"feature dim {x.shape} does not match weights {self.weights.shape}"
            )
        return float(_sigmoid(np.array([self.weights @ x + self.bias]))[0])

    def score_image(self, img: PixelImage) -> float:
        return self.score_features(extract_features(img))


@dataclass
class ImportedScorer:
    """Fixed id -> score table loaded from an external model's output."""

    scores: dict[str, float]

    def __post_init__(self) -> None:
        for k, v in self.scores.items():
            if not 0.0 <= v <= 1.0:
                raise FoodnessError(f"imported score for {k!r} out of [0, 1]: {v}")

    def score_id(self, image_id: str) -> float:
        if image_id not in self.scores:
            raise FoodnessError(f"no imported score for image {image_id!r}")
        return self.scores[image_id]


FoodnessScorer = BaselineScorer | ImportedScorer


def logistic_loss(scorer: BaselineScorer, x: np.ndarray, y: np.ndarray) -> float:
    """Mean negative log-likelihood of labels y under the scorer."""
    z = x @ scorer.weights + scorer.bias
    # log(1 + exp(-|z|)) formulation avoids overflow on confident inputs
    return float(np.mean(np.logaddexp(0.0, z) - np.asarray(y, dtype=np.float64) * z))


def train_baseline(
    labeled: Iterable[tuple[np.ndarray, bool]], epochs: int = 200, lr: float = 0.1
) -> BaselineScorer:
    """Full-batch gradient descent on the mean logistic loss.

    Weights start at zero, so zero epochs gives a constant-0.5 scorer, and
    the mean-loss gradient makes training invariant to duplicating the data.
    """
    pairs = list(labeled)
    if not pairs:
        raise FoodnessError("empty training set")
    x = np.asarray([np.asarray(f, dtype=np.float64) for f, _ in pairs])
    y = np.asarray([1.0 if is_food else 0.0 for _, is_food in pairs])
    if len(set(y.tolist())) < 2:
        raise FoodnessError("training set must contain both classes")
    w = np.zeros(x.shape[1], dtype=np.float64)
    b = 0.0
    n = len(y)
    for _ in range(epochs):
        p = _sigmoid(x @ w + b)
        err = p - y
        w -= lr * (x.T @ err) / n
        b -= lr * float(err.mean())
    return BaselineScorer(weights=w, bias=b)


def score(
    scorer: FoodnessScorer,
    *,
    image: PixelImage | None = None,
    image_id: str | None = None,
) -> float:
    """Score by image (baseline) or by id (imported table)."""
    if isinstance(scorer, ImportedScorer):
        if image_id is None:
            raise FoodnessError("imported scorer needs an image_id")
        return scorer.score_id(image_id)
    if image is None:
        raise FoodnessError("baseline scorer needs pixel data")
    return scorer.score_image(image)


def filter_stage(
    m: Manifest,
    scorer: FoodnessScorer,
    accept_threshold: float = 0.5,
    image_provider: Callable[..., PixelImage] | None = None,
) -> StageReport:
    """Score every active record and remove those below the accept threshold.

    Scores are written onto the records; removal reason is ``non_food``.  The
    caller appends the returned report to the manifest history.
    ``image_provider(record)`` supplies pixels for scorers that need them.
    """
    active = m.active_records()
    removed = 0
    for r in active:
        if isinstance(scorer, ImportedScorer):
            s = scorer.score_id(r.id)
        else:
            if image_provider is None:
                raise FoodnessError("baseline scorer needs an image_provider")
            s = scorer.score_image(image_provider(r))
        r.foodness_score = s
        if s < accept_threshold:
            r.mark_removed("foodness", "non_food")
            removed += 1
    report = StageReport(
        stage="foodness",
        input_count=len(active),
        kept_count=len(active) - removed,
        removed_count=removed,
        reasons={"non_food": removed} if removed else {},
    )
    return report


def evaluate(
    scorer: FoodnessScorer,
    human_labels: Sequence[FoodnessLabel],
    threshold: float = 0.5,
    image_provider: Callable[[str], PixelImage] | None = None,
) -> dict:
    """Accuracy and 2x2 confusion of the scorer against human ground truth.

    Prediction rule: score >= threshold means food.  ``image_provider`` maps
    an image id to pixels when a baseline scorer is evaluated.
    """
    if not human_labels:
        raise FoodnessError("no labels to evaluate against")
    ids = [l.image_id for l in human_labels]
    if len(set(ids)) != len(ids):
        raise FoodnessError("duplicate human label for an image")
    tp = fp = tn = fn = 0
    for label in human_labels:
        if isinstance(scorer, ImportedScorer):
            s = scorer.score_id(label.image_id)
        else:
            if image_provider is None:
                raise FoodnessError("baseline scorer needs an image_provider")
            s = scorer.score_image(image_provider(label.image_id))
        predicted_food = s >= threshold
        if predicted_food and label.is_food:
            tp += 1
        elif predicted_food and not label.is_food:
            fp += 1
        elif not predicted_food and not label.is_food:
            tn += 1
        else:
            fn += 1
    total = tp + fp + tn + fn
    return {
        "accuracy": (tp + tn) / total,
        "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        "total": total,
    }


def load_scores_csv(path: str | Path) -> ImportedScorer:
    """Read an ``image_id,score`` CSV (header optional) into an imported scorer."""
    scores: dict[str, float] = {}
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(f):
            if not row or row[0] == "image_id":
                continue
            scores[row[0]] = float(row[1])
    return ImportedScorer(scores)


def load_labels_csv(path: str | Path) -> list[FoodnessLabel]:
    """Read an ``image_id,is_food`` CSV; is_food is 1/0 or true/false."""
    labels = []
    with open(path, newline="", encoding="utf-8") as f:
        for row in csv.reader(f):
            if not row or row[0] == "image_id":
                continue
            labels.append(
                FoodnessLabel(row[0], row[1].strip().lower() in ("1", "true", "yes"))
            )
    return labels


_BASELINE_MAGIC = b"FOODNS01"


def save_baseline(scorer: BaselineScorer, path: str | Path) -> None:
    """Binary baseline format: magic, u32 dim, float64 LE weights, float64 LE bias."""
    dim = np.uint32(scorer.weights.shape[0])
    with open(path, "wb") as f:
        f.write(_BASELINE_MAGIC)
        f.write(dim.tobytes())
        f.write(scorer.weights.astype("<f8").tobytes())
        f.write(np.float64(scorer.bias).astype("<f8").tobytes())


def load_baseline(path: str | Path) -> BaselineScorer:
    data = Path(path).read_bytes()
    if data[:8] != _BASELINE_MAGIC:
        raise FoodnessError(f"{path}: not a baseline scorer file")
    dim = int(np.frombuffer(data[8:12], dtype=np.uint32)[0])
    floats = np.frombuffer(data[12:], dtype="<f8")
    if floats.shape[0] != dim + 1:
        raise FoodnessError(f"{path}: truncated scorer file")
    return BaselineScorer(weights=floats[:dim].copy(), bias=float(floats[dim]))
