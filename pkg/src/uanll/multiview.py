"""Multi-view inference: per-view predictions with confidence/certainty and
the five aggregation rules (mode, soft/hard confidence- or certainty-
weighted bin counts)."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .data import Dataset, LabeledImage, crop_views
from .errors import ConfigError, ShapeError
from .ndmath import Prediction, TwoHeadMlp, forward_batch, sigmoid

MVM = "MVM"
MVW_CO_S = "MVWCo-S"
MVW_CE_S = "MVWCe-S"
MVW_CO_H = "MVWCo-H"
MVW_CE_H = "MVWCe-H"

SOFT_KINDS = (MVW_CO_S, MVW_CE_S)
HARD_KINDS = (MVW_CO_H, MVW_CE_H)
ALL_KINDS = (MVM,) + SOFT_KINDS + HARD_KINDS


@dataclass(frozen=True)
class ViewPrediction:
    """One augmented view's output: predicted class, max-probability
    confidence, and certainty 1 - sigmoid(log-variance)."""

    pred_class: int
    confidence: float
    certainty: float
    raw: Prediction


@dataclass
class MultiViewSet:
    sample_index: int
    views: list[ViewPrediction]

    def __post_init__(self):
        if not self.views:
            raise ShapeError("a MultiViewSet needs at least one view")


@dataclass(frozen=True)
class AggregationMethod:
    """kind is one of ALL_KINDS; hard kinds carry the binarization threshold."""

    kind: str
    threshold: float | None = None

    def __post_init__(self):
        if self.kind not in ALL_KINDS:
            raise ConfigError(f"unknown aggregation kind {self.kind!r}")
        if self.kind in HARD_KINDS:
            if self.threshold is None or not 0.0 < self.threshold < 1.0:
                raise ConfigError(f"{self.kind} needs a threshold in (0, 1)")
        elif self.threshold is not None:
            raise ConfigError(f"{self.kind} does not take a threshold")


def view_prediction(h: np.ndarray, s: float) -> ViewPrediction:
    """Build a ViewPrediction from raw model outputs (argmax ties go to the
    lowest class index)."""
    cls = int(np.argmax(h))
    return ViewPrediction(
        pred_class=cls,
        confidence=float(h[cls]),
        certainty=float(1.0 - sigmoid(s)),
        raw=Prediction(h=h, s=float(s)),
    )


def predict_views(
    model: TwoHeadMlp,
    sample: LabeledImage,
    n: int,
    sc: float,
    seed,
    sample_index: int = 0,
) -> MultiViewSet:
    """Predict on n augmented copies of one sample; view j draws its crop
    from the (seed, sample_index, j) substream."""
    views = crop_views(sample.pixels, n, sc, seed, sample_index)
    h, s, _ = forward_batch(model, views.reshape(n, -1))
    return MultiViewSet(
        sample_index=sample_index,
        views=[view_prediction(h[j], s[j]) for j in range(n)],
    )


def predict_views_batch(
    model: TwoHeadMlp,
    ds: Dataset,
    n: int,
    sc: float,
    seed,
    chunk: int = 128,
) -> list[MultiViewSet]:
    """predict_views over a whole dataset, batching forward passes."""
    sets = []
    total = len(ds)
    for start in range(0, total, chunk):
        stop = min(start + chunk, total)
        stacks = [
            crop_views(ds.images[i].pixels, n, sc, seed, i) for i in range(start, stop)
        ]
        flat = np.concatenate(stacks).reshape((stop - start) * n, -1)
        h, s, _ = forward_batch(model, flat)
        for k, i in enumerate(range(start, stop)):
            views = [
                view_prediction(h[k * n + j], s[k * n + j]) for j in range(n)
            ]
            sets.append(MultiViewSet(sample_index=i, views=views))
    return sets


def aggregate_mode(mv: MultiViewSet) -> int:
    """Most frequent predicted class; ties go to the lowest class index."""
    classes = np.array([v.pred_class for v in mv.views])
    return int(np.argmax(np.bincount(classes)))


def weighted_bins(mv: MultiViewSet, method: AggregationMethod, n_classes: int) -> np.ndarray:
    """Accumulated per-class weights z for one sample under a weighting rule."""
    if method.kind == MVM:
        raise ConfigError("weighted aggregation does not apply to MVM")
    z = np.zeros(n_classes)
    for v in mv.views:
        if v.pred_class >= n_classes:
            raise ShapeError(
                f"view predicts class {v.pred_class} but only {n_classes} exist"
            )
        if method.kind == MVW_CO_S:
            g = v.confidence
        elif method.kind == MVW_CE_S:
            g = v.certainty
        elif method.kind == MVW_CO_H:
            g = 1.0 if v.confidence > method.threshold else 0.0
        else:  # MVW_CE_H
            g = 1.0 if v.certainty > method.threshold else 0.0
        z[v.pred_class] += g
    return z


def aggregate_weighted(
    mv: MultiViewSet, method: AggregationMethod, n_classes: int
) -> tuple[int, bool]:
    """Winning class under weighted bin counting, plus a flag that is True
    when a hard threshold zeroed every view and the mode was used instead."""
    z = weighted_bins(mv, method, n_classes)
    if method.kind in HARD_KINDS and not np.any(z > 0):
        return aggregate_mode(mv), True
    return int(np.argmax(z)), False


def aggregate_batch(
    sets: list[MultiViewSet], method: AggregationMethod, n_classes: int
) -> tuple[list[int], list[bool]]:
    """Elementwise aggregation; preserves order."""
    preds, flags = [], []
    for mv in sets:
        for v in mv.views:
            if len(v.raw.h) != n_classes:
                raise ShapeError(
                    f"view has {len(v.raw.h)} classes, expected {n_classes}"
                )
        if method.kind == MVM:
            preds.append(aggregate_mode(mv))
            flags.append(False)
        else:
            cls, fb = aggregate_weighted(mv, method, n_classes)
            preds.append(cls)
            flags.append(fb)
    return preds, flags


def winner_weight_fraction(
    mv: MultiViewSet, method: AggregationMethod, n_classes: int
) -> tuple[int, float, bool]:
    """(class, score, fallback) where score is the winner's share of the
    accumulated weight — the aggregated analogue of a confidence, in (0, 1].
    MVM and hard fallbacks use the plain vote share."""
    if method.kind == MVM:
        cls = aggregate_mode(mv)
        votes = sum(1 for v in mv.views if v.pred_class == cls)
        return cls, votes / len(mv.views), False
    z = weighted_bins(mv, method, n_classes)
    if method.kind in HARD_KINDS and not np.any(z > 0):
        cls = aggregate_mode(mv)
        votes = sum(1 for v in mv.views if v.pred_class == cls)
        return cls, votes / len(mv.views), True
    cls = int(np.argmax(z))
    return cls, float(z[cls] / z.sum()), False


def write_views_csv(sets: list[MultiViewSet], path) -> None:
    """Dump per-view predictions so aggregation can be replayed offline."""
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["sample_index", "view_index", "pred_class", "confidence", "certainty"])
        for mv in sets:
            for j, v in enumerate(mv.views):
                writer.writerow(
                    [mv.sample_index, j, v.pred_class, f"{v.confidence:.17g}", f"{v.certainty:.17g}"]
                )
