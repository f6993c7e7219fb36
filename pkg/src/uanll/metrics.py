"""Accuracy and expected calibration error with configurable binning."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class BinStat:
    lo: float
    hi: float
    count: int
    conf: float  # mean confidence of members, 0.0 when empty
    acc: float  # empirical accuracy of members, 0.0 when empty


@dataclass
class MetricsReport:
    accuracy: float
    ece: float
    bin_stats: list
    method_tag: str = ""

    def to_json_dict(self) -> dict:
        return {
            "method": self.method_tag,
            "accuracy": self.accuracy,
            "ece": self.ece,
            "bins": [
                {"lo": b.lo, "hi": b.hi, "count": b.count, "conf": b.conf, "acc": b.acc}
                for b in self.bin_stats
            ],
        }


def accuracy(preds, labels) -> float:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    if preds.shape != labels.shape:
        raise ValueError("prediction/label length mismatch")
    if preds.size == 0:
        raise ValueError("accuracy of an empty set is undefined")
    return float(np.mean(preds == labels))


def _bin_index(conf: np.ndarray, bins: int) -> np.ndarray:
    # bin b covers (b/B, (b+1)/B]; confidence 0.0 goes to bin 0
    idx = np.ceil(conf * bins).astype(np.int64) - 1
    return np.clip(idx, 0, bins - 1)


def ece_bin_stats(confidences, correct, bins: int = 32) -> list:
    """Equal-width right-inclusive bins over [0, 1]."""
    conf = np.asarray(confidences, dtype=np.float64)
    corr = np.asarray(correct, dtype=np.float64)
    if conf.shape != corr.shape or conf.ndim != 1:
        raise ValueError("confidences and correctness must be equal-length vectors")
    if bins < 1:
        raise ValueError("need at least one bin")
    if conf.size and (conf.min() < 0.0 or conf.max() > 1.0):
        raise ValueError("confidences must lie in [0, 1]")
    idx = _bin_index(conf, bins)
    stats = []
    for b in range(bins):
        members = idx == b
        count = int(members.sum())
        stats.append(
            BinStat(
                lo=b / bins,
                hi=(b + 1) / bins,
                count=count,
                conf=float(conf[members].mean()) if count else 0.0,
                acc=float(corr[members].mean()) if count else 0.0,
            )
        )
    return stats


def ece(confidences, correct, bins: int = 32) -> float:
    """Sum over bins of (n_b / n) * |empirical accuracy - mean confidence|."""
    stats = ece_bin_stats(confidences, correct, bins)
    n = sum(b.count for b in stats)
    if n == 0:
        raise ValueError("ece of an empty set is undefined")
    return float(sum(b.count / n * abs(b.acc - b.conf) for b in stats if b.count))


def ece_from_stats(stats) -> float:
    """Recompute ECE from previously collected bin stats."""
    n = sum(b.count for b in stats)
    return float(sum(b.count / n * abs(b.acc - b.conf) for b in stats if b.count))


def make_report(preds, labels, confidences, method_tag: str, bins: int = 32) -> MetricsReport:
    preds = np.asarray(preds)
    labels = np.asarray(labels)
    correct = (preds == labels).astype(np.float64)
    stats = ece_bin_stats(confidences, correct, bins)
    return MetricsReport(
        accuracy=accuracy(preds, labels),
        ece=ece_from_stats(stats),
        bin_stats=stats,
        method_tag=method_tag,
    )


def write_report_json(reports, path) -> None:
    payload = [r.to_json_dict() for r in reports]
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
