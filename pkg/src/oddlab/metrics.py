"""Noise-detection metrics, accuracy and fixed-bin histograms."""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from oddlab.errors import EmptyDataset


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    f1: float
    flagged_fraction: float
    true_noise_fraction: float

    def to_dict(self):
        return asdict(self)


def detection_metrics(flagged, mask) -> DetectionMetrics:
    """Precision/recall of a flagged index set against a boolean noise mask.

    Empty flagged set gives precision 1; empty noise set gives recall 1.
    """
    mask = np.asarray(mask, dtype=bool)
    n = mask.size
    flag = np.zeros(n, dtype=bool)
    flag[np.asarray(list(flagged), dtype=np.int64)] = True
    hit = int(np.sum(flag & mask))
    nf, nn = int(flag.sum()), int(mask.sum())
    precision = hit / nf if nf else 1.0
    recall = hit / nn if nn else 1.0
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return DetectionMetrics(precision, recall, f1, nf / n if n else 0.0, nn / n if n else 0.0)


def accuracy(model, ds, use_clean: bool = True) -> float:
    """Fraction of examples whose argmax prediction equals the (clean) label."""
    if ds.n == 0:
        raise EmptyDataset("accuracy of an empty dataset")
    target = ds.clean_labels if use_clean else ds.labels
    return float(np.mean(model.predict(ds.features) == target))


def histogram(values, bins: int = 100, upper: float | None = None):
    """Uniform bins over [0, max]; right-open except the last bin.

    Returns (lo, hi, counts) arrays.
    """
    v = np.asarray(values, dtype=np.float64)
    if bins < 1:
        raise ValueError("bins must be >= 1")
    if upper is None:
        upper = float(v.max()) if v.size else 0.0
    if upper <= 0.0:
        upper = 1.0
    edges = np.linspace(0.0, upper, bins + 1)
    counts, _ = np.histogram(v, bins=edges)
    return edges[:-1], edges[1:], counts.astype(np.int64)
