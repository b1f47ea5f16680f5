"""Pseudo-label assignment for the unlabeled target domain."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class PseudoLabels:
    """Per-row predicted class (-1 when below threshold) and its confidence."""

    labels: np.ndarray       # int64, each in [0, N) or -1
    confidences: np.ndarray  # float64 in [0, 1]

    def __len__(self) -> int:
        return len(self.labels)


@dataclass
class CentroidTable:
    """Per-class sample count and mean embedding; mean is None for empty classes."""

    counts: np.ndarray              # int64 [N]
    means: list[np.ndarray | None]  # length N


def pseudo_label(probs: np.ndarray, threshold: float) -> PseudoLabels:
    """Assign the argmax class when its probability strictly exceeds threshold.

    Rows whose maximum is <= threshold get label -1. Argmax ties break toward
    the lowest class index.
    """
    probs = np.asarray(probs, dtype=np.float64)
    n_classes = probs.shape[1]
    if not 1.0 / n_classes < threshold < 1.0:
        raise ValueError(
            f"threshold must lie in (1/{n_classes}, 1), got {threshold}")
    confidences = probs.max(axis=1)
    labels = probs.argmax(axis=1).astype(np.int64)
    labels[confidences <= threshold] = -1
    return PseudoLabels(labels=labels, confidences=confidences)


def batch_centroids(embeddings: np.ndarray, labels: np.ndarray,
                    n_classes: int) -> CentroidTable:
    """Arithmetic per-class means over one mini-batch; -1 rows are ignored."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    counts = np.zeros(n_classes, dtype=np.int64)
    means: list[np.ndarray | None] = [None] * n_classes
    for cls in range(n_classes):
        members = labels == cls
        counts[cls] = members.sum()
        if counts[cls] > 0:
            means[cls] = embeddings[members].mean(axis=0)
    return CentroidTable(counts=counts, means=means)


def confident_fraction(pl: PseudoLabels) -> float:
    """Fraction of rows that received a label (diagnostic)."""
    if len(pl.labels) == 0:
        return 0.0
    return float((pl.labels >= 0).mean())
